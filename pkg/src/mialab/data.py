"""Dataset generation, CSV loading, and the target/shadow split protocol.

The split protocol: a seeded permutation cuts the dataset into equal target
and shadow pools; the target pool is halved into train/test; each shadow
model re-permutes the shadow pool with its own seed (base_seed + i) and
halves it, so shadows see overlapping but distinct train/test partitions.
Odd-sized pools put the extra element on the train side.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError

__all__ = [
    "Dataset",
    "SplitPlan",
    "gen_blobs",
    "load_csv",
    "save_csv",
    "make_split",
    "standardize",
]


@dataclass
class Dataset:
    X: np.ndarray  # (N, d) float64
    y: np.ndarray  # (N,) int64
    n_classes: int

    def __post_init__(self) -> None:
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("dataset features contain non-finite values")
        if self.n_classes < 1 or np.any(self.y < 0) or np.any(self.y >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if self.X.shape[0] < 2 * self.n_classes:
            raise ValueError(
                f"dataset needs at least 2 samples per class slot "
                f"({2 * self.n_classes}), got {self.X.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass
class SplitPlan:
    """Index sets for the target model and every shadow model."""

    base_seed: int
    n_total: int
    target_train: np.ndarray
    target_test: np.ndarray
    shadow_pool: np.ndarray
    shadows: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def shadow_seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(len(self.shadows))]

    def validate(self) -> None:
        """Check disjointness and coverage; raises AssertionError on violation."""
        target_pool = np.concatenate([self.target_train, self.target_test])
        assert np.intersect1d(target_pool, self.shadow_pool).size == 0
        assert np.intersect1d(self.target_train, self.target_test).size == 0
        combined = np.sort(np.concatenate([target_pool, self.shadow_pool]))
        assert np.array_equal(combined, np.arange(self.n_total))
        for tr, te in self.shadows:
            assert np.intersect1d(tr, te).size == 0
            assert np.array_equal(np.sort(np.concatenate([tr, te])), np.sort(self.shadow_pool))

    def to_dict(self) -> dict:
        return {
            "base_seed": int(self.base_seed),
            "n_total": int(self.n_total),
            "target_train": self.target_train.tolist(),
            "target_test": self.target_test.tolist(),
            "shadow_pool": self.shadow_pool.tolist(),
            "shadows": [
                {"seed": int(self.base_seed + i), "train": tr.tolist(), "test": te.tolist()}
                for i, (tr, te) in enumerate(self.shadows)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(
            base_seed=int(d["base_seed"]),
            n_total=int(d["n_total"]),
            target_train=np.asarray(d["target_train"], dtype=np.int64),
            target_test=np.asarray(d["target_test"], dtype=np.int64),
            shadow_pool=np.asarray(d["shadow_pool"], dtype=np.int64),
            shadows=[
                (np.asarray(s["train"], dtype=np.int64), np.asarray(s["test"], dtype=np.int64))
                for s in d["shadows"]
            ],
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "SplitPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _simplex_means(n_classes: int, dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class means with every pairwise distance exactly `separation`.

    Regular simplex vertices, randomly rotated so clusters are not
    axis-aligned. Needs dim >= n_classes - 1 to embed the simplex.
    """
    if dim < n_classes - 1:
        raise ConfigError(
            f"d must be >= classes - 1 to place separated means (d={dim}, classes={n_classes})"
        )
    verts = np.eye(n_classes) - 1.0 / n_classes
    verts *= separation / np.sqrt(2.0)  # edge length of centered e_i simplex is sqrt(2)
    means = np.zeros((n_classes, dim))
    means[:, :n_classes] = verts
    raw = rng.standard_normal((dim, dim))
    q_mat, r_mat = np.linalg.qr(raw)
    q_mat *= np.sign(np.diag(r_mat))  # deterministic sign convention
    return means @ q_mat.T


def gen_blobs(
    seed: int,
    n: int,
    d: int,
    n_classes: int,
    separation: float,
    label_noise: float,
) -> Dataset:
    """Gaussian clusters (unit covariance) with a fraction of labels rerolled.

    The label noise is what gives an overfitting model something to memorize:
    noisy samples can only be fit by remembering them individually, which is
    exactly the signal membership attacks pick up.
    """
    if not 0.0 <= label_noise < 1.0:
        raise ConfigError(f"label_noise must be in [0, 1), got {label_noise}")
    if separation <= 0:
        raise ConfigError(f"separation must be positive, got {separation}")
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if n < 2 * n_classes:
        raise ConfigError(f"n must be >= {2 * n_classes} for {n_classes} classes")
    rng = np.random.default_rng(seed)
    means = _simplex_means(n_classes, d, separation, rng)
    y = rng.permutation(np.arange(n) % n_classes).astype(np.int64)
    X = means[y] + rng.standard_normal((n, d))
    n_noisy = int(round(label_noise * n))
    if n_noisy:
        idx = rng.choice(n, size=n_noisy, replace=False)
        y[idx] = rng.integers(0, n_classes, size=n_noisy)
    return Dataset(X, y, n_classes)


def save_csv(dataset: Dataset, path: str) -> None:
    """Write `f0,...,f{d-1},label` rows; floats use repr so they round-trip."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["label"])
        for row, label in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path: str) -> Dataset:
    """Parse the CSV dataset format; labels are densified to 0..C-1.

    Original label values map to dense ids in sorted order (e.g. labels
    3, 7, 9 become 0, 1, 2). Any malformed cell raises ParseError naming
    the 1-based line number.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-1] != "label":
            raise ParseError(f"{path}: line 1: header must be f0,...,f{{d-1}},label")
        dim = len(header) - 1
        expected = [f"f{i}" for i in range(dim)]
        if header[:-1] != expected:
            raise ParseError(f"{path}: line 1: feature columns must be named f0..f{dim - 1}")
        rows, labels = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != dim + 1:
                raise ParseError(
                    f"{path}: line {lineno}: expected {dim + 1} columns, got {len(cells)}"
                )
            try:
                rows.append([float(c) for c in cells[:-1]])
                raw_label = float(cells[-1])
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric cell") from None
            if raw_label != int(raw_label):
                raise ParseError(f"{path}: line {lineno}: label must be an integer")
            labels.append(int(raw_label))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    raw = np.asarray(labels, dtype=np.int64)
    uniq = np.unique(raw)
    dense = np.searchsorted(uniq, raw)
    return Dataset(np.asarray(rows, dtype=np.float64), dense, int(uniq.size))


def make_split(dataset: Dataset, base_seed: int, n_shadow: int) -> SplitPlan:
    """Target/shadow pools at ratio 0.5:0.5, each halved into train/test."""
    n = dataset.n
    if n < 4:
        raise ValueError(f"need at least 4 samples to split, got {n}")
    if n_shadow < 0:
        raise ConfigError(f"n_shadow must be >= 0, got {n_shadow}")
    perm = np.random.default_rng(base_seed).permutation(n)
    half = (n + 1) // 2
    target_pool, shadow_pool = perm[:half], perm[half:]
    t_half = (target_pool.size + 1) // 2
    shadows = []
    for i in range(n_shadow):
        shuffled = np.random.default_rng(base_seed + i).permutation(shadow_pool)
        s_half = (shuffled.size + 1) // 2
        shadows.append((shuffled[:s_half], shuffled[s_half:]))
    return SplitPlan(
        base_seed=base_seed,
        n_total=n,
        target_train=target_pool[:t_half],
        target_test=target_pool[t_half:],
        shadow_pool=shadow_pool,
        shadows=shadows,
    )


def standardize(dataset: Dataset, fit_indices) -> Dataset:
    """Zero-mean/unit-variance features, statistics from fit_indices only.

    The same transform is applied to every row, so all splits stay on a
    common scale; constant dimensions are left unscaled.
    """
    idx = np.asarray(fit_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("standardize needs a non-empty fit index set")
    mu = dataset.X[idx].mean(axis=0)
    sd = dataset.X[idx].std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    return Dataset((dataset.X - mu) / sd, dataset.y.copy(), dataset.n_classes)
