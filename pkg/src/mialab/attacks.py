"""Membership-inference attack suite and its reporting types.

Three threshold/score attacks (prediction entropy, label-aware modified
entropy, input-gradient norm) plus the shadow-model neural-network attack.
Scores are oriented so that higher means more member-like; AUC is computed
over the pooled member/non-member scores of the target's train/test sets.
Per-class thresholds maximize balanced accuracy and feed a separate
thresholded-accuracy metric.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, SplitPlan
from .errors import DimensionError
from .losses import ce_loss
from .model import ModelParams, backward, forward
from .numerics import auc, check_probs, distance_to_boundary, entropy, softmax
from .trainer import TrainingConfig, shadow_config, train

__all__ = [
    "ATTACK_NAMES",
    "MembershipScoreSet",
    "AttackModelParams",
    "AttackReport",
    "Histogram",
    "SuiteConfig",
    "SuiteResult",
    "entropy_score",
    "m_entropy_score",
    "grad_x_l2_score",
    "grad_x_l2_scores",
    "init_attack_model",
    "nn_attack_train",
    "nn_attack_score",
    "attack_features",
    "per_class_thresholds",
    "thresholded_accuracy",
    "train_shadow_models",
    "run_attack_suite",
    "boundary_histogram",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_reports_json",
]

ATTACK_NAMES = ("entropy", "m_entropy", "grad_x", "nn")

_LOG_CLAMP = 1e-12


@dataclass
class MembershipScoreSet:
    """Per-sample membership scores with class labels and ground truth."""

    scores: np.ndarray
    labels: np.ndarray
    is_member: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_member = np.asarray(self.is_member, dtype=bool)
        if not (self.scores.shape == self.labels.shape == self.is_member.shape):
            raise DimensionError("scores, labels and is_member must be equal-length")
        if self.scores.size == 0:
            raise ValueError("score set is empty")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores contain non-finite values")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    @property
    def member_scores(self) -> np.ndarray:
        return self.scores[self.is_member]

    @property
    def nonmember_scores(self) -> np.ndarray:
        return self.scores[~self.is_member]


@dataclass
class Histogram:
    bin_edges: np.ndarray  # (n_bins + 1,)
    member_counts: np.ndarray
    nonmember_counts: np.ndarray


@dataclass
class AttackReport:
    attack: str
    auc: float
    per_class_thresholds: np.ndarray
    thresholded_accuracy: float
    histogram: Histogram

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "auc": self.auc,
            "per_class_thresholds": self.per_class_thresholds.tolist(),
            "thresholded_accuracy": self.thresholded_accuracy,
            "histogram": {
                "bin_edges": self.histogram.bin_edges.tolist(),
                "member_counts": self.histogram.member_counts.tolist(),
                "nonmember_counts": self.histogram.nonmember_counts.tolist(),
            },
        }


@dataclass
class SuiteConfig:
    attacks: list[str] = field(default_factory=lambda: list(ATTACK_NAMES))
    attack_seed: int = 0
    histogram_bins: int = 20
    nn_epochs: int = 50
    nn_lr: float = 0.01
    nn_batch_size: int = 256
    nn_dropout: float = 0.5


@dataclass
class SuiteResult:
    reports: list[AttackReport]
    score_sets: dict[str, MembershipScoreSet]
    boundary: Histogram


# --- score attacks ---


def entropy_score(p) -> float:
    """Negated prediction entropy; members tend to be low-entropy."""
    return -entropy(p)


def _entropy_rows(probs: np.ndarray) -> np.ndarray:
    logs = np.log(np.where(probs > 0.0, probs, 1.0))
    return -(probs * logs).sum(axis=1)


def m_entropy_score(p, y: int) -> float:
    """Negated modified entropy, which weighs the true-class probability.

    Mentr = -(1 - p_y) ln p_y - sum_{i != y} p_i ln(1 - p_i); log arguments
    are clamped at 1e-12 so the score stays finite at the extremes.
    """
    pv = check_probs(p)
    if not 0 <= int(y) < pv.shape[-1]:
        raise ValueError(f"label {y} out of range")
    return float(_m_entropy_rows(pv[None, :], np.array([int(y)]))[0])


def _m_entropy_rows(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    idx = np.arange(probs.shape[0])
    p_y = probs[idx, labels]
    log_p_y = np.log(np.maximum(p_y, _LOG_CLAMP))
    log_1mp = np.log(np.maximum(1.0 - probs, _LOG_CLAMP))
    total = (probs * log_1mp).sum(axis=1) - p_y * log_1mp[idx, labels]
    mentr = -(1.0 - p_y) * log_p_y - total
    return -mentr


def grad_x_l2_score(params: ModelParams, x, y: int) -> float:
    """Negated L2 norm of the CE input gradient; members sit near flat spots."""
    xv = np.asarray(x, dtype=np.float64).reshape(1, -1)
    trace = forward(params, xv)
    res = ce_loss(trace.logits, np.array([int(y)]))
    grads = backward(params, trace, res.grad_logits, want_input_grad=True)
    return -float(np.linalg.norm(grads.input_grad[0]))


def grad_x_l2_scores(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched grad_x_l2_score.

    The batch-mean CE splits per sample, so row j of the batched input
    gradient is 1/B times sample j's own gradient; rescaling by B recovers
    the per-sample norms in one backward pass.
    """
    X = np.asarray(X, dtype=np.float64)
    trace = forward(params, X)
    res = ce_loss(trace.logits, y)
    grads = backward(params, trace, res.grad_logits, want_input_grad=True)
    return -np.linalg.norm(grads.input_grad, axis=1) * X.shape[0]


# --- neural-network attack model ---


@dataclass
class AttackModelParams:
    """MLP 2C -> 128 -> 64 -> 1 with ReLU; dropout only during training."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: float = 0.5

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


_HIDDEN_SIZES = (128, 64)


def init_attack_model(n_classes: int, seed: int, dropout: float = 0.5) -> AttackModelParams:
    sizes = [2 * n_classes, *_HIDDEN_SIZES, 1]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return AttackModelParams(weights=weights, biases=biases, dropout=dropout)


def attack_features(probs: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Attack input rows: probability vector concatenated with one-hot label."""
    onehot = np.zeros((labels.size, n_classes))
    onehot[np.arange(labels.size), labels] = 1.0
    return np.concatenate([probs, onehot], axis=1)


def _attack_logits(attack: AttackModelParams, feats: np.ndarray) -> np.ndarray:
    a = feats
    for w, b in zip(attack.weights[:-1], attack.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
    return (a @ attack.weights[-1] + attack.biases[-1]).ravel()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def attack_scores(attack: AttackModelParams, feats: np.ndarray) -> np.ndarray:
    """Membership probabilities in (0, 1); dropout disabled."""
    return _sigmoid(_attack_logits(attack, feats))


def nn_attack_score(attack: AttackModelParams, p, y: int) -> float:
    pv = check_probs(p)
    n_classes = pv.shape[-1]
    feats = attack_features(pv[None, :], np.array([int(y)]), n_classes)
    return float(attack_scores(attack, feats)[0])


def _train_attack_epochs(
    attack: AttackModelParams,
    feats: np.ndarray,
    member: np.ndarray,
    rng: np.random.Generator,
    epochs: int,
    lr: float,
    batch_size: int,
) -> None:
    """Binary-CE SGD with inverted dropout on the hidden activations."""
    keep = 1.0 - attack.dropout
    n = feats.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, mb = feats[idx], member[idx]
            batch = xb.shape[0]

            z1 = xb @ attack.weights[0] + attack.biases[0]
            a1 = np.maximum(z1, 0.0)
            mask1 = (rng.random(a1.shape) < keep) / keep if keep < 1.0 else 1.0
            a1d = a1 * mask1
            z2 = a1d @ attack.weights[1] + attack.biases[1]
            a2 = np.maximum(z2, 0.0)
            mask2 = (rng.random(a2.shape) < keep) / keep if keep < 1.0 else 1.0
            a2d = a2 * mask2
            z3 = (a2d @ attack.weights[2] + attack.biases[2]).ravel()

            d3 = ((_sigmoid(z3) - mb) / batch)[:, None]
            d_w3 = a2d.T @ d3
            d_b3 = d3.sum(axis=0)
            dz2 = (d3 @ attack.weights[2].T) * mask2 * (z2 > 0.0)
            d_w2 = a1d.T @ dz2
            d_b2 = dz2.sum(axis=0)
            dz1 = (dz2 @ attack.weights[1].T) * mask1 * (z1 > 0.0)
            d_w1 = xb.T @ dz1
            d_b1 = dz1.sum(axis=0)

            for p_arr, g in zip(
                attack.weights + attack.biases, [d_w1, d_w2, d_w3, d_b1, d_b2, d_b3]
            ):
                p_arr -= lr * g


def _probs(params: ModelParams, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    rows = [
        softmax(forward(params, X[start : start + chunk]).logits)
        for start in range(0, X.shape[0], chunk)
    ]
    return np.concatenate(rows, axis=0)


def nn_attack_train(
    shadow_models: list[ModelParams],
    dataset: Dataset,
    plan: SplitPlan,
    attack_seed: int,
    *,
    epochs: int = 50,
    lr: float = 0.01,
    batch_size: int = 256,
    dropout: float = 0.5,
) -> AttackModelParams:
    """Fit the attack MLP on shadow members (train) vs non-members (test).

    Each shadow model contributes its own train split as members and test
    split as non-members; features are [probability vector || one-hot label].
    Deterministic given attack_seed.
    """
    if not shadow_models:
        raise ValueError("nn_attack_train needs at least one shadow model")
    if len(shadow_models) > len(plan.shadows):
        raise ValueError(
            f"{len(shadow_models)} shadow models but plan defines {len(plan.shadows)} splits"
        )
    feat_blocks, member_blocks = [], []
    for model, (tr_idx, te_idx) in zip(shadow_models, plan.shadows):
        for idx, flag in ((tr_idx, 1.0), (te_idx, 0.0)):
            probs = _probs(model, dataset.X[idx])
            feat_blocks.append(attack_features(probs, dataset.y[idx], dataset.n_classes))
            member_blocks.append(np.full(idx.size, flag))
    feats = np.concatenate(feat_blocks, axis=0)
    member = np.concatenate(member_blocks)
    attack = init_attack_model(dataset.n_classes, attack_seed, dropout)
    rng = np.random.default_rng(attack_seed)
    _train_attack_epochs(attack, feats, member, rng, epochs, lr, batch_size)
    return attack


# --- thresholds and reports ---


def _best_balanced_threshold(scores: np.ndarray, is_member: np.ndarray) -> float:
    """Smallest threshold maximizing 0.5*TPR + 0.5*TNR for `score >= t`."""
    mem = scores[is_member]
    non = scores[~is_member]
    if mem.size == 0 or non.size == 0:
        raise ValueError("need both member and non-member scores")
    uniq = np.unique(scores)
    candidates = np.concatenate(
        [[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]]
    )
    tpr = (mem[None, :] >= candidates[:, None]).mean(axis=1)
    tnr = (non[None, :] < candidates[:, None]).mean(axis=1)
    balanced = 0.5 * (tpr + tnr)
    return float(candidates[int(np.argmax(balanced))])  # argmax -> first max -> smallest t


def per_class_thresholds(score_set: MembershipScoreSet) -> np.ndarray:
    """Per class, the balanced-accuracy-maximizing threshold (ties: smallest).

    Classes without both member and non-member samples fall back to the
    threshold fitted on the pooled scores.
    """
    global_thr = _best_balanced_threshold(score_set.scores, score_set.is_member)
    out = np.full(score_set.n_classes, global_thr)
    for cls in range(score_set.n_classes):
        sel = score_set.labels == cls
        if sel.any():
            members = score_set.is_member[sel]
            if members.any() and (~members).any():
                out[cls] = _best_balanced_threshold(score_set.scores[sel], members)
    return out


def thresholded_accuracy(score_set: MembershipScoreSet, thresholds: np.ndarray) -> float:
    """Fraction of samples whose `score >= threshold[class]` matches membership."""
    pred = score_set.scores >= thresholds[score_set.labels]
    return float((pred == score_set.is_member).mean())


def _score_histogram(score_set: MembershipScoreSet, bins: int) -> Histogram:
    edges = np.histogram_bin_edges(score_set.scores, bins=bins)
    mem, _ = np.histogram(score_set.member_scores, bins=edges)
    non, _ = np.histogram(score_set.nonmember_scores, bins=edges)
    return Histogram(bin_edges=edges, member_counts=mem, nonmember_counts=non)


def boundary_histogram(
    member_probs: np.ndarray, nonmember_probs: np.ndarray, bins: int = 20
) -> Histogram:
    """Histogram of top-1 minus top-2 probability, fixed [0, 1] range."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    mem, _ = np.histogram(distance_to_boundary(member_probs), bins=edges)
    non, _ = np.histogram(distance_to_boundary(nonmember_probs), bins=edges)
    return Histogram(bin_edges=edges, member_counts=mem, nonmember_counts=non)


def train_shadow_models(
    dataset: Dataset, plan: SplitPlan, config: TrainingConfig
) -> list[ModelParams]:
    """Train one model per shadow split with seeds base_seed + i."""
    models = []
    for i, (tr_idx, te_idx) in enumerate(plan.shadows):
        cfg = shadow_config(config, plan.base_seed + i)
        params, _, _ = train(cfg, dataset.subset(tr_idx), dataset.subset(te_idx))
        models.append(params)
    return models


def run_attack_suite(
    target: ModelParams,
    dataset: Dataset,
    plan: SplitPlan,
    config: SuiteConfig | None = None,
    shadow_models: list[ModelParams] | None = None,
) -> SuiteResult:
    """Score the target's train (members) vs test (non-members) samples.

    Returns one AttackReport per requested attack plus the
    distance-to-boundary histogram of the target's plain softmax outputs.
    The nn attack requires shadow_models (train them with
    train_shadow_models, using the same defense config as the target).
    """
    config = config or SuiteConfig()
    unknown = [a for a in config.attacks if a not in ATTACK_NAMES]
    if unknown:
        raise ValueError(f"unknown attacks {unknown}; choose from {ATTACK_NAMES}")
    mem_idx, non_idx = plan.target_train, plan.target_test
    y_mem, y_non = dataset.y[mem_idx], dataset.y[non_idx]
    p_mem = _probs(target, dataset.X[mem_idx])
    p_non = _probs(target, dataset.X[non_idx])
    boundary = boundary_histogram(p_mem, p_non, config.histogram_bins)

    attack_model = None
    if "nn" in config.attacks:
        if not shadow_models:
            raise ValueError("the nn attack needs trained shadow models")
        attack_model = nn_attack_train(
            shadow_models,
            dataset,
            plan,
            config.attack_seed,
            epochs=config.nn_epochs,
            lr=config.nn_lr,
            batch_size=config.nn_batch_size,
            dropout=config.nn_dropout,
        )

    reports: list[AttackReport] = []
    score_sets: dict[str, MembershipScoreSet] = {}
    for name in config.attacks:
        if name == "entropy":
            s_mem, s_non = -_entropy_rows(p_mem), -_entropy_rows(p_non)
        elif name == "m_entropy":
            s_mem = _m_entropy_rows(p_mem, y_mem)
            s_non = _m_entropy_rows(p_non, y_non)
        elif name == "grad_x":
            s_mem = grad_x_l2_scores(target, dataset.X[mem_idx], y_mem)
            s_non = grad_x_l2_scores(target, dataset.X[non_idx], y_non)
        else:  # nn
            s_mem = attack_scores(
                attack_model, attack_features(p_mem, y_mem, dataset.n_classes)
            )
            s_non = attack_scores(
                attack_model, attack_features(p_non, y_non, dataset.n_classes)
            )
        score_set = MembershipScoreSet(
            scores=np.concatenate([s_mem, s_non]),
            labels=np.concatenate([y_mem, y_non]),
            is_member=np.concatenate(
                [np.ones(len(s_mem), dtype=bool), np.zeros(len(s_non), dtype=bool)]
            ),
            n_classes=dataset.n_classes,
        )
        thresholds = per_class_thresholds(score_set)
        reports.append(
            AttackReport(
                attack=name,
                auc=auc(s_mem, s_non),
                per_class_thresholds=thresholds,
                thresholded_accuracy=thresholded_accuracy(score_set, thresholds),
                histogram=_score_histogram(score_set, config.histogram_bins),
            )
        )
        score_sets[name] = score_set
    return SuiteResult(reports=reports, score_sets=score_sets, boundary=boundary)


# --- serialization ---


def write_reports_json(reports: list[AttackReport], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def write_histogram_csv(hist: Histogram, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "member_count", "nonmember_count"])
        for i in range(len(hist.member_counts)):
            writer.writerow(
                [
                    repr(float(hist.bin_edges[i])),
                    repr(float(hist.bin_edges[i + 1])),
                    int(hist.member_counts[i]),
                    int(hist.nonmember_counts[i]),
                ]
            )


def read_histogram_csv(path: str) -> Histogram:
    lefts, rights, mem, non = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            lefts.append(float(row["bin_left"]))
            rights.append(float(row["bin_right"]))
            mem.append(int(row["member_count"]))
            non.append(int(row["nonmember_count"]))
    edges = np.asarray(lefts + [rights[-1]])
    return Histogram(
        bin_edges=edges,
        member_counts=np.asarray(mem, dtype=np.int64),
        nonmember_counts=np.asarray(non, dtype=np.int64),
    )
