"""The loss family used by the training defenses.

Each loss returns a LossResult carrying the scalar value, exact analytic
gradients for whichever tensors it touches (logits, features, centers), and
for the relax-style losses a branch tag recording which of the three
scenarios fired on this mini-batch. Threshold comparisons always use the
mini-batch mean loss. Soft targets and the confidence weights of the soft
center scenario are treated as constants: no gradient flows into them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import check_probs, softmax

__all__ = [
    "PLAIN",
    "REFLECT",
    "SOFT",
    "LossResult",
    "CenterBank",
    "RelaxConfig",
    "ce_loss",
    "soft_target",
    "lce_loss",
    "sce_loss",
    "relax_loss",
    "imp_relax_loss",
    "center_loss",
    "relaxed_center_loss",
    "crl_total",
    "label_smoothing_loss",
    "confidence_penalty_loss",
]

PLAIN = "PLAIN"
REFLECT = "REFLECT"
SOFT = "SOFT"


@dataclass
class LossResult:
    loss: float
    grad_logits: np.ndarray | None = None  # (B, C)
    grad_features: np.ndarray | None = None  # (B, d_feat)
    grad_centers: dict[int, np.ndarray] | None = None  # class -> (d_feat,)
    branch: str | None = None


@dataclass
class CenterBank:
    """Learnable per-class feature centers and their learning rate."""

    centers: np.ndarray  # (C, d_feat)
    center_lr: float

    @classmethod
    def initialize(
        cls, n_classes: int, feature_dim: int, seed: int, center_lr: float, scale: float = 0.1
    ) -> "CenterBank":
        rng = np.random.default_rng(seed)
        return cls(centers=scale * rng.standard_normal((n_classes, feature_dim)), center_lr=center_lr)

    @classmethod
    def empty(cls, feature_dim: int) -> "CenterBank":
        return cls(centers=np.zeros((0, feature_dim)), center_lr=0.0)

    @property
    def n_classes(self) -> int:
        return self.centers.shape[0]


@dataclass
class RelaxConfig:
    """Thresholds, normalization factors and the joint-loss coefficient.

    `lam` is serialized as "lambda" in config files.
    """

    alpha_rce: float = 0.0
    alpha_rcl: float = 0.0
    tau_rce: float = 0.0
    tau_rcl: float = 0.0
    lam: float = 0.0

    def validate(self) -> None:
        for name in ("alpha_rce", "alpha_rcl", "tau_rce", "tau_rcl", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"relax.{name} must be >= 0, got {getattr(self, name)}")


# --- internals ---


def _check_labels(labels, n_classes: int, batch: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (batch,):
        raise DimensionError(f"labels must be ({batch},), got {y.shape}")
    y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y


def _onehot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def _logsumexp_rows(g: np.ndarray) -> np.ndarray:
    m = g.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(g - m).sum(axis=1, keepdims=True))).ravel()


def _ce_against_targets(h: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(h) against constant target rows.

    Returns (loss, dloss/dh); targets rows must each sum to 1.
    """
    batch = h.shape[0]
    lse = _logsumexp_rows(h)
    loss = float(np.mean(lse - (targets * h).sum(axis=1)))
    grad_h = (softmax(h) - targets) / batch
    return loss, grad_h


def _scale_rows(v: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise v / (1 + tau * ||v||); returns (scaled, norms, denominators)."""
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    denom = 1.0 + tau * norms
    return v / denom, norms, denom


def _scale_rows_backward(
    v: np.ndarray, upstream: np.ndarray, tau: float, norms: np.ndarray, denom: np.ndarray
) -> np.ndarray:
    """Chain an upstream gradient through the row normalization of _scale_rows.

    d(v/denom)/dv = I/denom - tau * v v^T / (denom^2 * ||v||); the second term
    vanishes smoothly as v -> 0, so rows with zero norm skip it.
    """
    s = 1.0 / denom
    dot = (upstream * v).sum(axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    coef = np.where(norms > 0.0, tau * s * s / safe, 0.0)
    return s * upstream - coef * dot * v


def _check_logits(logits) -> np.ndarray:
    g = np.asarray(logits, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] < 2:
        raise DimensionError(f"logits must be (B, C>=2), got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("logits contain non-finite entries")
    return g


# --- classification losses ---


def ce_loss(logits, labels) -> LossResult:
    """Mean cross-entropy; grad_logits = (softmax - onehot) / B."""
    g = _check_logits(logits)
    y = _check_labels(labels, g.shape[1], g.shape[0])
    loss, grad = _ce_against_targets(g, _onehot(y, g.shape[1]))
    return LossResult(loss=loss, grad_logits=grad)


def soft_target(p, y: int) -> np.ndarray:
    """Keep the true-class probability, spread the rest uniformly.

    Entry y stays p[y]; every other entry becomes (1 - p[y]) / (C - 1), so
    the result is again a probability vector.
    """
    pv = check_probs(p)
    if pv.ndim != 1:
        raise DimensionError("soft_target expects a single probability vector")
    n_classes = pv.shape[0]
    if n_classes < 2:
        raise ConfigError("soft_target needs at least 2 classes")
    if not 0 <= int(y) < n_classes:
        raise ValueError(f"label {y} out of range [0, {n_classes})")
    out = np.full(n_classes, (1.0 - pv[int(y)]) / (n_classes - 1))
    out[int(y)] = pv[int(y)]
    return out


def _soft_target_rows(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    batch, n_classes = p.shape
    p_y = p[np.arange(batch), y]
    out = np.repeat(((1.0 - p_y) / (n_classes - 1))[:, None], n_classes, axis=1)
    out[np.arange(batch), y] = p_y
    return out


def lce_loss(logits, labels, tau_rce: float) -> LossResult:
    """Cross-entropy on logit-normalized probabilities.

    Logits are rescaled by 1 / (1 + tau * ||g||) before softmax, which caps
    the confidence a sample can reach; the gradient flows through the full
    rescaling, including the dependence of ||g|| on g. tau = 0 is exactly
    plain cross-entropy.
    """
    if tau_rce < 0:
        raise ConfigError(f"tau_rce must be >= 0, got {tau_rce}")
    g = _check_logits(logits)
    y = _check_labels(labels, g.shape[1], g.shape[0])
    h, norms, denom = _scale_rows(g, tau_rce)
    loss, grad_h = _ce_against_targets(h, _onehot(y, g.shape[1]))
    return LossResult(loss=loss, grad_logits=_scale_rows_backward(g, grad_h, tau_rce, norms, denom))


def sce_loss(logits, labels, tau_rce: float) -> LossResult:
    """Soft cross-entropy: normalized probabilities against softened targets.

    Targets come from the plain (non-normalized) softmax via soft_target and
    are held constant; only the normalized prediction side carries gradient.
    """
    if tau_rce < 0:
        raise ConfigError(f"tau_rce must be >= 0, got {tau_rce}")
    g = _check_logits(logits)
    y = _check_labels(labels, g.shape[1], g.shape[0])
    targets = _soft_target_rows(softmax(g), y)
    h, norms, denom = _scale_rows(g, tau_rce)
    loss, grad_h = _ce_against_targets(h, targets)
    return LossResult(loss=loss, grad_logits=_scale_rows_backward(g, grad_h, tau_rce, norms, denom))


def relax_loss(logits, labels, alpha_rce: float, epoch: int) -> LossResult:
    """Cross-entropy that stops fitting once the batch loss drops below alpha.

    Above the threshold this is plain CE. At or below it, even epochs reverse
    the CE gradient so the model climbs back toward the threshold, and odd
    epochs fine-tune the prediction shape against softened targets instead of
    the hard labels.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if alpha_rce < 0:
        raise ConfigError(f"alpha_rce must be >= 0, got {alpha_rce}")
    base = ce_loss(logits, labels)
    if base.loss > alpha_rce:
        return LossResult(loss=base.loss, grad_logits=base.grad_logits, branch=PLAIN)
    if epoch % 2 == 0:
        return LossResult(
            loss=abs(base.loss - alpha_rce),
            grad_logits=-base.grad_logits,
            branch=REFLECT,
        )
    soft = sce_loss(logits, labels, 0.0)
    return LossResult(loss=soft.loss, grad_logits=soft.grad_logits, branch=SOFT)


def imp_relax_loss(logits, labels, alpha_rce: float, tau_rce: float, epoch: int) -> LossResult:
    """Relaxed loss on logit-normalized CE, with the parity check first.

    Every even epoch reflects |L - alpha| regardless of which side of the
    threshold the batch sits on (this ordering intentionally differs from
    relax_loss); odd epochs run plain normalized CE above the threshold and
    the soft variant below it.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if alpha_rce < 0:
        raise ConfigError(f"alpha_rce must be >= 0, got {alpha_rce}")
    base = lce_loss(logits, labels, tau_rce)
    if epoch % 2 == 0:
        sign = -1.0 if base.loss < alpha_rce else 1.0
        return LossResult(
            loss=abs(base.loss - alpha_rce),
            grad_logits=sign * base.grad_logits,
            branch=REFLECT,
        )
    if base.loss > alpha_rce:
        return LossResult(loss=base.loss, grad_logits=base.grad_logits, branch=PLAIN)
    soft = sce_loss(logits, labels, tau_rce)
    return LossResult(loss=soft.loss, grad_logits=soft.grad_logits, branch=SOFT)


# --- center losses ---


def _check_center_inputs(features, centers: CenterBank, labels):
    q = np.asarray(features, dtype=np.float64)
    if q.ndim != 2:
        raise DimensionError(f"features must be (B, d_feat), got {q.shape}")
    c = centers.centers
    if c.ndim != 2 or c.shape[1] != q.shape[1]:
        raise DimensionError(
            f"centers must be (C, {q.shape[1]}), got {c.shape}"
        )
    y = _check_labels(labels, c.shape[0], q.shape[0])
    return q, c, y


def _center_grad_map(
    accum: np.ndarray, present: np.ndarray
) -> dict[int, np.ndarray]:
    return {int(i): accum[i] for i in present}


def center_loss(features, centers: CenterBank, labels) -> LossResult:
    """Half mean squared distance from each feature row to its class center."""
    q, c, y = _check_center_inputs(features, centers, labels)
    batch = q.shape[0]
    diffs = q - c[y]
    loss = float((diffs**2).sum() / (2.0 * batch))
    grad_q = diffs / batch
    accum = np.zeros_like(c)
    np.add.at(accum, y, -diffs / batch)
    return LossResult(
        loss=loss,
        grad_features=grad_q,
        grad_centers=_center_grad_map(accum, np.unique(y)),
    )


def relaxed_center_loss(
    features,
    centers: CenterBank,
    probs,
    labels,
    alpha_rcl: float,
    tau_rcl: float,
    epoch: int,
) -> LossResult:
    """Center loss on norm-capped features/centers with three scenarios.

    Features and centers are first rescaled row-wise by 1 / (1 + tau * ||.||).
    The batch distance L_ct on the rescaled vectors picks the scenario: even
    epochs keep the batch near the distance boundary via |L_ct - alpha|
    (gradient sign flips when L_ct < alpha); odd epochs above the threshold
    pull samples toward their centers; odd epochs below it blend a pull
    toward the center (weighted by the true-class confidence) with a pull
    toward the origin (weighted by the remaining confidence), keeping samples
    near the center-origin line. The confidence weights come from the plain
    softmax predictions and are held constant. Gradients flow through both
    rescalings exactly.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if alpha_rcl < 0 or tau_rcl < 0:
        raise ConfigError("alpha_rcl and tau_rcl must be >= 0")
    q, c, y = _check_center_inputs(features, centers, labels)
    batch = q.shape[0]
    p = check_probs(probs, "probs")
    if p.shape != (batch, c.shape[0]):
        raise ValueError(f"probs must be ({batch}, {c.shape[0]}), got {p.shape}")

    qn, q_norms, q_denom = _scale_rows(q, tau_rcl)
    cn, c_norms, c_denom = _scale_rows(c, tau_rcl)
    diffs = qn - cn[y]
    l_ct = float((diffs**2).sum() / (2.0 * batch))

    if epoch % 2 == 0:
        branch = REFLECT
        sign = -1.0 if l_ct < alpha_rcl else 1.0
        loss = abs(l_ct - alpha_rcl)
        grad_qn = sign * diffs / batch
        accum_cn = np.zeros_like(cn)
        np.add.at(accum_cn, y, -sign * diffs / batch)
    elif l_ct > alpha_rcl:
        branch = PLAIN
        loss = l_ct
        grad_qn = diffs / batch
        accum_cn = np.zeros_like(cn)
        np.add.at(accum_cn, y, -diffs / batch)
    else:
        branch = SOFT
        t_y = p[np.arange(batch), y][:, None]  # constant confidence weights
        t_o = 1.0 - t_y
        loss = float(((t_y * diffs**2).sum() + (t_o * qn**2).sum()) / (2.0 * batch))
        grad_qn = (t_y * diffs + t_o * qn) / batch
        accum_cn = np.zeros_like(cn)
        np.add.at(accum_cn, y, -t_y * diffs / batch)

    grad_q = _scale_rows_backward(q, grad_qn, tau_rcl, q_norms, q_denom)
    present = np.unique(y)
    grad_c_rows = _scale_rows_backward(
        c[present], accum_cn[present], tau_rcl, c_norms[present], c_denom[present]
    )
    grad_centers = {int(i): grad_c_rows[k] for k, i in enumerate(present)}
    return LossResult(loss=loss, grad_features=grad_q, grad_centers=grad_centers, branch=branch)


def crl_total(rce: LossResult, rcl: LossResult, lam: float) -> LossResult:
    """Joint loss L = rce + lam * rcl, combining gradients linearly.

    grad_centers is copied from the center component unscaled: the center
    update always follows the center loss alone, independent of lam.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")

    def combine(a, b):
        if a is None and b is None:
            return None
        if a is None:
            return lam * b
        if b is None:
            return a.copy()
        return a + lam * b

    return LossResult(
        loss=rce.loss + lam * rcl.loss,
        grad_logits=combine(rce.grad_logits, rcl.grad_logits),
        grad_features=combine(rce.grad_features, rcl.grad_features),
        grad_centers=None
        if rcl.grad_centers is None
        else {i: g.copy() for i, g in rcl.grad_centers.items()},
    )


# --- baseline regularizers ---


def label_smoothing_loss(logits, labels, eps: float) -> LossResult:
    """Cross-entropy against (1 - eps) * onehot + eps / C targets."""
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing eps must be in [0, 1), got {eps}")
    g = _check_logits(logits)
    y = _check_labels(labels, g.shape[1], g.shape[0])
    n_classes = g.shape[1]
    targets = (1.0 - eps) * _onehot(y, n_classes) + eps / n_classes
    loss, grad = _ce_against_targets(g, targets)
    return LossResult(loss=loss, grad_logits=grad)


def confidence_penalty_loss(logits, labels, beta: float) -> LossResult:
    """Cross-entropy minus beta times the mean prediction entropy."""
    if beta < 0:
        raise ConfigError(f"confidence penalty beta must be >= 0, got {beta}")
    g = _check_logits(logits)
    y = _check_labels(labels, g.shape[1], g.shape[0])
    batch = g.shape[0]
    p = softmax(g)
    log_p = np.log(np.where(p > 0.0, p, 1.0))
    ent_rows = -(p * log_p).sum(axis=1, keepdims=True)
    base_loss, base_grad = _ce_against_targets(g, _onehot(y, g.shape[1]))
    loss = base_loss - beta * float(ent_rows.mean())
    # dH/dg = -p * (log p + H) per row
    grad = base_grad + beta * p * (log_p + ent_rows) / batch
    return LossResult(loss=loss, grad_logits=grad)
