"""Training loop covering every defense, with per-epoch history records.

One loop serves all defenses; they differ only in which loss produces the
classification gradient and whether a center bank is maintained. Per batch:
forward, center loss (when used), defense loss, joint loss, then the center
update followed by the model update, both from the same pre-update forward
pass. Shuffling is a pure function of (seed, epoch), so runs are bitwise
reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .data import Dataset
from .errors import ConfigError, DivergenceError
from .losses import PLAIN, REFLECT, SOFT, CenterBank, LossResult, RelaxConfig
from .model import GradSet, ModelParams, backward, forward, init_model, sgd_step
from .numerics import softmax

__all__ = [
    "DEFENSES",
    "CENTER_DEFENSES",
    "TrainingConfig",
    "EpochRecord",
    "train",
    "evaluate_accuracy",
    "write_history_csv",
]

DEFENSES = (
    "ce",
    "relax_loss",
    "imp_relax_loss",
    "relaxed_center",
    "crl",
    "label_smoothing",
    "confidence_penalty",
)

# Defenses that maintain a center bank. "relaxed_center" pairs the relaxed
# center term with the un-normalized relaxed CE; "crl" uses the normalized one.
CENTER_DEFENSES = ("relaxed_center", "crl")


@dataclass
class TrainingConfig:
    layer_sizes: list[int]
    defense: str = "ce"
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.1
    center_lr: float = 0.001
    relax: RelaxConfig = field(default_factory=RelaxConfig)
    smoothing_eps: float = 0.0
    penalty_beta: float = 0.0
    early_stop_epoch: int | None = None
    seed: int = 0
    eval_every: int = 1
    momentum: float = 0.0
    weight_decay: float = 0.0
    lr_step_every: int | None = None
    lr_step_gamma: float = 0.1

    def validate(self) -> None:
        if self.defense not in DEFENSES:
            raise ConfigError(f"unknown defense {self.defense!r}; choose from {DEFENSES}")
        if len(self.layer_sizes) < 3:
            raise ConfigError("layer_sizes needs input, hidden and output widths")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.defense in CENTER_DEFENSES and self.center_lr <= 0:
            raise ConfigError(f"center_lr must be positive, got {self.center_lr}")
        if self.early_stop_epoch is not None and self.early_stop_epoch < 1:
            raise ConfigError("early_stop_epoch must be >= 1 when set")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lr_step_every is not None and self.lr_step_every < 1:
            raise ConfigError("lr_step_every must be >= 1 when set")
        if not 0.0 < self.lr_step_gamma <= 1.0:
            raise ConfigError("lr_step_gamma must be in (0, 1]")
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ConfigError(f"smoothing_eps must be in [0, 1), got {self.smoothing_eps}")
        if self.penalty_beta < 0:
            raise ConfigError(f"penalty_beta must be >= 0, got {self.penalty_beta}")
        self.relax.validate()


@dataclass
class EpochRecord:
    epoch: int
    loss_rce: float
    loss_rcl: float
    loss_total: float
    rce_branches: dict[str, int]
    rcl_branches: dict[str, int]
    train_acc: float
    test_acc: float


def _classification_loss(config: TrainingConfig, logits, labels, epoch: int) -> LossResult:
    r = config.relax
    if config.defense == "ce":
        return losses.ce_loss(logits, labels)
    if config.defense == "relax_loss" or config.defense == "relaxed_center":
        return losses.relax_loss(logits, labels, r.alpha_rce, epoch)
    if config.defense == "imp_relax_loss" or config.defense == "crl":
        return losses.imp_relax_loss(logits, labels, r.alpha_rce, r.tau_rce, epoch)
    if config.defense == "label_smoothing":
        return losses.label_smoothing_loss(logits, labels, config.smoothing_eps)
    if config.defense == "confidence_penalty":
        return losses.confidence_penalty_loss(logits, labels, config.penalty_beta)
    raise ConfigError(f"unknown defense {config.defense!r}")


def evaluate_accuracy(params: ModelParams, dataset: Dataset, chunk: int = 4096) -> float:
    """Argmax-prediction accuracy; argmax ties break toward the lowest class."""
    if dataset.n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    correct = 0
    for start in range(0, dataset.n, chunk):
        logits = forward(params, dataset.X[start : start + chunk]).logits
        correct += int((logits.argmax(axis=1) == dataset.y[start : start + chunk]).sum())
    return correct / dataset.n


def train(
    config: TrainingConfig, train_set: Dataset, test_set: Dataset
) -> tuple[ModelParams, CenterBank, list[EpochRecord]]:
    """Run the configured defense end to end; epoch indices start at 1.

    Returns the trained parameters, the center bank (empty for defenses that
    do not use centers) and one EpochRecord per epoch. Accuracies are
    refreshed every `eval_every` epochs (and on the first and last epoch);
    in-between records carry the last evaluated value.
    """
    config.validate()
    if train_set.dim != config.layer_sizes[0]:
        raise ConfigError(
            f"dataset dim {train_set.dim} != model input width {config.layer_sizes[0]}"
        )
    if train_set.n_classes != config.layer_sizes[-1]:
        raise ConfigError(
            f"dataset has {train_set.n_classes} classes, model outputs {config.layer_sizes[-1]}"
        )
    if test_set.dim != train_set.dim or test_set.n_classes != train_set.n_classes:
        raise ConfigError("train and test sets disagree on dim or class count")

    params = init_model(config.layer_sizes, config.seed)
    use_centers = config.defense in CENTER_DEFENSES
    feat_dim = config.layer_sizes[-2]
    if use_centers:
        centers = CenterBank.initialize(
            train_set.n_classes, feat_dim, config.seed, config.center_lr
        )
    else:
        centers = CenterBank.empty(feat_dim)

    n_epochs = config.epochs
    if config.early_stop_epoch is not None:
        n_epochs = min(n_epochs, config.early_stop_epoch)
    lr = config.lr
    velocity: GradSet | None = None
    records: list[EpochRecord] = []
    train_acc = test_acc = 0.0

    for epoch in range(1, n_epochs + 1):
        if (
            config.lr_step_every is not None
            and epoch > 1
            and (epoch - 1) % config.lr_step_every == 0
        ):
            lr *= config.lr_step_gamma
        order = np.random.default_rng(config.seed ^ epoch).permutation(train_set.n)
        sums = {"rce": 0.0, "rcl": 0.0, "total": 0.0}
        rce_counts = {PLAIN: 0, REFLECT: 0, SOFT: 0}
        rcl_counts = {PLAIN: 0, REFLECT: 0, SOFT: 0}
        for batch_no, start in enumerate(range(0, train_set.n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb, yb = train_set.X[idx], train_set.y[idx]
            try:
                trace = forward(params, xb)
            except ValueError as exc:  # overflow shows up as non-finite logits
                raise DivergenceError(
                    f"non-finite values at epoch {epoch}, batch {batch_no}: {exc}"
                ) from exc
            rce = _classification_loss(config, trace.logits, yb, epoch)
            if use_centers:
                probs = softmax(trace.logits)
                rcl = losses.relaxed_center_loss(
                    trace.features,
                    centers,
                    probs,
                    yb,
                    config.relax.alpha_rcl,
                    config.relax.tau_rcl,
                    epoch,
                )
                total = losses.crl_total(rce, rcl, config.relax.lam)
            else:
                rcl = None
                total = rce
            if not np.isfinite(total.loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}"
                )

            # centers first, then the model; both use this forward pass
            if rcl is not None and total.grad_centers:
                for cls, gvec in total.grad_centers.items():
                    centers.centers[cls] -= config.center_lr * gvec
            grads = backward(params, trace, total.grad_logits, total.grad_features)
            if config.momentum > 0.0:
                if velocity is None:
                    velocity = GradSet(
                        [np.zeros_like(w) for w in grads.encoder_weights],
                        [np.zeros_like(b) for b in grads.encoder_biases],
                        np.zeros_like(grads.classifier_weight),
                        np.zeros_like(grads.classifier_bias),
                    )
                for v, g in zip(velocity.arrays(), grads.arrays()):
                    v *= config.momentum
                    v += g
                grads = velocity
            sgd_step(params, grads, lr, config.weight_decay)

            weight = idx.size
            sums["rce"] += rce.loss * weight
            sums["rcl"] += (rcl.loss if rcl is not None else 0.0) * weight
            sums["total"] += total.loss * weight
            if rce.branch is not None:
                rce_counts[rce.branch] += 1
            if rcl is not None:
                rcl_counts[rcl.branch] += 1

        if epoch == 1 or epoch == n_epochs or epoch % config.eval_every == 0:
            train_acc = evaluate_accuracy(params, train_set)
            test_acc = evaluate_accuracy(params, test_set)
        records.append(
            EpochRecord(
                epoch=epoch,
                loss_rce=sums["rce"] / train_set.n,
                loss_rcl=sums["rcl"] / train_set.n,
                loss_total=sums["total"] / train_set.n,
                rce_branches=dict(rce_counts),
                rcl_branches=dict(rcl_counts),
                train_acc=train_acc,
                test_acc=test_acc,
            )
        )
    return params, centers, records


_HISTORY_COLUMNS = [
    "epoch",
    "loss_rce",
    "loss_rcl",
    "loss_total",
    "rce_plain",
    "rce_reflect",
    "rce_soft",
    "rcl_plain",
    "rcl_reflect",
    "rcl_soft",
    "train_acc",
    "test_acc",
]


def write_history_csv(records: list[EpochRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HISTORY_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.epoch,
                    repr(r.loss_rce),
                    repr(r.loss_rcl),
                    repr(r.loss_total),
                    r.rce_branches[PLAIN],
                    r.rce_branches[REFLECT],
                    r.rce_branches[SOFT],
                    r.rcl_branches[PLAIN],
                    r.rcl_branches[REFLECT],
                    r.rcl_branches[SOFT],
                    repr(r.train_acc),
                    repr(r.test_acc),
                ]
            )


def shadow_config(config: TrainingConfig, seed: int) -> TrainingConfig:
    """Same defense and hyper-parameters, different seed (adaptive protocol)."""
    return replace(config, seed=seed)
