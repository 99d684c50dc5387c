"""Configurable MLP split into a ReLU encoder and a linear classifier.

The encoder maps inputs through one or more Linear+ReLU layers; its last
activation is the feature vector that center-based losses operate on. The
classifier is a single linear layer on top of those features. Forward keeps
every intermediate needed for an exact analytic backward pass, so gradient
correctness can be pinned against finite differences.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = [
    "ModelParams",
    "ForwardTrace",
    "GradSet",
    "init_model",
    "forward",
    "backward",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class ModelParams:
    encoder_weights: list[np.ndarray]  # layer l: (d_{l-1}, d_l)
    encoder_biases: list[np.ndarray]
    classifier_weight: np.ndarray  # (d_feat, C)
    classifier_bias: np.ndarray  # (C,)

    @property
    def layer_sizes(self) -> list[int]:
        sizes = [self.encoder_weights[0].shape[0]]
        sizes += [w.shape[1] for w in self.encoder_weights]
        sizes.append(self.classifier_weight.shape[1])
        return sizes

    @property
    def input_dim(self) -> int:
        return self.encoder_weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.classifier_weight.shape[0]

    @property
    def n_classes(self) -> int:
        return self.classifier_weight.shape[1]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in declaration order (checkpoint layout)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.encoder_weights, self.encoder_biases):
            out += [w, b]
        out += [self.classifier_weight, self.classifier_bias]
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            [w.copy() for w in self.encoder_weights],
            [b.copy() for b in self.encoder_biases],
            self.classifier_weight.copy(),
            self.classifier_bias.copy(),
        )


@dataclass
class ForwardTrace:
    x: np.ndarray  # (B, d_in)
    pre_activations: list[np.ndarray]  # encoder z per layer, (B, d_l)
    activations: list[np.ndarray]  # encoder relu(z) per layer
    features: np.ndarray  # (B, d_feat), classifier input
    logits: np.ndarray  # (B, C)


@dataclass
class GradSet:
    encoder_weights: list[np.ndarray]
    encoder_biases: list[np.ndarray]
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray
    input_grad: np.ndarray | None = field(default=None)

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.encoder_weights, self.encoder_biases):
            out += [w, b]
        out += [self.classifier_weight, self.classifier_bias]
        return out


def init_model(layer_sizes: list[int], seed: int) -> ModelParams:
    """He-style fan-in uniform weights, zero biases, deterministic per seed."""
    if len(layer_sizes) < 3:
        raise ConfigError(
            f"layer_sizes needs input, >=1 hidden and output widths, got {layer_sizes}"
        )
    if any(int(s) < 1 for s in layer_sizes):
        raise ConfigError(f"layer widths must be positive, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    enc_w, enc_b = [], []
    for fan_in, fan_out in zip(layer_sizes[:-2], layer_sizes[1:-1]):
        limit = np.sqrt(6.0 / fan_in)
        enc_w.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        enc_b.append(np.zeros(fan_out))
    fan_in, n_out = layer_sizes[-2], layer_sizes[-1]
    limit = np.sqrt(6.0 / fan_in)
    clf_w = rng.uniform(-limit, limit, size=(fan_in, n_out))
    clf_b = np.zeros(n_out)
    return ModelParams(enc_w, enc_b, clf_w, clf_b)


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(
            f"input must be (B, {params.input_dim}), got {x.shape}"
        )
    pre, post = [], []
    a = x
    for w, b in zip(params.encoder_weights, params.encoder_biases):
        z = a @ w + b
        a = np.maximum(z, 0.0)
        pre.append(z)
        post.append(a)
    logits = a @ params.classifier_weight + params.classifier_bias
    if not np.all(np.isfinite(logits)):
        raise ValueError("forward produced non-finite logits")
    return ForwardTrace(x=x, pre_activations=pre, activations=post, features=a, logits=logits)


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    grad_logits: np.ndarray | None,
    grad_features: np.ndarray | None = None,
    want_input_grad: bool = False,
) -> GradSet:
    """Exact chain-rule gradients for the merged upstream gradients.

    `grad_logits` flows through the classifier and then the encoder;
    `grad_features` is injected at the classifier input, so it reaches the
    encoder only (this is how center-loss gradients bypass the classifier).
    Either may be None, meaning no contribution from that path.
    """
    batch = trace.x.shape[0]
    if grad_logits is None and grad_features is None:
        raise ValueError("backward needs grad_logits and/or grad_features")
    if grad_logits is not None:
        grad_logits = np.asarray(grad_logits, dtype=np.float64)
        if grad_logits.shape != trace.logits.shape:
            raise DimensionError(
                f"grad_logits shape {grad_logits.shape} != logits {trace.logits.shape}"
            )
        d_clf_w = trace.features.T @ grad_logits
        d_clf_b = grad_logits.sum(axis=0)
        d_feat = grad_logits @ params.classifier_weight.T
    else:
        d_clf_w = np.zeros_like(params.classifier_weight)
        d_clf_b = np.zeros_like(params.classifier_bias)
        d_feat = np.zeros((batch, params.feature_dim))
    if grad_features is not None:
        grad_features = np.asarray(grad_features, dtype=np.float64)
        if grad_features.shape != trace.features.shape:
            raise DimensionError(
                f"grad_features shape {grad_features.shape} != features {trace.features.shape}"
            )
        d_feat = d_feat + grad_features

    n_enc = len(params.encoder_weights)
    d_enc_w: list[np.ndarray | None] = [None] * n_enc
    d_enc_b: list[np.ndarray | None] = [None] * n_enc
    upstream = d_feat
    for layer in range(n_enc - 1, -1, -1):
        dz = upstream * (trace.pre_activations[layer] > 0.0)
        a_prev = trace.x if layer == 0 else trace.activations[layer - 1]
        d_enc_w[layer] = a_prev.T @ dz
        d_enc_b[layer] = dz.sum(axis=0)
        upstream = dz @ params.encoder_weights[layer].T
    return GradSet(
        encoder_weights=d_enc_w,  # type: ignore[arg-type]
        encoder_biases=d_enc_b,  # type: ignore[arg-type]
        classifier_weight=d_clf_w,
        classifier_bias=d_clf_b,
        input_grad=upstream if want_input_grad else None,
    )


def sgd_step(params: ModelParams, grads: GradSet, lr: float, weight_decay: float = 0.0) -> None:
    """In-place update theta <- theta - lr * (grad + weight_decay * theta).

    Two sequential steps equal one step with summed gradients only when both
    gradients were computed from the same parameter snapshot; recomputing
    between steps breaks that equivalence.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter {p.shape}")
        if weight_decay != 0.0:
            p -= lr * (g + weight_decay * p)
        else:
            p -= lr * g


# --- checkpoint format: JSON manifest + flat little-endian float64 blob ---

_MANIFEST_NAME = "model.json"
_PARAMS_NAME = "model.bin"
_CENTERS_NAME = "centers.bin"


def save_checkpoint(
    directory: str,
    params: ModelParams,
    *,
    seed: int,
    epoch: int,
    centers: np.ndarray | None = None,
    center_lr: float | None = None,
) -> None:
    """Write model.json + model.bin (and centers.bin when centers exist).

    The binary blob holds every parameter array flattened row-major in
    declaration order: encoder W1, b1, W2, b2, ..., classifier W, b.
    """
    os.makedirs(directory, exist_ok=True)
    arrays = params.arrays()
    manifest = {
        "layer_sizes": params.layer_sizes,
        "seed": int(seed),
        "epoch": int(epoch),
        "dtype": "<f8",
        "param_count": int(sum(a.size for a in arrays)),
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    if centers is not None:
        manifest["centers"] = {
            "count": int(centers.shape[0]),
            "dim": int(centers.shape[1]) if centers.ndim == 2 else 0,
            "lr": center_lr,
        }
        with open(os.path.join(directory, _CENTERS_NAME), "wb") as fh:
            fh.write(np.ascontiguousarray(centers, dtype="<f8").tobytes())
    with open(os.path.join(directory, _PARAMS_NAME), "wb") as fh:
        fh.write(blob)
    with open(os.path.join(directory, _MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory: str) -> tuple[ModelParams, dict, np.ndarray | None]:
    """Inverse of save_checkpoint; returns (params, manifest, centers-or-None)."""
    with open(os.path.join(directory, _MANIFEST_NAME), encoding="utf-8") as fh:
        manifest = json.load(fh)
    sizes = manifest["layer_sizes"]
    with open(os.path.join(directory, _PARAMS_NAME), "rb") as fh:
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if flat.size != manifest["param_count"]:
        raise ValueError(
            f"checkpoint has {flat.size} values, manifest says {manifest['param_count']}"
        )
    params = init_model(sizes, seed=0)  # shapes only; values overwritten below
    offset = 0
    for a in params.arrays():
        a[...] = flat[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    centers = None
    if "centers" in manifest:
        meta = manifest["centers"]
        with open(os.path.join(directory, _CENTERS_NAME), "rb") as fh:
            raw = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
        centers = raw.reshape(meta["count"], meta["dim"]) if meta["count"] else raw.reshape(0, meta["dim"])
    return params, manifest, centers
