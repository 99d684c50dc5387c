"""Experiment configuration: one strict JSON document drives every command.

Unknown keys are hard errors at every nesting level (a typo in a sweep grid
must fail loudly, not silently run the default), and every error message
carries the field path. All randomness flows from seeds in the config; no
entropy is drawn from the environment.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field, replace

from .attacks import ATTACK_NAMES, SuiteConfig
from .data import Dataset, gen_blobs, load_csv
from .errors import ConfigError
from .losses import RelaxConfig
from .trainer import TrainingConfig

__all__ = [
    "GeneratorSpec",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "config_hash",
    "build_dataset",
    "expand_sweep",
    "SWEEP_KEYS",
]

SWEEP_KEYS = ("alpha_rce", "alpha_rcl", "lambda", "eps", "beta")

_REQUIRED = object()


@dataclass
class GeneratorSpec:
    seed: int
    n: int
    d: int
    classes: int
    separation: float
    label_noise: float


@dataclass
class ExperimentConfig:
    layer_sizes: list[int]
    training: TrainingConfig
    suite: SuiteConfig
    generator: GeneratorSpec | None = None
    csv_path: str | None = None
    split_base_seed: int = 0
    n_shadow: int = 5
    sweep: dict[str, list[float]] | None = None
    raw: dict = field(default_factory=dict)


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")


def _get(doc: dict, key: str, path: str, kind, default=_REQUIRED):
    if key not in doc:
        if default is _REQUIRED:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    value = doc[key]
    if kind in (int, float) and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got bool")
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _get_optional_int(doc: dict, key: str, path: str):
    if key not in doc or doc[key] is None:
        return None
    return _get(doc, key, path, int)


def _int_list(doc: dict, key: str, path: str) -> list[int]:
    value = _get(doc, key, path, list)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{path}.{key}: expected a list of ints")
    return list(value)


def parse_config(doc: dict) -> ExperimentConfig:
    _check_keys(doc, {"dataset", "model", "split", "training", "attack", "sweep"}, "config")

    ds = doc.get("dataset")
    if ds is None:
        raise ConfigError("config.dataset: required section is missing")
    _check_keys(ds, {"generator", "csv"}, "config.dataset")
    generator = None
    csv_path = None
    if ("generator" in ds) == ("csv" in ds):
        raise ConfigError("config.dataset: provide exactly one of 'generator' or 'csv'")
    if "generator" in ds:
        g = ds["generator"]
        _check_keys(
            g,
            {"seed", "n", "d", "classes", "separation", "label_noise"},
            "config.dataset.generator",
        )
        p = "config.dataset.generator"
        generator = GeneratorSpec(
            seed=_get(g, "seed", p, int, 0),
            n=_get(g, "n", p, int),
            d=_get(g, "d", p, int),
            classes=_get(g, "classes", p, int),
            separation=_get(g, "separation", p, float),
            label_noise=_get(g, "label_noise", p, float, 0.0),
        )
    else:
        csv_path = _get(ds, "csv", "config.dataset", str)

    model = doc.get("model")
    if model is None:
        raise ConfigError("config.model: required section is missing")
    _check_keys(model, {"layer_sizes"}, "config.model")
    layer_sizes = _int_list(model, "layer_sizes", "config.model")
    if len(layer_sizes) < 3:
        raise ConfigError("config.model.layer_sizes: need input, >=1 hidden, output widths")

    split = doc.get("split", {})
    _check_keys(split, {"base_seed", "n_shadow"}, "config.split")
    base_seed = _get(split, "base_seed", "config.split", int, 0)
    n_shadow = _get(split, "n_shadow", "config.split", int, 5)
    if n_shadow < 0:
        raise ConfigError("config.split.n_shadow: must be >= 0")

    tr = doc.get("training")
    if tr is None:
        raise ConfigError("config.training: required section is missing")
    _check_keys(
        tr,
        {
            "defense",
            "epochs",
            "batch_size",
            "lr",
            "center_lr",
            "seed",
            "eval_every",
            "early_stop_epoch",
            "momentum",
            "weight_decay",
            "lr_step_every",
            "lr_step_gamma",
            "relax",
            "smoothing_eps",
            "penalty_beta",
        },
        "config.training",
    )
    p = "config.training"
    relax_doc = tr.get("relax", {})
    _check_keys(
        relax_doc,
        {"alpha_rce", "alpha_rcl", "tau_rce", "tau_rcl", "lambda"},
        "config.training.relax",
    )
    rp = "config.training.relax"
    relax = RelaxConfig(
        alpha_rce=_get(relax_doc, "alpha_rce", rp, float, 0.0),
        alpha_rcl=_get(relax_doc, "alpha_rcl", rp, float, 0.0),
        tau_rce=_get(relax_doc, "tau_rce", rp, float, 0.0),
        tau_rcl=_get(relax_doc, "tau_rcl", rp, float, 0.0),
        lam=_get(relax_doc, "lambda", rp, float, 0.0),
    )
    training = TrainingConfig(
        layer_sizes=layer_sizes,
        defense=_get(tr, "defense", p, str),
        epochs=_get(tr, "epochs", p, int),
        batch_size=_get(tr, "batch_size", p, int),
        lr=_get(tr, "lr", p, float),
        center_lr=_get(tr, "center_lr", p, float, 0.001),
        relax=relax,
        smoothing_eps=_get(tr, "smoothing_eps", p, float, 0.0),
        penalty_beta=_get(tr, "penalty_beta", p, float, 0.0),
        early_stop_epoch=_get_optional_int(tr, "early_stop_epoch", p),
        seed=_get(tr, "seed", p, int, 0),
        eval_every=_get(tr, "eval_every", p, int, 1),
        momentum=_get(tr, "momentum", p, float, 0.0),
        weight_decay=_get(tr, "weight_decay", p, float, 0.0),
        lr_step_every=_get_optional_int(tr, "lr_step_every", p),
        lr_step_gamma=_get(tr, "lr_step_gamma", p, float, 0.1),
    )
    training.validate()

    att = doc.get("attack", {})
    _check_keys(att, {"attacks", "attack_seed", "histogram_bins", "nn"}, "config.attack")
    attacks = att.get("attacks", list(ATTACK_NAMES))
    if not isinstance(attacks, list) or not all(isinstance(a, str) for a in attacks):
        raise ConfigError("config.attack.attacks: expected a list of attack names")
    unknown = [a for a in attacks if a not in ATTACK_NAMES]
    if unknown:
        raise ConfigError(f"config.attack.attacks: unknown {unknown}; choose from {ATTACK_NAMES}")
    nn_doc = att.get("nn", {})
    _check_keys(nn_doc, {"epochs", "lr", "batch_size", "dropout"}, "config.attack.nn")
    np_path = "config.attack.nn"
    suite = SuiteConfig(
        attacks=list(attacks),
        attack_seed=_get(att, "attack_seed", "config.attack", int, 0),
        histogram_bins=_get(att, "histogram_bins", "config.attack", int, 20),
        nn_epochs=_get(nn_doc, "epochs", np_path, int, 50),
        nn_lr=_get(nn_doc, "lr", np_path, float, 0.01),
        nn_batch_size=_get(nn_doc, "batch_size", np_path, int, 256),
        nn_dropout=_get(nn_doc, "dropout", np_path, float, 0.5),
    )
    if suite.histogram_bins < 1:
        raise ConfigError("config.attack.histogram_bins: must be >= 1")
    if not 0.0 <= suite.nn_dropout < 1.0:
        raise ConfigError("config.attack.nn.dropout: must be in [0, 1)")
    if "nn" in suite.attacks and n_shadow < 1:
        raise ConfigError("config.split.n_shadow: the nn attack needs at least 1 shadow model")

    sweep = None
    if "sweep" in doc:
        sweep_doc = doc["sweep"]
        _check_keys(sweep_doc, set(SWEEP_KEYS), "config.sweep")
        sweep = {}
        for key, values in sweep_doc.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"config.sweep.{key}: expected a non-empty list")
            sweep[key] = [float(v) for v in values]

    if generator is not None:
        if generator.d != layer_sizes[0]:
            raise ConfigError(
                f"config: generator d={generator.d} != model input width {layer_sizes[0]}"
            )
        if generator.classes != layer_sizes[-1]:
            raise ConfigError(
                f"config: generator classes={generator.classes} != model output "
                f"width {layer_sizes[-1]}"
            )

    return ExperimentConfig(
        layer_sizes=layer_sizes,
        training=training,
        suite=suite,
        generator=generator,
        csv_path=csv_path,
        split_base_seed=base_seed,
        n_shadow=n_shadow,
        sweep=sweep,
        raw=doc,
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_config(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.generator is not None:
        g = cfg.generator
        return gen_blobs(g.seed, g.n, g.d, g.classes, g.separation, g.label_noise)
    dataset = load_csv(cfg.csv_path)
    if dataset.dim != cfg.layer_sizes[0]:
        raise ConfigError(
            f"config: csv dim {dataset.dim} != model input width {cfg.layer_sizes[0]}"
        )
    if dataset.n_classes != cfg.layer_sizes[-1]:
        raise ConfigError(
            f"config: csv has {dataset.n_classes} classes, model outputs {cfg.layer_sizes[-1]}"
        )
    return dataset


def _apply_override(cfg: ExperimentConfig, key: str, value: float) -> ExperimentConfig:
    tr = cfg.training
    if key == "alpha_rce":
        tr = replace(tr, relax=replace(tr.relax, alpha_rce=value))
    elif key == "alpha_rcl":
        tr = replace(tr, relax=replace(tr.relax, alpha_rcl=value))
    elif key == "lambda":
        tr = replace(tr, relax=replace(tr.relax, lam=value))
    elif key == "eps":
        tr = replace(tr, smoothing_eps=value)
    elif key == "beta":
        tr = replace(tr, penalty_beta=value)
    else:
        raise ConfigError(f"unknown sweep key {key!r}")
    return replace(cfg, training=tr)


def expand_sweep(cfg: ExperimentConfig) -> list[tuple[dict[str, float], ExperimentConfig]]:
    """Cartesian product of the sweep grid, in key declaration order."""
    if not cfg.sweep:
        raise ConfigError("config.sweep: empty or missing grid")
    keys = list(cfg.sweep.keys())
    points = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        point = dict(zip(keys, combo))
        sub = cfg
        for key, value in point.items():
            sub = _apply_override(sub, key, value)
        points.append((point, replace(sub, sweep=None)))
    return points
