"""Command-line front end: gen-data, train, attack, sweep, report.

Every run is driven by a single JSON config plus an output directory, and is
reproducible byte for byte from its manifest. Exit codes: 0 success, 2 for
config/usage problems (including missing input files), 1 for runtime
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .attacks import (
    run_attack_suite,
    train_shadow_models,
    write_histogram_csv,
    write_reports_json,
)
from .config import (
    ExperimentConfig,
    build_dataset,
    config_hash,
    expand_sweep,
    load_config,
)
from .data import SplitPlan, gen_blobs, make_split, save_csv, standardize
from .errors import ConfigError, ParseError
from .model import load_checkpoint, save_checkpoint
from .report import format_table, render_run_report, render_sweep_report
from .trainer import train, write_history_csv

__all__ = ["main"]


def _write_manifest(out_dir: str, payload: dict) -> None:
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _manifest(command: str, cfg: ExperimentConfig, artifacts: list[str], t0: float) -> dict:
    return {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seeds": {
            "training": cfg.training.seed,
            "split_base": cfg.split_base_seed,
            "shadow": [cfg.split_base_seed + i for i in range(cfg.n_shadow)],
            "attack": cfg.suite.attack_seed,
        },
        "artifacts": sorted(artifacts),
        "wall_clock_s": time.time() - t0,
        "versions": {
            "mialab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def _prepare(cfg: ExperimentConfig):
    """Dataset (standardized on target-train statistics) and split plan."""
    dataset = build_dataset(cfg)
    plan = make_split(dataset, cfg.split_base_seed, cfg.n_shadow)
    return standardize(dataset, plan.target_train), plan


def run_training(cfg: ExperimentConfig, out_dir: str) -> dict:
    t0 = time.time()
    dataset, plan = _prepare(cfg)
    params, centers, records = train(
        cfg.training, dataset.subset(plan.target_train), dataset.subset(plan.target_test)
    )
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(
        out_dir,
        params,
        seed=cfg.training.seed,
        epoch=records[-1].epoch,
        centers=centers.centers,
        center_lr=centers.center_lr,
    )
    write_history_csv(records, os.path.join(out_dir, "history.csv"))
    plan.save(os.path.join(out_dir, "split.json"))
    artifacts = ["model.json", "model.bin", "centers.bin", "history.csv", "split.json"]
    _write_manifest(out_dir, _manifest("train", cfg, artifacts, t0))
    return {"train_acc": records[-1].train_acc, "test_acc": records[-1].test_acc}


def run_attacks(cfg: ExperimentConfig, target_dir: str, out_dir: str) -> dict:
    t0 = time.time()
    params, _, _ = load_checkpoint(target_dir)
    plan = SplitPlan.load(os.path.join(target_dir, "split.json"))
    raw = build_dataset(cfg)
    if raw.n != plan.n_total:
        raise ConfigError(
            f"config dataset has {raw.n} rows but the target's split plan covers "
            f"{plan.n_total}; attack with the target's own config"
        )
    dataset = standardize(raw, plan.target_train)

    target_manifest = os.path.join(target_dir, "manifest.json")
    if os.path.exists(target_manifest):
        with open(target_manifest, encoding="utf-8") as fh:
            recorded = json.load(fh).get("config_sha256")
        if recorded is not None and recorded != config_hash(cfg):
            print(
                "warning: attack config differs from the target's training config; "
                "the adaptive protocol expects the same defense settings",
                file=sys.stderr,
            )

    shadows = None
    if "nn" in cfg.suite.attacks:
        shadows = train_shadow_models(dataset, plan, cfg.training)
    result = run_attack_suite(params, dataset, plan, cfg.suite, shadows)

    os.makedirs(out_dir, exist_ok=True)
    artifacts = ["attack_reports.json", "hist_distance_to_boundary.csv"]
    write_reports_json(result.reports, os.path.join(out_dir, "attack_reports.json"))
    write_histogram_csv(
        result.boundary, os.path.join(out_dir, "hist_distance_to_boundary.csv")
    )
    for rep in result.reports:
        name = f"hist_{rep.attack}.csv"
        write_histogram_csv(rep.histogram, os.path.join(out_dir, name))
        artifacts.append(name)
    _write_manifest(out_dir, _manifest("attack", cfg, artifacts, t0))
    return {f"auc_{rep.attack}": rep.auc for rep in result.reports}


def cmd_gen_data(args: argparse.Namespace) -> int:
    dataset = gen_blobs(args.seed, args.n, args.d, args.classes, args.sep, args.noise)
    save_csv(dataset, args.out)
    print(f"wrote {dataset.n} rows ({dataset.dim} features, {dataset.n_classes} classes) to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    summary = run_training(cfg, args.out)
    print(
        f"trained defense={cfg.training.defense} "
        f"train_acc={summary['train_acc']:.4f} test_acc={summary['test_acc']:.4f} -> {args.out}"
    )
    return 0


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    aucs = run_attacks(cfg, args.target, args.out)
    print(" ".join(f"{k}={v:.4f}" for k, v in aucs.items()) + f" -> {args.out}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    t0 = time.time()
    cfg = load_config(args.config)
    points = expand_sweep(cfg)
    os.makedirs(args.out, exist_ok=True)
    grid_keys = list(points[0][0].keys())
    auc_keys: list[str] = [f"auc_{a}" for a in cfg.suite.attacks]
    rows = []
    for k, (point, point_cfg) in enumerate(points):
        sub = os.path.join(args.out, f"point_{k:03d}")
        train_summary = run_training(point_cfg, sub)
        attack_summary = run_attacks(point_cfg, sub, sub)
        rows.append({**point, **train_summary, **attack_summary})
        print(
            f"point {k}: "
            + " ".join(f"{key}={point[key]}" for key in grid_keys)
            + f" test_acc={train_summary['test_acc']:.4f} "
            + " ".join(f"{key}={attack_summary[key]:.4f}" for key in auc_keys)
        )
    columns = grid_keys + ["train_acc", "test_acc"] + auc_keys
    with open(os.path.join(args.out, "sweep.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(row[c])) for c in columns])
    _write_manifest(args.out, _manifest("sweep", cfg, ["sweep.csv"], t0))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    if not args.run and not args.sweep:
        print("error: report needs --run and/or --sweep", file=sys.stderr)
        return 2
    written: list[str] = []
    if args.run:
        written += render_run_report(args.run, args.out)
        summary_path = os.path.join(args.out or args.run, "summary.csv")
        if os.path.exists(summary_path):
            with open(summary_path, encoding="utf-8", newline="") as fh:
                rows = list(csv.DictReader(fh))
            print(
                format_table(
                    ["attack", "auc", "thresholded_accuracy"],
                    [
                        [r["attack"], float(r["auc"]), float(r["thresholded_accuracy"])]
                        for r in rows
                    ],
                )
            )
    if args.sweep:
        written += render_sweep_report(args.sweep, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mialab",
        description="Membership-inference attack laboratory: train defended models, "
        "attack them, and report the privacy-utility trade-off.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a gaussian-blob CSV dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--d", type=int, required=True, help="feature dimension")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--sep", type=float, required=True, help="pairwise distance of class means")
    p.add_argument("--noise", type=float, default=0.0, help="fraction of labels rerolled")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the target model for a config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the attack suite against a trained target")
    p.add_argument("--target", required=True, help="directory written by `train`")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("sweep", help="train+attack over the config's parameter grid")
    p.add_argument("--config", required=True, help="config JSON with a `sweep` section")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render summary tables and figures from stored runs")
    p.add_argument("--run", help="train/attack output directory")
    p.add_argument("--sweep", help="sweep output directory")
    p.add_argument("--out", help="where to write figures (default: alongside inputs)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
