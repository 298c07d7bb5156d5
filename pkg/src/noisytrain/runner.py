"""Experiment commands: dataset generation, runs, ablations, reports.

Every output file is written atomically (temp file + rename) so an
interrupted run never leaves a truncated CSV behind.  With a fixed seed,
repeated runs produce byte-identical outputs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os

import numpy as np

from .config import ExperimentConfig
from .data import (LabeledDataset, NoiseSpec, apply_noise, load_dataset_csv,
                   make_gaussian_blobs, save_dataset_csv)
from .kernel import Matrix
from .experiment import RunResult, run
from .metrics import EpochMetrics
from .model import save_checkpoint
from .selection import export_selection_csv
from .training import AblationFlags

METRICS_COLUMNS = ["epoch", "phase", "R", "d_cutoff", "precision", "recall",
                   "roc_auc", "pseudo_recall", "test_acc", "train_acc_given",
                   "loss_lx", "loss_lu", "loss_reg", "loss_lc"]

ABLATION_ARMS = (
    ("full", AblationFlags(True, True, True)),
    ("no_balancing", AblationFlags(False, True, True)),
    ("no_cl", AblationFlags(True, False, True)),
    ("no_ensemble", AblationFlags(True, True, False)),
)


def build_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic train/test pair sharing the same class means.

    One blob draw covers both splits; the first per_class samples of each
    class form the train set, the remainder the test set.  Noise touches
    the train split only.
    """
    d = cfg.dataset
    pooled = make_gaussian_blobs(d.num_classes, d.per_class + d.test_per_class,
                                 d.dims, d.separation, cfg.seed)
    block = d.per_class + d.test_per_class
    train_rows, test_rows = [], []
    for c in range(d.num_classes):
        start = c * block
        train_rows.append(np.arange(start, start + d.per_class))
        test_rows.append(np.arange(start + d.per_class, start + block))
    train_idx = np.concatenate(train_rows)
    test_idx = np.concatenate(test_rows)

    def subset(idx):
        return LabeledDataset(
            Matrix(pooled.features.data[idx]),
            pooled.true_labels[idx].copy(),
            pooled.given_labels[idx].copy(),
            d.num_classes,
        )

    train = subset(train_idx)
    test = subset(test_idx)
    spec = NoiseSpec(kind=cfg.noise.kind, rate=cfg.noise.rate, seed=cfg.seed,
                     flip_map=cfg.noise.flip_map)
    return apply_noise(train, spec), test


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def write_metrics_csv(rows: list[EpochMetrics], path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([
                r.epoch, r.phase, _fmt(r.filter_rate), _fmt(r.d_cutoff),
                _fmt(r.precision), _fmt(r.recall), _fmt(r.roc_auc),
                _fmt(r.pseudo_recall), _fmt(r.test_acc), _fmt(r.train_acc_given),
                _fmt(r.loss_lx), _fmt(r.loss_lu), _fmt(r.loss_reg), _fmt(r.loss_lc),
            ])
    os.replace(tmp, path)


def _write_json(payload: dict, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def summarize(rows: list[EpochMetrics]) -> dict:
    ssl_rows = [r for r in rows if r.phase == "ssl"]
    return {
        "best_acc": max(r.test_acc for r in rows) if rows else None,
        "last_acc": rows[-1].test_acc if rows else None,
        "final_R": ssl_rows[-1].filter_rate if ssl_rows else None,
        "final_auc": ssl_rows[-1].roc_auc if ssl_rows else None,
        "first_ssl_class_counts": ssl_rows[0].class_counts if ssl_rows else None,
        "final_class_counts": ssl_rows[-1].class_counts if ssl_rows else None,
    }


def _dataset_path(out_dir: str) -> str:
    return os.path.join(out_dir, "dataset.csv")


def cmd_generate(cfg: ExperimentConfig) -> str:
    """Write the (noisy) train split snapshot; idempotent per seed."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    train, _ = build_datasets(cfg)
    path = _dataset_path(cfg.output_dir)
    save_dataset_csv(train, path)
    return path


def cmd_run(cfg: ExperimentConfig, export_selection: bool = False) -> dict:
    """Run the full pipeline; emit metrics CSV, checkpoint, summary JSON."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    train, test = build_datasets(cfg)
    cached = _dataset_path(cfg.output_dir)
    if os.path.exists(cached):
        train = load_dataset_csv(cached, num_classes=cfg.dataset.num_classes)
        if len(train) != cfg.dataset.num_classes * cfg.dataset.per_class:
            raise ValueError(f"cached dataset {cached} does not match the config")
    else:
        save_dataset_csv(train, cached)

    on_epoch = None
    if export_selection:
        def on_epoch(epoch, record):
            for half in record.halves:
                path = os.path.join(cfg.output_dir,
                                    f"selection_epoch{epoch:03d}_net{half.net_index}.csv")
                export_selection_csv(half.selection, half.report, train.given_labels, path)

    result: RunResult = run(
        train, test, cfg.hyperparams, cfg.arch.hidden, cfg.arch.embed_dim,
        cfg.augmentation, cfg.cutoff_params(), cfg.ablation,
        cfg.selection.quota_mode, on_epoch=on_epoch)

    write_metrics_csv(result.rows, os.path.join(cfg.output_dir, "metrics.csv"))
    save_checkpoint(result.twins, os.path.join(cfg.output_dir, "checkpoint.bin"))
    summary = summarize(result.rows)
    _write_json(summary, os.path.join(cfg.output_dir, "summary.json"))
    return summary


def cmd_ablate(cfg: ExperimentConfig, export_selection: bool = False) -> dict:
    """Run the four arms with a shared seed and emit a comparison table."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    summaries = {}
    for arm_name, flags in ABLATION_ARMS:
        arm_cfg = dataclasses.replace(
            cfg, ablation=flags, output_dir=os.path.join(cfg.output_dir, arm_name))
        summaries[arm_name] = cmd_run(arm_cfg, export_selection=export_selection)

    table_path = os.path.join(cfg.output_dir, "ablation_summary.csv")
    tmp = table_path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["arm", "best_acc", "last_acc", "final_R", "final_auc",
                    "first_ssl_hist_ratio", "final_hist_ratio"])
        for arm_name, _ in ABLATION_ARMS:
            s = summaries[arm_name]
            w.writerow([
                arm_name, _fmt(s["best_acc"]), _fmt(s["last_acc"]),
                _fmt(s["final_R"]), _fmt(s["final_auc"]),
                _fmt(hist_ratio(s["first_ssl_class_counts"])),
                _fmt(hist_ratio(s["final_class_counts"])),
            ])
    os.replace(tmp, table_path)
    return summaries


def hist_ratio(counts) -> float:
    """Imbalance measure max/min of per-class selected counts."""
    if counts is None or len(counts) == 0:
        return float("nan")
    largest = max(counts)
    smallest = min(counts)
    if smallest == 0:
        return float("inf")
    return largest / smallest


def cmd_report(metrics_path: str, out_path: str) -> str:
    """Flatten a metrics CSV into plot-ready long format."""
    with open(metrics_path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        rows = list(r)
    tmp = out_path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "phase", "metric", "value"])
        for row in rows:
            epoch, phase = row[0], row[1]
            for name, value in zip(header[2:], row[2:]):
                if value != "":
                    w.writerow([epoch, phase, name, value])
    os.replace(tmp, out_path)
    return out_path
