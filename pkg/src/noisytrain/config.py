"""Experiment configuration: strict JSON with validated ranges.

Unknown keys are rejected outright so a mistyped hyperparameter name
fails fast instead of silently running with defaults.  Every omitted
field falls back to the documented default.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .data import AugmentationSpec, validate_flip_map
from .selection import CutoffParams
from .training import AblationFlags, Hyperparams


class ConfigError(Exception):
    """Base class for configuration problems."""


class ConfigFileError(ConfigError):
    """The config file is missing or unreadable."""


class ConfigSyntaxError(ConfigError):
    """The config file is not valid JSON."""


class ConfigKeyError(ConfigError):
    """An unknown key appeared in the config."""


class ConfigValueError(ConfigError):
    """A config value has the wrong type or is out of range."""


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 4
    per_class: int = 250
    test_per_class: int = 100
    dims: int = 8
    separation: float = 8.0


@dataclass(frozen=True)
class NoiseConfig:
    kind: str = "symmetric"
    rate: float = 0.5
    flip_map: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ArchConfig:
    hidden: int = 64
    embed_dim: int = 16


@dataclass(frozen=True)
class SelectionConfig:
    tau: float = 5.0
    d_mu: float = 0.7
    quota_mode: str = "class_fraction"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    arch: ArchConfig = field(default_factory=ArchConfig)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    ablation: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0
    output_dir: str = "runs/experiment"

    def cutoff_params(self) -> CutoffParams:
        return CutoffParams(tau=self.selection.tau, d_mu=self.selection.d_mu)


_RANGES = {
    "dataset.num_classes": (int, 2, 1000),
    "dataset.per_class": (int, 1, 10_000_000),
    "dataset.test_per_class": (int, 1, 10_000_000),
    "dataset.dims": (int, 2, 100_000),
    "dataset.separation": (float, 1e-9, 1e9),
    "noise.rate": (float, 0.0, 1.0),
    "augmentation.weak_sigma": (float, 0.0, 1e9),
    "augmentation.strong_sigma": (float, 0.0, 1e9),
    "augmentation.strong_dropout_prob": (float, 0.0, 0.999999),
    "arch.hidden": (int, 1, 1_000_000),
    "arch.embed_dim": (int, 1, 1_000_000),
    "hyperparams.T": (float, 1e-9, 1e9),
    "hyperparams.lambda_u": (float, 0.0, 1e9),
    "hyperparams.lambda_c": (float, 0.0, 1e9),
    "hyperparams.lambda_r": (float, 0.0, 1e9),
    "hyperparams.kappa": (float, 1e-9, 1e9),
    "hyperparams.d_omega": (float, 0.0, 1.0),
    "hyperparams.alpha": (float, 1e-9, 1e9),
    "hyperparams.lr": (float, 1e-12, 1e9),
    "hyperparams.momentum": (float, 0.0, 0.999999),
    "hyperparams.weight_decay": (float, 0.0, 1e9),
    "hyperparams.batch_size": (int, 1, 10_000_000),
    "hyperparams.warmup_epochs": (int, 0, 10_000_000),
    "hyperparams.total_epochs": (int, 0, 10_000_000),
    "hyperparams.lr_decay_factor": (float, 1e-9, 1.0),
    "hyperparams.lr_decay_every": (int, 1, 10_000_000),
    "selection.tau": (float, 1e-9, 1e9),
    "selection.d_mu": (float, 1e-9, 0.999999),
    "seed": (int, 0, 2 ** 62),
}

_SECTIONS = {
    "dataset": ("num_classes", "per_class", "test_per_class", "dims", "separation"),
    "noise": ("kind", "rate", "flip_map"),
    "augmentation": ("weak_sigma", "strong_sigma", "strong_dropout_prob"),
    "arch": ("hidden", "embed_dim"),
    "hyperparams": ("T", "lambda_u", "lambda_c", "lambda_r", "kappa", "d_omega",
                    "alpha", "lr", "momentum", "weight_decay", "batch_size",
                    "warmup_epochs", "total_epochs", "lr_decay_factor",
                    "lr_decay_every"),
    "selection": ("tau", "d_mu", "quota_mode"),
    "ablation": ("balancing", "contrastive", "ensemble"),
}

_TOP_LEVEL = tuple(_SECTIONS) + ("seed", "output_dir")


def _check_range(dotted: str, value):
    kind, lo, hi = _RANGES[dotted]
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValueError(f"{dotted}: expected an integer, got {value!r}")
        v = value
    else:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValueError(f"{dotted}: expected a number, got {value!r}")
        v = float(value)
    if not lo <= v <= hi:
        raise ConfigValueError(f"{dotted}: {value!r} out of range [{lo}, {hi}]")
    return kind(v)


def _check_section(raw: dict, section: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigValueError(f"{section}: expected an object")
    out = {}
    for key, value in raw.items():
        if key not in _SECTIONS[section]:
            raise ConfigKeyError(f"unknown key: {section}.{key}")
        out[key] = value
    return out


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigValueError("top level: expected a JSON object")
    for key in raw:
        if key not in _TOP_LEVEL:
            raise ConfigKeyError(f"unknown key: {key}")

    values: dict[str, dict] = {}
    for section in _SECTIONS:
        values[section] = _check_section(raw.get(section, {}), section)

    for dotted, spec in _RANGES.items():
        parts = dotted.split(".")
        if len(parts) == 1:
            continue
        section, key = parts
        if key in values[section]:
            values[section][key] = _check_range(dotted, values[section][key])

    noise = values["noise"]
    kind = noise.get("kind", "symmetric")
    if kind not in ("symmetric", "asymmetric"):
        raise ConfigValueError(f"noise.kind: expected symmetric|asymmetric, got {kind!r}")
    num_classes = values["dataset"].get("num_classes", DatasetConfig.num_classes)
    flip_map = noise.get("flip_map")
    if flip_map is not None:
        if not isinstance(flip_map, list):
            raise ConfigValueError("noise.flip_map: expected a list of class indices")
        try:
            flip_map = validate_flip_map(flip_map, num_classes)
        except (TypeError, ValueError) as exc:
            raise ConfigValueError(f"noise.flip_map: {exc}") from exc

    quota_mode = values["selection"].get("quota_mode", "class_fraction")
    if quota_mode not in ("class_fraction", "dataset_fraction"):
        raise ConfigValueError(
            f"selection.quota_mode: expected class_fraction|dataset_fraction, got {quota_mode!r}")

    for key in ("balancing", "contrastive", "ensemble"):
        if key in values["ablation"] and not isinstance(values["ablation"][key], bool):
            raise ConfigValueError(f"ablation.{key}: expected a boolean")

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigValueError(f"seed: expected an integer, got {seed!r}")
    output_dir = raw.get("output_dir", "runs/experiment")
    if not isinstance(output_dir, str):
        raise ConfigValueError("output_dir: expected a string")

    strong = values["augmentation"].get("strong_sigma", AugmentationSpec.strong_sigma)
    weak = values["augmentation"].get("weak_sigma", AugmentationSpec.weak_sigma)
    if strong < weak:
        raise ConfigValueError("augmentation.strong_sigma: must be >= weak_sigma")

    hp_values = dict(values["hyperparams"])
    hp_values["seed"] = seed
    warmup = hp_values.get("warmup_epochs", Hyperparams.warmup_epochs)
    total = hp_values.get("total_epochs", Hyperparams.total_epochs)
    if total < warmup:
        raise ConfigValueError("hyperparams.total_epochs: must be >= warmup_epochs")

    try:
        return ExperimentConfig(
            dataset=DatasetConfig(**values["dataset"]),
            noise=NoiseConfig(kind=kind, rate=float(noise.get("rate", 0.5)), flip_map=flip_map),
            augmentation=AugmentationSpec(**values["augmentation"]),
            arch=ArchConfig(**values["arch"]),
            hyperparams=Hyperparams(**hp_values),
            selection=SelectionConfig(
                tau=float(values["selection"].get("tau", 5.0)),
                d_mu=float(values["selection"].get("d_mu", 0.7)),
                quota_mode=quota_mode,
            ),
            ablation=AblationFlags(**values["ablation"]),
            seed=seed,
            output_dir=output_dir,
        )
    except ValueError as exc:
        raise ConfigValueError(str(exc)) from exc


def parse_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigFileError(f"config file not found: {path}")
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed JSON in {path}: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical dict form; parsing it again yields an equal config."""
    return {
        "dataset": {
            "num_classes": cfg.dataset.num_classes,
            "per_class": cfg.dataset.per_class,
            "test_per_class": cfg.dataset.test_per_class,
            "dims": cfg.dataset.dims,
            "separation": cfg.dataset.separation,
        },
        "noise": {
            "kind": cfg.noise.kind,
            "rate": cfg.noise.rate,
            **({"flip_map": list(cfg.noise.flip_map)} if cfg.noise.flip_map else {}),
        },
        "augmentation": {
            "weak_sigma": cfg.augmentation.weak_sigma,
            "strong_sigma": cfg.augmentation.strong_sigma,
            "strong_dropout_prob": cfg.augmentation.strong_dropout_prob,
        },
        "arch": {"hidden": cfg.arch.hidden, "embed_dim": cfg.arch.embed_dim},
        "hyperparams": {
            "T": cfg.hyperparams.T,
            "lambda_u": cfg.hyperparams.lambda_u,
            "lambda_c": cfg.hyperparams.lambda_c,
            "lambda_r": cfg.hyperparams.lambda_r,
            "kappa": cfg.hyperparams.kappa,
            "d_omega": cfg.hyperparams.d_omega,
            "alpha": cfg.hyperparams.alpha,
            "lr": cfg.hyperparams.lr,
            "momentum": cfg.hyperparams.momentum,
            "weight_decay": cfg.hyperparams.weight_decay,
            "batch_size": cfg.hyperparams.batch_size,
            "warmup_epochs": cfg.hyperparams.warmup_epochs,
            "total_epochs": cfg.hyperparams.total_epochs,
            "lr_decay_factor": cfg.hyperparams.lr_decay_factor,
            "lr_decay_every": cfg.hyperparams.lr_decay_every,
        },
        "selection": {
            "tau": cfg.selection.tau,
            "d_mu": cfg.selection.d_mu,
            "quota_mode": cfg.selection.quota_mode,
        },
        "ablation": {
            "balancing": cfg.ablation.balancing,
            "contrastive": cfg.ablation.contrastive,
            "ensemble": cfg.ablation.ensemble,
        },
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }
