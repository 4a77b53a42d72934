"""Experiment configuration: JSON round-trip with every defaulted field
echoed explicitly, so a resolved config reproduces its run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import load_dataset, load_fixture, synth_generate
from .errors import ConfigError, DataError
from .training import AdamConfig, TrainConfig

DATASET_KINDS = ("busi", "fixture", "synth")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synth"
    root: str | None = None  # busi / fixture layouts
    synth_seed: int = 0
    per_class: int = 32
    size: int = 64

    def validate(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind: expected one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind in ("busi", "fixture") and not self.root:
            raise ConfigError(f"dataset.root: required for kind {self.kind!r}")
        if self.kind == "synth":
            if self.per_class < 5:
                raise ConfigError("dataset.per_class: synthetic sets need at least 5 per class")
            if self.size < 16:
                raise ConfigError("dataset.size: must be >= 16")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    variant: str = "aresnet-vit"
    scale: str = "tiny"
    seed: int = 0
    out_dir: str = "out"
    threshold: float = 0.5
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 20
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        from .fusion import VARIANTS

        self.dataset.validate()
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: unknown {self.variant!r}; choose one of {sorted(VARIANTS)}")
        if self.scale not in ("tiny", "full"):
            raise ConfigError(f"scale: expected 'tiny' or 'full', got {self.scale!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold: must lie strictly inside (0, 1)")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr: must be > 0")

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            adam=AdamConfig(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps),
        )


def experiment_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "dataset": {
            "kind": cfg.dataset.kind,
            "root": cfg.dataset.root,
            "synth_seed": cfg.dataset.synth_seed,
            "per_class": cfg.dataset.per_class,
            "size": cfg.dataset.size,
        },
        "variant": cfg.variant,
        "scale": cfg.scale,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "threshold": cfg.threshold,
        "batch_size": cfg.batch_size,
        "max_epochs": cfg.max_epochs,
        "patience": cfg.patience,
        "lr": cfg.lr,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "adam_eps": cfg.adam_eps,
    }


def _typed(d: dict, path: str, key: str, kinds, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}{key}: missing required field")
        return default
    value = d[key]
    if value is None and type(None) in (kinds if isinstance(kinds, tuple) else (kinds,)):
        return None
    if isinstance(value, bool) or not isinstance(value, kinds):
        want = kinds[0].__name__ if isinstance(kinds, tuple) else kinds.__name__
        raise ConfigError(f"{path}{key}: expected {want}, got {value!r}")
    return value


def experiment_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"config: expected a JSON object, got {type(d).__name__}")
    known = set(experiment_to_dict(ExperimentConfig()))
    for key in d:
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration field")
    ds_raw = d.get("dataset", {})
    if not isinstance(ds_raw, dict):
        raise ConfigError("dataset: expected an object")
    dataset = DatasetConfig(
        kind=_typed(ds_raw, "dataset.", "kind", str, "synth"),
        root=_typed(ds_raw, "dataset.", "root", (str, type(None)), None),
        synth_seed=_typed(ds_raw, "dataset.", "synth_seed", int, 0),
        per_class=_typed(ds_raw, "dataset.", "per_class", int, 32),
        size=_typed(ds_raw, "dataset.", "size", int, 64),
    )
    cfg = ExperimentConfig(
        dataset=dataset,
        variant=_typed(d, "", "variant", str, "aresnet-vit"),
        scale=_typed(d, "", "scale", str, "tiny"),
        seed=_typed(d, "", "seed", int, 0),
        out_dir=_typed(d, "", "out_dir", str, "out"),
        threshold=_typed(d, "", "threshold", (float, int), 0.5),
        batch_size=_typed(d, "", "batch_size", int, 4),
        max_epochs=_typed(d, "", "max_epochs", int, 100),
        patience=_typed(d, "", "patience", int, 20),
        lr=_typed(d, "", "lr", (float, int), 1e-4),
        beta1=_typed(d, "", "beta1", (float, int), 0.9),
        beta2=_typed(d, "", "beta2", (float, int), 0.999),
        adam_eps=_typed(d, "", "adam_eps", (float, int), 1e-8),
    )
    cfg.validate()
    return cfg


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc
    return experiment_from_dict(raw)


def write_resolved_config(path, cfg: ExperimentConfig):
    with open(path, "w") as fh:
        json.dump(experiment_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_samples(ds: DatasetConfig) -> list:
    """Materialize the configured dataset; loader reports with errors fail."""
    ds.validate()
    if ds.kind == "synth":
        return synth_generate(seed=ds.synth_seed, per_class=ds.per_class, size=ds.size)
    loader = load_dataset if ds.kind == "busi" else load_fixture
    samples, report = loader(ds.root)
    if not report.ok():
        details = "; ".join(f"{sid}: {msg}" for sid, msg in report.errors[:5])
        raise DataError(f"dataset at {ds.root} has {len(report.errors)} bad samples ({details})")
    if not samples:
        raise DataError(f"dataset at {ds.root} contains no usable benign/malignant samples")
    return samples
