"""Declarative pipeline configuration (one JSON document, validated on load)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .discriminant import check_weights
from .errors import ConfigError
from .ksvd import KsvdConfig
from .mlp import TrainConfig
from .selection import DasKsvdConfig, SelectionConfig


@dataclass(frozen=True)
class SegmentationSection:
    length: int = 128
    overlap: float = 0.75
    baseline_window: int = 512


@dataclass(frozen=True)
class KsvdSection:
    redundancy_factor: float = 2.0
    sparsity: int = 4
    max_sweeps: int = 30
    convergence_tol: float = 1e-4
    replace_weak_atoms: bool = True


@dataclass(frozen=True)
class DasSection:
    iterations: int = 20
    samples_per_class: int = 500
    tau1: float = 0.5
    tau2: float = 0.1


@dataclass(frozen=True)
class MeasureSection:
    alpha: float = 0.33
    beta: float = 0.17


@dataclass(frozen=True)
class SelectionSection:
    # atoms per class kept by MDCS / MDAS
    per_class: int = 20


@dataclass(frozen=True)
class DataSection:
    train_per_class: int = 7000
    val_per_class: int = 1500


@dataclass(frozen=True)
class MlpSection:
    hidden: int = 500
    max_epochs: int = 500
    patience: int = 25


@dataclass(frozen=True)
class ScreenSection:
    threshold: float = 15.0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    ksvd: KsvdSection = field(default_factory=KsvdSection)
    das: DasSection = field(default_factory=DasSection)
    measure: MeasureSection = field(default_factory=MeasureSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    data: DataSection = field(default_factory=DataSection)
    mlp: MlpSection = field(default_factory=MlpSection)
    screen: ScreenSection = field(default_factory=ScreenSection)

    # --- module configs -----------------------------------------------------
    def ksvd_config(self) -> KsvdConfig:
        return KsvdConfig(seed=self.seed, **asdict(self.ksvd))

    def das_config(self) -> DasKsvdConfig:
        return DasKsvdConfig(ksvd=self.ksvd_config(), alpha=self.measure.alpha, beta=self.measure.beta,
                             seed=self.seed, **asdict(self.das))

    def selection_config(self, measure: str) -> SelectionConfig:
        return SelectionConfig(per_class=self.selection.per_class, measure=measure,
                               alpha=self.measure.alpha, beta=self.measure.beta,
                               ksvd=self.ksvd_config(), seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **asdict(self.mlp))

    # --- validation and (de)serialisation -----------------------------------
    def validate(self) -> "PipelineConfig":
        _check_int("seed", self.seed, minimum=0)
        seg = self.segmentation
        _check_int("segmentation.length", seg.length, minimum=1)
        _check_int("segmentation.baseline_window", seg.baseline_window, minimum=1)
        if not 0.0 <= seg.overlap < 1.0:
            raise ConfigError(f"segmentation.overlap must lie in [0, 1), got {seg.overlap}")
        self.ksvd_config().validate(seg.length)
        self.das_config().validate()
        check_weights(self.measure.alpha, self.measure.beta)
        _check_int("selection.per_class", self.selection.per_class, minimum=1)
        _check_int("data.train_per_class", self.data.train_per_class, minimum=1)
        _check_int("data.val_per_class", self.data.val_per_class, minimum=1)
        if self.das.samples_per_class > self.data.train_per_class:
            raise ConfigError("das.samples_per_class cannot exceed data.train_per_class")
        self.train_config().validate()
        if not 0 <= self.screen.threshold < float("inf"):
            raise ConfigError(f"screen.threshold must be a nonnegative number, got {self.screen.threshold}")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        return _build(cls, obj, "").validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_json(obj)

    def override(self, assignments) -> "PipelineConfig":
        """Apply ``section.key=value`` strings (values parsed as JSON)."""
        obj = self.to_json()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            node = obj
            parts = key.strip().split(".")
            for p in parts[:-1]:
                if not isinstance(node.get(p), dict):
                    raise ConfigError(f"unknown config section in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return PipelineConfig.from_json(obj)


def _check_int(name, v, minimum):
    if isinstance(v, bool) or int(v) != v or v < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {v!r}")


def _build(cls, obj, prefix):
    if not isinstance(obj, dict):
        raise ConfigError(f"config section {prefix or '<root>'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(obj) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys in {prefix or '<root>'}: {unknown}")
    kwargs = {}
    for name, value in obj.items():
        default = getattr(cls(), name)
        path = f"{prefix}{name}"
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, path + ".")
        else:
            kwargs[name] = _coerce(path, default, value)
    return cls(**kwargs)


def _coerce(path, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    return value


def write_default(path) -> None:
    Path(path).write_text(PipelineConfig().dumps())
