"""Pipeline configuration: one JSON file, every field overridable from the command line."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .acd import DEFAULT_SHRINKAGE
from .evalkit import DEFAULT_PERCENTILES, THRESHOLD_MODES
from .translation.training import ConfigError, TrainConfig


@dataclass
class DetectorConfig:
    sample_stride: int = 1
    radius: int = 1
    shrinkage: float = DEFAULT_SHRINKAGE
    percentile: float = 95.0

    def validate(self) -> "DetectorConfig":
        if self.radius < 0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.sample_stride < 1:
            raise ConfigError(f"sample_stride must be >= 1, got {self.sample_stride}")
        if not self.shrinkage >= 0:
            raise ConfigError(f"shrinkage must be >= 0, got {self.shrinkage}")
        if not 0 <= self.percentile < 100:
            raise ConfigError(f"percentile must lie in [0, 100), got {self.percentile}")
        return self


@dataclass
class EvaluationConfig:
    percentiles: list = field(default_factory=lambda: list(DEFAULT_PERCENTILES))
    mode: str = "own"

    def validate(self) -> "EvaluationConfig":
        ps = [float(p) for p in self.percentiles]
        if not ps:
            raise ConfigError("the percentile grid is empty")
        if any(not 0 <= p < 100 for p in ps):
            raise ConfigError("percentiles must lie in [0, 100)")
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ConfigError("percentiles must be strictly increasing")
        if self.mode not in THRESHOLD_MODES:
            raise ConfigError(f"mode must be one of {THRESHOLD_MODES}")
        self.percentiles = ps
        return self


_SECTIONS = {"train": TrainConfig, "detector": DetectorConfig, "evaluation": EvaluationConfig}


@dataclass
class PipelineConfig:
    """Everything one run needs.

    ``data_x`` and ``data_y`` name either a directory of ``.bsq`` tiles or a
    dataset manifest written by ``ingest``. ``seed`` is the single source of
    randomness and overrides ``train.seed``.
    """

    data_x: Optional[str] = None
    data_y: Optional[str] = None
    out_dir: Optional[str] = None
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def validate(self, require_data: bool = False) -> "PipelineConfig":
        self.train.seed = self.seed
        self.train.validate()
        self.detector.validate()
        self.evaluation.validate()
        for key in ("data_x", "data_y"):
            p = getattr(self, key)
            if p is None:
                if require_data:
                    raise ConfigError(f"{key} is required")
            elif not Path(p).exists():
                raise ConfigError(f"{key} path does not exist: {p}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["seed"] = self.seed
        return d

    def to_json(self) -> str:
        """Canonical form: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        top = {f.name for f in fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for name, kind in _SECTIONS.items():
            section = d.pop(name, None) or {}
            if not isinstance(section, dict):
                raise ConfigError(f"'{name}' must be an object")
            allowed = {f.name for f in fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown {name} options: {sorted(bad)}")
            kwargs[name] = kind(**section)
        cfg = cls(**d, **kwargs)
        cfg.train.seed = cfg.seed
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    def override(self, section: Optional[str], key: str, value) -> None:
        """Set one field, ``section=None`` addressing top-level fields."""
        target = self if section is None else getattr(self, section)
        if key not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown option {key!r}")
        setattr(target, key, value)
