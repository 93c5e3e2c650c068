"""Experiment configuration: defaults, JSON files and command-line overrides."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

from ..data import CATEGORIES
from ..errors import ConfigError
from ..model import DecoderSpec, EncoderSpec

METRICS = ("cd", "emd", "hd", "f1")
EMD_MODES = ("exact", "approx", "auto", "skip")
# keys that do not change what a run computes
_NON_IDENTITY = ("epochs", "output_dir", "threads")


@dataclass
class ExperimentConfig:
    backbone: str = "LightAE"
    depth: int = 3
    heads: int = 1
    points: int = 2048
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 5e-4
    seed: int = 0
    dataset: str | None = None
    dataset_format: str | None = None
    synthetic_per_category: int = 50
    synthetic_categories: list = field(default_factory=lambda: list(CATEGORIES))
    data_seed: int = 0
    split_fractions: list = field(default_factory=lambda: [0.8, 0.2])
    split_seed: int = 0
    eval_metrics: list = field(default_factory=lambda: list(METRICS))
    emd_mode: str = "approx"
    select_metric: str = "cd"
    select_split: str = "test"
    output_dir: str = "runs/default"
    threads: int | None = None

    def validate(self, dataset_points=None):
        """Raise :class:`ConfigError` on any inconsistency; call before training."""
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.emd_mode not in EMD_MODES:
            raise ConfigError(f"emd_mode must be one of {EMD_MODES}")
        bad = set(self.eval_metrics) - set(METRICS)
        if bad:
            raise ConfigError(f"unknown metrics {sorted(bad)}")
        if self.select_metric not in METRICS or self.select_metric not in self.eval_metrics:
            raise ConfigError(f"select_metric {self.select_metric!r} must be an enabled metric")
        if self.select_metric == "emd" and self.emd_mode == "skip":
            raise ConfigError("cannot select on EMD with emd_mode='skip'")
        if self.select_split not in ("test", "val"):
            raise ConfigError("select_split must be 'test' or 'val'")
        if self.select_split == "val" and (len(self.split_fractions) != 3
                                           or self.split_fractions[1] <= 0):
            raise ConfigError("select_split='val' needs train/val/test split fractions")
        if dataset_points is not None and dataset_points != self.points:
            raise ConfigError(
                f"dataset clouds have {dataset_points} points but points={self.points}"
            )
        self.model_specs()
        return self

    def model_specs(self):
        enc = EncoderSpec(self.backbone)
        dec = DecoderSpec(enc.kind, self.depth, self.heads, self.points)
        return enc, dec

    def to_dict(self):
        return asdict(self)

    def identity(self):
        """The fields that determine the computation (no output paths, no epoch count)."""
        d = self.to_dict()
        for key in _NON_IDENTITY:
            d.pop(key)
        return d

    def identity_hash(self):
        blob = json.dumps(self.identity(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def config_hash(self):
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def replace(self, **overrides):
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(d)


def load_config(path=None, **overrides):
    """Defaults, then the file (if any), then non-None overrides."""
    base = ExperimentConfig.from_file(path) if path else ExperimentConfig()
    return base.replace(**overrides)


def thread_cap(requested=None):
    env = os.environ.get("PRAE_THREADS")
    cap = int(env) if env else None
    n = requested if requested is not None else (cap or 1)
    if cap is not None:
        n = min(n, cap)
    return max(1, int(n))
