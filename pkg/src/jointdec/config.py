"""Run configuration: flat ``key = value`` files with command-line overrides."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError
from .nn import ARCHITECTURES, HEAD_ORDERS

DATASETS = ("toy", "cifar10")
JUDGES = ("joint", "head1")

# seed stream ids: every generator is np.random.default_rng([seed, member, stream, ...])
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_AUGMENT = 2


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    dataset: str = "toy"
    data_dir: str = ""
    data_seed: int = 0
    n_train: int = 600
    n_test: int = 600
    arch: str = "res-tiny"
    scale: str = "1"
    m: int = 3
    head_order: str = "deep-first"
    head_bn: bool = True
    head_act: bool = True
    alpha1: float = 1.0
    k: float = 1.0
    mu: float = 0.5
    epsilon: float = 10.0
    gamma: int = 1
    intent_mode: bool = False
    judge: str = "joint"
    l_max: float = 0.1
    l_min: float = 0.0
    t0: int = 1
    t_mult: int = 2
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    epochs: int = 15
    augment: bool = True
    seed: int = 0
    out: str = "runs/latest"
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    # -- construction --------------------------------------------------------

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls) if f.name != "extra"]

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from string (or already typed) values; unknown keys are errors."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types or key == "extra":
                raise ConfigurationError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if isinstance(raw, str):
                    if kind == "bool":
                        raw = _parse_bool(raw)
                    elif kind == "int":
                        raw = int(raw)
                    elif kind == "float":
                        raw = float(raw)
                kwargs[key] = raw
            except ValueError as exc:
                raise ConfigurationError(f"{key}: {exc}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigurationError(msg)

        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.dataset != "cifar10" or self.data_dir, "cifar10 needs data_dir")
        need(self.n_train >= 1 and self.n_test >= 1, "n_train and n_test must be >= 1")
        need(self.arch in ARCHITECTURES, f"arch must be one of {sorted(ARCHITECTURES)}")
        need(self.head_order in HEAD_ORDERS, f"head_order must be one of {HEAD_ORDERS}")
        need(self.judge in JUDGES, f"judge must be one of {JUDGES}")
        need(1 <= self.m <= 3, "m must be between 1 and 3 for the built-in architectures")
        need(self.alpha1 > 0 and self.k > 0, "alpha1 and k must be positive")
        need(self.mu >= 0, "mu must be non-negative")
        need(self.epsilon > 0, "epsilon must be positive")
        need(self.gamma >= 1, "gamma must be >= 1")
        need(0 <= self.l_min <= self.l_max, "need 0 <= l_min <= l_max")
        need(self.t0 >= 1 and self.t_mult >= 1, "t0 and t_mult must be >= 1")
        need(0 <= self.momentum < 1, "momentum must be in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.batch_size >= 2, "batch_size must be >= 2")
        need(self.epochs >= 1, "epochs must be >= 1")
        need(self.seed >= 0 and self.data_seed >= 0, "seeds must be non-negative")
        if self.scale != "auto":
            try:
                s = float(self.scale)
            except ValueError:
                raise ConfigurationError(f"scale must be a number or 'auto', got {self.scale!r}") from None
            need(0 < s <= 1, "scale must be in (0, 1]")

    def scale_factor(self) -> float:
        """Channel multiplier; 'auto' splits the parameter budget over gamma members."""
        if self.scale == "auto":
            return math.sqrt(1.0 / self.gamma)
        return float(self.scale)

    # -- serialization -------------------------------------------------------

    def to_text(self) -> str:
        lines = [f"# jointdec {__version__}"]
        for name in self.field_names():
            value = getattr(self, name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.field_names()}


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """File values first, then ``overrides`` (command-line flags win)."""
    values = {}
    if path:
        try:
            values.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_mapping(values)


def stream_rng(seed: int, member: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, member, stream])


def augment_key(seed: int, member: int) -> tuple:
    return (seed, member, STREAM_AUGMENT)
