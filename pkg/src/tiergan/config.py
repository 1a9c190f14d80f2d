"""Flat ``key=value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Iterable, Tuple

import numpy as np

from .errors import ConfigError
from .tiers import CascadeConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    epochs: int = 2000
    batch_size: int = 8
    lr_g: float = 0.0001
    lr_d: float = 0.00001
    seed: int = 0
    g_loss_variant: str = "non_saturating"
    log_every: int = 50
    checkpoint_every: int = 10
    generator_variant: str = "latent_upsample"
    noise_distribution: str = "normal"
    leaky_alpha: float = 0.2
    factors: Tuple[int, ...] = (8, 4, 2)
    size: int = 128
    input_dir: str = ""
    workdir: str = ""

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr_g=self.lr_g, lr_d=self.lr_d,
                           seed=self.seed, g_loss_variant=self.g_loss_variant, log_every=self.log_every,
                           checkpoint_every=self.checkpoint_every)

    def cascade_config(self) -> CascadeConfig:
        return CascadeConfig(factors=tuple(self.factors), generator_variant=self.generator_variant,
                             noise_distribution=self.noise_distribution, leaky_alpha=self.leaky_alpha)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.items()))

    def items(self) -> Iterable[Tuple[str, str]]:
        for f in fields(self):
            yield f.name, format_value(getattr(self, f.name))

    def with_overrides(self, overrides: Dict[str, str]) -> "RunConfig":
        types = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, raw in overrides.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            parsed[key] = parse_value(key, raw, getattr(self, key))
        cfg = replace(self, **parsed)
        cfg.train_config()  # validates ranges
        return cfg


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return np.format_float_positional(v, trim="-")
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_text(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        overrides[key.strip()] = value
    return base.with_overrides(overrides)


def load_config(path, base: RunConfig = RunConfig()) -> RunConfig:
    return parse_text(Path(path).read_text(), base)
