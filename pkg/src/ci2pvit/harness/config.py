"""Flat ``key=value`` config files, flag overrides and the CI2P_SEED fallback."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..errors import ConfigError

SEED_ENV = "CI2P_SEED"


@dataclass
class TrainConfig:
    """Optimizer and loop settings. Batch 32 and no weight decay are assumed defaults."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    flip_prob: float = 0.5
    seed: int = 0
    lam: float = 0.01 * 255 ** 2  # codec rate-distortion trade-off
    cosine: bool = False  # cosine decay to zero over all steps; constant LR when off

    def validate(self) -> "TrainConfig":
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2", "flip_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.beta1 == 1.0 or self.beta2 == 1.0:
            raise ConfigError("Adam betas must be below 1")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lam <= 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        return self

    def lr_at(self, step: int, total_steps: int) -> float:
        if not self.cosine or total_steps <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * (step - 1) / total_steps))


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    path = Path(path)
    try:
        return parse_config_text(path.read_text(), str(path))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from exc


def _convert(name: str, raw, typ):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in ("bool", bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw


def train_config(values: dict | None = None, **overrides) -> TrainConfig:
    """Build a TrainConfig from file values, then flag overrides (``None`` means unset).

    The seed falls back to ``$CI2P_SEED`` when neither source sets it.
    """
    merged = dict(values or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "lambda" in merged:
        merged.setdefault("lam", merged.pop("lambda"))
    if "seed" not in merged and os.environ.get(SEED_ENV):
        merged["seed"] = os.environ[SEED_ENV]
    known = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {k: _convert(k, v, known[k]) for k, v in merged.items() if k in known}
    return TrainConfig(**kwargs).validate()


def resolve_seed(flag: int | None, default: int = 0) -> int:
    if flag is not None:
        return flag
    raw = os.environ.get(SEED_ENV)
    if raw:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={raw!r} is not an integer") from exc
    return default


def config_text(cfg: TrainConfig) -> str:
    return "".join(f"{k}={str(v).lower() if isinstance(v, bool) else v!r}\n" for k, v in asdict(cfg).items())
