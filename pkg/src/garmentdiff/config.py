"""Sampler/editor configuration and the flat ``key = value`` config file."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, InvalidPercentile

CONFIG_ENV = "GARMENTDIFF_CONFIG"
# "latent": losses read the decoded noisy latent; "denoised": they read the
# decoded posterior mean and gradients flow back through its Jacobian.
GUIDANCE_VIEWS = ("denoised", "latent")


@dataclass(frozen=True)
class Config:
    T: int = 50
    alpha: float = 1.0
    beta: float = 1.0
    window_lo: float = 0.2
    window_hi: float = 0.8
    percentile: float = 0.75
    tau_a: float = 0.2
    lam: float = 20.0
    lexicon: str | None = None
    templates: str | None = None
    seed: int = 0
    guidance_view: str = "denoised"

    def __post_init__(self):
        if self.T < 2:
            raise ConfigError("T must be at least 2")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if not 0.0 < self.percentile < 1.0:
            raise InvalidPercentile(f"percentile must lie in (0, 1), got {self.percentile}")
        if not 0.0 <= self.window_lo <= self.window_hi <= 1.0:
            raise ConfigError("guidance window must satisfy 0 <= lo <= hi <= 1")
        if self.guidance_view not in GUIDANCE_VIEWS:
            raise ConfigError(f"guidance_view must be one of {GUIDANCE_VIEWS}")
        if self.tau_a <= 0:
            raise ConfigError("tau_a must be positive")

    def guided(self, t: int) -> bool:
        return self.window_lo * self.T <= t <= self.window_hi * self.T

    def sampler_key(self) -> dict:
        """Fields that determine a trajectory (everything except the seed)."""
        d = asdict(self)
        d.pop("seed")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    def with_guidance(self, alpha: float, beta: float) -> "Config":
        return replace(self, alpha=alpha, beta=beta)


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if raw.lower() in ("none", ""):
        return None
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {raw!r}") from exc
    return values


def load_config(path=None, **overrides) -> Config:
    """File values (explicit path or ``$GARMENTDIFF_CONFIG``) under flag overrides."""
    values = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)
