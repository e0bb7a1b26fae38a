"""Run configuration and its two on-disk formats (JSON, ``key = value``)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

VARIANTS = ("exact", "quantized", "relaxed")
CONVENTIONS = ("upload", "upload_broadcast")
ALGORITHMS = ("disbe", "decbe", "dislinucb_baseline")


@dataclass
class RunConfig:
    n_agents: int = 2
    d: int = 4
    k_arms: int = 20
    horizon: int = 10_000
    delta: float = 0.01
    seed: int = 0
    support_size: int = 100
    noise_sigma: float = 0.1
    clip_rewards: bool = False
    variant: str = "exact"
    eps_m: float = 0.0
    eps0: float | None = None  # None: beta / (N sqrt(d T))
    m_batches: int = 0  # 0: default from n_agents, horizon, d
    comm_convention: str = "upload"
    # decentralized runs
    graph: Any = "complete"
    comm_scheme: str = "metropolis"
    consensus_eps: float | None = None  # None: beta / sqrt(d)
    # baseline
    sync_threshold: float | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.n_agents < 1:
            raise ConfigError("n_agents must be >= 1")
        if self.d < 1 or self.k_arms < 1 or self.horizon < 1 or self.support_size < 1:
            raise ConfigError("d, k_arms, horizon and support_size must be positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.comm_convention not in CONVENTIONS:
            raise ConfigError(f"comm_convention must be one of {CONVENTIONS}")
        if not 0 <= self.eps_m < 1:
            raise ConfigError("eps_m must lie in [0, 1)")
        if self.eps0 is not None and self.eps0 <= 0:
            raise ConfigError("eps0 must be positive")
        if self.m_batches < 0 or self.m_batches == 1:
            raise ConfigError("m_batches must be 0 (auto) or >= 2")
        return self

    def replace(self, **changes) -> "RunConfig":
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data).validate()

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(value: str) -> Any:
    v = value.strip()
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    if v.lower() in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if v[:1] in "[{":
        return json.loads(v)
    return v.strip("\"'")


def parse_key_value(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = _coerce(value)
    return out


def load_mapping(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_key_value(text)


def run_config_from_mapping(data: dict) -> RunConfig:
    known = {k: v for k, v in data.items() if k in _FIELDS and k != "extra"}
    extra = {k: v for k, v in data.items() if k not in _FIELDS}
    try:
        cfg = RunConfig(**known, extra=extra)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for name in ("n_agents", "d", "k_arms", "horizon", "seed", "support_size", "m_batches"):
        setattr(cfg, name, int(getattr(cfg, name)))
    return cfg.validate()
