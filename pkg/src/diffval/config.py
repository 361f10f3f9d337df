"""Run configuration: TOML files, flag overrides, JSON round-trip."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Everything a training run needs; defaults follow the shared
    hyperparameter table (lr 3e-4, batch 128, gamma 0.99, grad clip 100,
    256x256 hidden stack, 32 Monte-Carlo samples, BC coefficient 0.1)."""

    env: str = "mountain-car"
    dataset: str = ""
    seed: int = 0
    steps: int = 500
    gamma: float = 0.99
    batch_size: int = 128
    learning_rate: float = 3e-4
    n_samples: int = 32
    bc_coef: float = 0.1
    alpha_ent: float = 0.05
    max_grad_norm: float = 100.0
    diffusion_steps: int = 128
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: tuple[int, ...] = (256, 256)
    embed_dim: int = 16
    phi_dim: int = 16
    policy_embedding: str = "scalar"
    max_window: int = 16
    condition_on_next: bool = False
    checkpoint_every: int = 100
    v_states_per_step: int = 8
    pretrain_diffusion_only: bool = False

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.batch_size < 1 or self.n_samples < 1:
            raise ConfigError("batch_size and n_samples must be positive")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError("invalid beta range")
        if self.diffusion_steps < 1:
            raise ConfigError("diffusion_steps must be positive")
        if self.policy_embedding not in ("scalar", "sequential"):
            raise ConfigError(f"unknown policy embedding {self.policy_embedding!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            if key == "hidden":
                value = tuple(int(v) for v in value)
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """Parse a TOML config file and apply ``key=value`` overrides."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc
    cfg = RunConfig.from_dict(data)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    d = cfg.to_dict()
    types = {f.name: f.type for f in fields(RunConfig)}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        current = d[key]
        if key == "hidden":
            d[key] = [int(v) for v in raw.split(",") if v]
        elif isinstance(current, bool):
            d[key] = raw.strip().lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            d[key] = int(raw)
        elif isinstance(current, float):
            d[key] = float(raw)
        else:
            d[key] = raw.strip()
    return RunConfig.from_dict(d)
