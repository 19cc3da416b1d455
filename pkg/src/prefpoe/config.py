"""Training configuration, JSON loading and ``key=value`` overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .envs import ENVIRONMENTS
from .losses import LossWeights

MODES = ("prefpoe", "ppo_baseline", "linear_fusion_ablation")
RATIO_DISTS = ("fused", "main")
ADV_NORM_LEVELS = ("minibatch", "batch")
EVAL_POLICIES = ("main", "fused")
DEFAULT_SEEDS = (0, 10, 42, 77, 123)


class ConfigError(ValueError):
    """A configuration field is missing, unknown or out of range."""


@dataclass
class TrainConfig:
    env: str = "cartpole"
    total_steps: int = 150_000
    rollout_horizon: int = 2048
    num_envs: int = 1
    update_epochs: int = 10
    minibatch_count: int = 32
    learning_rate: float = 3e-4
    anneal_lr: bool = True
    gamma: float = 0.99
    gae_lambda: float = 0.95
    max_grad_norm: float = 0.5
    adam_eps: float = 1e-5
    weights: LossWeights = field(default_factory=LossWeights)
    lambda_pref: float = 0.5
    seed: int = 0
    mode: str = "prefpoe"
    ratio_dist: str = "fused"
    clip_vloss: bool = True
    adv_norm: str = "minibatch"
    eval_policy: str = "main"
    eval_episodes: int = 100
    slippery: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = _build(LossWeights, self.weights, "weights.")
        self.validate()

    def validate(self) -> None:
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env: unknown environment {self.env!r}, choose from {sorted(ENVIRONMENTS)}")
        for name in ("total_steps", "rollout_horizon", "num_envs", "update_epochs", "minibatch_count", "eval_episodes"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {value!r}")
        batch = self.batch_size
        if batch % self.minibatch_count:
            raise ConfigError(
                f"minibatch_count: rollout_horizon*num_envs={batch} is not divisible by {self.minibatch_count}"
            )
        if self.total_steps < batch:
            raise ConfigError(f"total_steps: must be >= rollout_horizon*num_envs={batch}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.ratio_dist not in RATIO_DISTS:
            raise ConfigError(f"ratio_dist: must be one of {RATIO_DISTS}, got {self.ratio_dist!r}")
        if self.adv_norm not in ADV_NORM_LEVELS:
            raise ConfigError(f"adv_norm: must be one of {ADV_NORM_LEVELS}, got {self.adv_norm!r}")
        if self.eval_policy not in EVAL_POLICIES:
            raise ConfigError(f"eval_policy: must be one of {EVAL_POLICIES}, got {self.eval_policy!r}")
        if not 0.0 < self.lambda_pref <= 1.0:
            raise ConfigError(f"lambda_pref: must lie in (0, 1], got {self.lambda_pref}")
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if self.learning_rate <= 0 or self.max_grad_norm <= 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate, max_grad_norm and adam_eps must be > 0")

    @property
    def batch_size(self) -> int:
        return self.rollout_horizon * self.num_envs

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.minibatch_count

    @property
    def num_updates(self) -> int:
        return self.total_steps // self.batch_size

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return _build(cls, data, "")

    def with_overrides(self, overrides: dict[str, Any] | list[str]) -> TrainConfig:
        data = self.to_dict()
        if isinstance(overrides, list):
            overrides = dict(parse_override(item) for item in overrides)
        for key, value in overrides.items():
            set_dotted(data, key, value)
        return TrainConfig.from_dict(data)

    def replace(self, **changes) -> TrainConfig:
        return replace(self, **changes)


def _build(cls, data: dict[str, Any], prefix: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from None


def parse_override(item: str) -> tuple[str, Any]:
    """Split ``"weights.beta1=0.3"`` into a dotted key and a JSON-ish value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config key: {key}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key: {key}")
    node[parts[-1]] = value


def load_config(path: str | Path, overrides: list[str] | None = None) -> tuple[TrainConfig, str]:
    """Return the parsed config and the exact text it was parsed from."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    config = TrainConfig.from_dict(data)
    if overrides:
        config = config.with_overrides(overrides)
    return config, text
