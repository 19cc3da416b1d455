"""Scikit-learn style wrapper around :func:`prefpoe.trainer.train`.

Reinforcement learning has no ``(X, y)`` training set, so ``fit`` ignores its
arguments and learns from the configured environment.  After fitting,
``predict`` maps observation rows to deterministic actions and ``score``
returns the mean deterministic evaluation return.
"""

from __future__ import annotations

from typing import Any

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import autograd as ag
from . import distributions as D
from .config import TrainConfig
from .networks import AgentNet, load_checkpoint, save_checkpoint
from .trainer import behaviour_distribution, evaluate, train


class PrefPoEAgent(BaseEstimator):
    """PrefPoE (or baseline) agent with ``fit`` / ``predict`` / ``score``.

    Parameters mirror the most used :class:`TrainConfig` fields; anything else
    goes through ``extra`` as a ``{field: value}`` dict (dotted keys allowed).
    """

    def __init__(
        self,
        env: str = "cartpole",
        mode: str = "prefpoe",
        total_steps: int = 150_000,
        rollout_horizon: int = 256,
        num_envs: int = 8,
        lambda_pref: float = 0.5,
        learning_rate: float = 3e-4,
        seed: int = 0,
        policy: str = "main",
        extra: dict[str, Any] | None = None,
    ):
        self.env = env
        self.mode = mode
        self.total_steps = total_steps
        self.rollout_horizon = rollout_horizon
        self.num_envs = num_envs
        self.lambda_pref = lambda_pref
        self.learning_rate = learning_rate
        self.seed = seed
        self.policy = policy
        self.extra = extra

    def make_config(self) -> TrainConfig:
        config = TrainConfig(
            env=self.env,
            mode=self.mode,
            total_steps=self.total_steps,
            rollout_horizon=self.rollout_horizon,
            num_envs=self.num_envs,
            lambda_pref=self.lambda_pref,
            learning_rate=self.learning_rate,
            seed=self.seed,
            eval_policy=self.policy,
        )
        return config.with_overrides(dict(self.extra)) if self.extra else config

    def fit(self, X=None, y=None, metrics_path=None):
        config = self.make_config()
        result = train(config, metrics_path=metrics_path)
        self.config_ = config
        self.net_ = result.net
        self.metrics_ = result.metrics
        self.n_features_in_ = result.net.obs_dim
        return self

    def _distributions(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} expects {self.n_features_in_}")
        with ag.no_grad():
            main, pref, value = self.net_(X)
            if self.policy == "fused":
                return behaviour_distribution(main, pref, self.config_.mode, self.config_.lambda_pref), value
            return main, value

    def predict(self, X) -> np.ndarray:
        """Deterministic action (argmax or Gaussian mean) per observation row."""
        dist, _ = self._distributions(X)
        return dist.mode()

    def predict_proba(self, X) -> np.ndarray:
        dist, _ = self._distributions(X)
        if not isinstance(dist, D.Categorical):
            raise AttributeError("predict_proba is only defined for discrete action spaces")
        return np.exp(dist.log_probs().data)

    def predict_value(self, X) -> np.ndarray:
        _, value = self._distributions(X)
        return value.data.copy()

    def score(self, X=None, y=None, episodes: int = 100, seed: int = 0) -> float:
        check_is_fitted(self, "net_")
        return evaluate(self.net_, self.config_, episodes, True, seed, self.policy).mean

    def save(self, path) -> None:
        check_is_fitted(self, "net_")
        save_checkpoint(path, self.net_, self.config_.to_dict())

    @classmethod
    def load(cls, path, policy: str = "main") -> PrefPoEAgent:
        net, cfg = load_checkpoint(path)
        config = TrainConfig.from_dict(cfg)
        agent = cls(
            env=config.env, mode=config.mode, total_steps=config.total_steps, rollout_horizon=config.rollout_horizon,
            num_envs=config.num_envs, lambda_pref=config.lambda_pref, learning_rate=config.learning_rate,
            seed=config.seed, policy=policy,
        )
        agent.config_, agent.net_, agent.metrics_, agent.n_features_in_ = config, net, [], net.obs_dim
        return agent
