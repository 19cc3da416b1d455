"""Rollout collection, PPO-style updates with the PrefPoE objective, evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import autograd as ag
from . import distributions as D
from .advantage import compute_gae, normalize
from .config import TrainConfig
from .envs import Env, env_spec, make_env
from .losses import (
    LossParts,
    LossWeights,
    consistency_loss,
    ppo_clip_loss,
    preference_loss,
    total_loss,
    value_loss,
)
from .networks import AgentNet, load_checkpoint, save_checkpoint
from .optim import Adam, clip_grad_norm

log = logging.getLogger(__name__)

LOGPROB_RECHECK_TOL = 1e-10


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: dict[str, Any] | None = None):
        super().__init__(message)
        self.record = record


def behaviour_distribution(main, pref, mode: str, lambda_pref: float):
    """Distribution actions are sampled from under each training mode."""
    if mode == "prefpoe":
        return D.poe_fuse(main, pref, lambda_pref)
    if mode == "linear_fusion_ablation":
        return D.linear_fuse(main, pref, lambda_pref)
    return main


def effective_weights(config: TrainConfig) -> LossWeights:
    """Vanilla PPO drops the preference and consistency terms entirely."""
    if config.mode == "ppo_baseline":
        return LossWeights(**{**asdict(config.weights), "w_pref": 0.0, "w_cons": 0.0})
    return config.weights


def make_envs(config: TrainConfig, seeds: Iterable[int]) -> list[Env]:
    kwargs = {"slippery": config.slippery} if config.env == "frozenlake" else {}
    return [make_env(config.env, seed=int(s), **kwargs) for s in seeds]


# -- rollout storage --------------------------------------------------------------


@dataclass
class RolloutBuffer:
    """Fixed-size ``(horizon, num_envs)`` storage for one batch of experience."""

    horizon: int
    num_envs: int
    obs_dim: int
    action_shape: tuple[int, ...]
    discrete: bool

    def __post_init__(self):
        T, N = self.horizon, self.num_envs
        self.obs = np.zeros((T, N, self.obs_dim))
        dtype = np.int64 if self.discrete else np.float64
        self.actions = np.zeros((T, N) + self.action_shape, dtype=dtype)
        self.rewards = np.zeros((T, N))
        self.dones = np.zeros((T, N), dtype=bool)
        self.truncated_values = np.zeros((T, N))
        self.values = np.zeros((T, N))
        self.fused_log_probs = np.zeros((T, N))
        self.main_log_probs = np.zeros((T, N))
        self.bootstrap_values = np.zeros(N)
        self.ptr = 0

    @property
    def full(self) -> bool:
        return self.ptr == self.horizon

    def add(self, obs, actions, rewards, dones, truncated_values, values, fused_lp, main_lp):
        t = self.ptr
        if t >= self.horizon:
            raise IndexError("rollout buffer is full")
        self.obs[t] = obs
        self.actions[t] = actions
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.truncated_values[t] = truncated_values
        self.values[t] = values
        self.fused_log_probs[t] = fused_lp
        self.main_log_probs[t] = main_lp
        self.ptr += 1

    def reset(self) -> None:
        self.ptr = 0

    def advantages(self, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-env GAE, flattened in ``(t, env)`` order."""
        adv = np.zeros((self.horizon, self.num_envs))
        ret = np.zeros_like(adv)
        for e in range(self.num_envs):
            values = np.append(self.values[:, e], self.bootstrap_values[e])
            rewards = self.rewards[:, e] + gamma * self.truncated_values[:, e]
            batch = compute_gae(rewards, values, self.dones[:, e], gamma, lam)
            adv[:, e] = batch.advantages
            ret[:, e] = batch.returns
        return adv.reshape(-1), ret.reshape(-1)

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape((self.horizon * self.num_envs,) + arr.shape[2:])


class RolloutCollector:
    """Steps ``num_envs`` environments in fixed index order with the fused policy."""

    def __init__(self, config: TrainConfig, envs: list[Env], rng: np.random.Generator):
        self.config = config
        self.envs = envs
        self.rng = rng
        self.obs = np.stack([env.reset() for env in envs])
        self.episode_returns = np.zeros(len(envs))
        self.episode_lengths = np.zeros(len(envs), dtype=np.int64)
        self.finished: list[float] = []

    def collect(self, net: AgentNet, buffer: RolloutBuffer) -> RolloutBuffer:
        cfg = self.config
        buffer.reset()
        while not buffer.full:
            with ag.no_grad():
                main, pref, value = net(self.obs)
                fused = behaviour_distribution(main, pref, cfg.mode, cfg.lambda_pref)
            actions, fused_lp = D.sample(fused, self.rng)
            with ag.no_grad():
                main_lp = D.log_prob(main, actions).data
            next_obs = np.empty_like(self.obs)
            rewards = np.zeros(len(self.envs))
            dones = np.zeros(len(self.envs), dtype=bool)
            trunc_values = np.zeros(len(self.envs))
            truncated_obs: list[tuple[int, np.ndarray]] = []
            for i, env in enumerate(self.envs):
                res = env.step(actions[i])
                rewards[i] = res.reward
                dones[i] = res.done
                self.episode_returns[i] += res.reward
                self.episode_lengths[i] += 1
                if res.done:
                    if res.truncated:
                        truncated_obs.append((i, res.obs))
                    self.finished.append(float(self.episode_returns[i]))
                    self.episode_returns[i] = 0.0
                    self.episode_lengths[i] = 0
                    next_obs[i] = env.reset()
                else:
                    next_obs[i] = res.obs
            if truncated_obs:
                # time-limit cut: bootstrap from the value of the cut-off state
                with ag.no_grad():
                    _, _, v = net(np.stack([o for _, o in truncated_obs]))
                for (i, _), vi in zip(truncated_obs, v.data):
                    trunc_values[i] = vi
            buffer.add(self.obs, actions, rewards, dones, trunc_values, value.data, fused_lp, main_lp)
            self.obs = next_obs
        with ag.no_grad():
            _, _, v = net(self.obs)
        buffer.bootstrap_values[:] = v.data
        return buffer

    def pop_finished(self) -> list[float]:
        done, self.finished = self.finished, []
        return done


# -- update ------------------------------------------------------------------------


def _mean_norm_stats(main, fused) -> tuple[float, float, float]:
    if isinstance(main, D.DiagGaussian):
        m, f = main.mean.data, fused.mean.data
    else:
        m, f = np.exp(main.log_probs().data), np.exp(fused.log_probs().data)
    nm = np.linalg.norm(m, axis=-1)
    nf = np.linalg.norm(f, axis=-1)
    rel = np.linalg.norm(f - m, axis=-1) / (nm + 1e-8)
    return float(nm.mean()), float(nf.mean()), float(rel.mean())


def recheck_log_probs(net: AgentNet, buffer: RolloutBuffer, config: TrainConfig) -> float:
    """Largest gap between stored and recomputed behaviour log-probs."""
    with ag.no_grad():
        main, pref, _ = net(buffer.flat("obs"))
        fused = behaviour_distribution(main, pref, config.mode, config.lambda_pref)
        lp = D.log_prob(fused, buffer.flat("actions")).data
    return float(np.max(np.abs(lp - buffer.flat("fused_log_probs"))))


def update(
    net: AgentNet,
    buffer: RolloutBuffer,
    config: TrainConfig,
    optimizer: Adam,
    rng: np.random.Generator,
) -> dict[str, Any]:
    """Run ``update_epochs`` passes of shuffled minibatch steps; return averaged stats."""
    weights = effective_weights(config)
    gap = recheck_log_probs(net, buffer, config)
    if not gap <= LOGPROB_RECHECK_TOL:  # also catches NaN
        raise TrainingAborted(f"stored behaviour log-probs drifted from recomputation by {gap:.3e}")

    adv, returns = buffer.advantages(config.gamma, config.gae_lambda)
    if config.adv_norm == "batch":
        adv = normalize(adv)
    obs = buffer.flat("obs")
    actions = buffer.flat("actions")
    values_old = buffer.flat("values")
    logp_old = buffer.flat("fused_log_probs" if config.ratio_dist == "fused" else "main_log_probs")
    params = net.parameters()

    sums: dict[str, float] = {}
    count = 0
    B, M = config.batch_size, config.minibatch_size
    for _ in range(config.update_epochs):
        order = rng.permutation(B)
        for start in range(0, B, M):
            idx = order[start : start + M]
            a_norm = adv[idx] if config.adv_norm == "batch" else normalize(adv[idx])
            main, pref, value = net(obs[idx])
            fused = behaviour_distribution(main, pref, config.mode, config.lambda_pref)
            ratio_dist = fused if config.ratio_dist == "fused" else main
            main_ent = D.entropy(main)
            pref_ent = D.entropy(pref)
            parts = LossParts(
                clip=ppo_clip_loss(D.log_prob(ratio_dist, actions[idx]), logp_old[idx], a_norm, weights.clip_coef),
                value=value_loss(
                    value, returns[idx], values_old[idx], weights.clip_coef if config.clip_vloss else None
                ),
                main_entropy=ag.mean(main_ent),
                pref=preference_loss(a_norm, D.log_prob(pref, actions[idx]), pref_ent, weights.beta1, weights.alpha),
                cons=consistency_loss(fused, pref),
            )
            loss = total_loss(parts, weights)
            if not np.isfinite(loss.data):
                raise TrainingAborted(
                    "non-finite loss",
                    {"clip": float(parts.clip.data), "value": float(parts.value.data),
                     "pref": float(parts.pref.data), "cons": float(parts.cons.data)},
                )
            optimizer.zero_grad()
            loss.backward()
            grad_norm = clip_grad_norm(params, config.max_grad_norm)
            optimizer.step()

            fused_ent = D.entropy(fused).data
            nm, nf, rel = _mean_norm_stats(main, fused)
            stats = {
                "clip": parts.clip.data, "value": parts.value.data, "pref": parts.pref.data,
                "cons": parts.cons.data, "total": loss.data,
                "ent_pref": pref_ent.data.mean(), "ent_main": main_ent.data.mean(),
                "ent_fused": fused_ent.mean(), "norm_main": nm, "norm_fused": nf, "rel_diff": rel,
                "grad_norm": grad_norm,
            }
            for k, v in stats.items():
                sums[k] = sums.get(k, 0.0) + float(v)
            count += 1
    return {k: v / count for k, v in sums.items()}


# -- evaluation -----------------------------------------------------------------------


@dataclass
class EvalStats:
    mean: float
    std: float
    min: float
    max: float
    cv: float
    episodes: int
    returns: list[float] = field(default_factory=list)

    @classmethod
    def from_returns(cls, returns) -> EvalStats:
        r = np.asarray(returns, dtype=np.float64)
        mean, std = float(r.mean()), float(r.std())
        if std == 0.0:
            cv = 0.0
        elif mean == 0.0:
            cv = math.inf
        else:
            cv = std / abs(mean) * 100.0
        return cls(mean, std, float(r.min()), float(r.max()), cv, len(r), [float(x) for x in r])

    def to_dict(self, include_returns: bool = True) -> dict[str, Any]:
        d = asdict(self)
        if not include_returns:
            d.pop("returns")
        return d


def run_episode(net: AgentNet, env: Env, config: TrainConfig, deterministic: bool, rng, policy: str) -> float:
    obs = env.reset()
    total = 0.0
    while True:
        with ag.no_grad():
            main, pref, _ = net(obs)
            dist = main if policy == "main" else behaviour_distribution(main, pref, config.mode, config.lambda_pref)
            if deterministic:
                action = dist.mode()
            else:
                fused = behaviour_distribution(main, pref, config.mode, config.lambda_pref)
                action, _ = D.sample(fused, rng)
        res = env.step(action)
        total += res.reward
        if res.done:
            return total
        obs = res.obs


def evaluate(
    net: AgentNet,
    config: TrainConfig,
    episodes: int = 100,
    deterministic: bool = True,
    seed: int = 0,
    policy: str | None = None,
) -> EvalStats:
    """Roll out ``episodes`` full episodes and summarise their returns.

    Deterministic mode plays the mode of the main policy (``policy="fused"``
    switches to the fused mode); stochastic mode samples the fused policy.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    spec = env_spec(config.env)
    if net.obs_dim != spec.obs_dim or net.action_space.kind != spec.action_space.kind or net.action_space.n != spec.action_space.n:
        raise ValueError(
            f"checkpoint dims (obs {net.obs_dim}, {net.action_space.kind} {net.action_space.n}) "
            f"do not match env {config.env!r}"
        )
    policy = policy or config.eval_policy
    ss = np.random.SeedSequence(seed)
    env_seed, sample_seed = ss.generate_state(2)
    env = make_envs(config, [env_seed])[0]
    rng = np.random.default_rng(sample_seed)
    returns = [run_episode(net, env, config, deterministic, rng, policy) for _ in range(episodes)]
    return EvalStats.from_returns(returns)


def evaluate_checkpoint(path, episodes: int = 100, deterministic: bool = True, seed: int = 0, policy=None) -> EvalStats:
    net, cfg = load_checkpoint(path)
    return evaluate(net, TrainConfig.from_dict(cfg), episodes, deterministic, seed, policy)


# -- training loop ---------------------------------------------------------------------


@dataclass
class TrainResult:
    net: AgentNet
    metrics: list[dict[str, Any]]
    config: TrainConfig


def metrics_record(global_step: int, returns: list[float], stats: dict[str, float], lr: float) -> dict[str, Any]:
    r = np.asarray(returns, dtype=np.float64)
    ep = {
        "count": int(r.size),
        "mean": float(r.mean()) if r.size else None,
        "std": float(r.std()) if r.size else None,
        "min": float(r.min()) if r.size else None,
        "max": float(r.max()) if r.size else None,
    }
    return {
        "global_step": global_step,
        "episodic_return": ep,
        "losses": {k: stats[k] for k in ("clip", "value", "pref", "cons", "total")},
        "entropies": {"pref": stats["ent_pref"], "main": stats["ent_main"], "fused": stats["ent_fused"]},
        "mean_norms": {"main": stats["norm_main"], "fused": stats["norm_fused"], "relative_difference": stats["rel_diff"]},
        "learning_rate": lr,
    }


def seed_streams(seed: int, num_envs: int):
    """Independent seeds for net init, action sampling, shuffling and each env."""
    ss = np.random.SeedSequence(seed)
    init_ss, sample_ss, shuffle_ss, env_ss = ss.spawn(4)
    env_seeds = [int(s.generate_state(1)[0]) for s in env_ss.spawn(num_envs)]
    return (
        int(init_ss.generate_state(1)[0]),
        np.random.default_rng(sample_ss),
        np.random.default_rng(shuffle_ss),
        env_seeds,
    )


def learning_rate_at(config: TrainConfig, update_index: int) -> float:
    """Linearly annealed rate for the 1-based ``update_index``."""
    if not config.anneal_lr:
        return config.learning_rate
    frac = 1.0 - (update_index - 1.0) / config.num_updates
    return frac * config.learning_rate


def train(
    config: TrainConfig,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> TrainResult:
    spec = env_spec(config.env)
    init_seed, sample_rng, shuffle_rng, env_seeds = seed_streams(config.seed, config.num_envs)
    net = AgentNet.init(init_seed, spec.obs_dim, spec.action_space)
    optimizer = Adam(net.parameters(), lr=config.learning_rate, eps=config.adam_eps)
    collector = RolloutCollector(config, make_envs(config, env_seeds), sample_rng)
    action_shape = () if spec.action_space.discrete else (spec.action_space.n,)
    buffer = RolloutBuffer(config.rollout_horizon, config.num_envs, spec.obs_dim, action_shape, spec.action_space.discrete)

    metrics: list[dict[str, Any]] = []
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        global_step = 0
        for k in range(1, config.num_updates + 1):
            lr = learning_rate_at(config, k)
            optimizer.lr = lr
            collector.collect(net, buffer)
            global_step += config.batch_size
            try:
                stats = update(net, buffer, config, optimizer, shuffle_rng)
            except TrainingAborted as exc:
                record = {"global_step": global_step, "aborted": True, "reason": str(exc), "diagnostic": exc.record}
                if sink:
                    sink.write(json.dumps(record) + "\n")
                    sink.flush()
                raise
            record = metrics_record(global_step, collector.pop_finished(), stats, lr)
            metrics.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            log.debug("step %d return %s", global_step, record["episodic_return"]["mean"])
    finally:
        if sink:
            sink.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, net, config.to_dict())
    return TrainResult(net, metrics, config)
