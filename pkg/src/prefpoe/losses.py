"""Objective terms for PrefPoE on top of the PPO surrogate.

``total_loss = ppo + w_pref * pref + w_cons * cons`` where the PPO part is
clipped surrogate + ``vf_coef`` * value loss - ``ent_coef`` * main entropy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from . import distributions as D
from .autograd import Tensor


@dataclass
class LossWeights:
    beta1: float = 0.2
    alpha: float = 0.2
    w_pref: float = 0.05
    w_cons: float = 0.1
    clip_coef: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.05

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")
        if self.beta1 <= 0 or self.alpha <= 0:
            raise ValueError("beta1 and alpha must be strictly positive")

    @property
    def temperature(self) -> float:
        """alpha / beta1; the Boltzmann target is softmax(A / temperature)."""
        return self.alpha / self.beta1


@dataclass
class LossParts:
    clip: Tensor
    value: Tensor
    main_entropy: Tensor
    pref: Tensor
    cons: Tensor


def _same_length(op: str, *arrays) -> None:
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"{op}: length mismatch {sorted(len(a) for a in arrays)}")


def ppo_clip_loss(logp_new, logp_old, a_norm, clip: float) -> Tensor:
    """Mean of ``-min(r * A, clip(r, 1-eps, 1+eps) * A)`` with ``r = exp(new - old)``."""
    logp_new = ag.as_tensor(logp_new)
    logp_old = np.asarray(logp_old, dtype=np.float64)
    a_norm = np.asarray(a_norm, dtype=np.float64)
    _same_length("ppo_clip_loss", logp_new, logp_old, a_norm)
    ratio = ag.exp(logp_new - logp_old)
    unclipped = ratio * a_norm
    clipped = ag.clamp(ratio, 1.0 - clip, 1.0 + clip) * a_norm
    return -ag.mean(ag.minimum(unclipped, clipped))


def value_loss(v_pred, returns, v_old=None, clip: float | None = None) -> Tensor:
    """Half mean squared error, pessimistically clipped around ``v_old`` if given."""
    v_pred = ag.as_tensor(v_pred)
    returns = np.asarray(returns, dtype=np.float64)
    if v_old is None or clip is None:
        _same_length("value_loss", v_pred, returns)
        return 0.5 * ag.mean(ag.square(v_pred - returns))
    v_old = np.asarray(v_old, dtype=np.float64)
    _same_length("value_loss", v_pred, returns, v_old)
    unclipped = ag.square(v_pred - returns)
    clipped = ag.square(ag.clamp(v_pred - v_old, -clip, clip) + (v_old - returns))
    return 0.5 * ag.mean(ag.maximum(unclipped, clipped))


def preference_loss(a_norm, logp_pref, pref_entropy, beta1: float, alpha: float) -> Tensor:
    """``-beta1 * mean(A_norm * log pi_pref(a|s)) - alpha * H(pi_pref)``.

    ``a_norm`` is treated as a constant target; ``pref_entropy`` is either a
    scalar or per-sample entropies (averaged here).
    """
    a_norm = np.asarray(a_norm, dtype=np.float64)
    logp_pref = ag.as_tensor(logp_pref)
    _same_length("preference_loss", a_norm, logp_pref)
    ent = ag.as_tensor(pref_entropy)
    if ent.ndim:
        ent = ag.mean(ent)
    return -beta1 * ag.mean(logp_pref * a_norm) - alpha * ent


def consistency_loss(fused, pref) -> Tensor:
    """Batch-mean ``KL(fused || pref)``."""
    return ag.mean(D.kl(fused, pref))


def ppo_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    return parts.clip + weights.vf_coef * parts.value - weights.ent_coef * parts.main_entropy


def total_loss(parts: LossParts, weights: LossWeights) -> Tensor:
    total = ppo_loss(parts, weights)
    if weights.w_pref:
        total = total + weights.w_pref * parts.pref
    if weights.w_cons:
        total = total + weights.w_cons * parts.cons
    return total


def boltzmann_target(advantages, beta1: float, alpha: float) -> np.ndarray:
    """Minimiser of the preference loss over a free categorical: softmax(beta1*A/alpha)."""
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    logits = beta1 * np.asarray(advantages, dtype=np.float64) / alpha
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def expected_preference_loss(logits: Tensor, advantages, beta1: float, alpha: float) -> Tensor:
    """Preference loss with the sample average replaced by its expectation.

    Every action appears once in the batch, weighted by its current (detached)
    probability, which is the on-policy expectation of the sampled loss.  The
    gradient therefore equals that of ``-beta1 E_pi[A] - alpha H(pi)``.
    """
    dist = D.Categorical(logits)
    logp = dist.log_probs()
    adv = np.asarray(advantages, dtype=np.float64)
    weights = np.exp(logp.data) * adv * adv.shape[-1]
    return preference_loss(weights, logp, D.categorical_entropy(dist), beta1, alpha)
