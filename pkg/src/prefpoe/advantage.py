"""Generalized advantage estimation and advantage normalisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-8


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    returns: np.ndarray
    normalized: np.ndarray | None = None


def compute_gae(rewards, values, dones, gamma: float, lam: float) -> AdvantageBatch:
    """Backward GAE recursion over a single trajectory segment.

    ``values`` carries one extra trailing entry, the bootstrap value of the
    state after the last transition.  ``dones[t]`` blocks credit from t+1.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    if len(dones) != T or len(values) != T + 1:
        raise ValueError(
            f"length mismatch: rewards {T}, dones {len(dones)}, values {len(values)} (need T+1)"
        )
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * live * values[t + 1] - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
    return AdvantageBatch(adv, adv + values[:T])


def normalize(adv) -> np.ndarray:
    """Zero-mean, unit-std rescaling; a single element maps to zero."""
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size == 0:
        raise ValueError("cannot normalize an empty advantage array")
    if adv.size == 1:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / (adv.std() + NORM_EPS)
