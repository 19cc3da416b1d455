"""Diagonal Gaussian and categorical action distributions.

All functions accept a single distribution (parameters of shape ``(d,)``) or a
batch (``(n, d)``) and reduce over the last axis only, so a batched call
returns one value per row.  Values are :class:`~prefpoe.autograd.Tensor`
objects and stay differentiable with respect to every parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# Hidden fault-injection switches used by the verify suite's mutation smoke
# test. Never set outside tests.
_FAULTS: set[str] = set()


class DistributionError(ValueError):
    """Distributions of incompatible size or family were combined."""


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance ``diag(exp(log_std) ** 2)``."""

    mean: Tensor
    log_std: Tensor

    def __init__(self, mean, log_std):
        mean, log_std = ag.as_tensor(mean), ag.as_tensor(log_std)
        if mean.shape != log_std.shape or mean.ndim not in (1, 2) or mean.shape[-1] < 1:
            raise DistributionError(
                f"mean {list(mean.shape)} and log_std {list(log_std.shape)} must match"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @classmethod
    def from_raw(cls, mean, raw_log_std) -> DiagGaussian:
        """Build from unconstrained network outputs, clamping the log-std."""
        return cls(mean, ag.clamp(raw_log_std, LOG_STD_MIN, LOG_STD_MAX))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> Tensor:
        return ag.exp(self.log_std)

    @property
    def var(self) -> Tensor:
        return ag.exp(2.0 * self.log_std)

    def mode(self) -> np.ndarray:
        return self.mean.data.copy()


@dataclass(frozen=True)
class Categorical:
    """Distribution over ``len(logits)`` actions via ``softmax(logits)``."""

    logits: Tensor

    def __init__(self, logits):
        logits = ag.as_tensor(logits)
        if logits.ndim not in (1, 2) or logits.shape[-1] < 2:
            raise DistributionError(f"need at least 2 logits, got shape {list(logits.shape)}")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def from_probs(cls, probs) -> Categorical:
        return cls(np.log(np.asarray(probs, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def log_probs(self) -> Tensor:
        # memoised per grad mode: a tape-free result must not stand in for a recorded one
        key = ag.is_grad_enabled()
        cache = self.__dict__.setdefault("_log_probs", {})
        if key not in cache:
            cache[key] = ag.log_softmax(self.logits)
        return cache[key]

    def probs(self) -> Tensor:
        return ag.softmax(self.logits)

    def mode(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)


# -- Gaussian ---------------------------------------------------------------


def gaussian_log_prob(d: DiagGaussian, action) -> Tensor:
    a = ag.as_tensor(action)
    if a.shape != d.mean.shape:
        raise DistributionError(
            f"action shape {list(a.shape)} does not match distribution {list(d.mean.shape)}"
        )
    z = (a - d.mean) / d.std
    per_dim = -0.5 * ag.square(z) - d.log_std - _HALF_LOG_2PI
    return ag.tsum(per_dim, axis=-1)


def gaussian_entropy(d: DiagGaussian) -> Tensor:
    """Closed form ``0.5 * sum_i log(2 pi e sigma_i^2)``."""
    return ag.tsum(d.log_std + (0.5 + _HALF_LOG_2PI), axis=-1)


def gaussian_poe_fuse(main: DiagGaussian, pref: DiagGaussian, lambda_pref: float) -> DiagGaussian:
    """Precision-weighted product ``main * pref ** lambda_pref``, renormalised.

    Per dimension the precisions add, ``1/var = 1/var_main + lambda/var_pref``,
    and the mean is the precision-weighted average of the two means.
    """
    if main.mean.shape != pref.mean.shape:
        raise DistributionError(
            f"cannot fuse shapes {list(main.mean.shape)} and {list(pref.mean.shape)}"
        )
    if not lambda_pref > 0.0:
        raise DistributionError(f"lambda_pref must be > 0, got {lambda_pref}")
    lam = -lambda_pref if "flip_lambda" in _FAULTS else lambda_pref
    prec_main = ag.exp(-2.0 * main.log_std)
    prec_pref = ag.exp(-2.0 * pref.log_std) * lam
    prec = prec_main + prec_pref
    mean = (prec_main * main.mean + prec_pref * pref.mean) / prec
    if np.any(prec.data <= 0.0):
        # only reachable under fault injection; keeps the output inspectable
        return DiagGaussian(mean, ag.tensor(np.full(prec.shape, np.inf)))
    return DiagGaussian(mean, -0.5 * ag.log(prec))


def linear_fuse_gaussian(main: DiagGaussian, pref: DiagGaussian, weight: float) -> DiagGaussian:
    """Parameter-wise average ``(1-w)*main + w*pref`` of means and std-devs."""
    if main.mean.shape != pref.mean.shape:
        raise DistributionError(
            f"cannot fuse shapes {list(main.mean.shape)} and {list(pref.mean.shape)}"
        )
    mean = (1.0 - weight) * main.mean + weight * pref.mean
    std = (1.0 - weight) * main.std + weight * pref.std
    return DiagGaussian(mean, ag.log(std))


def gaussian_kl(p: DiagGaussian, q: DiagGaussian) -> Tensor:
    """``KL(p || q)`` summed over dimensions."""
    if p.mean.shape != q.mean.shape:
        raise DistributionError(
            f"KL between shapes {list(p.mean.shape)} and {list(q.mean.shape)}"
        )
    var_p, var_q = p.var, q.var
    per_dim = (
        (q.log_std - p.log_std)
        + (var_p + ag.square(p.mean - q.mean)) / (2.0 * var_q)
        - 0.5
    )
    return ag.tsum(per_dim, axis=-1)


# -- Categorical --------------------------------------------------------------


def categorical_poe_fuse(main: Categorical, pref: Categorical, lambda_pref: float) -> Categorical:
    """``main * pref ** lambda`` renormalised, done additively on logits."""
    if main.logits.shape != pref.logits.shape:
        raise DistributionError(
            f"cannot fuse shapes {list(main.logits.shape)} and {list(pref.logits.shape)}"
        )
    if lambda_pref < 0.0:
        raise DistributionError(f"lambda_pref must be >= 0, got {lambda_pref}")
    lam = -lambda_pref if "flip_lambda" in _FAULTS else lambda_pref
    return Categorical(main.log_probs() + lam * pref.log_probs())


def linear_fuse_categorical(main: Categorical, pref: Categorical, weight: float) -> Categorical:
    if main.logits.shape != pref.logits.shape:
        raise DistributionError(
            f"cannot fuse shapes {list(main.logits.shape)} and {list(pref.logits.shape)}"
        )
    mixed = (1.0 - weight) * main.probs() + weight * pref.probs()
    return Categorical(ag.log(mixed))


def _check_index(d: Categorical, action) -> np.ndarray:
    idx = np.asarray(action)
    if idx.dtype.kind not in "iu" and np.any(idx != np.round(idx)):
        raise DistributionError(f"action indices must be integers: {action}")
    if idx.size and (idx.min() < 0 or idx.max() >= d.n):
        raise DistributionError(f"action index out of range for {d.n} actions: {action}")
    expected = d.logits.shape[:-1]
    if idx.shape != expected:
        raise DistributionError(
            f"action batch shape {list(idx.shape)} does not match {list(expected)}"
        )
    return idx.astype(np.int64)


def categorical_log_prob(d: Categorical, action) -> Tensor:
    return ag.gather(d.log_probs(), _check_index(d, action))


def categorical_entropy(d: Categorical) -> Tensor:
    logp = d.log_probs()
    return -ag.tsum(ag.exp(logp) * logp, axis=-1)


def categorical_kl(p: Categorical, q: Categorical) -> Tensor:
    if p.logits.shape != q.logits.shape:
        raise DistributionError(
            f"KL between shapes {list(p.logits.shape)} and {list(q.logits.shape)}"
        )
    logp, logq = p.log_probs(), q.log_probs()
    return ag.tsum(ag.exp(logp) * (logp - logq), axis=-1)


# -- family-generic dispatch ----------------------------------------------------


def log_prob(d, action) -> Tensor:
    if isinstance(d, DiagGaussian):
        return gaussian_log_prob(d, action)
    return categorical_log_prob(d, action)


def entropy(d) -> Tensor:
    if isinstance(d, DiagGaussian):
        return gaussian_entropy(d)
    return categorical_entropy(d)


def kl(p, q) -> Tensor:
    if type(p) is not type(q):
        raise DistributionError(
            f"KL between different families: {type(p).__name__} vs {type(q).__name__}"
        )
    if isinstance(p, DiagGaussian):
        return gaussian_kl(p, q)
    return categorical_kl(p, q)


def poe_fuse(main, pref, lambda_pref: float):
    if type(main) is not type(pref):
        raise DistributionError("cannot fuse distributions of different families")
    if isinstance(main, DiagGaussian):
        return gaussian_poe_fuse(main, pref, lambda_pref)
    return categorical_poe_fuse(main, pref, lambda_pref)


def linear_fuse(main, pref, weight: float):
    if isinstance(main, DiagGaussian):
        return linear_fuse_gaussian(main, pref, weight)
    return linear_fuse_categorical(main, pref, weight)


def sample(d, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw an action and return it with its log-probability under ``d``.

    Gaussian draws use ``mean + std * z`` with ``z ~ N(0, I)``; categorical
    draws invert the CDF of ``softmax(logits)`` with one uniform per row.
    """
    with ag.no_grad():
        if isinstance(d, DiagGaussian):
            z = rng.standard_normal(d.mean.shape)
            action = d.mean.data + np.exp(d.log_std.data) * z
        else:
            logp = d.log_probs().data
            cdf = np.cumsum(np.exp(logp), axis=-1)
            u = rng.random(cdf.shape[:-1] + (1,))
            action = np.minimum((cdf <= u).sum(axis=-1), d.n - 1)
            return action, np.take_along_axis(logp, action[..., None], axis=-1)[..., 0]
        lp = log_prob(d, action).data
    return action, lp
