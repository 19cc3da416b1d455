"""Shared-encoder agent with main-policy, preference and value heads."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .distributions import Categorical, DiagGaussian

HIDDEN = 64
CHECKPOINT_FORMAT = "prefpoe-checkpoint/1"


@dataclass(frozen=True)
class ActionSpace:
    """``kind`` is ``"discrete"`` (``n`` actions) or ``"continuous"`` (``n`` dims)."""

    kind: str
    n: int
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind == "discrete" and self.n < 2:
            raise ValueError("a discrete action space needs at least 2 actions")
        if self.n < 1:
            raise ValueError("action dimension must be >= 1")
        if self.kind == "continuous" and not self.low < self.high:
            raise ValueError("continuous bounds need low < high")

    @property
    def discrete(self) -> bool:
        return self.kind == "discrete"

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "n": self.n, "low": self.low, "high": self.high}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ActionSpace:
        return cls(d["kind"], int(d["n"]), float(d.get("low", -1.0)), float(d.get("high", 1.0)))


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float) -> np.ndarray:
    """Orthogonal matrix scaled by ``gain`` (orthonormal along the shorter side)."""
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q


class AgentNet:
    """Two-layer tanh encoder feeding three heads.

    Parameters live in :attr:`params`, an ordered name -> Tensor mapping.
    The main policy's log-std (continuous case) is a state-independent
    vector; the preference log-std comes from its own linear head.
    """

    def __init__(self, obs_dim: int, action_space: ActionSpace, params: dict[str, Tensor]):
        self.obs_dim = obs_dim
        self.action_space = action_space
        self.params = params

    # -- construction ----------------------------------------------------
    @classmethod
    def init(cls, seed: int, obs_dim: int, action_space: ActionSpace) -> AgentNet:
        if obs_dim < 1:
            raise ValueError("obs_dim must be >= 1")
        rng = np.random.default_rng(seed)
        root2 = np.sqrt(2.0)
        n = action_space.n
        shapes: list[tuple[str, np.ndarray]] = [
            ("encoder.0.weight", orthogonal(rng, (obs_dim, HIDDEN), root2)),
            ("encoder.0.bias", np.zeros(HIDDEN)),
            ("encoder.1.weight", orthogonal(rng, (HIDDEN, HIDDEN), root2)),
            ("encoder.1.bias", np.zeros(HIDDEN)),
        ]
        if action_space.discrete:
            shapes += [
                ("main.logits.weight", orthogonal(rng, (HIDDEN, n), 0.01)),
                ("main.logits.bias", np.zeros(n)),
                ("pref.logits.weight", orthogonal(rng, (HIDDEN, n), 0.01)),
                ("pref.logits.bias", np.zeros(n)),
            ]
        else:
            shapes += [
                ("main.mean.weight", orthogonal(rng, (HIDDEN, n), 0.01)),
                ("main.mean.bias", np.zeros(n)),
                ("main.log_std", np.zeros(n)),
                ("pref.mean.weight", orthogonal(rng, (HIDDEN, n), 0.01)),
                ("pref.mean.bias", np.zeros(n)),
                ("pref.log_std.weight", orthogonal(rng, (HIDDEN, n), 0.01)),
                ("pref.log_std.bias", np.zeros(n)),
            ]
        shapes += [
            ("value.weight", orthogonal(rng, (HIDDEN, 1), 1.0)),
            ("value.bias", np.zeros(1)),
        ]
        params = {name: Tensor(arr, requires_grad=True, name=name) for name, arr in shapes}
        return cls(obs_dim, action_space, params)

    # -- forward ---------------------------------------------------------
    def encode(self, obs) -> Tensor:
        x = ag.as_tensor(obs)
        if x.ndim not in (1, 2) or x.shape[-1] != self.obs_dim:
            raise ag.ShapeError("AgentNet.forward (expected obs_dim %d)" % self.obs_dim, x.shape)
        p = self.params
        h = ag.tanh(ag.linear(x, p["encoder.0.weight"], p["encoder.0.bias"]))
        return ag.tanh(ag.linear(h, p["encoder.1.weight"], p["encoder.1.bias"]))

    def heads(self, features: Tensor):
        p = self.params
        if self.action_space.discrete:
            main = Categorical(ag.linear(features, p["main.logits.weight"], p["main.logits.bias"]))
            pref = Categorical(ag.linear(features, p["pref.logits.weight"], p["pref.logits.bias"]))
        else:
            mean = ag.linear(features, p["main.mean.weight"], p["main.mean.bias"])
            log_std = p["main.log_std"]
            if mean.ndim == 2:
                log_std = ag.broadcast_to(log_std, mean.shape)
            main = DiagGaussian.from_raw(mean, log_std)
            pref = DiagGaussian.from_raw(
                ag.linear(features, p["pref.mean.weight"], p["pref.mean.bias"]),
                ag.linear(features, p["pref.log_std.weight"], p["pref.log_std.bias"]),
            )
        value = ag.linear(features, p["value.weight"], p["value.bias"])
        value = ag.reshape(value, value.shape[:-1])
        return main, pref, value

    def forward(self, obs):
        """Return ``(main_dist, pref_dist, value)`` for one observation or a batch."""
        return self.heads(self.encode(obs))

    __call__ = forward

    # -- parameter helpers -------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_parameters(self, prefix: str | None = None) -> int:
        return sum(
            t.size for name, t in self.params.items() if prefix is None or name.startswith(prefix)
        )

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.params.values()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for t in self.params.values():
            k = t.size
            t.data = np.asarray(flat[offset : offset + k], dtype=np.float64).reshape(t.shape).copy()
            offset += k
        if offset != len(flat):
            raise ValueError(f"expected {offset} values, got {len(flat)}")

    def copy(self) -> AgentNet:
        params = {n: Tensor(t.data, requires_grad=True, name=n) for n, t in self.params.items()}
        return AgentNet(self.obs_dim, self.action_space, params)

    # -- serialization -----------------------------------------------------
    def state_dict(self) -> dict[str, Any]:
        return {
            "obs_dim": self.obs_dim,
            "action_space": self.action_space.to_dict(),
            "shapes": {n: list(t.shape) for n, t in self.params.items()},
            "params": {n: t.data.ravel().tolist() for n, t in self.params.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict[str, Any]) -> AgentNet:
        space = ActionSpace.from_dict(state["action_space"])
        obs_dim = int(state["obs_dim"])
        reference = cls.init(0, obs_dim, space)
        params = {}
        for name, ref in reference.params.items():
            if name not in state["params"]:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            shape = tuple(state["shapes"][name])
            if shape != ref.shape:
                raise ValueError(f"parameter {name!r} has shape {list(shape)}, expected {list(ref.shape)}")
            arr = np.asarray(state["params"][name], dtype=np.float64)
            if arr.size != ref.size:
                raise ValueError(f"parameter {name!r} has {arr.size} values, expected {ref.size}")
            params[name] = Tensor(arr.reshape(shape), requires_grad=True, name=name)
        return cls(obs_dim, space, params)


def save_checkpoint(path: str | Path, net: AgentNet, config: dict[str, Any]) -> None:
    payload = {"format": CHECKPOINT_FORMAT, "config": config, **net.state_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_checkpoint(path: str | Path) -> tuple[AgentNet, dict[str, Any]]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises ``ValueError`` for anything malformed.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a prefpoe checkpoint")
    try:
        net = AgentNet.from_state_dict(payload)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"corrupt checkpoint {path}: {exc!r}") from None
    return net, payload.get("config", {})
