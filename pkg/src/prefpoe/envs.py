"""Small deterministic control environments with a reset/step interface.

* ``cartpole``   - classic cart-pole balancing, 2 discrete actions.
* ``frozenlake`` - 4x4 slippery grid world, 4 discrete actions, one-hot obs.
* ``pointmass``  - 2-D double integrator driven to the origin, continuous.

Each environment owns a seeded ``numpy`` generator, so a seed plus a fixed
action sequence reproduces an episode bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .networks import ActionSpace


class EnvError(RuntimeError):
    """Invalid action or a step taken on a finished episode."""


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    action_space: ActionSpace
    max_episode_steps: int
    reward_range: tuple[float, float]

    def __post_init__(self):
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be >= 1")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


class Env:
    spec: EnvSpec

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self._t = 0
        self._needs_reset = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self._t = 0
        self._needs_reset = False
        return self._reset()

    def step(self, action) -> StepResult:
        if self._needs_reset:
            raise EnvError("step() called on a finished episode; call reset() first")
        action = self._check_action(action)
        obs, reward, terminated = self._step(action)
        self._t += 1
        truncated = not terminated and self._t >= self.spec.max_episode_steps
        self._needs_reset = terminated or truncated
        return StepResult(obs, float(reward), bool(terminated), bool(truncated))

    def _check_action(self, action):
        space = self.spec.action_space
        if space.discrete:
            a = np.asarray(action)
            if a.ndim != 0 or a != int(a) or not 0 <= int(a) < space.n:
                raise EnvError(f"invalid action {action!r}; expected an index in [0, {space.n})")
            return int(a)
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (space.n,):
            raise EnvError(f"invalid action shape {list(a.shape)}; expected [{space.n}]")
        if not np.all(np.isfinite(a)):
            raise EnvError("action contains non-finite values")
        return np.clip(a, space.low, space.high)

    def _reset(self) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


class CartPole(Env):
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    spec = EnvSpec(4, ActionSpace("discrete", 2), 500, (0.0, 500.0))

    def _reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        return self.state.copy()

    def _step(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if action == 1 else -self.force_mag
        total_mass = self.masspole + self.masscart
        polemass_length = self.masspole * self.length
        costheta, sintheta = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot**2 * sintheta) / total_mass
        thetaacc = (self.gravity * sintheta - costheta * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * costheta**2 / total_mass)
        )
        xacc = temp - polemass_length * thetaacc * costheta / total_mass
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * xacc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * thetaacc
        self.state = np.array([x, x_dot, theta, theta_dot])
        terminated = (
            x < -self.x_threshold
            or x > self.x_threshold
            or theta < -self.theta_threshold
            or theta > self.theta_threshold
        )
        return self.state.copy(), 1.0, terminated


class FrozenLake(Env):
    MAP = ("SFFF", "FHFH", "FFFH", "HFFG")
    # left, down, right, up
    MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))

    spec = EnvSpec(16, ActionSpace("discrete", 4), 100, (0.0, 1.0))

    def __init__(self, seed: int | None = None, slippery: bool = True):
        super().__init__(seed)
        self.slippery = slippery
        self.nrow, self.ncol = len(self.MAP), len(self.MAP[0])
        self.last_direction: int | None = None

    def _obs(self):
        obs = np.zeros(self.nrow * self.ncol)
        obs[self.s] = 1.0
        return obs

    def _reset(self):
        self.s = 0
        self.last_direction = None
        return self._obs()

    def _step(self, action):
        direction = action
        if self.slippery:
            direction = (action + int(self.rng.integers(3)) - 1) % 4
        self.last_direction = direction
        row, col = divmod(self.s, self.ncol)
        dr, dc = self.MOVES[direction]
        row = min(max(row + dr, 0), self.nrow - 1)
        col = min(max(col + dc, 0), self.ncol - 1)
        self.s = row * self.ncol + col
        tile = self.MAP[row][col]
        return self._obs(), float(tile == "G"), tile in "GH"


class PointMass(Env):
    dt = 0.1
    goal_radius = 0.05
    goal_bonus = 10.0

    spec = EnvSpec(4, ActionSpace("continuous", 2, -1.0, 1.0), 200, (-np.inf, 10.0))

    def _reset(self):
        self.pos = self.rng.uniform(-1.0, 1.0, size=2)
        self.vel = np.zeros(2)
        return np.concatenate([self.pos, self.vel])

    def set_state(self, pos, vel=(0.0, 0.0)) -> np.ndarray:
        self.pos = np.asarray(pos, dtype=np.float64).copy()
        self.vel = np.asarray(vel, dtype=np.float64).copy()
        self._t = 0
        self._needs_reset = False
        return np.concatenate([self.pos, self.vel])

    def _step(self, action):
        self.vel = self.vel + self.dt * action
        self.pos = self.pos + self.dt * self.vel
        dist = float(np.linalg.norm(self.pos))
        reward = -dist
        terminated = dist < self.goal_radius
        if terminated:
            reward += self.goal_bonus
        return np.concatenate([self.pos, self.vel]), reward, terminated


ENVIRONMENTS = {"cartpole": CartPole, "frozenlake": FrozenLake, "pointmass": PointMass}


def make_env(name: str, seed: int | None = None, **kwargs) -> Env:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(seed=seed, **kwargs)


def env_spec(name: str) -> EnvSpec:
    if name not in ENVIRONMENTS:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}")
    return ENVIRONMENTS[name].spec
