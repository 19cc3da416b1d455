import math

import numpy as np
import pytest

from prefpoe.envs import CartPole, EnvError, FrozenLake, PointMass, env_spec, make_env


def test_cartpole_dynamics_single_step():
    env = CartPole(seed=0)
    env.reset()
    env.state = np.zeros(4)
    res = env.step(1)
    # with zero state the pole does not move in the first Euler step, only velocities change
    total = 1.1
    temp = 10.0 / total
    thetaacc = -temp / (0.5 * (4 / 3 - 0.1 / total))
    xacc = temp - 0.05 * thetaacc / total
    np.testing.assert_allclose(res.obs, [0.0, 0.02 * xacc, 0.0, 0.02 * thetaacc])
    assert res.reward == 1.0 and not res.done


def test_cartpole_terminates_and_truncates():
    env = CartPole(seed=0)
    env.reset()
    steps = 0
    while True:
        steps += 1
        if env.step(1).done:
            break
    assert steps < 50
    with pytest.raises(EnvError):
        env.step(0)


def test_cartpole_truncation_at_500():
    env = CartPole(seed=0)
    env.reset()
    res = None
    for _ in range(500):
        env.state = np.zeros(4)
        res = env.step(0)
    assert res.truncated and not res.terminated


def test_invalid_actions():
    env = make_env("cartpole", 0)
    env.reset()
    for bad in (2, -1, 0.5, [0, 1]):
        with pytest.raises(EnvError):
            env.step(bad)
    pm = make_env("pointmass", 0)
    pm.reset()
    with pytest.raises(EnvError):
        pm.step([0.0])
    with pytest.raises(EnvError):
        pm.step([np.nan, 0.0])


def test_reset_is_seeded():
    a, b = CartPole(seed=5), CartPole(seed=5)
    np.testing.assert_array_equal(a.reset(), b.reset())
    np.testing.assert_array_equal(a.reset(seed=9), CartPole(seed=9).reset())


def test_frozenlake_deterministic_path_to_goal():
    env = FrozenLake(seed=0, slippery=False)
    obs = env.reset()
    assert obs.argmax() == 0 and obs.sum() == 1
    total = 0.0
    for a in (1, 1, 2, 2, 1, 2):  # down down right right down right
        res = env.step(a)
        total += res.reward
    assert res.terminated and total == 1.0


def test_frozenlake_hole_terminates_without_reward():
    env = FrozenLake(seed=0, slippery=False)
    env.reset()
    env.step(2)
    res = env.step(1)  # state 5 is a hole
    assert res.terminated and res.reward == 0.0


def test_frozenlake_slip_distribution():
    env = FrozenLake(seed=1)
    counts = np.zeros(4)
    for _ in range(3000):
        env.reset()
        env.step(1)
        counts[env.last_direction] += 1
    # intended "down" plus its two perpendicular neighbours, never "up"
    assert counts[3] == 0
    np.testing.assert_allclose(counts[:3] / 3000, 1 / 3, atol=0.04)


def test_frozenlake_truncates_at_100():
    env = FrozenLake(seed=0, slippery=False)
    env.reset()
    for t in range(100):
        res = env.step(3)  # bump against the top wall
    assert res.truncated


def test_pointmass_dynamics_and_goal():
    env = PointMass(seed=0)
    env.reset()
    env.set_state([0.3, -0.4], [0.0, 0.0])
    res = env.step([1.0, 1.0])
    np.testing.assert_allclose(res.obs, [0.31, -0.39, 0.1, 0.1])
    assert res.reward == pytest.approx(-math.hypot(0.31, -0.39))
    env.set_state([0.01, 0.0], [0.0, 0.0])
    res = env.step([0.0, 0.0])
    assert res.terminated and res.reward == pytest.approx(10.0 - 0.01)


def test_pointmass_clips_actions():
    env = PointMass(seed=0)
    env.reset()
    env.set_state([0.5, 0.5])
    res = env.step([5.0, -5.0])
    np.testing.assert_allclose(res.obs[2:], [0.1, -0.1])


def test_env_specs():
    assert env_spec("cartpole").obs_dim == 4
    assert env_spec("frozenlake").action_space.n == 4
    assert env_spec("pointmass").action_space.kind == "continuous"
    with pytest.raises(ValueError):
        make_env("mountaincar")
