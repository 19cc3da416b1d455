import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from prefpoe import PrefPoEAgent

SMALL = dict(total_steps=512, rollout_horizon=64, num_envs=2, extra={"update_epochs": 1, "minibatch_count": 2})


def test_get_params_and_clone():
    agent = PrefPoEAgent(lambda_pref=0.3, **SMALL)
    params = agent.get_params()
    assert params["lambda_pref"] == 0.3 and params["extra"]["minibatch_count"] == 2
    twin = clone(agent)
    assert twin.get_params() == params
    assert agent.set_params(seed=4).seed == 4


def test_not_fitted():
    with pytest.raises(NotFittedError):
        PrefPoEAgent().predict(np.zeros((1, 4)))


def test_fit_predict_discrete(tmp_path):
    agent = PrefPoEAgent(**SMALL).fit()
    X = np.random.default_rng(0).normal(size=(5, 4))
    actions = agent.predict(X)
    assert actions.shape == (5,) and set(actions) <= {0, 1}
    proba = agent.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    np.testing.assert_array_equal(proba.argmax(axis=1), actions)
    assert agent.predict_value(X).shape == (5,)
    assert np.isfinite(agent.score(episodes=2))
    with pytest.raises(ValueError, match="features"):
        agent.predict(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        agent.predict(np.array([[np.nan, 0, 0, 0]]))
    agent.save(tmp_path / "a.json")
    loaded = PrefPoEAgent.load(tmp_path / "a.json")
    np.testing.assert_array_equal(loaded.predict(X), actions)


def test_continuous_predict_and_fused_policy():
    agent = PrefPoEAgent(env="pointmass", policy="fused", **SMALL).fit()
    out = agent.predict(np.zeros((3, 4)))
    assert out.shape == (3, 2)
    with pytest.raises(AttributeError):
        agent.predict_proba(np.zeros((1, 4)))
