import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefpoe import autograd as ag
from prefpoe import distributions as D
from prefpoe.advantage import compute_gae, normalize
from prefpoe.losses import (
    LossParts,
    LossWeights,
    boltzmann_target,
    consistency_loss,
    ppo_clip_loss,
    preference_loss,
    total_loss,
    value_loss,
)
from prefpoe.verify import brute_force_gae, minimize_preference_loss


def test_gae_hand_case():
    batch = compute_gae([1.0, 1.0], [0.5, 0.25, 0.0], [False, True], 0.99, 0.95)
    # delta_1 = 1 - 0.25, delta_0 = 1 + 0.99*0.25 - 0.5
    assert batch.advantages[1] == pytest.approx(0.75)
    assert batch.advantages[0] == pytest.approx(0.7475 + 0.99 * 0.95 * 0.75)
    assert batch.advantages[0] == pytest.approx(1.4529, abs=1e-4)
    np.testing.assert_allclose(batch.returns, batch.advantages + [0.5, 0.25])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
def test_gae_matches_direct_sum(T, gamma, lam, seed):
    rng = np.random.default_rng(seed)
    r, v, d = rng.normal(size=T), rng.normal(size=T + 1), rng.random(T) < 0.2
    np.testing.assert_allclose(compute_gae(r, v, d, gamma, lam).advantages, brute_force_gae(r, v, d, gamma, lam), atol=1e-10)


def test_gae_lambda_limits(rng):
    r, v = rng.normal(size=6), rng.normal(size=7)
    d = np.zeros(6, bool)
    td = r + 0.9 * v[1:] - v[:-1]
    np.testing.assert_allclose(compute_gae(r, v, d, 0.9, 0.0).advantages, td)
    mc = np.array([sum(0.9**k * r[t + k] for k in range(6 - t)) + 0.9 ** (6 - t) * v[6] for t in range(6)]) - v[:-1]
    np.testing.assert_allclose(compute_gae(r, v, d, 0.9, 1.0).advantages, mc)


def test_gae_length_mismatch():
    with pytest.raises(ValueError):
        compute_gae([1.0, 2.0], [0.0, 0.0], [False, False], 0.99, 0.95)


def test_normalize():
    out = normalize([1.0, 2.0, 3.0, 4.0])
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    assert out.std() == pytest.approx(1.0, abs=1e-6)
    assert normalize([5.0]).tolist() == [0.0]
    np.testing.assert_allclose(normalize([2.0, 2.0]), 0.0)


def test_clip_loss_values():
    # ratio 1.5 with positive advantage is clipped to 1.2; ratio 0.5 with negative advantage to 0.8
    lp_new = np.log([1.5, 0.5])
    got = ppo_clip_loss(ag.tensor(lp_new), [0.0, 0.0], [1.0, -1.0], 0.2)
    assert float(got.data) == pytest.approx(-(1.2 * 1.0 + 0.8 * -1.0) / 2)


def test_clip_loss_gradient_vanishes_when_clipped():
    lp = ag.tensor(np.log([1.5]), requires_grad=True)
    ppo_clip_loss(lp, [0.0], [1.0], 0.2).backward()
    assert lp.grad[0] == 0.0


def test_value_loss_clipped_is_pessimistic():
    v = ag.tensor([2.0])
    plain = value_loss(v, [0.0])
    clipped = value_loss(v, [0.0], v_old=[0.0], clip=0.2)
    assert float(plain.data) == pytest.approx(2.0)
    assert float(clipped.data) == pytest.approx(2.0)
    v2 = ag.tensor([0.1])
    assert float(value_loss(v2, [1.0], v_old=[-1.0], clip=0.2).data) == pytest.approx(0.5 * 1.8**2)


def test_preference_loss_sign_pushes_towards_high_advantage():
    logits = ag.tensor(np.zeros((2, 2)), requires_grad=True)
    dist = D.Categorical(logits)
    lp = D.categorical_log_prob(dist, [0, 0])
    preference_loss([1.0, 1.0], lp, D.categorical_entropy(dist), 0.2, 0.2).backward()
    assert np.all(logits.grad[:, 0] < 0)  # descending increases the logit of the rewarded action


def test_consistency_loss_zero_iff_fused_equals_pref(rng):
    p = D.Categorical(rng.normal(size=(3, 4)))
    assert float(consistency_loss(p, p).data) == pytest.approx(0.0, abs=1e-12)
    assert float(consistency_loss(D.Categorical(rng.normal(size=(3, 4))), p).data) > 0


def test_total_loss_composition():
    parts = LossParts(*(ag.tensor(x) for x in (1.0, 2.0, 3.0, 4.0, 5.0)))
    w = LossWeights()
    want = 1.0 + 0.5 * 2.0 - 0.05 * 3.0 + 0.05 * 4.0 + 0.1 * 5.0
    assert float(total_loss(parts, w).data) == pytest.approx(want)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(alpha=0.0)
    with pytest.raises(ValueError):
        LossWeights(w_pref=-1.0)
    assert LossWeights(beta1=0.2, alpha=0.4).temperature == pytest.approx(2.0)


def test_length_mismatch_raises():
    with pytest.raises(ValueError):
        ppo_clip_loss(ag.tensor([0.0, 0.0]), [0.0], [1.0, 1.0], 0.2)


def test_boltzmann_fixed_point_by_descent():
    adv = np.array([1.0, -0.5, 0.25, 2.0])
    got = minimize_preference_loss(adv, 0.2, 0.3)
    np.testing.assert_allclose(got, boltzmann_target(adv, 0.2, 0.3), atol=1e-3)
    assert np.argmax(got) == 3
