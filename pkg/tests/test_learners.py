"""Hedge and bandit updates, step schedules, regret accounting."""

import math

import numpy as np
import pytest

from regretlab import InputError
from regretlab import learners as ln

from . import oracles


def test_hedge_single_update():
    st = ln.LearnerState.fresh(ln.HEDGE, 2)
    ln.hedge_update(st, (1.0, 0.0), math.log(2.0))
    assert st.weights.tolist() == [2.0, 1.0]
    np.testing.assert_allclose(st.probabilities(), [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    assert st.t_sel == 1


def test_hedge_equal_utilities_keep_probabilities():
    st = ln.LearnerState.fresh(ln.HEDGE, 3)
    before = st.probabilities().copy()
    ln.hedge_update(st, (0.4, 0.4, 0.4), 1.3)
    np.testing.assert_allclose(st.probabilities(), before, atol=1e-15)


def test_hedge_concentrates_on_dominant_action():
    st = ln.LearnerState.fresh(ln.HEDGE, 3)
    for _ in range(50):
        ln.hedge_update(st, (0.0, 0.0, 1.0), 1.0)
    p = st.probabilities()
    assert p[2] >= 0.99
    assert p[2] == pytest.approx(math.exp(50.0) / (2.0 + math.exp(50.0)), rel=1e-12)


def test_hedge_matches_closed_form_with_anytime_schedule():
    rng = np.random.default_rng(3)
    st = ln.LearnerState.fresh(ln.HEDGE, 5)
    rows, etas = [], []
    for t in range(1, 41):
        u = rng.random(5)
        eta = ln.anytime_eta(5, t)
        ln.hedge_update(st, u, eta)
        rows.append(u)
        etas.append(eta)
    np.testing.assert_allclose(
        st.probabilities(), oracles.hedge_probabilities(rows, etas), atol=1e-12
    )


def test_probabilities_normalized_after_every_update():
    rng = np.random.default_rng(11)
    st = ln.LearnerState.fresh(ln.HEDGE, 4)
    for t in range(1, 200):
        ln.hedge_update(st, rng.uniform(-1.0, 1.0, 4), ln.anytime_eta(4, t))
        assert abs(st.probabilities().sum() - 1.0) < 1e-12


def test_weight_ceiling_renormalization_preserves_distribution():
    st = ln.LearnerState.fresh(ln.HEDGE, 2)
    rows = [(1.0, 0.0)] * 300
    etas = [1.0] * 300
    for u, eta in zip(rows, etas):
        ln.hedge_update(st, u, eta)
    assert st.weights.max() <= ln.WEIGHT_CEILING
    np.testing.assert_allclose(
        st.probabilities(), oracles.hedge_probabilities(rows, etas), atol=1e-300
    )


def test_anytime_eta():
    assert ln.anytime_eta(2, 1) == pytest.approx(math.sqrt(math.log(2.0)), rel=1e-12)
    assert ln.anytime_eta(8, 4) == pytest.approx(math.sqrt(math.log(8.0) / 4.0), rel=1e-12)
    with pytest.raises(InputError):
        ln.anytime_eta(2, 0)


def test_bandit_update_is_importance_weighted():
    st = ln.LearnerState.fresh(ln.BANDIT, 2, gamma=0.0)
    # p(chosen) = 0.5, estimate = 1 / 0.5 = 2, exponent 0.1 * 2
    ln.bandit_update(st, 1, 1.0, 0.1, 0.0)
    assert st.weights[1] == pytest.approx(math.exp(0.2), rel=1e-12)
    assert st.weights[0] == 1.0


def test_bandit_full_exploration_samples_uniformly():
    st = ln.LearnerState(kind=ln.BANDIT, weights=np.array([100.0, 1.0]), gamma=1.0)
    np.testing.assert_allclose(st.probabilities(), [0.5, 0.5], atol=1e-15)


def test_bandit_beats_stochastic_gap():
    # two Bernoulli arms with means 0.75 and 0.25; the time-averaged shortfall
    # from the best arm must fall below 0.05 by T = 1e5
    rng = np.random.default_rng(1)
    st = ln.LearnerState.fresh(ln.BANDIT, 2, gamma=0.05)
    T = 100_000
    eta = 0.05 / 2.0
    total = 0.0
    for _ in range(T):
        a = st.sample(rng)
        u = float(rng.random() < (0.75 if a == 0 else 0.25))
        total += u
        ln.bandit_update(st, a, u, eta, 0.05)
    assert 0.75 - total / T < 0.05


def test_learner_state_validation():
    with pytest.raises(InputError):
        ln.LearnerState(kind="follow-the-leader", weights=np.ones(2))
    with pytest.raises(InputError):
        ln.LearnerState(kind=ln.HEDGE, weights=np.array([1.0, 0.0]))
    with pytest.raises(InputError):
        ln.LearnerState(kind=ln.BANDIT, weights=np.ones(2), gamma=1.5)
    st = ln.LearnerState.fresh(ln.BANDIT, 3, gamma=0.1)
    with pytest.raises(InputError):
        ln.bandit_update(st, 5, 1.0, 0.1, 0.1)
    with pytest.raises(InputError):
        ln.hedge_update(ln.LearnerState.fresh(ln.HEDGE, 2), (1.0, 0.0, 0.0), 0.5)


def test_to_unit_range():
    np.testing.assert_allclose(ln.to_unit_range([-1.0, 0.0, 1.0], 1.0), [0.0, 0.5, 1.0])
    with pytest.raises(InputError):
        ln.to_unit_range([0.0], 0.0)


def test_ledger_basic_regret():
    led = ln.RegretLedger.fresh(2)
    led.record_selected((1.0, 0.0), 1)
    led.record_selected((1.0, 0.0), 1)
    assert ln.external_regret(led) == 1.0
    assert led.selected_rounds == 2


def test_ledger_argmax_play_has_nonpositive_regret():
    rng = np.random.default_rng(2)
    led = ln.RegretLedger.fresh(4)
    for _ in range(100):
        u = rng.random(4)
        led.record_selected(u, int(u.argmax()))
    assert ln.external_regret(led) <= 0.0


def test_ledger_matches_reference_and_ignores_unselected():
    rng = np.random.default_rng(9)
    led = ln.RegretLedger.fresh(3)
    rows, chosen = [], []
    for _ in range(57):
        u = rng.uniform(-1.0, 1.0, 3)
        a = int(rng.integers(3))
        led.record_selected(u, a)
        rows.append(u)
        chosen.append(a)
    want = oracles.regret_reference(rows, chosen)
    assert ln.external_regret(led) == pytest.approx(want, abs=1e-12)
    before = ln.external_regret(led)
    for _ in range(23):
        led.record_unselected()
    assert ln.external_regret(led) == before  # exact, not approximate
    assert led.unselected_rounds == 23


def test_empty_ledger_returns_zero():
    assert ln.external_regret(ln.RegretLedger.fresh(4)) == 0.0


def test_hedge_meets_its_regret_bound_on_adversarial_sequences():
    rng = np.random.default_rng(7)
    st = ln.LearnerState.fresh(ln.HEDGE, 4)
    led = ln.RegretLedger.fresh(4)
    T = 10_000
    for _ in range(T):
        u = (rng.random(4) < 0.5).astype(float)
        a = st.sample(rng)
        led.record_selected(u, a)
        ln.hedge_update(st, u, ln.anytime_eta(4, st.t_sel + 1))
    bound = 2.0 * math.sqrt(math.log(4.0) / T) + 0.01
    assert ln.external_regret(led) <= bound
