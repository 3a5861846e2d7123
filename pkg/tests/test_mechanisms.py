"""Auction rules: outcomes, welfare, exhaustive tables, serialization."""

import itertools

import numpy as np
import pytest

from regretlab import InputError
from regretlab import mechanisms as mech

from . import oracles


def fp(n, grids, **kw):
    return mech.Mechanism(
        kind=mech.KIND_FIRST_PRICE,
        n=n,
        actions=mech.ActionSpace(grids=grids, scale=kw.pop("scale", 1.0)),
        **kw,
    )


QUARTERS = (0.0, 0.25, 0.5, 0.75, 1.0)
TENTHS = tuple(round(0.1 * i, 10) for i in range(11))


def test_first_price_outcome():
    m = fp(2, (QUARTERS, QUARTERS))
    out = mech.play(m, (0.5, 0.25), (1.0, 0.5))
    assert out.utilities == (0.5, 0.0)
    assert out.revenue == 0.5
    assert out.winners == (0,)


def test_all_pay_outcome():
    m = mech.Mechanism(
        kind=mech.KIND_ALL_PAY, n=2, actions=mech.ActionSpace(grids=(QUARTERS, QUARTERS), scale=1.0)
    )
    out = mech.play(m, (0.5, 0.25), (1.0, 0.5))
    assert out.utilities == (0.5, -0.25)
    assert out.revenue == 0.75


def test_multi_unit_outcome():
    m = mech.Mechanism(
        kind=mech.KIND_MULTI_UNIT,
        n=3,
        units=2,
        actions=mech.ActionSpace(grids=(TENTHS,) * 3, scale=1.0),
    )
    out = mech.play(m, (0.4, 0.3, 0.3), (1.0, 0.5, 0.2))
    # the 0.3 tie at the second unit goes to the lower index
    assert out.winners == (0, 1)
    assert out.utilities == (0.6, 0.2, 0.0)
    assert out.revenue == pytest.approx(0.7, abs=1e-15)


def test_social_welfare_examples():
    m2 = fp(2, (QUARTERS, QUARTERS))
    assert mech.social_welfare(m2, (0.5, 0.25), (1.0, 0.5)) == 1.0
    ap = mech.Mechanism(
        kind=mech.KIND_ALL_PAY, n=2, actions=mech.ActionSpace(grids=(QUARTERS, QUARTERS), scale=1.0)
    )
    assert mech.social_welfare(ap, (0.5, 0.25), (1.0, 0.5)) == 1.0
    mu = mech.Mechanism(
        kind=mech.KIND_MULTI_UNIT,
        n=3,
        units=2,
        actions=mech.ActionSpace(grids=(TENTHS,) * 3, scale=1.0),
    )
    assert mech.social_welfare(mu, (0.4, 0.3, 0.3), (1.0, 0.5, 0.2)) == pytest.approx(
        1.5, abs=1e-15
    )


def test_optimal_welfare():
    m = fp(2, (QUARTERS, QUARTERS))
    assert mech.optimal_welfare((1.0, 0.5), m) == 1.0
    assert mech.optimal_welfare((0.0, 0.0), m) == 0.0
    mu = mech.Mechanism(
        kind=mech.KIND_MULTI_UNIT,
        n=3,
        units=2,
        actions=mech.ActionSpace(grids=(TENTHS,) * 3, scale=1.0),
    )
    assert mech.optimal_welfare((1.0, 0.5, 0.2), mu) == 1.5


def test_off_grid_and_arity_rejected():
    m = fp(2, (QUARTERS, QUARTERS))
    with pytest.raises(InputError):
        mech.play(m, (0.3, 0.25), (1.0, 0.5))
    with pytest.raises(InputError):
        mech.play(m, (0.5,), (1.0, 0.5))
    with pytest.raises(InputError):
        mech.play(m, (0.5, 0.25), (1.5, 0.5))  # value above the scale


def test_action_space_invariants():
    with pytest.raises(InputError):
        mech.ActionSpace(grids=((0.5, 1.0),), scale=1.0)  # must contain 0
    with pytest.raises(InputError):
        mech.ActionSpace(grids=((0.0, 0.5, 0.5),), scale=1.0)  # strictly increasing
    with pytest.raises(InputError):
        mech.ActionSpace(grids=((0.0, 2.0),), scale=1.0)  # above the scale
    sp = mech.ActionSpace.uniform(2, 0.25, 1.0)
    assert sp.grids[0] == QUARTERS
    assert sp.index_of(0, 0.75) == 3
    # grid lookup tolerates float dust
    assert sp.index_of(0, 0.75 + 1e-12) == 3


def test_mechanism_validation():
    with pytest.raises(InputError):
        mech.Mechanism(kind="second-price", n=1, actions=mech.ActionSpace.uniform(1, 0.5, 1.0))
    with pytest.raises(InputError):
        mech.Mechanism(
            kind=mech.KIND_MULTI_UNIT,
            n=2,
            units=3,
            actions=mech.ActionSpace.uniform(2, 0.5, 1.0),
        )
    with pytest.raises(InputError):
        mech.Mechanism(
            kind=mech.KIND_FIRST_PRICE,
            n=2,
            units=2,
            actions=mech.ActionSpace.uniform(2, 0.5, 1.0),
        )


def test_identity_against_independent_recomputation():
    """social_welfare == sum of utilities + revenue == value of the allocation,
    with the right-hand side computed by the standalone oracle."""
    rng = np.random.default_rng(5)
    kinds = [mech.KIND_FIRST_PRICE, mech.KIND_ALL_PAY, mech.KIND_MULTI_UNIT]
    for _ in range(300):
        kind = kinds[rng.integers(3)]
        n = int(rng.integers(1, 5)) if kind != mech.KIND_MULTI_UNIT else int(rng.integers(2, 5))
        units = int(rng.integers(1, n + 1)) if kind == mech.KIND_MULTI_UNIT else 1
        m = mech.Mechanism(
            kind=kind, n=n, units=units, actions=mech.ActionSpace.uniform(n, 0.25, 1.0)
        )
        bids = [QUARTERS[rng.integers(5)] for _ in range(n)]
        values = [QUARTERS[rng.integers(5)] for _ in range(n)]
        out = mech.play(m, bids, values)
        sw = mech.social_welfare(m, bids, values)
        assert abs(sw - (sum(out.utilities) + out.revenue)) <= 1e-12
        assert abs(sw - oracles.allocation_welfare(kind, bids, values, units)) <= 1e-12


def test_welfare_dominated_by_optimum():
    m = fp(2, ((0.0, 0.5, 1.0), (0.0, 0.5, 1.0)))
    for v in mech.value_profiles([[0.0, 0.5, 1.0]] * 2):
        opt = mech.optimal_welfare(v, m)
        for a in itertools.product((0.0, 0.5, 1.0), repeat=2):
            assert mech.social_welfare(m, a, v) <= opt + 1e-12


def test_all_pay_welfare_is_winner_value():
    ap = mech.Mechanism(
        kind=mech.KIND_ALL_PAY, n=2, actions=mech.ActionSpace(grids=(QUARTERS, QUARTERS), scale=1.0)
    )
    v = (0.75, 0.5)
    for a in itertools.product(QUARTERS, repeat=2):
        out = mech.play(ap, a, v)
        assert mech.social_welfare(ap, a, v) == pytest.approx(v[out.winners[0]], abs=1e-12)


def test_tie_break_is_minimal_index():
    m = fp(3, (QUARTERS,) * 3)
    out = mech.play(m, (0.5, 0.5, 0.5), (0.2, 0.9, 0.9))
    assert out.winners == (0,)
    # moving the equal high bids to later seats never steals the win from
    # the earliest max bidder
    out2 = mech.play(m, (0.25, 0.5, 0.5), (0.2, 0.9, 0.9))
    assert out2.winners == (1,)


def test_utility_table_matches_plays():
    m = fp(2, (QUARTERS, (0.0, 0.5, 1.0)))
    table = mech.utility_table(m, 0, 0.8)
    assert table.shape == (5, 3)
    for bi, b in enumerate(QUARTERS):
        for oi, ob in enumerate((0.0, 0.5, 1.0)):
            out = mech.play(m, (b, ob), (0.8, 0.0))
            assert table[bi, oi] == out.utilities[0]
    # single-player table has one opponent column
    sp = fp(1, ((0.0, 0.5),))
    assert mech.utility_table(sp, 0, 1.0).shape == (2, 1)


def test_revenue_table_matches_plays():
    ap = mech.Mechanism(
        kind=mech.KIND_ALL_PAY,
        n=2,
        actions=mech.ActionSpace(grids=((0.0, 0.5), (0.0, 0.25, 0.5)), scale=1.0),
    )
    rev = mech.revenue_table(ap)
    flat = 0
    for b0 in (0.0, 0.5):
        for b1 in (0.0, 0.25, 0.5):
            out = mech.play(ap, (b0, b1), (0.0, 0.0))
            assert rev[flat] == out.revenue
            flat += 1


def test_table_cap_enforced():
    m = fp(2, (QUARTERS, QUARTERS))
    with pytest.raises(InputError):
        mech.utility_table(m, 0, 1.0, cap=3)


def test_opponent_flat_index_round_trip():
    m = fp(3, (QUARTERS, (0.0, 0.5), (0.0, 0.5, 1.0)))
    flat = mech.opponent_flat_index(m, 1, (4, 1, 2))
    # opponents of player 1 are players 0 and 2, last fastest
    assert flat == 4 * 3 + 2


def test_descriptor_round_trip():
    m = fp(2, (QUARTERS, QUARTERS))
    d = m.to_descriptor()
    assert d == {
        "kind": "first-price",
        "n": 2,
        "k": 1,
        "grid_step": 0.25,
        "H": 1.0,
        "tie_break": mech.TIE_LOWEST,
    }
    assert mech.Mechanism.from_descriptor(d) == m
    with pytest.raises(InputError):
        mech.Mechanism.from_descriptor({**d, "extra": 1})
    bad = dict(d)
    del bad["kind"]
    with pytest.raises(InputError):
        mech.Mechanism.from_descriptor(bad)


def test_value_profiles_order():
    profs = mech.value_profiles([[0.5, 1.0], [0.25]])
    assert profs == [(0.5, 0.25), (1.0, 0.25)]
