"""Shared fixtures.

The acceptance gate reruns the two headline experiments (first-price and
all-pay, five seeds each at T = 200000), which costs around a minute in
total. Those runs are built once per session and shared by every acceptance
criterion; unit tests use their own tiny horizons and never touch these.
"""

import time

import pytest

from regretlab import mechanisms as mech
from regretlab import simulator as sim

ACCEPT_SEEDS = (2, 4, 7, 10, 11)
ACCEPT_HORIZON = 200_000
ACCEPT_VALUES = (0.5, 1.0)


def acceptance_config(kind, seed, horizon=ACCEPT_HORIZON):
    m = mech.Mechanism(
        kind=kind,
        n=2,
        actions=mech.ActionSpace.uniform(2, 0.1, 1.0),
    )
    return sim.SimConfig(
        mechanism=m,
        populations=(sim.Population(ACCEPT_VALUES), sim.Population(ACCEPT_VALUES)),
        horizon=horizon,
        seed=seed,
    )


def _run_all(kind):
    runs = {}
    for seed in ACCEPT_SEEDS:
        t0 = time.perf_counter()
        trace = sim.run_repeated_game(acceptance_config(kind, seed))
        runs[seed] = (trace, time.perf_counter() - t0)
    return runs


@pytest.fixture(scope="session")
def first_price_runs():
    """seed -> (trace, wall seconds) for the headline first-price experiment."""
    return _run_all(mech.KIND_FIRST_PRICE)


@pytest.fixture(scope="session")
def all_pay_runs():
    return _run_all(mech.KIND_ALL_PAY)
