"""Deviation-based welfare certificates for grid auctions.

A mechanism admits a ``(lam, mu)`` certificate on a value space V if there is
a per-player randomized deviation a*(v), independent across players, with

    sum_i E[U_i(a*_i(v), a_-i; v_i)]  >=  lam * Opt(v) - mu * R(a)

for every action profile a and every v in V. The functions here evaluate that
inequality exhaustively and exactly on the finite bid grids, search for the
best certificate reachable with pure deviations, and build the logarithmic
randomized deviation that is the standard certificate for the first-price
rule.

All expectations are closed-form sums over grid points; nothing is sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import mechanisms as mech
from .errors import CapExceededError, InputError, UndefinedResultError

SLACK_TOL = 1e-9
DIST_TOL = 1e-9

# Continuous-grid limit of the certificate reached by the logarithmic rule.
LOG_RULE_LIMIT = 1.0 - 1.0 / math.e


@dataclass(frozen=True)
class SmoothnessParams:
    lam: float
    mu: float

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise InputError(f"lam must be positive, got {self.lam}")
        if self.mu < 0:
            raise InputError(f"mu must be nonnegative, got {self.mu}")

    @property
    def poa_bound(self) -> float:
        """Worst-case ratio Opt/SW guaranteed for no-regret play."""
        return max(1.0, self.mu) / self.lam


@dataclass(frozen=True)
class DeviationRule:
    """Map (player, valuation profile) -> distribution over the player's grid.

    ``fn`` returns a mass vector aligned with the player's bid grid. Masses
    must be nonnegative and sum to 1 within 1e-9; this is validated on every
    evaluation.
    """

    name: str
    fn: Callable[[int, tuple[float, ...]], np.ndarray]

    def distribution(
        self, mechanism: mech.Mechanism, player: int, values: tuple[float, ...]
    ) -> np.ndarray:
        dist = np.asarray(self.fn(player, values), dtype=np.float64)
        size = mechanism.actions.size(player)
        if dist.shape != (size,):
            raise InputError(
                f"rule {self.name!r}: distribution for player {player} has shape "
                f"{dist.shape}, expected ({size},)"
            )
        if np.any(dist < -DIST_TOL):
            raise InputError(f"rule {self.name!r}: negative mass for player {player}")
        total = float(dist.sum())
        if abs(total - 1.0) > DIST_TOL:
            raise InputError(
                f"rule {self.name!r}: masses sum to {total}, not 1, for player {player}"
            )
        return dist

    @classmethod
    def from_bid_function(
        cls,
        name: str,
        mechanism: mech.Mechanism,
        bid_fn: Callable[[int, tuple[float, ...]], float],
    ) -> "DeviationRule":
        """Pure rule: point mass on ``bid_fn(player, values)``."""

        def fn(player: int, values: tuple[float, ...]) -> np.ndarray:
            grid = mechanism.actions.grids[player]
            j = mechanism.actions.index_of(player, bid_fn(player, values))
            dist = np.zeros(len(grid))
            dist[j] = 1.0
            return dist

        return cls(name=name, fn=fn)


@dataclass(frozen=True)
class SmoothnessReport:
    params: SmoothnessParams
    holds: bool
    worst_slack: float
    witness_values: tuple[float, ...]
    witness_actions: tuple[float, ...]

    def __str__(self) -> str:
        verdict = "holds" if self.holds else "FAILS"
        return (
            f"(lam={self.params.lam:.6g}, mu={self.params.mu:.6g}) {verdict}: "
            f"worst slack {self.worst_slack:.3e} at v={self.witness_values}, "
            f"a={self.witness_actions}"
        )


def _grid_floor_index(grid: Sequence[float], x: float) -> int:
    """Largest grid index whose point is <= x (within grid tolerance)."""
    j = 0
    for i, b in enumerate(grid):
        if b <= x + mech.GRID_TOL:
            j = i
        else:
            break
    return j


def fpa_log_deviation(value: float, grid: Sequence[float]) -> np.ndarray:
    """Discretized logarithmic bid distribution for a first-price bidder.

    The continuous rule has cumulative mass F(b) = ln(v / (v - b)) supported
    on [0, (1 - 1/e) v]. On a grid each point receives the mass of the cell
    to its right, the upper endpoint is rounded down to the grid, and the last
    supported point absorbs the tail, so the masses always sum to one. A zero
    value degenerates to a point mass on bidding zero.
    """
    grid = tuple(grid)
    if not grid or grid[0] != 0.0:
        raise InputError("bid grid must start at 0.0")
    masses = np.zeros(len(grid))
    if value <= 0.0:
        if value < 0.0:
            raise InputError(f"value must be nonnegative, got {value}")
        masses[0] = 1.0
        return masses
    endpoint = LOG_RULE_LIMIT * value
    top = _grid_floor_index(grid, endpoint)

    def cdf(b: float) -> float:
        return math.log(value / (value - b))

    for j in range(top):
        masses[j] = cdf(grid[j + 1]) - cdf(grid[j])
    masses[top] = 1.0 - cdf(grid[top])
    return masses


def named_deviation(name: str, mechanism: mech.Mechanism) -> DeviationRule:
    """Build one of the library deviation rules for ``mechanism``.

    * ``half``: point mass on the largest grid point <= v_i / 2.
    * ``uniform``: uniform over the grid points <= v_i.
    * ``log``: the logarithmic first-price rule, per player.
    * ``zero``: point mass on bidding zero.
    """
    grids = mechanism.actions.grids
    if name == "half":
        return DeviationRule.from_bid_function(
            "half",
            mechanism,
            lambda i, v: grids[i][_grid_floor_index(grids[i], v[i] / 2.0)],
        )
    if name == "zero":
        return DeviationRule.from_bid_function("zero", mechanism, lambda i, v: 0.0)
    if name == "uniform":

        def uniform_fn(player: int, values: tuple[float, ...]) -> np.ndarray:
            grid = grids[player]
            top = _grid_floor_index(grid, values[player])
            dist = np.zeros(len(grid))
            dist[: top + 1] = 1.0 / (top + 1)
            return dist

        return DeviationRule(name="uniform", fn=uniform_fn)
    if name == "log":
        return DeviationRule(
            name="log",
            fn=lambda i, v: fpa_log_deviation(v[i], grids[i]),
        )
    raise InputError(f"unknown deviation rule {name!r}")


def _joint_shape(mechanism: mech.Mechanism) -> tuple[int, ...]:
    return mechanism.actions.sizes()


def _deviation_gain_grid(
    mechanism: mech.Mechanism,
    rule: DeviationRule,
    values: tuple[float, ...],
    mu: float,
) -> np.ndarray:
    """Array over joint action profiles of sum_i E[U_i(dev_i, a_-i)] + mu R(a)."""
    shape = _joint_shape(mechanism)
    rev = mech.revenue_table(mechanism).reshape(shape)
    total = mu * rev if mu != 0.0 else np.zeros(shape)
    for i in range(mechanism.n):
        dist = rule.distribution(mechanism, i, values)
        table = mech.utility_table(mechanism, i, values[i])
        expected = dist @ table  # over opponent profiles of player i
        opp_shape = tuple(s for j, s in enumerate(shape) if j != i)
        total = total + np.expand_dims(expected.reshape(opp_shape), axis=i)
    return total


def check_deviation_smoothness(
    mechanism: mech.Mechanism,
    rule: DeviationRule,
    params: SmoothnessParams,
    value_space: Sequence[Sequence[float]],
) -> SmoothnessReport:
    """Exhaustively verify the certificate inequality over all (a, v) pairs.

    The expectation over the deviation is computed in closed form, so the
    check is exact up to float arithmetic; the verdict uses a -1e-9 slack
    tolerance. The witness is the minimizing (v, a) pair whether or not the
    certificate holds.
    """
    profiles = [mechanism.validate_values(v) for v in value_space]
    if not profiles:
        raise InputError("value_space must contain at least one profile")
    shape = _joint_shape(mechanism)
    worst = math.inf
    wit_v: tuple[float, ...] = profiles[0]
    wit_a: tuple[int, ...] = (0,) * mechanism.n
    for values in profiles:
        opt = mech.optimal_welfare(values, mechanism)
        slack = _deviation_gain_grid(mechanism, rule, values, params.mu) - params.lam * opt
        flat = int(np.argmin(slack))
        low = float(slack.reshape(-1)[flat])
        if low < worst:
            worst = low
            wit_v = values
            wit_a = np.unravel_index(flat, shape)
    actions = tuple(
        mechanism.actions.grids[i][j] for i, j in enumerate(wit_a)
    )
    return SmoothnessReport(
        params=params,
        holds=worst >= -SLACK_TOL,
        worst_slack=worst,
        witness_values=wit_v,
        witness_actions=actions,
    )


def _flat_digits(count: int, sizes: tuple[int, ...]) -> np.ndarray:
    """Digits of 0..count-1 in mixed radix ``sizes`` (last axis fastest)."""
    digits = np.empty((count, len(sizes)), dtype=np.int64)
    flat = np.arange(count, dtype=np.int64)
    for j in range(len(sizes) - 1, -1, -1):
        digits[:, j] = flat % sizes[j]
        flat //= sizes[j]
    return digits


def _opponent_indices(
    digits: np.ndarray, sizes: tuple[int, ...], player: int
) -> np.ndarray:
    opp = np.zeros(digits.shape[0], dtype=np.int64)
    for j in range(len(sizes)):
        if j == player:
            continue
        opp = opp * sizes[j] + digits[:, j]
    return opp


def best_pure_deviation(
    mechanism: mech.Mechanism,
    mu: float,
    value_space: Sequence[Sequence[float]],
    cap: int = 20_000_000,
) -> tuple[float, DeviationRule]:
    """Best certificate level reachable with pure deviations, plus the rule.

    For each value profile with positive optimum this maximizes, over joint
    pure deviations b, the minimum over adversary profiles a of

        (sum_i U_i(b_i, a_-i; v_i) + mu R(a)) / Opt(v),

    and returns the minimum of those maximin ratios across the value space
    together with the per-profile argmax rule.
    """
    if mu < 0:
        raise InputError(f"mu must be nonnegative, got {mu}")
    profiles = [mechanism.validate_values(v) for v in value_space]
    if not profiles:
        raise InputError("value_space must contain at least one profile")
    sizes = _joint_shape(mechanism)
    joint = mech.joint_profile_count(mechanism)
    if joint * joint > cap:
        raise CapExceededError(
            f"maximin enumeration needs {joint}^2 = {joint * joint} evaluations, "
            f"over the cap of {cap}"
        )
    digits = _flat_digits(joint, sizes)
    opp_idx = [
        _opponent_indices(digits, sizes, i) for i in range(mechanism.n)
    ]
    rev = mech.revenue_table(mechanism)

    best_overall = math.inf
    chosen: dict[tuple[float, ...], tuple[int, ...]] = {}
    any_positive = False
    for values in profiles:
        opt = mech.optimal_welfare(values, mechanism)
        if opt <= 0.0:
            continue
        any_positive = True
        # gain[b_flat, a_flat] = sum_i U_i(b_i, a_-i) + mu R(a)
        gain = np.broadcast_to(mu * rev, (joint, joint)).copy()
        for i in range(mechanism.n):
            table = mech.utility_table(mechanism, i, values[i])
            gain += table[np.ix_(digits[:, i], opp_idx[i])]
        floor = gain.min(axis=1)
        b_flat = int(np.argmax(floor))
        chosen[values] = tuple(int(d) for d in digits[b_flat])
        best_overall = min(best_overall, float(floor[b_flat]) / opt)
    if not any_positive:
        raise UndefinedResultError(
            "every profile in value_space has zero optimal welfare"
        )

    grids = mechanism.actions.grids

    def fn(player: int, values: tuple[float, ...]) -> np.ndarray:
        key = tuple(float(v) for v in values)
        if key not in chosen:
            raise InputError(f"value profile {key} was not in the searched space")
        dist = np.zeros(len(grids[player]))
        dist[chosen[key][player]] = 1.0
        return dist

    return best_overall, DeviationRule(name="best-pure", fn=fn)


def best_pure_lambda(
    mechanism: mech.Mechanism,
    mu: float,
    value_space: Sequence[Sequence[float]],
    cap: int = 20_000_000,
) -> float:
    lam, _ = best_pure_deviation(mechanism, mu, value_space, cap)
    return lam


@dataclass(frozen=True)
class LogRuleCertificate:
    """Measured certificate level of the logarithmic rule on a given grid."""

    certified_lambda: float
    mu: float
    degradation: float  # max(0, limit - certified), the grid discretization cost
    raw_gap: float  # limit - certified, may be negative on coarse grids
    witness_values: tuple[float, ...]
    witness_actions: tuple[float, ...]


def log_deviation_certificate(
    mechanism: mech.Mechanism,
    value_space: Sequence[Sequence[float]],
    mu: float = 1.0,
) -> LogRuleCertificate:
    """Largest lam such that the logarithmic rule certifies (lam, mu).

    Computed as the minimum over value profiles with positive optimum, and
    over adversary profiles a, of (sum_i E[U_i] + mu R(a)) / Opt(v). The
    degradation field reports how far below the continuous limit 1 - 1/e the
    grid pushes the certificate.
    """
    if mechanism.kind != mech.KIND_FIRST_PRICE:
        raise InputError("the logarithmic rule certifies the first-price rule only")
    rule = named_deviation("log", mechanism)
    profiles = [mechanism.validate_values(v) for v in value_space]
    shape = _joint_shape(mechanism)
    best = math.inf
    wit_v: tuple[float, ...] | None = None
    wit_a: tuple[int, ...] = (0,) * mechanism.n
    for values in profiles:
        opt = mech.optimal_welfare(values, mechanism)
        if opt <= 0.0:
            continue
        gain = _deviation_gain_grid(mechanism, rule, values, mu)
        flat = int(np.argmin(gain))
        ratio = float(gain.reshape(-1)[flat]) / opt
        if ratio < best:
            best = ratio
            wit_v = values
            wit_a = np.unravel_index(flat, shape)
    if wit_v is None:
        raise UndefinedResultError(
            "every profile in value_space has zero optimal welfare"
        )
    actions = tuple(mechanism.actions.grids[i][j] for i, j in enumerate(wit_a))
    gap = LOG_RULE_LIMIT - best
    return LogRuleCertificate(
        certified_lambda=best,
        mu=mu,
        degradation=max(0.0, gap),
        raw_gap=gap,
        witness_values=wit_v,
        witness_actions=actions,
    )
