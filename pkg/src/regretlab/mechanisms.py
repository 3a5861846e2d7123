"""Single-shot auction mechanisms on finite bid grids.

Three payment rules are supported, all pay-as-bid:

* ``first-price``: one unit, highest bid wins and pays its bid.
* ``all-pay``: one unit, highest bid wins, every player pays their own bid.
* ``multi-unit-first-price``: ``units`` identical items, the top ``units``
  bids each win one item and pay their own bid.

Bids live on per-player finite grids so that exhaustive enumeration over
action profiles stays exact. Ties are broken deterministically in favour of
the lowest player index unless the mechanism is configured with the
``random`` tie rule, in which case the caller must supply a generator.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

GRID_TOL = 1e-9

KIND_FIRST_PRICE = "first-price"
KIND_ALL_PAY = "all-pay"
KIND_MULTI_UNIT = "multi-unit-first-price"
KINDS = (KIND_FIRST_PRICE, KIND_ALL_PAY, KIND_MULTI_UNIT)

TIE_LOWEST = "lowest-index"
TIE_RANDOM = "random"


def _canonical_point(x: float) -> float:
    # Kill accumulated binary noise such as 3*0.1 != 0.3 so that grid points
    # built from a step compare equal to their decimal spelling.
    return round(float(x), 12)


@dataclass(frozen=True)
class ActionSpace:
    """Per-player sorted bid grids sharing a common scale.

    Every grid is strictly increasing, contains 0.0, and stays within
    ``[0, scale]``.
    """

    grids: tuple[tuple[float, ...], ...]
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise InputError(f"scale must be positive, got {self.scale}")
        if not self.grids:
            raise InputError("at least one player grid is required")
        canon = []
        for p, grid in enumerate(self.grids):
            pts = tuple(_canonical_point(b) for b in grid)
            if not pts:
                raise InputError(f"player {p}: empty bid grid")
            if any(b2 <= b1 for b1, b2 in zip(pts, pts[1:])):
                raise InputError(f"player {p}: grid must be strictly increasing")
            if pts[0] != 0.0:
                raise InputError(f"player {p}: grid must contain 0.0")
            if pts[-1] > self.scale + GRID_TOL:
                raise InputError(
                    f"player {p}: max bid {pts[-1]} exceeds scale {self.scale}"
                )
            canon.append(pts)
        object.__setattr__(self, "grids", tuple(canon))

    @classmethod
    def uniform(cls, n_players: int, step: float, scale: float = 1.0) -> "ActionSpace":
        """Shared grid {0, step, 2*step, ..., scale} for every player."""
        if step <= 0 or step > scale + GRID_TOL:
            raise InputError(f"grid step {step} not in (0, {scale}]")
        m = round(scale / step)
        if abs(m * step - scale) > GRID_TOL:
            raise InputError(f"grid step {step} does not divide scale {scale}")
        grid = tuple(_canonical_point(j * step) for j in range(m + 1))
        return cls(grids=(grid,) * n_players, scale=scale)

    @property
    def n_players(self) -> int:
        return len(self.grids)

    def size(self, player: int) -> int:
        return len(self.grids[player])

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.grids)

    def index_of(self, player: int, bid: float) -> int:
        """Grid index of ``bid``; raises InputError for off-grid bids."""
        grid = self.grids[player]
        i = bisect.bisect_left(grid, bid - GRID_TOL)
        if i < len(grid) and abs(grid[i] - bid) <= GRID_TOL:
            return i
        raise InputError(f"player {player}: bid {bid} is not on the grid")


@dataclass(frozen=True)
class Outcome:
    """Result of one play: per-player utilities, collected revenue, winner set."""

    utilities: tuple[float, ...]
    revenue: float
    winners: tuple[int, ...]


@dataclass(frozen=True)
class Mechanism:
    kind: str
    n: int
    actions: ActionSpace
    units: int = 1
    tie_break: str = TIE_LOWEST

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InputError(f"unknown mechanism kind {self.kind!r}")
        if self.n < 1:
            raise InputError(f"need at least one player, got n={self.n}")
        if self.actions.n_players != self.n:
            raise InputError(
                f"action space has {self.actions.n_players} grids for n={self.n} players"
            )
        if self.kind == KIND_MULTI_UNIT:
            if not 1 <= self.units <= self.n:
                raise InputError(f"units={self.units} not in [1, {self.n}]")
        elif self.units != 1:
            raise InputError(f"{self.kind} is a single-unit rule; units must be 1")
        if self.tie_break not in (TIE_LOWEST, TIE_RANDOM):
            raise InputError(f"unknown tie_break {self.tie_break!r}")

    @property
    def scale(self) -> float:
        return self.actions.scale

    def validate_values(self, values: Sequence[float]) -> tuple[float, ...]:
        if len(values) != self.n:
            raise InputError(f"expected {self.n} values, got {len(values)}")
        vals = tuple(float(v) for v in values)
        for i, v in enumerate(vals):
            if not 0.0 <= v <= self.scale + GRID_TOL:
                raise InputError(f"player {i}: value {v} outside [0, {self.scale}]")
        return vals

    def to_descriptor(self) -> dict:
        """JSON-serializable descriptor. Requires a shared uniform grid."""
        g0 = self.actions.grids[0]
        if any(g != g0 for g in self.actions.grids):
            raise InputError("descriptor form requires identical per-player grids")
        steps = {
            _canonical_point(b2 - b1) for b1, b2 in zip(g0, g0[1:])
        }
        if len(steps) > 1:
            raise InputError("descriptor form requires a uniform grid")
        step = steps.pop() if steps else self.scale
        return {
            "kind": self.kind,
            "n": self.n,
            "k": self.units,
            "grid_step": step,
            "H": self.scale,
            "tie_break": self.tie_break,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "Mechanism":
        required = {"kind", "n", "k", "grid_step", "H", "tie_break"}
        missing = required - d.keys()
        if missing:
            raise InputError(f"descriptor missing keys: {sorted(missing)}")
        unknown = d.keys() - required
        if unknown:
            raise InputError(f"descriptor has unknown keys: {sorted(unknown)}")
        actions = ActionSpace.uniform(int(d["n"]), float(d["grid_step"]), float(d["H"]))
        return cls(
            kind=d["kind"],
            n=int(d["n"]),
            actions=actions,
            units=int(d["k"]),
            tie_break=d["tie_break"],
        )


def _winners(mechanism: Mechanism, bids: Sequence[float], rng=None) -> tuple[int, ...]:
    k = mechanism.units if mechanism.kind == KIND_MULTI_UNIT else 1
    n = mechanism.n
    if k >= n:
        return tuple(range(n))
    if mechanism.tie_break == TIE_LOWEST:
        # sort is stable, so equal bids keep ascending player order
        order = sorted(range(n), key=lambda i: -bids[i])
        return tuple(sorted(order[:k]))
    if rng is None:
        raise InputError("random tie_break requires an rng argument to play()")
    jitter = rng.random(n)
    order = sorted(range(n), key=lambda i: (-bids[i], jitter[i]))
    return tuple(sorted(order[:k]))


def play(
    mechanism: Mechanism,
    action_profile: Sequence[float],
    valuation_profile: Sequence[float],
    rng=None,
) -> Outcome:
    """Run the auction once and return the realized outcome.

    ``action_profile`` entries must sit on the per-player grids. Utilities are
    quasilinear: winners get value minus payment, and under ``all-pay`` losers
    additionally pay their own bid.
    """
    values = mechanism.validate_values(valuation_profile)
    if len(action_profile) != mechanism.n:
        raise InputError(
            f"expected {mechanism.n} actions, got {len(action_profile)}"
        )
    idx = [
        mechanism.actions.index_of(i, b) for i, b in enumerate(action_profile)
    ]
    bids = [mechanism.actions.grids[i][j] for i, j in enumerate(idx)]
    return _play_on_grid(mechanism, bids, values, rng)


def _play_on_grid(
    mechanism: Mechanism,
    bids: Sequence[float],
    values: Sequence[float],
    rng=None,
) -> Outcome:
    # Internal fast path: bids already canonical grid values, values validated.
    winners = _winners(mechanism, bids, rng)
    win_set = set(winners)
    utilities = []
    revenue = 0.0
    if mechanism.kind == KIND_ALL_PAY:
        for i in range(mechanism.n):
            revenue += bids[i]
            utilities.append(values[i] - bids[i] if i in win_set else -bids[i])
    else:
        for i in range(mechanism.n):
            if i in win_set:
                utilities.append(values[i] - bids[i])
                revenue += bids[i]
            else:
                utilities.append(0.0)
    return Outcome(utilities=tuple(utilities), revenue=revenue, winners=winners)


def social_welfare(
    mechanism: Mechanism,
    action_profile: Sequence[float],
    valuation_profile: Sequence[float],
    rng=None,
) -> float:
    """Utilitarian welfare of the realized play: sum of utilities plus revenue."""
    out = play(mechanism, action_profile, valuation_profile, rng)
    return sum(out.utilities) + out.revenue


def optimal_welfare(valuation_profile: Sequence[float], mechanism: Mechanism) -> float:
    """Welfare of the best feasible allocation: the top value, or the sum of
    the top ``units`` values for the multi-unit rule."""
    values = mechanism.validate_values(valuation_profile)
    if mechanism.kind == KIND_MULTI_UNIT:
        return sum(sorted(values, reverse=True)[: mechanism.units])
    return max(values)


# --- exhaustive tables -----------------------------------------------------
#
# Enumeration-heavy callers (deviation checks, agent-form construction, the
# simulator's feedback path) all need U_i(b, a_-i; v) for every own bid b and
# every joint opponent profile. Building the table once per (player, value)
# keeps those paths to array lookups. Opponent profiles are flattened in
# mixed-radix order over ascending player index j != i.


def opponent_profile_count(mechanism: Mechanism, player: int) -> int:
    count = 1
    for j in range(mechanism.n):
        if j != player:
            count *= mechanism.actions.size(j)
    return count


def joint_profile_count(mechanism: Mechanism) -> int:
    return int(np.prod(mechanism.actions.sizes(), dtype=np.int64))


def _check_table_cap(entries: int, cap: int) -> None:
    if entries > cap:
        raise InputError(
            f"utility table would hold {entries} entries, over the cap of {cap}"
        )


@lru_cache(maxsize=256)
def utility_table(
    mechanism: Mechanism, player: int, value: float, cap: int = 10_000_000
) -> np.ndarray:
    """Array ``T[b_idx, opp_idx]`` of the player's utility against every joint
    opponent bid profile, holding the player's value fixed.

    Opponent profiles are indexed in mixed-radix order over the other players'
    grids, ascending player index, last player fastest.
    """
    if not 0 <= player < mechanism.n:
        raise InputError(f"player {player} out of range for n={mechanism.n}")
    if mechanism.tie_break != TIE_LOWEST:
        raise InputError("utility tables require the deterministic tie rule")
    own = mechanism.actions.grids[player]
    others = [mechanism.actions.grids[j] for j in range(mechanism.n) if j != player]
    n_opp = int(np.prod([len(g) for g in others], dtype=np.int64)) if others else 1
    _check_table_cap(len(own) * n_opp, cap)
    values = [0.0] * mechanism.n
    values[player] = value
    table = np.empty((len(own), n_opp), dtype=np.float64)
    # product of zero grids yields the single empty profile, which is what the
    # single-player case needs
    for opp_idx, opp_bids in enumerate(itertools.product(*others)):
        bids = list(opp_bids[:player]) + [0.0] + list(opp_bids[player:])
        for b_idx, b in enumerate(own):
            bids[player] = b
            out = _play_on_grid(mechanism, bids, values)
            table[b_idx, opp_idx] = out.utilities[player]
    table.setflags(write=False)
    return table


@lru_cache(maxsize=64)
def revenue_table(mechanism: Mechanism, cap: int = 10_000_000) -> np.ndarray:
    """Flat array of auction revenue for every joint action profile, indexed
    in mixed-radix order over all players' grids (last player fastest)."""
    if mechanism.tie_break != TIE_LOWEST:
        raise InputError("revenue tables require the deterministic tie rule")
    grids = mechanism.actions.grids
    total = joint_profile_count(mechanism)
    _check_table_cap(total, cap)
    zeros = (0.0,) * mechanism.n
    rev = np.empty(total, dtype=np.float64)
    for flat, bids in enumerate(itertools.product(*grids)):
        rev[flat] = _play_on_grid(mechanism, bids, zeros).revenue
    rev.setflags(write=False)
    return rev


def opponent_flat_index(
    mechanism: Mechanism, player: int, action_indices: Sequence[int]
) -> int:
    """Mixed-radix index of the opponents' part of a joint action-index profile."""
    flat = 0
    for j in range(mechanism.n):
        if j == player:
            continue
        flat = flat * mechanism.actions.size(j) + action_indices[j]
    return flat


def value_profiles(per_player_values: Iterable[Sequence[float]]) -> list[tuple[float, ...]]:
    """Cartesian product of per-player value lists, in lexicographic order."""
    return [tuple(v) for v in itertools.product(*per_player_values)]


def clear_table_caches() -> None:
    utility_table.cache_clear()
    revenue_table.cache_clear()
