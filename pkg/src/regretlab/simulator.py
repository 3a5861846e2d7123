"""Repeated play of a grid auction by populations of learning agents.

Each player seat of the mechanism is filled by one population holding one
learning agent per valuation type. Every round proceeds in three steps:

1. every agent in every population commits an action sampled from its
   current mixed strategy (the full commitment table is recorded, not just
   the realized match);
2. each population independently selects one agent uniformly at random;
3. the selected agents play the auction and experience their realized
   utility, while unselected agents earn zero and do not update.

Selected agents receive either the full counterfactual utility vector
(``full`` feedback, hedge update) or only the realized utility (``bandit``
feedback, importance-weighted update). Regret ledgers always record the exact
counterfactual vector regardless of the feedback the learner saw; they are
the simulator's accounting device, not the agent's information set.

Randomness comes from a single numpy PCG64 generator seeded from the config
(counter-based, stable across numpy releases since 1.17). Draw order is
fixed: one uniform per agent per round as a (horizon, n_agents) block, then
one type-index column per population. Runs with equal configs are therefore
reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mechanisms as mech
from .errors import ContractViolationError, InputError
from .learners import (
    BANDIT,
    HEDGE,
    LearnerState,
    RegretLedger,
    anytime_eta,
    bandit_update,
    external_regret,
    hedge_update,
    to_unit_range,
)

logger = logging.getLogger(__name__)

FEEDBACK_FULL = "full"
FEEDBACK_BANDIT = "bandit"

# Above this many (value profile, action profile) pairs the welfare tables
# are not materialized and rounds fall back to replaying the mechanism.
TABLE_CAP = 4_000_000


@dataclass(frozen=True)
class Population:
    """The distinct valuation types competing for one player seat."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise InputError("a population needs at least one type")
        if len(set(vals)) != len(vals):
            raise InputError(f"population types must be distinct, got {vals}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SimConfig:
    mechanism: mech.Mechanism
    populations: tuple[Population, ...]
    horizon: int
    seed: int
    feedback: str = FEEDBACK_FULL
    eta: float | None = None  # None selects the anytime schedule
    gamma: float = 0.05
    matchings_per_round: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise InputError(f"horizon must be >= 1, got {self.horizon}")
        if self.feedback not in (FEEDBACK_FULL, FEEDBACK_BANDIT):
            raise InputError(f"unknown feedback mode {self.feedback!r}")
        if len(self.populations) != self.mechanism.n:
            raise InputError(
                f"{len(self.populations)} populations for {self.mechanism.n} player seats"
            )
        pops = tuple(
            p if isinstance(p, Population) else Population(tuple(p))
            for p in self.populations
        )
        for i, p in enumerate(pops):
            for v in p.values:
                if not 0.0 <= v <= self.mechanism.scale + mech.GRID_TOL:
                    raise InputError(
                        f"population {i}: type value {v} outside [0, {self.mechanism.scale}]"
                    )
        object.__setattr__(self, "populations", pops)
        if not 0.0 <= self.gamma <= 1.0:
            raise InputError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.matchings_per_round != 1:
            raise InputError(
                "only one matching per round is implemented; matchings_per_round "
                "is a config stub for a batched-matching extension"
            )

    def agents(self) -> list[tuple[int, int, float]]:
        """Flat agent order: (population, type index, type value), populations
        ascending, types in declaration order."""
        out = []
        for i, p in enumerate(self.populations):
            for ti, v in enumerate(p.values):
                out.append((i, ti, v))
        return out

    def agent_offsets(self) -> list[int]:
        offs, acc = [], 0
        for p in self.populations:
            offs.append(acc)
            acc += len(p)
        return offs


@dataclass
class Trace:
    """Complete record of one run.

    ``strategy[t, g]`` is the action index agent ``g`` (flat order) committed
    to in round ``t``; ``v_idx[t, i]`` the type selected in population ``i``;
    ``realized_idx[t, i]`` the bid index actually played for seat ``i``,
    which always equals the selected agent's committed action.
    """

    config: SimConfig
    v_idx: np.ndarray
    strategy: np.ndarray | None
    realized_idx: np.ndarray
    sw: np.ndarray
    opt: np.ndarray
    ledgers: list[RegretLedger] | None = None

    @property
    def horizon(self) -> int:
        return len(self.sw)

    def validate(self) -> None:
        T, n = self.v_idx.shape
        if not (len(self.sw) == len(self.opt) == T == self.config.horizon):
            raise InputError("trace arrays disagree on the horizon")
        if self.strategy is not None:
            offs = self.config.agent_offsets()
            for i in range(n):
                sel = offs[i] + self.v_idx[:, i]
                if not np.array_equal(
                    self.strategy[np.arange(T), sel], self.realized_idx[:, i]
                ):
                    raise InputError(
                        f"seat {i}: realized actions diverge from committed strategies"
                    )


def _welfare_tables(config: SimConfig):
    """(sw[vflat, aflat], opt[vflat]) or None when over the size cap."""
    m = config.mechanism
    grids = m.actions.grids
    value_lists = [p.values for p in config.populations]
    a_count = mech.joint_profile_count(m)
    v_count = int(np.prod([len(v) for v in value_lists]))
    if v_count * a_count > TABLE_CAP:
        return None
    sw = np.empty((v_count, a_count))
    opt = np.empty(v_count)
    for vflat, vprof in enumerate(itertools.product(*value_lists)):
        opt[vflat] = mech.optimal_welfare(vprof, m)
        for aflat, bids in enumerate(itertools.product(*grids)):
            out = mech._play_on_grid(m, bids, vprof)
            sw[vflat, aflat] = sum(out.utilities) + out.revenue
    return sw, opt


def _strides(sizes: list[int]) -> list[int]:
    strides = [1] * len(sizes)
    for j in range(len(sizes) - 2, -1, -1):
        strides[j] = strides[j + 1] * sizes[j + 1]
    return strides


def run_repeated_game(config: SimConfig) -> Trace:
    """Simulate ``config.horizon`` rounds and return the full trace."""
    m = config.mechanism
    n = m.n
    T = config.horizon
    H = m.scale
    sizes_a = list(m.actions.sizes())
    pops = config.populations
    agents = config.agents()
    offsets = config.agent_offsets()
    n_agents = len(agents)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    action_u = rng.random((T, n_agents))
    v_idx = np.empty((T, n), dtype=np.int16)
    for i, p in enumerate(pops):
        v_idx[:, i] = rng.integers(0, len(p), size=T)

    tables = [mech.utility_table(m, pop, val) for (pop, _ti, val) in agents]
    kind = HEDGE if config.feedback == FEEDBACK_FULL else BANDIT
    gamma = config.gamma if kind == BANDIT else 0.0
    states = [
        LearnerState.fresh(kind, sizes_a[pop], gamma) for (pop, _ti, _v) in agents
    ]
    ledgers = [RegretLedger.fresh(sizes_a[pop]) for (pop, _ti, _v) in agents]

    welfare = _welfare_tables(config)
    a_strides = _strides(sizes_a)
    v_strides = _strides([len(p) for p in pops])
    opp_strides = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        st = _strides([sizes_a[j] for j in others])
        opp_strides.append(list(zip(others, st)))

    strategy = np.empty((T, n_agents), dtype=np.int16)
    realized = np.empty((T, n), dtype=np.int16)
    sw_arr = np.empty(T)
    opt_arr = np.empty(T)
    cdfs: list[np.ndarray | None] = [None] * n_agents
    grids = m.actions.grids
    two_h = 2.0 * H

    for t in range(T):
        srow = strategy[t]
        for g in range(n_agents):
            cdf = cdfs[g]
            if cdf is None:
                cdf = np.cumsum(states[g].probabilities())
                cdfs[g] = cdf
            j = int(np.searchsorted(cdf, action_u[t, g] * cdf[-1], side="right"))
            srow[g] = j if j < len(cdf) else len(cdf) - 1

        vrow = v_idx[t]
        sel = [offsets[i] + int(vrow[i]) for i in range(n)]
        ridx = [int(srow[s]) for s in sel]
        realized[t] = ridx

        if welfare is not None:
            aflat = 0
            vflat = 0
            for i in range(n):
                aflat += ridx[i] * a_strides[i]
                vflat += int(vrow[i]) * v_strides[i]
            sw_arr[t] = welfare[0][vflat, aflat]
            opt_arr[t] = welfare[1][vflat]
        else:
            vals = tuple(pops[i].values[vrow[i]] for i in range(n))
            bids = tuple(grids[i][ridx[i]] for i in range(n))
            out = mech._play_on_grid(m, bids, vals)
            sw_arr[t] = sum(out.utilities) + out.revenue
            opt_arr[t] = mech.optimal_welfare(vals, m)

        for i in range(n):
            g = sel[i]
            opp = 0
            for j, stride in opp_strides[i]:
                opp += ridx[j] * stride
            uvec = tables[g][:, opp]
            ledgers[g].record_selected(uvec, ridx[i])
            st = states[g]
            if kind == HEDGE:
                eta = config.eta if config.eta is not None else anytime_eta(
                    st.n_actions, st.t_sel + 1
                )
                hedge_update(st, (uvec + H) / two_h, eta)
            else:
                eta = config.eta if config.eta is not None else gamma / st.n_actions
                bandit_update(
                    st, ridx[i], (uvec[ridx[i]] + H) / two_h, eta, gamma
                )
            cdfs[g] = None
        for g in range(n_agents):
            if g not in sel:
                ledgers[g].record_unselected()

    trace = Trace(
        config=config,
        v_idx=v_idx,
        strategy=strategy,
        realized_idx=realized,
        sw=sw_arr,
        opt=opt_arr,
        ledgers=ledgers,
    )
    if config.feedback == FEEDBACK_FULL:
        _check_hedge_bound(trace)
    return trace


def _check_hedge_bound(trace: Trace) -> None:
    # Soft sanity bound on measured regret; a violation is logged, not fatal,
    # since it is a probabilistic statement.
    H = trace.config.mechanism.scale
    for g, (pop, ti, val) in enumerate(trace.config.agents()):
        led = trace.ledgers[g]
        if led.selected_rounds == 0:
            continue
        bound = 2.0 * H * math.sqrt(
            math.log(max(led.counterfactual.shape[0], 2)) / led.selected_rounds
        ) + 0.01
        reg = external_regret(led)
        if reg > bound:
            logger.warning(
                "agent (pop=%d, type=%.4g): regret %.4f above the hedge bound %.4f",
                pop,
                val,
                reg,
                bound,
            )


def counterfactual_vector(
    mechanism: mech.Mechanism,
    player: int,
    value: float,
    realized_indices,
) -> np.ndarray:
    """U_i(b, a_-i; value) for every own bid b, opponents' realized bids fixed."""
    if len(realized_indices) != mechanism.n:
        raise InputError(
            f"expected {mechanism.n} realized actions, got {len(realized_indices)}"
        )
    opp = mech.opponent_flat_index(mechanism, player, realized_indices)
    return mech.utility_table(mechanism, player, value)[:, opp].copy()


def utility_vector_feedback(
    trace: Trace, t: int, population: int, type_index: int
) -> np.ndarray:
    """Exact full-information feedback the agent received in round ``t``.

    Only the agent whose type was selected for its population that round has
    feedback; asking for anyone else raises ContractViolationError.
    """
    if not 0 <= t < trace.horizon:
        raise InputError(f"round {t} outside the trace horizon {trace.horizon}")
    if not 0 <= population < trace.config.mechanism.n:
        raise InputError(f"population {population} out of range")
    pop = trace.config.populations[population]
    if not 0 <= type_index < len(pop):
        raise InputError(f"type index {type_index} out of range")
    if int(trace.v_idx[t, population]) != type_index:
        raise ContractViolationError(
            f"agent (pop={population}, type={type_index}) was not selected in "
            f"round {t}; unselected agents receive no feedback"
        )
    return counterfactual_vector(
        trace.config.mechanism,
        population,
        pop.values[type_index],
        [int(x) for x in trace.realized_idx[t]],
    )


# --- persistence -------------------------------------------------------------


def trace_csv_text(trace: Trace) -> str:
    """Render the per-round table as CSV (1-based round numbers)."""
    n = trace.config.mechanism.n
    grids = trace.config.mechanism.actions.grids
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = (
        ["t"]
        + [f"v_idx_{i + 1}" for i in range(n)]
        + [f"action_{i + 1}" for i in range(n)]
        + ["sw", "opt"]
    )
    writer.writerow(header)
    for t in range(trace.horizon):
        row = [t + 1]
        row += [int(trace.v_idx[t, i]) for i in range(n)]
        row += [repr(grids[i][trace.realized_idx[t, i]]) for i in range(n)]
        row += [repr(float(trace.sw[t])), repr(float(trace.opt[t]))]
        writer.writerow(row)
    return buf.getvalue()


def write_trace_csv(trace: Trace, path) -> None:
    Path(path).write_text(trace_csv_text(trace))


def strategies_json_text(trace: Trace, every: int = 1) -> str:
    """Commitment tables (all agents, every ``every``-th round) plus run metadata."""
    if every < 1:
        raise InputError(f"every must be >= 1, got {every}")
    if trace.strategy is None:
        raise InputError("this trace carries no commitment table")
    cfg = trace.config
    doc = {
        "meta": {
            "mechanism": cfg.mechanism.to_descriptor(),
            "populations": [list(p.values) for p in cfg.populations],
            "horizon": cfg.horizon,
            "seed": cfg.seed,
            "feedback": cfg.feedback,
            "gamma": cfg.gamma,
            "eta": cfg.eta,
        },
        "every": every,
        "rounds": [
            [int(x) for x in trace.strategy[t]]
            for t in range(0, trace.horizon, every)
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def write_strategies_json(trace: Trace, path, every: int = 1) -> None:
    Path(path).write_text(strategies_json_text(trace, every))


def load_trace(csv_path, strategies_path) -> Trace:
    """Rebuild a trace from its CSV table and strategies sidecar.

    The sidecar supplies the config. Ledgers are not persisted; analyses that
    need regret sums recompute them from the realized data. The commitment
    table is only reconstructed when the sidecar recorded every round.
    """
    doc = json.loads(Path(strategies_path).read_text())
    meta = doc["meta"]
    mechanism = mech.Mechanism.from_descriptor(meta["mechanism"])
    config = SimConfig(
        mechanism=mechanism,
        populations=tuple(Population(tuple(v)) for v in meta["populations"]),
        horizon=int(meta["horizon"]),
        seed=int(meta["seed"]),
        feedback=meta["feedback"],
        eta=meta["eta"],
        gamma=float(meta["gamma"]),
    )
    n = mechanism.n
    T = config.horizon
    v_idx = np.empty((T, n), dtype=np.int16)
    realized = np.empty((T, n), dtype=np.int16)
    sw = np.empty(T)
    opt = np.empty(T)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = (
            ["t"]
            + [f"v_idx_{i + 1}" for i in range(n)]
            + [f"action_{i + 1}" for i in range(n)]
            + ["sw", "opt"]
        )
        if header != expected:
            raise InputError(f"unexpected CSV header {header}")
        count = 0
        for row in reader:
            t = int(row[0]) - 1
            if not 0 <= t < T:
                raise InputError(f"round number {t + 1} outside horizon {T}")
            for i in range(n):
                v_idx[t, i] = int(row[1 + i])
                realized[t, i] = mechanism.actions.index_of(i, float(row[1 + n + i]))
            sw[t] = float(row[1 + 2 * n])
            opt[t] = float(row[2 + 2 * n])
            count += 1
    if count != T:
        raise InputError(f"CSV has {count} rounds, expected {T}")
    strategy = None
    if doc["every"] == 1 and len(doc["rounds"]) == T:
        strategy = np.asarray(doc["rounds"], dtype=np.int16)
    return Trace(
        config=config,
        v_idx=v_idx,
        strategy=strategy,
        realized_idx=realized,
        sw=sw,
        opt=opt,
        ledgers=None,
    )


def rebuild_ledgers(trace: Trace) -> list[RegretLedger]:
    """Recompute per-agent ledgers from the realized rows of a trace."""
    cfg = trace.config
    m = cfg.mechanism
    agents = cfg.agents()
    ledgers = []
    T = trace.horizon
    for pop, ti, val in agents:
        table = mech.utility_table(m, pop, val)
        sel = trace.v_idx[:, pop] == ti
        n_sel = int(sel.sum())
        opp = np.zeros(T, dtype=np.int64)
        for j in range(m.n):
            if j != pop:
                opp = opp * m.actions.size(j) + trace.realized_idx[:, j]
        counts = np.bincount(opp[sel], minlength=table.shape[1]).astype(np.float64)
        led = RegretLedger(counterfactual=table @ counts)
        led.realized = float(
            table[trace.realized_idx[sel, pop], opp[sel]].sum()
        )
        led.selected_rounds = n_sel
        led.unselected_rounds = T - n_sel
        ledgers.append(led)
    return ledgers
