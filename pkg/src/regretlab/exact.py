"""Small-instance ground truth by exhaustive enumeration and LP.

The population game induced by a mechanism and finite type populations is a
complete-information game whose players are all (population, type) pairs.
This module builds that game's dense payoff tensor exactly, verifies lifted
smoothness certificates on it by enumerating every joint profile, and bounds
worst-case coarse-equilibrium welfare with a linear program.

Everything is deliberately dense and exact within double precision. Size caps
reject instances that would not fit; nothing here samples.

LP solver: a dense two-phase primal simplex with Bland's smallest-index rule.
Bland's rule is slow but cannot cycle and is fully deterministic, which is
what a ground-truth oracle needs at these sizes (a few thousand variables at
most). Feasibility and re-evaluation tolerances are 1e-7.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import mechanisms as mech
from .errors import CapExceededError, ContractViolationError, InputError, SolverError
from .simulator import Population
from .smoothness import SLACK_TOL, DeviationRule, SmoothnessParams, SmoothnessReport

TENSOR_CAP = 1_000_000
LP_CAP = 4096
FEAS_TOL = 1e-7


def _strides(sizes) -> list[int]:
    out = [1] * len(sizes)
    for j in range(len(sizes) - 2, -1, -1):
        out[j] = out[j + 1] * sizes[j + 1]
    return out


@dataclass(frozen=True)
class AgentGame:
    """Dense normal form over all (population, type) agents.

    ``utilities[g, s]`` is agent g's expected utility at joint profile s,
    the expectation running over the uniform type draw (an agent earns 0 in
    rounds where its population selected another type). Profiles are indexed
    in mixed radix over agents (population ascending, types in declaration
    order, last agent varying fastest).
    """

    mechanism: mech.Mechanism
    populations: tuple[Population, ...]
    agents: tuple[tuple[int, int, float], ...]
    sizes: tuple[int, ...]
    strides: tuple[int, ...]
    utilities: np.ndarray
    revenue: np.ndarray
    e_opt: float

    @property
    def sigma(self) -> int:
        return self.revenue.shape[0]

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def digits(self, g: int) -> np.ndarray:
        """Agent g's own action index at every joint profile."""
        return (np.arange(self.sigma) // self.strides[g]) % self.sizes[g]

    def deviation_view(self, g: int, action: int) -> np.ndarray:
        """Index map s -> (action, s_minus_g)."""
        if not 0 <= action < self.sizes[g]:
            raise InputError(f"action {action} out of range for agent {g}")
        return np.arange(self.sigma) + (action - self.digits(g)) * self.strides[g]

    def social_welfare(self) -> np.ndarray:
        return self.utilities.sum(axis=0) + self.revenue

    def profile_digits(self, s: int) -> tuple[int, ...]:
        return tuple(
            (s // self.strides[g]) % self.sizes[g] for g in range(self.n_agents)
        )


def build_agent_game(
    mechanism: mech.Mechanism, populations, cap: int = TENSOR_CAP
) -> AgentGame:
    """Exact expected payoffs of every agent at every joint profile.

    Expectations run over the uniform product type draw by full enumeration;
    E[Opt] likewise. Instances above ``cap`` joint profiles are rejected with
    the measured size.
    """
    pops = tuple(
        p if isinstance(p, Population) else Population(tuple(p)) for p in populations
    )
    if len(pops) != mechanism.n:
        raise InputError(
            f"{len(pops)} populations for {mechanism.n} player seats"
        )
    agents = []
    sizes = []
    for i, p in enumerate(pops):
        for ti, v in enumerate(p.values):
            if not 0.0 <= v <= mechanism.scale + mech.GRID_TOL:
                raise InputError(
                    f"population {i}: type value {v} outside [0, {mechanism.scale}]"
                )
            agents.append((i, ti, v))
            sizes.append(mechanism.actions.size(i))
    sigma = 1
    for k in sizes:
        sigma *= k
    if sigma > cap:
        raise CapExceededError(
            f"agent game needs {sigma} joint profiles, cap is {cap} "
            f"(per-agent action counts: {sizes})"
        )
    strides = _strides(sizes)
    n = mechanism.n
    n_agents = len(agents)
    agent_index = {(i, ti): g for g, (i, ti, _v) in enumerate(agents)}

    # Per-player utilities and revenue flattened over the mechanism's joint
    # action profiles (player ascending, last fastest).
    joint = mech.joint_profile_count(mechanism)
    a_sizes = list(mechanism.actions.sizes())
    a_strides = _strides(a_sizes)
    pdigs = [
        (np.arange(joint) // a_strides[i]) % a_sizes[i] for i in range(n)
    ]
    rev_flat = mech.revenue_table(mechanism)
    util_flat: dict[tuple[int, float], np.ndarray] = {}
    for i, p in enumerate(pops):
        others = [j for j in range(n) if j != i]
        ostr = _strides([a_sizes[j] for j in others])
        oflat = np.zeros(joint, dtype=np.int64)
        for j, s in zip(others, ostr):
            oflat += pdigs[j] * s
        for v in p.values:
            table = mech.utility_table(mechanism, i, v)
            util_flat[(i, v)] = table[pdigs[i], oflat]

    utilities = np.zeros((n_agents, sigma))
    revenue = np.zeros(sigma)
    opt_total = 0.0
    v_count = 0
    s_range = np.arange(sigma)
    for tv in itertools.product(*[range(len(p)) for p in pops]):
        v_count += 1
        vals = tuple(pops[i].values[tv[i]] for i in range(n))
        opt_total += mech.optimal_welfare(vals, mechanism)
        aflat = np.zeros(sigma, dtype=np.int64)
        sel = []
        for i in range(n):
            g = agent_index[(i, tv[i])]
            sel.append(g)
            aflat += ((s_range // strides[g]) % sizes[g]) * a_strides[i]
        revenue += rev_flat[aflat]
        for i in range(n):
            utilities[sel[i]] += util_flat[(i, vals[i])][aflat]
    utilities /= v_count
    revenue /= v_count
    return AgentGame(
        mechanism=mechanism,
        populations=pops,
        agents=tuple(agents),
        sizes=tuple(sizes),
        strides=tuple(strides),
        utilities=utilities,
        revenue=revenue,
        e_opt=opt_total / v_count,
    )


def lift_smoothness_check(
    agent_game: AgentGame, base_deviation: DeviationRule, params: SmoothnessParams
) -> SmoothnessReport:
    """Verify the lifted deviation inequality at every joint profile.

    Each agent's lifted deviation resamples a fresh type profile and plays the
    base rule at its own true value against the resampled opponents; here
    that is realized as an exact mixture over the base rule's distributions.
    Checks sum_g E[U_g(dev_g, s_-g)] >= lam * E[Opt] - mu * R(s) for every s.
    Meaningful when the base rule certifies (lam, mu) on the same grids; on a
    corrupted rule it fails and reports a witness profile.
    """
    g_ = agent_game
    m = g_.mechanism
    pops = g_.populations
    value_lists = [p.values for p in pops]
    lhs = np.zeros(g_.sigma)
    s_range = np.arange(g_.sigma)
    for g, (i, _ti, val) in enumerate(g_.agents):
        dev = np.zeros(g_.sizes[g])
        count = 0
        for w in itertools.product(*value_lists):
            wv = list(w)
            wv[i] = val
            dev += base_deviation.distribution(m, i, tuple(wv))
            count += 1
        dev /= count
        dig = (s_range // g_.strides[g]) % g_.sizes[g]
        base = s_range - dig * g_.strides[g]
        ug = g_.utilities[g]
        for a in range(g_.sizes[g]):
            w = dev[a]
            if w > 0.0:
                lhs += w * ug[base + a * g_.strides[g]]
    slack = lhs - params.lam * g_.e_opt + params.mu * g_.revenue
    worst = int(np.argmin(slack))
    worst_slack = float(slack[worst])
    digits = g_.profile_digits(worst)
    bids = tuple(
        m.actions.grids[i][d] for (i, _ti, _v), d in zip(g_.agents, digits)
    )
    return SmoothnessReport(
        params=params,
        holds=bool(worst_slack >= -SLACK_TOL),
        worst_slack=worst_slack,
        witness_values=(),
        witness_actions=bids,
    )


# --- worst-case coarse-equilibrium welfare ------------------------------------


@dataclass(frozen=True)
class CceLpSolution:
    """LP minimizer with its independently re-evaluated certificates."""

    distribution: np.ndarray
    objective: float
    slacks: np.ndarray
    constraints: tuple[tuple[int, int], ...]
    iterations: int


def _pivot(tableau: np.ndarray, basis: list[int], row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    piv = tableau[row]
    for r in range(tableau.shape[0]):
        if r != row and tableau[r, col] != 0.0:
            tableau[r] -= tableau[r, col] * piv
    basis[row] = col


def _bland_loop(
    tableau: np.ndarray, basis: list[int], n_cols: int, maxiter: int, phase: int
) -> int:
    """Primal simplex pivots with Bland's smallest-index rule. Returns the
    pivot count; raises SolverError on non-convergence or unboundedness."""
    m = tableau.shape[0] - 1
    it = 0
    while True:
        obj = tableau[m]
        col = -1
        for j in range(n_cols):
            if obj[j] < -1e-9:
                col = j
                break
        if col < 0:
            return it
        ratio = math.inf
        row = -1
        for r in range(m):
            a = tableau[r, col]
            if a > 1e-9:
                q = tableau[r, -1] / a
                if q < ratio - 1e-12 or (
                    abs(q - ratio) <= 1e-12 and (row < 0 or basis[r] < basis[row])
                ):
                    ratio = q
                    row = r
        if row < 0:
            raise SolverError(
                f"LP unbounded in phase {phase} at pivot {it}, entering column "
                f"{col}, basis {basis}"
            )
        _pivot(tableau, basis, row, col)
        it += 1
        if it > maxiter:
            raise SolverError(
                f"simplex exceeded {maxiter} pivots in phase {phase}; last basis "
                f"{basis}, objective row value {tableau[m, -1]!r}"
            )


def _two_phase_simplex(c: np.ndarray, A: np.ndarray, b: np.ndarray):
    """min c.x subject to A x = b, x >= 0. Returns (x, objective, pivots)."""
    m, n = A.shape
    A = A.copy()
    b = b.copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0
    maxiter = 1000 + 200 * (m + n)

    tableau = np.zeros((m + 1, n + m + 1))
    tableau[:m, :n] = A
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    basis = list(range(n, n + m))
    tableau[m, :n] = -A.sum(axis=0)
    tableau[m, -1] = -b.sum()
    pivots = _bland_loop(tableau, basis, n + m, maxiter, phase=1)
    if tableau[m, -1] < -FEAS_TOL:
        raise SolverError(
            f"phase 1 ended infeasible (artificial mass {-tableau[m, -1]!r}) "
            f"after {pivots} pivots, basis {basis}"
        )
    # Drive leftover artificials out of the basis; rows that admit no pivot
    # are redundant and harmless (the artificial stays basic at level 0 and
    # phase 2 never lets it grow since its column is excluded).
    for r in range(m):
        if basis[r] >= n:
            for j in range(n):
                if abs(tableau[r, j]) > 1e-9:
                    _pivot(tableau, basis, r, j)
                    pivots += 1
                    break

    tableau[m, :] = 0.0
    tableau[m, :n] = c
    for r in range(m):
        if basis[r] < n and c[basis[r]] != 0.0:
            tableau[m] -= c[basis[r]] * tableau[r]
    pivots += _bland_loop(tableau, basis, n, maxiter, phase=2)
    x = np.zeros(n)
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = tableau[r, -1]
    return x, float(c @ x), pivots


def worst_cce_welfare(agent_game: AgentGame, lp_cap: int = LP_CAP) -> CceLpSolution:
    """Minimize expected welfare over coarse-equilibrium distributions.

    Variables are the joint-profile probabilities; for every agent g and
    fixed action a' the constraint E_x[U_g(s)] >= E_x[U_g(a', s_-g)] must
    hold. The LP is always feasible (a Nash point is). The returned slacks
    are re-evaluated from the tensor, not read off the solver.
    """
    g_ = agent_game
    if g_.sigma > lp_cap:
        raise CapExceededError(
            f"LP needs {g_.sigma} variables, cap is {lp_cap} "
            f"(per-agent action counts: {list(g_.sizes)})"
        )
    rows = []
    labels = []
    for g in range(g_.n_agents):
        ug = g_.utilities[g]
        for a in range(g_.sizes[g]):
            row = ug - ug[g_.deviation_view(g, a)]
            if np.abs(row).max() > 0.0:
                rows.append(row)
                labels.append((g, a))
    n_c = len(rows)
    sw = g_.social_welfare()
    # standard form: [x, t] with G x - t = 0 and sum x = 1
    n_var = g_.sigma + n_c
    A = np.zeros((n_c + 1, n_var))
    b = np.zeros(n_c + 1)
    for r, row in enumerate(rows):
        A[r, : g_.sigma] = row
        A[r, g_.sigma + r] = -1.0
    A[n_c, : g_.sigma] = 1.0
    b[n_c] = 1.0
    c = np.zeros(n_var)
    c[: g_.sigma] = sw
    x_full, objective, pivots = _two_phase_simplex(c, A, b)
    x = x_full[: g_.sigma]

    if abs(x.sum() - 1.0) > FEAS_TOL or x.min() < -FEAS_TOL:
        raise SolverError(
            f"solver returned a non-distribution (mass {x.sum()!r}, "
            f"min {x.min()!r}) after {pivots} pivots"
        )
    slacks = np.array([row @ x for row in rows]) if rows else np.zeros(0)
    if len(slacks) and slacks.min() < -FEAS_TOL:
        worst = labels[int(np.argmin(slacks))]
        raise SolverError(
            f"constraint {worst} violated by {-slacks.min()!r} after {pivots} pivots"
        )
    re_obj = float(sw @ x)
    if abs(re_obj - objective) > FEAS_TOL * max(1.0, abs(objective)):
        raise ContractViolationError(
            f"objective {objective!r} disagrees with re-evaluation {re_obj!r}"
        )
    return CceLpSolution(
        distribution=x,
        objective=re_obj,
        slacks=slacks,
        constraints=tuple(labels),
        iterations=pivots,
    )


def bound_comparison(
    agent_game: AgentGame, solution: CceLpSolution, params: SmoothnessParams
) -> dict:
    """Worst-equilibrium welfare against the smoothness floor lam/max(1,mu)*E[Opt]."""
    floor = params.lam / max(1.0, params.mu) * agent_game.e_opt
    return {
        "e_opt": agent_game.e_opt,
        "lp_welfare": solution.objective,
        "floor": floor,
        "lam": params.lam,
        "mu": params.mu,
        "holds": bool(solution.objective >= floor - 1e-6),
        "lp_iterations": solution.iterations,
        "sigma": agent_game.sigma,
        "n_constraints": len(solution.constraints),
    }


def agent_game_to_json(agent_game: AgentGame) -> str:
    doc = {
        "mechanism": agent_game.mechanism.to_descriptor(),
        "populations": [list(p.values) for p in agent_game.populations],
        "agents": [[i, ti, v] for (i, ti, v) in agent_game.agents],
        "sizes": list(agent_game.sizes),
        "utilities": [[float(x) for x in row] for row in agent_game.utilities],
        "revenue": [float(x) for x in agent_game.revenue],
        "e_opt": agent_game.e_opt,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def solution_to_json(solution: CceLpSolution) -> str:
    doc = {
        "distribution": [float(x) for x in solution.distribution],
        "objective": solution.objective,
        "slacks": [float(x) for x in solution.slacks],
        "constraints": [list(c) for c in solution.constraints],
        "iterations": solution.iterations,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))
