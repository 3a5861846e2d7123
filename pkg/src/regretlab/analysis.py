"""Post-hoc analysis of repeated-play traces.

Everything here is read-only over a completed trace: the empirical joint
distribution of (commitment profile, type profile), the empirical epsilon of
the population game's coarse-equilibrium condition, independence diagnostics
for the type draws conditioned on play, welfare ratios against the smoothness
bound, the finite-horizon welfare inequality, and the (astronomically large)
sufficient-horizon formula, which is reported rather than waited for.

Conventions. Averages that define epsilon divide by the full window length,
not by the number of rounds an agent was selected; the per-agent regret
ledgers kept by the simulator accumulate the same numerator sums, so the two
views are reconciled by an exact sum comparison whenever ledgers are present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import mechanisms as mech
from .errors import ContractViolationError, InputError, UndefinedResultError
from .simulator import Trace
from .smoothness import SmoothnessParams

RATIO_TOL_DEFAULT = 0.05
IDENTITY_RTOL = 1e-9


# --- empirical joint over (commitment profile, type profile) -----------------


@dataclass(frozen=True)
class EmpiricalJoint:
    """Counts of commitment profiles and, per profile, of type draws.

    Keys are the raw bytes of the int16 commitment row, which double as the
    canonical form: the dict compares full keys on lookup, so distinct
    profiles can never alias each other.
    """

    total: int
    zeta: float
    v_sizes: tuple[int, ...]
    counts: dict[bytes, int]
    cond: dict[bytes, np.ndarray]

    def p(self, key: bytes) -> float:
        return self.counts.get(key, 0) / self.total

    def conditional(self, key: bytes) -> np.ndarray:
        c = self.cond[key]
        return c / c.sum()

    @staticmethod
    def decode(key: bytes) -> np.ndarray:
        return np.frombuffer(key, dtype=np.int16)


def _window_bounds(trace: Trace, window) -> tuple[int, int]:
    T = trace.horizon
    if window is None:
        return 0, T
    start, stop = window
    if not (1 <= start <= stop <= T):
        raise InputError(f"window {window} is not a non-empty subrange of [1, {T}]")
    return start - 1, stop


def _v_flat(trace: Trace, lo: int, hi: int) -> tuple[np.ndarray, tuple[int, ...]]:
    v_sizes = tuple(len(p) for p in trace.config.populations)
    flat = np.zeros(hi - lo, dtype=np.int64)
    for i, size in enumerate(v_sizes):
        flat = flat * size + trace.v_idx[lo:hi, i]
    return flat, v_sizes


def empirical_joint(trace: Trace, window=None, zeta: float = 0.0) -> EmpiricalJoint:
    """Exact counting of rounds by commitment profile over a 1-based window."""
    if trace.strategy is None:
        raise InputError("trace carries no commitment table; rerun or reload with a full sidecar")
    if not 0.0 <= zeta <= 1.0:
        raise InputError(f"zeta must lie in [0, 1], got {zeta}")
    lo, hi = _window_bounds(trace, window)
    rows = np.ascontiguousarray(trace.strategy[lo:hi])
    vflat, v_sizes = _v_flat(trace, lo, hi)
    v_count = int(np.prod(v_sizes))
    uniq, inverse, cnt = np.unique(
        rows, axis=0, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    table = np.zeros((len(uniq), v_count))
    np.add.at(table, (inverse, vflat), 1.0)
    counts: dict[bytes, int] = {}
    cond: dict[bytes, np.ndarray] = {}
    for r in range(len(uniq)):
        key = uniq[r].tobytes()
        counts[key] = int(cnt[r])
        cond[key] = table[r]
    return EmpiricalJoint(
        total=hi - lo, zeta=zeta, v_sizes=v_sizes, counts=counts, cond=cond
    )


def uniform_product(v_sizes: Sequence[int]) -> np.ndarray:
    n = int(np.prod(list(v_sizes)))
    return np.full(n, 1.0 / n)


def default_zeta(delta: float, sigma_size: float, H: float) -> float:
    """Support threshold tied to the concentration argument: delta/(2*|Sigma|*H)."""
    if delta <= 0 or sigma_size < 1 or H <= 0:
        raise InputError("need delta > 0, sigma_size >= 1, H > 0")
    return delta / (2.0 * sigma_size * H)


def conditional_independence_gap(
    joint: EmpiricalJoint, type_distribution: np.ndarray | None = None
) -> float:
    """Worst total-variation gap between p(v | s) and the type distribution,
    over commitment profiles with empirical mass at least ``joint.zeta``.

    Returns 0 when no profile clears the threshold.
    """
    target = (
        uniform_product(joint.v_sizes)
        if type_distribution is None
        else np.asarray(type_distribution, dtype=float)
    )
    v_count = int(np.prod(joint.v_sizes))
    if target.shape != (v_count,):
        raise InputError(
            f"type distribution has shape {target.shape}, expected ({v_count},)"
        )
    if abs(target.sum() - 1.0) > 1e-9 or (target < 0).any():
        raise InputError("type distribution must be a probability vector")
    worst = 0.0
    for key, c in joint.counts.items():
        if c / joint.total < joint.zeta:
            continue
        p = joint.cond[key] / c
        worst = max(worst, 0.5 * float(np.abs(p - target).sum()))
    return worst


# --- empirical epsilon of the coarse-equilibrium condition -------------------


def _agent_gap_sums(trace: Trace, horizon: int):
    """Per-agent numerator sums: for each own action a', the cumulative
    counterfactual-minus-realized utility over rounds where that agent's type
    was the one selected, within the first ``horizon`` rounds."""
    cfg = trace.config
    m = cfg.mechanism
    sums = {}
    for pop, ti, val in cfg.agents():
        table = mech.utility_table(m, pop, val)
        sel = trace.v_idx[:horizon, pop] == ti
        opp = np.zeros(horizon, dtype=np.int64)
        for j in range(m.n):
            if j != pop:
                opp = opp * m.actions.size(j) + trace.realized_idx[:horizon, j]
        opp_sel = opp[sel]
        counts = np.bincount(opp_sel, minlength=table.shape[1]).astype(np.float64)
        cf = table @ counts
        realized = float(table[trace.realized_idx[:horizon, pop][sel], opp_sel].sum())
        sums[(pop, ti)] = (cf - realized, int(sel.sum()))
    return sums


def bayes_cce_epsilon(
    trace: Trace, mechanism: mech.Mechanism | None = None, horizon: int | None = None
) -> tuple[float, dict]:
    """Empirical violation of the no-fixed-deviation condition.

    For each population i, type value v, and fixed own action a', average
    over the window the selected-round gain of always playing a' against the
    realized opponent actions. The returned epsilon is the max over all
    (i, v, a'), clipped at zero; the breakdown maps (population, type index)
    to the per-action averaged gains.

    When the trace still carries its live regret ledgers and the window is
    the full horizon, the recomputed numerator sums are checked against the
    ledgers' gap sums; both accumulate the same quantity, so disagreement
    means corrupted data and raises ContractViolationError.
    """
    if mechanism is None:
        mechanism = trace.config.mechanism
    elif mechanism is not trace.config.mechanism and mechanism != trace.config.mechanism:
        raise InputError("mechanism does not match the one the trace was run with")
    if trace.strategy is None:
        raise InputError("trace carries no commitment table; rerun or reload with a full sidecar")
    T = trace.horizon if horizon is None else horizon
    if not 1 <= T <= trace.horizon:
        raise InputError(f"horizon {T} outside [1, {trace.horizon}]")
    sums = _agent_gap_sums(trace, T)
    if T == trace.horizon and trace.ledgers is not None:
        _assert_ledger_identity(trace, sums)
    breakdown = {}
    eps = 0.0
    for key, (gaps, _n_sel) in sums.items():
        avg = gaps / T
        breakdown[key] = avg
        eps = max(eps, float(avg.max()))
    return max(eps, 0.0), breakdown


def _assert_ledger_identity(trace: Trace, sums) -> None:
    scale = max(1.0, trace.horizon * trace.config.mechanism.scale)
    for g, (pop, ti, _val) in enumerate(trace.config.agents()):
        led = trace.ledgers[g]
        gaps, n_sel = sums[(pop, ti)]
        if n_sel != led.selected_rounds:
            raise ContractViolationError(
                f"agent (pop={pop}, type={ti}): ledger saw {led.selected_rounds} "
                f"selected rounds, trace recount says {n_sel}"
            )
        if not np.allclose(gaps, led.gaps(), rtol=IDENTITY_RTOL, atol=IDENTITY_RTOL * scale):
            raise ContractViolationError(
                f"agent (pop={pop}, type={ti}): ledger gap sums diverge from the "
                "trace recount; the trace is internally inconsistent"
            )


def measured_epsilon(trace: Trace, horizon: int | None = None) -> float:
    """n times the worst per-population epsilon (the regret budget is split
    evenly across populations, so the total is n times the worst share)."""
    eps, _ = bayes_cce_epsilon(trace, horizon=horizon)
    return trace.config.mechanism.n * eps


# --- welfare ------------------------------------------------------------------


@dataclass(frozen=True)
class WelfareSummary:
    avg_sw: float
    avg_opt: float
    ratio: float
    bound: float
    tolerance: float
    within_bound: bool

    @property
    def est_opt(self) -> float:
        return self.avg_opt


def welfare_ratio(
    trace: Trace,
    smoothness_params: SmoothnessParams,
    tolerance: float = RATIO_TOL_DEFAULT,
) -> WelfareSummary:
    """Average optimal over average realized welfare, against max(1,mu)/lambda."""
    total_sw = float(trace.sw.sum())
    total_opt = float(trace.opt.sum())
    bound = smoothness_params.poa_bound
    if total_sw <= 0.0:
        if total_opt > 0.0:
            return WelfareSummary(
                avg_sw=0.0,
                avg_opt=total_opt / trace.horizon,
                ratio=math.inf,
                bound=bound,
                tolerance=tolerance,
                within_bound=False,
            )
        raise UndefinedResultError(
            "welfare ratio is undefined on a trace with zero welfare and zero optimum"
        )
    ratio = total_opt / total_sw
    return WelfareSummary(
        avg_sw=total_sw / trace.horizon,
        avg_opt=total_opt / trace.horizon,
        ratio=ratio,
        bound=bound,
        tolerance=tolerance,
        within_bound=ratio <= bound + tolerance,
    )


@dataclass(frozen=True)
class FiniteTimeResult:
    holds: bool
    slack: float
    avg_sw: float
    avg_opt: float
    delta: float
    epsilon: float


def finite_time_check(
    trace: Trace,
    smoothness_params: SmoothnessParams,
    delta: float,
    measured_epsilon: float,
) -> FiniteTimeResult:
    """Check avg SW >= (lambda/max(1,mu)) * avg Opt - delta - mu * epsilon.

    ``measured_epsilon`` is the total regret level: n times the worst
    per-population time-averaged regret (see measured_epsilon()). Returns the
    slack of the inequality; holds means slack >= 0.

    Whenever the welfare ratio is within the smoothness bound and both delta
    and epsilon are non-negative, the inequality is implied; that implication
    is re-checked on every call and a violation raises, since it can only
    come from corrupted inputs.
    """
    if delta < 0 or measured_epsilon < 0:
        raise InputError("delta and measured_epsilon must be non-negative")
    lam, mu = smoothness_params.lam, smoothness_params.mu
    avg_sw = float(trace.sw.mean())
    avg_opt = float(trace.opt.mean())
    slack = avg_sw - ((lam / max(1.0, mu)) * avg_opt - delta - mu * measured_epsilon)
    holds = slack >= 0.0
    if avg_sw > 0 and avg_opt / avg_sw <= smoothness_params.poa_bound and not holds:
        raise ContractViolationError(
            "finite-time inequality failed although the welfare ratio is within "
            "the bound; inputs are inconsistent"
        )
    return FiniteTimeResult(
        holds=holds,
        slack=slack,
        avg_sw=avg_sw,
        avg_opt=avg_opt,
        delta=delta,
        epsilon=measured_epsilon,
    )


@dataclass(frozen=True)
class FiniteTimeParams:
    """Size parameters of the sufficient-horizon formula."""

    delta: float
    rho: float
    epsilon: float
    n: int
    sigma_size: float
    v_size: float
    H: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta <= 1.0:
            raise InputError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0.0 < self.rho <= 1.0:
            raise InputError(f"rho must lie in (0, 1], got {self.rho}")
        if self.epsilon < 0:
            raise InputError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.n < 1 or self.sigma_size < 1 or self.v_size < 1 or self.H <= 0:
            raise InputError("need n >= 1, sigma_size >= 1, v_size >= 1, H > 0")

    def t_star(self) -> float:
        return t_star(self.delta, self.rho, self.n, self.sigma_size, self.v_size, self.H)


def t_star(
    delta: float, rho: float, n: int, sigma_size: float, v_size: float, H: float
) -> float:
    """Sufficient horizon 54 * n^3 * |Sigma| * |V|^2 * H^3 / delta^3 * ln(2/rho).

    Astronomically large at realistic sizes; callers report it, they do not
    wait for it. Natural logarithm throughout.
    """
    if delta <= 0:
        raise InputError(f"delta must be positive, got {delta}")
    if not 0.0 < rho <= 1.0:
        raise InputError(f"rho must lie in (0, 1], got {rho}")
    if n < 1 or sigma_size < 1 or v_size < 1 or H <= 0:
        raise InputError("need n >= 1, sigma_size >= 1, v_size >= 1, H > 0")
    return (
        54.0
        * n**3
        * sigma_size
        * v_size**2
        * H**3
        / delta**3
        * math.log(2.0 / rho)
    )


# --- report + checkpoint series ----------------------------------------------


def default_checkpoints(T: int) -> list[int]:
    """Powers of two up to the horizon (starting at 16), plus the horizon."""
    pts = []
    p = 16
    while p <= T:
        pts.append(p)
        p *= 2
    if not pts or pts[-1] != T:
        pts.append(T)
    return pts


def checkpoint_series(
    trace: Trace, checkpoints: Sequence[int] | None = None
) -> list[dict]:
    """Running epsilon and welfare ratio at increasing prefix horizons."""
    if checkpoints is None:
        checkpoints = default_checkpoints(trace.horizon)
    pts = sorted(set(int(c) for c in checkpoints))
    if not pts or pts[0] < 1 or pts[-1] > trace.horizon:
        raise InputError(f"checkpoints must lie in [1, {trace.horizon}]")
    cum_sw = np.cumsum(trace.sw)
    cum_opt = np.cumsum(trace.opt)
    rows = []
    for T in pts:
        eps, _ = bayes_cce_epsilon(trace, horizon=T)
        sw = float(cum_sw[T - 1])
        ratio = float(cum_opt[T - 1]) / sw if sw > 0 else math.inf
        rows.append({"horizon": T, "epsilon": eps, "ratio": ratio})
    return rows


def checkpoints_csv_text(rows: Sequence[dict]) -> str:
    lines = ["horizon,epsilon,ratio"]
    for r in rows:
        lines.append(f"{r['horizon']},{r['epsilon']!r},{r['ratio']!r}")
    return "\n".join(lines) + "\n"


def sigma_size_of(trace: Trace) -> float:
    """Number of joint commitment profiles: product over agents of grid size."""
    m = trace.config.mechanism
    out = 1.0
    for pop, _ti, _v in trace.config.agents():
        out *= m.actions.size(pop)
    return out


def analysis_report(
    trace: Trace,
    smoothness_params: SmoothnessParams,
    delta: float = 0.05,
    rho: float = 0.05,
    zeta: float = 0.01,
    checkpoints: Sequence[int] | None = None,
    tolerance: float = RATIO_TOL_DEFAULT,
) -> dict:
    """One-stop JSON-ready summary of a trace."""
    eps, breakdown = bayes_cce_epsilon(trace)
    joint = empirical_joint(trace, zeta=zeta)
    gap = conditional_independence_gap(joint)
    summary = welfare_ratio(trace, smoothness_params, tolerance)
    eps_total = trace.config.mechanism.n * eps
    ft = finite_time_check(trace, smoothness_params, delta, eps_total)
    v_size = float(np.prod([len(p) for p in trace.config.populations]))
    ts = t_star(
        delta,
        rho,
        trace.config.mechanism.n,
        sigma_size_of(trace),
        v_size,
        trace.config.mechanism.scale,
    )
    bd = {}
    for (pop, ti), avg in sorted(breakdown.items()):
        value = trace.config.populations[pop].values[ti]
        bd[f"pop{pop}_type{ti}"] = {
            "value": value,
            "per_action": [float(x) for x in avg],
            "epsilon": max(0.0, float(avg.max())),
        }
    return {
        "horizon": trace.horizon,
        "seed": trace.config.seed,
        "epsilon": eps,
        "epsilon_breakdown": bd,
        "independence_gap": gap,
        "zeta": zeta,
        "ratio": summary.ratio,
        "bound": summary.bound,
        "within_bound": summary.within_bound,
        "avg_sw": summary.avg_sw,
        "avg_opt": summary.avg_opt,
        "finite_time_slack": ft.slack,
        "finite_time_holds": ft.holds,
        "delta": delta,
        "rho": rho,
        "t_star": ts,
        "checkpoints": checkpoint_series(trace, checkpoints),
    }
