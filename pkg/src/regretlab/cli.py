"""Command-line experiment harness.

Subcommands:

* ``simulate``: run the repeated game for every configured seed, writing
  per-seed trace.csv, strategies.json, report.json, checkpoints.csv and an
  aggregate report.json.
* ``certify``: evaluate a named deviation rule's certificate exhaustively
  and report the best level reachable with pure deviations.
* ``exact``: build the agent normal form, check the lifted certificate, and
  bound worst-case equilibrium welfare by LP.
* ``analyze``: recompute analysis reports from stored trace files.

One JSON document describes one experiment. The schema is checked before any
work starts and unknown keys are rejected with the offending path. All
randomness flows from the configured seeds; output naming is deterministic
and independent of worker completion order.

Exit codes: 0 success / property holds, 1 property fails or solver failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import analysis, exact, mechanisms as mech, simulator, smoothness
from .errors import (
    CapExceededError,
    ConfigError,
    ContractViolationError,
    InputError,
    SolverError,
)

E_INV = 1.0 - 1.0 / math.e

DEFAULT_SMOOTHNESS = {
    mech.KIND_FIRST_PRICE: (E_INV, 1.0),
    mech.KIND_ALL_PAY: (0.5, 1.0),
    mech.KIND_MULTI_UNIT: (E_INV, 1.0),
}
DEFAULT_DEVIATION = {
    mech.KIND_FIRST_PRICE: "log",
    mech.KIND_ALL_PAY: "uniform",
    mech.KIND_MULTI_UNIT: "half",
}


@dataclass(frozen=True)
class AnalysisSettings:
    zeta: float = 0.01
    delta: float = 0.05
    rho: float = 0.05
    tolerance: float = 0.05
    checkpoints: tuple[int, ...] | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    mechanism: mech.Mechanism
    populations: tuple[tuple[float, ...], ...]
    horizon: int | None
    seeds: tuple[int, ...]
    feedback: str
    eta: float | None
    gamma: float
    deviation: str | None
    params: smoothness.SmoothnessParams
    settings: AnalysisSettings
    out_dir: str | None
    strategies_every: int


def _check_keys(obj: dict, spec: dict[str, bool], path: str) -> None:
    unknown = sorted(set(obj) - set(spec))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    missing = sorted(k for k, required in spec.items() if required and k not in obj)
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")


def _number(obj, path: str, minimum=None) -> float:
    if not isinstance(obj, (int, float)) or isinstance(obj, bool):
        raise ConfigError(f"{path}: expected a number, got {type(obj).__name__}")
    x = float(obj)
    if minimum is not None and x < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {x}")
    return x


def _integer(obj, path: str, minimum=None) -> int:
    if not isinstance(obj, int) or isinstance(obj, bool):
        raise ConfigError(f"{path}: expected an integer, got {type(obj).__name__}")
    if minimum is not None and obj < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {obj}")
    return obj


def load_config(path) -> ExperimentConfig:
    """Parse and fully validate one experiment file."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(
        doc,
        {
            "mechanism": True,
            "populations": True,
            "horizon": False,
            "seeds": False,
            "feedback": False,
            "eta": False,
            "gamma": False,
            "deviation": False,
            "smoothness": False,
            "analysis": False,
            "out_dir": False,
            "strategies_every": False,
        },
        str(path),
    )
    try:
        mechanism = mech.Mechanism.from_descriptor(doc["mechanism"])
    except (InputError, TypeError, KeyError) as e:
        raise ConfigError(f"{path}: mechanism: {e}") from e

    pops_doc = doc["populations"]
    if not isinstance(pops_doc, list) or not pops_doc:
        raise ConfigError(f"{path}: populations: expected a non-empty list")
    if len(pops_doc) != mechanism.n:
        raise ConfigError(
            f"{path}: populations: {len(pops_doc)} entries for "
            f"{mechanism.n} player seats"
        )
    populations = []
    for i, vals in enumerate(pops_doc):
        if not isinstance(vals, list) or not vals:
            raise ConfigError(
                f"{path}: populations[{i}]: expected a non-empty list of values"
            )
        populations.append(
            tuple(_number(v, f"{path}: populations[{i}][{j}]", minimum=0.0)
                  for j, v in enumerate(vals))
        )

    horizon = None
    if "horizon" in doc:
        horizon = _integer(doc["horizon"], f"{path}: horizon", minimum=1)
    seeds = ()
    if "seeds" in doc:
        if not isinstance(doc["seeds"], list):
            raise ConfigError(f"{path}: seeds: expected a list of integers")
        seeds = tuple(
            _integer(s, f"{path}: seeds[{j}]", minimum=0)
            for j, s in enumerate(doc["seeds"])
        )
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"{path}: seeds: duplicates are not allowed")

    feedback = doc.get("feedback", simulator.FEEDBACK_FULL)
    if feedback not in (simulator.FEEDBACK_FULL, simulator.FEEDBACK_BANDIT):
        raise ConfigError(f"{path}: feedback: unknown mode {feedback!r}")
    eta = None
    if doc.get("eta") is not None:
        eta = _number(doc["eta"], f"{path}: eta", minimum=0.0)
    gamma = _number(doc.get("gamma", 0.05), f"{path}: gamma", minimum=0.0)
    if gamma > 1.0:
        raise ConfigError(f"{path}: gamma: must be <= 1, got {gamma}")

    deviation = doc.get("deviation")
    if deviation is not None and not isinstance(deviation, str):
        raise ConfigError(f"{path}: deviation: expected a rule name string")

    lam, mu = DEFAULT_SMOOTHNESS[mechanism.kind]
    if "smoothness" in doc:
        sm = doc["smoothness"]
        if not isinstance(sm, dict):
            raise ConfigError(f"{path}: smoothness: expected an object")
        _check_keys(sm, {"lambda": True, "mu": True}, f"{path}: smoothness")
        lam = _number(sm["lambda"], f"{path}: smoothness.lambda")
        mu = _number(sm["mu"], f"{path}: smoothness.mu", minimum=0.0)
    try:
        params = smoothness.SmoothnessParams(lam=lam, mu=mu)
    except InputError as e:
        raise ConfigError(f"{path}: smoothness: {e}") from e

    settings = AnalysisSettings()
    if "analysis" in doc:
        an = doc["analysis"]
        if not isinstance(an, dict):
            raise ConfigError(f"{path}: analysis: expected an object")
        _check_keys(
            an,
            {"zeta": False, "delta": False, "rho": False, "tolerance": False,
             "checkpoints": False},
            f"{path}: analysis",
        )
        checkpoints = None
        if an.get("checkpoints") is not None:
            if not isinstance(an["checkpoints"], list) or not an["checkpoints"]:
                raise ConfigError(
                    f"{path}: analysis.checkpoints: expected a non-empty list"
                )
            checkpoints = tuple(
                _integer(c, f"{path}: analysis.checkpoints[{j}]", minimum=1)
                for j, c in enumerate(an["checkpoints"])
            )
        settings = AnalysisSettings(
            zeta=_number(an.get("zeta", 0.01), f"{path}: analysis.zeta", minimum=0.0),
            delta=_number(an.get("delta", 0.05), f"{path}: analysis.delta", minimum=0.0),
            rho=_number(an.get("rho", 0.05), f"{path}: analysis.rho", minimum=0.0),
            tolerance=_number(
                an.get("tolerance", 0.05), f"{path}: analysis.tolerance", minimum=0.0
            ),
            checkpoints=checkpoints,
        )

    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError(f"{path}: out_dir: expected a string")
    every = _integer(doc.get("strategies_every", 1), f"{path}: strategies_every",
                     minimum=1)

    return ExperimentConfig(
        mechanism=mechanism,
        populations=tuple(populations),
        horizon=horizon,
        seeds=seeds,
        feedback=feedback,
        eta=eta,
        gamma=gamma,
        deviation=deviation,
        params=params,
        settings=settings,
        out_dir=out_dir,
        strategies_every=every,
    )


def _json_text(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _sim_config(cfg: ExperimentConfig, seed: int) -> simulator.SimConfig:
    if cfg.horizon is None:
        raise ConfigError("config needs a horizon for this command")
    return simulator.SimConfig(
        mechanism=cfg.mechanism,
        populations=tuple(simulator.Population(p) for p in cfg.populations),
        horizon=cfg.horizon,
        seed=seed,
        feedback=cfg.feedback,
        eta=cfg.eta,
        gamma=cfg.gamma,
    )


def _seed_summary(report: dict) -> dict:
    return {
        "seed": report["seed"],
        "ratio": report["ratio"],
        "epsilon": report["epsilon"],
        "independence_gap": report["independence_gap"],
        "finite_time_slack": report["finite_time_slack"],
        "within_bound": report["within_bound"],
    }


def _run_seed(job) -> dict:
    """Worker for one seed: simulate, persist, analyze. Top level so process
    pools can pickle it."""
    cfg, seed, out_root = job
    trace = simulator.run_repeated_game(_sim_config(cfg, seed))
    d = Path(out_root) / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    simulator.write_trace_csv(trace, d / "trace.csv")
    simulator.write_strategies_json(
        trace, d / "strategies.json", every=cfg.strategies_every
    )
    s = cfg.settings
    report = analysis.analysis_report(
        trace,
        cfg.params,
        delta=s.delta,
        rho=s.rho,
        zeta=s.zeta,
        checkpoints=s.checkpoints,
        tolerance=s.tolerance,
    )
    (d / "report.json").write_text(_json_text(report))
    (d / "checkpoints.csv").write_text(
        analysis.checkpoints_csv_text(report["checkpoints"])
    )
    return _seed_summary(report)


def _aggregate(cfg: ExperimentConfig, summaries: list[dict]) -> dict:
    summaries = sorted(summaries, key=lambda r: r["seed"])
    finite = [r["ratio"] for r in summaries if math.isfinite(r["ratio"])]
    return {
        "bound": cfg.params.poa_bound,
        "lambda": cfg.params.lam,
        "mu": cfg.params.mu,
        "n_seeds": len(summaries),
        "per_seed": summaries,
        "mean_ratio": sum(finite) / len(finite) if finite else math.inf,
        "max_ratio": max(r["ratio"] for r in summaries),
        "all_within_bound": all(r["within_bound"] for r in summaries),
    }


def cmd_simulate(cfg: ExperimentConfig, out_dir: str | None, workers: int) -> int:
    out = out_dir or cfg.out_dir
    if out is None:
        raise ConfigError("simulate needs an output directory (config out_dir or --out)")
    if not cfg.seeds:
        raise ConfigError("simulate needs a non-empty seeds list")
    if cfg.horizon is None:
        raise ConfigError("simulate needs a horizon")
    Path(out).mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, seed, out) for seed in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_seed, jobs))
    else:
        summaries = [_run_seed(j) for j in jobs]
    agg = _aggregate(cfg, summaries)
    Path(out, "report.json").write_text(_json_text(agg))
    for r in agg["per_seed"]:
        print(
            f"seed {r['seed']}: ratio {r['ratio']:.4f} (bound {agg['bound']:.4f}), "
            f"epsilon {r['epsilon']:.5f}, slack {r['finite_time_slack']:.4f}"
        )
    print(f"mean ratio {agg['mean_ratio']:.4f} over {agg['n_seeds']} seeds -> {out}")
    return 0


def cmd_certify(cfg: ExperimentConfig, lam: float | None, mu: float | None) -> int:
    if cfg.deviation is None:
        raise ConfigError("certify needs a deviation rule name in the config")
    params = cfg.params
    if lam is not None:
        params = replace(params, lam=lam)
    if mu is not None:
        params = replace(params, mu=mu)
    rule = smoothness.named_deviation(cfg.deviation, cfg.mechanism)
    value_space = mech.value_profiles(cfg.populations)
    report = smoothness.check_deviation_smoothness(
        cfg.mechanism, rule, params, value_space
    )
    print(f"rule {rule.name!r}: {report}")
    best = smoothness.best_pure_lambda(cfg.mechanism, params.mu, value_space)
    print(f"best pure-deviation level at mu={params.mu:.6g}: {best:.6g}")
    if cfg.mechanism.kind == mech.KIND_FIRST_PRICE and rule.name == "log":
        cert = smoothness.log_deviation_certificate(
            cfg.mechanism, value_space, params.mu
        )
        print(
            f"log rule certifies lam={cert.certified_lambda:.6g} "
            f"(continuum limit {smoothness.LOG_RULE_LIMIT:.6g}, "
            f"degradation {cert.degradation:.6g})"
        )
    return 0 if report.holds else 1


def cmd_exact(cfg: ExperimentConfig, lam: float | None, mu: float | None,
              out_dir: str | None) -> int:
    params = cfg.params
    if lam is not None:
        params = replace(params, lam=lam)
    if mu is not None:
        params = replace(params, mu=mu)
    name = cfg.deviation or DEFAULT_DEVIATION[cfg.mechanism.kind]
    rule = smoothness.named_deviation(name, cfg.mechanism)
    value_space = mech.value_profiles(cfg.populations)
    base = smoothness.check_deviation_smoothness(
        cfg.mechanism, rule, params, value_space
    )
    game = exact.build_agent_game(cfg.mechanism, cfg.populations)
    lift = exact.lift_smoothness_check(game, rule, params)
    solution = exact.worst_cce_welfare(game)
    table = exact.bound_comparison(game, solution, params)
    print(f"base rule {rule.name!r}: {base}")
    print(f"lifted check: {'holds' if lift.holds else 'FAILS'} "
          f"(worst slack {lift.worst_slack:.3e})")
    print(
        f"agents {game.n_agents}, profiles {table['sigma']}, "
        f"constraints {table['n_constraints']}, pivots {table['lp_iterations']}"
    )
    print(
        f"worst equilibrium welfare {table['lp_welfare']:.6f} vs floor "
        f"{table['floor']:.6f} (lam/max(1,mu) * E[Opt], E[Opt]={table['e_opt']:.6f})"
        f" -> {'holds' if table['holds'] else 'FAILS'}"
    )
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "agent_game.json").write_text(exact.agent_game_to_json(game) + "\n")
        (d / "lp_solution.json").write_text(exact.solution_to_json(solution) + "\n")
        (d / "exact_report.json").write_text(_json_text({
            "base_holds": base.holds,
            "base_worst_slack": base.worst_slack,
            "lift_holds": lift.holds,
            "lift_worst_slack": lift.worst_slack,
            "table": table,
        }))
    return 0 if (base.holds and lift.holds and table["holds"]) else 1


def cmd_analyze(cfg: ExperimentConfig, out_dir: str | None) -> int:
    out = out_dir or cfg.out_dir
    if out is None:
        raise ConfigError("analyze needs the directory holding the seed runs")
    root = Path(out)
    seed_dirs = sorted(
        (p for p in root.glob("seed_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_", 1)[1]),
    )
    if not seed_dirs:
        raise ConfigError(f"no seed_* directories under {root}")
    s = cfg.settings
    summaries = []
    for d in seed_dirs:
        trace = simulator.load_trace(d / "trace.csv", d / "strategies.json")
        report = analysis.analysis_report(
            trace,
            cfg.params,
            delta=s.delta,
            rho=s.rho,
            zeta=s.zeta,
            checkpoints=s.checkpoints,
            tolerance=s.tolerance,
        )
        (d / "report.json").write_text(_json_text(report))
        (d / "checkpoints.csv").write_text(
            analysis.checkpoints_csv_text(report["checkpoints"])
        )
        summaries.append(_seed_summary(report))
        print(f"{d.name}: ratio {report['ratio']:.4f}, epsilon {report['epsilon']:.5f}")
    agg = _aggregate(cfg, summaries)
    (root / "report.json").write_text(_json_text(agg))
    print(f"mean ratio {agg['mean_ratio']:.4f} over {agg['n_seeds']} seeds -> {root}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regretlab",
        description="Repeated-auction learning experiments and certificates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False, lam_mu=False):
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", default=None, help="output directory override")
        if workers:
            p.add_argument("--workers", type=int, default=1,
                           help="parallel seed workers (default 1)")
        if lam_mu:
            p.add_argument("--lambda", dest="lam", type=float, default=None,
                           help="override the certificate lambda")
            p.add_argument("--mu", type=float, default=None,
                           help="override the certificate mu")

    common(sub.add_parser("simulate", help="run seeds and write traces"),
           workers=True)
    common(sub.add_parser("certify", help="check a deviation certificate"),
           lam_mu=True)
    common(sub.add_parser("exact", help="agent-game enumeration and LP bound"),
           lam_mu=True)
    common(sub.add_parser("analyze", help="recompute reports from stored traces"))
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "simulate":
            if args.workers < 1:
                raise ConfigError("--workers must be >= 1")
            return cmd_simulate(cfg, args.out, args.workers)
        if args.command == "certify":
            return cmd_certify(cfg, args.lam, args.mu)
        if args.command == "exact":
            return cmd_exact(cfg, args.lam, args.mu, args.out)
        return cmd_analyze(cfg, args.out)
    except (ConfigError, CapExceededError, InputError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SolverError, ContractViolationError) as e:
        print(f"failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
