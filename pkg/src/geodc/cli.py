"""Command-line entry point.

Exit codes: 0 success, 1 infeasible scenario, 2 configuration error,
64 usage error, 70 internal solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from . import experiments as exp
from .allocation import allocate
from .battery import convexity_certificate, fit_efficiency_curve
from .errors import ConfigError, DomainError, FitError, GeoDCError, InfeasibleError
from .integer import MAX_EXACT_DCS, branch_and_bound, round_heuristic
from .model import PowerSource
from .oracle import joint_oracle
from .scenario import ParameterRanges, PriceSeries, SlotChain, generate, priced_snapshot, simulate, simulation_csv
from .scp import solve_scp
from .serialize import dumps, load_scenario, scenario_to_dict

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 64, 70
BB_GAP_LINE_MAX_DCS = 6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def workers():
    try:
        return max(1, int(os.environ.get("GEODC_THREADS", "1")))
    except ValueError:
        raise ConfigError("GEODC_THREADS must be an integer") from None


def _emit(text, out_dir, name):
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text, encoding="utf-8", newline="\n")


def _solution_dict(scenario, sol):
    dcs = []
    for i, (d, a) in enumerate(zip(sol.decisions, sol.allocations)):
        dcs.append(
            {
                "dc": i,
                "lambda": d.arrival_rate,
                "m": d.active_servers,
                "delta_kwh": d.battery_delta_kwh,
                "purchases_kwh": list(d.purchases),
                "marginal_cost": a.marginal_cost,
                "unit_cost": a.unit_cost,
                "power_cost": a.total_cost,
                "clamped_sources": list(a.clamped),
                "delay_term": sol.delay_terms[i],
                "cost_term": sol.cost_terms[i],
                "queue_delay_s": sol.queue_delays[i],
            }
        )
    return {
        "objective": sol.objective,
        "power_cost": sol.power_cost,
        "mean_queue_delay_s": sol.mean_queue_delay,
        "kkt_residual": sol.kkt_residual,
        "outer_iterations": sol.outer_iterations,
        "datacenters": dcs,
    }


def _integer_dict(scenario, isol):
    out = _solution_dict(scenario, isol.solution)
    out.update(
        {
            "method": isol.method,
            "relaxed_objective": isol.relaxed_objective,
            "gap_vs_relaxed": isol.gap_vs_relaxed,
            "scp_calls": isol.scp_calls,
        }
    )
    if isol.method == "branch_and_bound":
        out.update({"nodes": isol.nodes, "bound_gap": isol.bound_gap})
    return out


def cmd_allocate(args):
    prices, coeffs = args.prices, args.coeffs
    if len(prices) != len(coeffs):
        raise ConfigError("--prices and --coeffs need the same length")
    sources = [PowerSource(p, 1.0, a) for p, a in zip(prices, coeffs)]
    res = allocate(sources, args.demand)
    _emit(
        dumps(
            {
                "purchases_kwh": list(res.purchases),
                "marginal_cost": res.marginal_cost,
                "unit_cost": res.unit_cost,
                "total_cost": res.total_cost,
                "clamped_sources": list(res.clamped),
                "iterations": res.iterations,
            }
        ),
        args.out,
        "allocation.json",
    )


def cmd_solve(args):
    sc = load_scenario(args.scenario)
    relaxed = solve_scp(sc)
    out = {"relaxed": _solution_dict(sc, relaxed)}
    if not args.relaxed_only:
        heur = round_heuristic(sc, relaxed)
        out["integer"] = _integer_dict(sc, heur)
        if sc.size <= BB_GAP_LINE_MAX_DCS:
            exact = branch_and_bound(sc)
            out["gap_vs_branch_and_bound"] = {
                "phi_bb": exact.objective,
                "phi_gap": heur.objective - exact.objective,
                "phi_gap_rel": (heur.objective - exact.objective) / abs(exact.objective),
                "power_cost_gap_rel": (heur.power_cost - exact.power_cost) / abs(exact.power_cost),
                "bb_nodes": exact.nodes,
            }
    _emit(dumps(out), args.out, "solution.json")


def cmd_solve_exact(args):
    sc = load_scenario(args.scenario)
    if sc.size > MAX_EXACT_DCS and not args.force:
        raise ConfigError(f"solve-exact refuses I > {MAX_EXACT_DCS}; pass --force to run anyway")
    res = branch_and_bound(sc, args.gap_tol, node_budget=args.node_budget, force=args.force)
    _emit(dumps(_integer_dict(sc, res)), args.out, "solution_exact.json")


def _chain_from_args(args):
    if args.scenario:
        base = load_scenario(args.scenario)
        if not args.prices:
            raise ConfigError("--scenario needs --prices")
        prices = PriceSeries.from_csv(Path(args.prices).read_text(encoding="utf-8"))
        return SlotChain(base, prices)
    ranges = ParameterRanges(load_fraction=args.load_fraction, price_spread=args.price_spread)
    return generate(args.seed, args.dcs, args.sources, args.slots, ranges)


def cmd_simulate(args):
    chain = _chain_from_args(args)
    results = simulate(
        chain,
        passes=args.passes,
        forecast_error=args.forecast_error,
        seed=args.seed,
        use_potential=not args.no_potential,
    )
    _emit(simulation_csv(chain, results), args.out, "simulation.csv")


def cmd_verify(args):
    sc = load_scenario(args.scenario)
    sol = solve_scp(sc)
    oracle = joint_oracle(sc, args.grid_steps)
    gap = (oracle.best_value - sol.objective) / abs(oracle.best_value)
    _emit(
        dumps(
            {
                "solver_objective": sol.objective,
                "oracle_objective": oracle.best_value,
                "relative_gap": gap,
                "oracle_evaluations": oracle.evaluations_count,
                "within_tolerance": abs(gap) <= 5e-3,
            }
        ),
        args.out,
        "verify.json",
    )


def cmd_fit_eta(args):
    text = Path(args.samples).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["delta", "eta"]:
        raise ConfigError("samples CSV header must be delta,eta")
    try:
        samples = [(float(r[0]), float(r[1])) for r in rows[1:] if r]
    except (ValueError, IndexError):
        raise FitError("malformed sample row") from None
    fit = fit_efficiency_curve(samples, args.degree)
    cert = convexity_certificate(fit.curve)
    _emit(
        dumps(
            {
                "coefficients": list(fit.curve.coefficients),
                "rms_residual": fit.rms_residual,
                "certificate": {"holds": cert.holds, "min_value": cert.min_value, "argmin_delta": cert.argmin_delta},
            }
        ),
        args.out,
        "efficiency.json",
    )


def cmd_gen(args):
    ranges = ParameterRanges(load_fraction=args.load_fraction, price_spread=args.price_spread)
    chain = generate(args.seed, args.dcs, args.sources, args.slots, ranges)
    scenario_text = dumps(scenario_to_dict(priced_snapshot(chain, 0)))
    if args.out is None:
        sys.stdout.write(scenario_text)
        return
    _emit(scenario_text, args.out, "scenario.json")
    _emit(chain.prices.to_csv(), args.out, "prices.csv")


def cmd_report(args):
    dcs = tuple(args.dcs)
    seeds = range(args.seeds)
    note = None
    if args.experiment == "gaps":
        rows = exp.gaps_table(dcs, seeds, workers=workers())
    elif args.experiment == "fairness":
        rows = exp.fairness_table()
    elif args.experiment == "savings":
        rows = exp.savings_table(dcs, seeds)
        note = exp.BASELINE_NOTE
    else:
        rows = exp.clean_table(seeds=seeds)
    _emit(exp.rows_to_csv(rows, note), args.out, f"{args.experiment}.csv")


def build_parser():
    p = _Parser(prog="geodc", description="Joint workload, storage and power-purchase scheduling.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--out", default=None, help="directory for artifacts (default: stdout)")
        return sp

    sp = add("allocate", cmd_allocate, "optimal purchase split for one demand")
    sp.add_argument("--prices", type=_floats, required=True)
    sp.add_argument("--coeffs", type=_floats, required=True, help="PIF quadratic coefficients")
    sp.add_argument("--demand", type=float, required=True)

    sp = add("solve", cmd_solve, "relaxed and integer solution of one slot")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--relaxed-only", action="store_true")

    sp = add("solve-exact", cmd_solve_exact, "branch-and-bound integer solution")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("--gap-tol", type=float, default=1e-6)
    sp.add_argument("--node-budget", type=int, default=20000)

    sp = add("simulate", cmd_simulate, "multi-slot simulation with battery state")
    sp.add_argument("--scenario")
    sp.add_argument("--prices")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dcs", type=int, default=2)
    sp.add_argument("--sources", type=int, default=3)
    sp.add_argument("--slots", type=int, default=24)
    sp.add_argument("--load-fraction", type=float, default=0.6)
    sp.add_argument("--price-spread", type=float, default=1.0)
    sp.add_argument("--passes", type=int, default=2)
    sp.add_argument("--forecast-error", type=float, default=0.0)
    sp.add_argument("--no-potential", action="store_true")

    sp = add("verify", cmd_verify, "compare the solver against the brute-force oracle")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--grid-steps", type=int, default=300)

    sp = add("fit-eta", cmd_fit_eta, "fit the battery efficiency cubic")
    sp.add_argument("--samples", required=True)
    sp.add_argument("--degree", type=int, default=3)

    sp = add("gen", cmd_gen, "generate a seeded scenario and price series")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dcs", type=int, default=2)
    sp.add_argument("--sources", type=int, default=3)
    sp.add_argument("--slots", type=int, default=24)
    sp.add_argument("--load-fraction", type=float, default=0.6)
    sp.add_argument("--price-spread", type=float, default=1.0)

    sp = add("report", cmd_report, "experiment tables as CSV")
    sp.add_argument("--experiment", choices=("gaps", "fairness", "savings", "clean"), required=True)
    sp.add_argument("--dcs", type=_ints, default=[2, 4, 6])
    sp.add_argument("--seeds", type=int, default=10)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    try:
        args.func(args)
    except InfeasibleError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except (ConfigError, DomainError, FitError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except GeoDCError as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
