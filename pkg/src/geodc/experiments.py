"""Scheduling policies and the experiment tables built from them."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import replace

import numpy as np

from .errors import ConfigError
from .integer import branch_and_bound, round_heuristic
from .model import SOURCE_NAMES, ConsistencyWarning, DataCenterConfig, PowerSource, Scenario, no_battery
from .queueing import DelayBudget, capacity_floor
from .scenario import ParameterRanges, generate, priced_snapshot
from .scp import solve_scp

POLICIES = ("baseline", "workload", "storage", "joint")
BASELINE_NOTE = "baseline: arrivals split by capacity, fewest delay-feasible servers, battery idle"


def _floors(scenario):
    return [capacity_floor(DelayBudget.for_datacenter(dc, scenario.delay_bound_s)) for dc in scenario.datacenters]


def baseline_arrivals(scenario: Scenario):
    """Load split in proportion to capacity, capped at each site's delay limit."""
    floors = _floors(scenario)
    caps = [dc.max_service_rate - f for dc, f in zip(scenario.datacenters, floors)]
    weights = [dc.max_service_rate for dc in scenario.datacenters]
    lams = [0.0] * scenario.size
    free = set(range(scenario.size))
    remaining = scenario.total_load
    while free and remaining > 1e-12 * max(1.0, scenario.total_load):
        total_w = sum(weights[i] for i in free)
        share = {i: remaining * weights[i] / total_w for i in free}
        capped = {i for i in free if lams[i] + share[i] > caps[i]}
        if not capped:
            for i in free:
                lams[i] += share[i]
            break
        for i in capped:
            remaining -= caps[i] - lams[i]
            lams[i] = caps[i]
        free -= capped
    return lams


def baseline_servers(scenario: Scenario, arrivals, integer=False):
    out = []
    for dc, lam, f in zip(scenario.datacenters, arrivals, _floors(scenario)):
        m = (lam + f) / dc.service_rate_per_server
        if integer:
            m = math.ceil(m - 1e-9)
        out.append(min(max(m, 1.0), float(dc.server_count)))
    return out


def solve_policy(scenario: Scenario, policy: str):
    """Relaxed solution of one policy; restricted policies are feasible points of the joint one."""
    if policy == "joint":
        return solve_scp(scenario)
    if policy == "workload":
        return solve_scp(scenario, storage=False)
    if policy in ("baseline", "storage"):
        lams = baseline_arrivals(scenario)
        ms = baseline_servers(scenario, lams)
        return solve_scp(
            scenario, arrival_rates=lams, m_bounds=[(m, m) for m in ms], storage=policy == "storage"
        )
    raise ConfigError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")


def savings_experiment(scenarios, baseline="baseline", treatment="joint"):
    """Per-scenario objective and monetary savings of ``treatment`` over ``baseline``."""
    rows = []
    for k, sc in enumerate(scenarios):
        base = solve_policy(sc, baseline)
        treat = solve_policy(sc, treatment)
        base_money = _monetary(sc, base)
        treat_money = _monetary(sc, treat)
        rows.append(
            {
                "scenario": k,
                "phi_baseline": base.objective,
                "phi_treatment": treat.objective,
                "phi_saving": base.objective - treat.objective,
                "phi_saving_pct": 100.0 * (base.objective - treat.objective) / abs(base.objective),
                "money_baseline": base_money,
                "money_treatment": treat_money,
                "money_saving_pct": 100.0 * (base_money - treat_money) / base_money if base_money else 0.0,
            }
        )
    return rows


def _monetary(scenario, sol):
    return float(
        sum(
            sum(s.price * q for s, q in zip(dc.sources, a.purchases))
            for dc, a in zip(scenario.datacenters, sol.allocations)
        )
    )


def _gap_row(args):
    I, seed, ranges, slot, slots = args
    sc = priced_snapshot(generate(seed, I, slots=slots, ranges=ranges), slot)
    relaxed = solve_scp(sc)
    heur = round_heuristic(sc, relaxed)
    exact = branch_and_bound(sc)
    return {
        "I": I,
        "seed": seed,
        "phi_relaxed": relaxed.objective,
        "phi_bb": exact.objective,
        "phi_heuristic": heur.objective,
        "phi_gap": heur.objective - exact.objective,
        "phi_gap_pct": 100.0 * (heur.objective - exact.objective) / abs(exact.objective),
        "cost_bb": exact.power_cost,
        "cost_heuristic": heur.power_cost,
        "cost_gap_pct": 100.0 * (heur.power_cost - exact.power_cost) / abs(exact.power_cost),
        "dq_bb": exact.mean_queue_delay,
        "dq_heuristic": heur.mean_queue_delay,
        "bb_nodes": exact.nodes,
        "bb_scp_calls": exact.scp_calls,
        "heuristic_scp_calls": heur.scp_calls,
    }


def parallel_map(fn, items, workers=1):
    """Ordered map; uses processes when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def gaps_table(dcs=(2, 4, 6), seeds=range(10), ranges=ParameterRanges(), slot=0, slots=24, workers=1):
    """Heuristic against branch-and-bound: objective, power cost and mean queueing delay."""
    jobs = [(I, seed, ranges, slot, slots) for I in dcs for seed in seeds]
    return parallel_map(_gap_row, jobs, workers)


def fairness_scenario(power_factor=True, p_max=(600.0, 1000.0, 1400.0), load_fraction=0.6, constant_factor=500.0):
    """Sites that differ only in size, with identical prices and no storage.

    Idle power scales with size so that equal utilisation is the fair outcome.
    """
    tau, sa, u, dt, bound = 1.0, 0.5, 80.0, 0.5, 2.0
    prices = (0.08, 0.11, 0.14)
    gammas = (0.5, 0.4, 0.3)
    dcs = []
    for pm in p_max:
        beta = 0.05 * pm
        M = int(math.floor((pm - beta) / sa))
        if power_factor:
            sources = [PowerSource.from_power_factor(p, g, tau, pm, n) for p, g, n in zip(prices, gammas, SOURCE_NAMES)]
        else:
            sources = [
                PowerSource.from_constant_factor(p, g, constant_factor, n) for p, g, n in zip(prices, gammas, SOURCE_NAMES)
            ]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConsistencyWarning)
            dcs.append(DataCenterConfig(M, sa, beta, u, pm, dt, sources, no_battery()))
    floor = 1.0 / (bound - 1.0 / u - dt)
    max_load = sum(dc.max_service_rate - floor for dc in dcs)
    return Scenario(tau, load_fraction * max_load, max_load, bound, dcs)


def fairness_table(p_max=(600.0, 1000.0, 1400.0), load_fraction=0.6):
    rows = []
    for label, flag in (("power_factor", True), ("constant_factor", False)):
        sc = fairness_scenario(flag, p_max, load_fraction)
        relaxed = solve_scp(sc)
        heur = round_heuristic(sc, relaxed)
        for i, dc in enumerate(sc.datacenters):
            rows.append(
                {
                    "factor": label,
                    "dc": i,
                    "server_count": dc.server_count,
                    "m_relaxed": relaxed.active_servers[i],
                    "m_integer": heur.active_servers[i],
                    "use_ratio_relaxed": relaxed.active_servers[i] / dc.server_count,
                    "use_ratio_integer": heur.active_servers[i] / dc.server_count,
                }
            )
    return rows


def savings_table(dcs=(2, 4, 6), seeds=range(5), load_fractions=(0.6,), spreads=(1.0, 2.0), slot=0, slots=24):
    rows = []
    for I in dcs:
        for lf in load_fractions:
            for spread in spreads:
                ranges = ParameterRanges(load_fraction=lf, price_spread=spread)
                scs = [priced_snapshot(generate(seed, I, slots=slots, ranges=ranges), slot) for seed in seeds]
                for policy in POLICIES[1:]:
                    res = savings_experiment(scs, "baseline", policy)
                    rows.append(
                        {
                            "I": I,
                            "load_fraction": lf,
                            "price_spread": spread,
                            "policy": policy,
                            "phi_saving_pct": float(np.mean([r["phi_saving_pct"] for r in res])),
                            "money_saving_pct": float(np.mean([r["money_saving_pct"] for r in res])),
                        }
                    )
    return rows


def clean_table(gamma_sets=((0.5, 0.4, 0.3), (0.5, 0.5, 0.5), (0.6, 0.4, 0.2)), I=4, seeds=range(5)):
    """Share of purchases per source under different pollution factors."""
    rows = []
    for gammas in gamma_sets:
        ranges = ParameterRanges(pollution=tuple(gammas))
        totals = np.zeros(len(gammas))
        for seed in seeds:
            sc = priced_snapshot(generate(seed, I, slots=24, ranges=ranges), 0)
            sol = solve_scp(sc)
            for a in sol.allocations:
                totals += np.array(a.purchases)
        share = totals / totals.sum()
        row = {"gamma": "/".join(f"{g:g}" for g in gammas)}
        row.update({name: float(s) for name, s in zip(SOURCE_NAMES, share)})
        row["clean_fraction"] = float(share[1:].sum())
        rows.append(row)
    return rows


def rows_to_csv(rows, header_note=None):
    buf = io.StringIO()
    if header_note:
        buf.write(f"# {header_note}\n")
    if not rows:
        return buf.getvalue()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def with_price_spread(scenario: Scenario, spread):
    """Scale every site's deviation from the cross-site mean price by ``spread``."""
    N = len(scenario.datacenters[0].sources)
    mean = [np.mean([dc.sources[n].price for dc in scenario.datacenters]) for n in range(N)]
    dcs = [
        dc.with_sources([replace(s, price=max(mean[n] + spread * (s.price - mean[n]), 0.0)) for n, s in enumerate(dc.sources)])
        for dc in scenario.datacenters
    ]
    return scenario.with_datacenters(dcs)
