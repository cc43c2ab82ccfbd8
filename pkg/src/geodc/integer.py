"""Integer server counts: rounding heuristic and branch-and-bound."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

from .errors import ConfigError, InfeasibleError
from .queueing import DelayBudget, capacity_floor
from .scp import RelaxedSolution, solve_scp

log = logging.getLogger(__name__)

MAX_EXACT_DCS = 8
DEFAULT_NODE_BUDGET = 20000


@dataclass(frozen=True)
class RoundingThresholds:
    """Thresholds of the rounding rules; all zero turns each test into a sign test."""

    capacity: float = 0.0
    residual: float = 0.0
    shortfall: float = 0.0
    overshoot: float = 0.0


@dataclass(frozen=True)
class IntegerSolution:
    solution: RelaxedSolution
    relaxed_objective: float
    scp_calls: int
    method: str
    nodes: int = 0
    bound_gap: float = 0.0

    @property
    def decisions(self):
        return self.solution.decisions

    @property
    def allocations(self):
        return self.solution.allocations

    @property
    def objective(self):
        return self.solution.objective

    @property
    def active_servers(self):
        return tuple(int(round(m)) for m in self.solution.active_servers)

    @property
    def gap_vs_relaxed(self):
        return self.objective - self.relaxed_objective

    @property
    def power_cost(self):
        return self.solution.power_cost

    @property
    def mean_queue_delay(self):
        return self.solution.mean_queue_delay


def _round_half_away(x):
    return math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)


def _floors(scenario):
    return [capacity_floor(DelayBudget.for_datacenter(dc, scenario.delay_bound_s)) for dc in scenario.datacenters]


def _capacity_ok(scenario, ms, floors):
    spare = 0.0
    for dc, m, f in zip(scenario.datacenters, ms, floors):
        if m * dc.service_rate_per_server < f * (1 - 1e-12):
            return False
        spare += m * dc.service_rate_per_server - f
    return spare >= scenario.total_load * (1 - 1e-12)


def _fixed_bounds(ms):
    return [(float(m), float(m)) for m in ms]


def round_servers(scenario, relaxed: RelaxedSolution, thresholds=RoundingThresholds()):
    """Integer server counts from a relaxed solution, before the re-solve."""
    dcs = scenario.datacenters
    I = len(dcs)
    m_ac = list(relaxed.active_servers)
    u = [dc.service_rate_per_server for dc in dcs]
    m_int = [_round_half_away(m) for m in m_ac]
    gap1 = sum((mi - ma) * ui for mi, ma, ui in zip(m_int, m_ac, u))
    d = [mi - ma for mi, ma in zip(m_int, m_ac)]
    order = sorted(range(I), key=lambda k: (d[k], k))
    num1 = 0
    if gap1 < thresholds.capacity:
        u_mean = sum(u) / I
        num1 = math.ceil(abs((sum(ma * ui for ma, ui in zip(m_ac, u)) - scenario.total_load) / u_mean))
        for k in range(min(num1, I)):
            if d[order[k]] < thresholds.residual:
                m_int[order[k]] += 1
    gap2 = sum(mi - ma for mi, ma in zip(m_int, m_ac))
    num2 = _round_half_away(abs(gap2))
    if gap2 < thresholds.shortfall:
        for k in range(num1, min(num1 + num2, I)):
            m_int[order[k]] += 1
    if gap2 > thresholds.overshoot:
        for k in range(min(num2, I)):
            m_int[order[I - 1 - k]] -= 1
    m_int = [min(max(m, 1), dc.server_count) for m, dc in zip(m_int, dcs)]

    floors = _floors(scenario)
    if not _capacity_ok(scenario, m_int, floors):
        log.info("rounded server counts miss the load; adding servers at the cheapest sites")
        for i, (dc, f) in enumerate(zip(dcs, floors)):
            m_int[i] = max(m_int[i], min(math.ceil(f / dc.service_rate_per_server - 1e-12), dc.server_count))
        # marginal energy price of one more server at the relaxed point
        price = [
            relaxed.allocations[i].marginal_cost * scenario.slot_hours * dcs[i].server_power_kw for i in range(I)
        ]
        while not _capacity_ok(scenario, m_int, floors):
            open_ = [i for i in range(I) if m_int[i] < dcs[i].server_count]
            if not open_:
                raise InfeasibleError("no integer server assignment serves the load")
            i = min(open_, key=lambda k: (price[k], k))
            m_int[i] += 1
    return m_int


def round_heuristic(scenario, relaxed: RelaxedSolution | None = None, thresholds=RoundingThresholds(), **scp_kwargs):
    """Round the relaxed server counts, then re-solve with them fixed.

    Uses two SCP solves in total, counting the relaxed one (passing a
    precomputed ``relaxed`` still counts it).
    """
    if relaxed is None:
        relaxed = solve_scp(scenario, **scp_kwargs)
    ms = round_servers(scenario, relaxed, thresholds)
    fixed = solve_scp(scenario, m_bounds=_fixed_bounds(ms), **scp_kwargs)
    return IntegerSolution(fixed, relaxed.objective, scp_calls=2, method="heuristic")


def _most_fractional(ms, bounds):
    best, arg = 1e-9, None
    for i, (m, (lo, hi)) in enumerate(zip(ms, bounds)):
        if lo == hi:
            continue
        frac = abs(m - round(m))
        if frac > best:
            best, arg = frac, i
    return arg


def _node_solve(scenario, bounds, total, scp_kwargs):
    lo_sum = sum(b[0] for b in bounds)
    hi_sum = sum(b[1] for b in bounds)
    server_total = total if (total[0] > lo_sum or total[1] < hi_sum) else None
    return solve_scp(scenario, m_bounds=list(bounds), server_total=server_total, **scp_kwargs)


def branch_and_bound(
    scenario,
    gap_tol=1e-6,
    *,
    node_budget=DEFAULT_NODE_BUDGET,
    incumbent: IntegerSolution | None = None,
    force=False,
    **scp_kwargs,
):
    """Best-first branch-and-bound over server counts; each node is an SCP solve.

    A node whose relaxed total server count is fractional is split on that
    total first (every integer point has an integral total); otherwise the
    most fractional server count is split into floor and ceiling boxes.
    """
    if scenario.size > MAX_EXACT_DCS and not force:
        raise ConfigError(f"branch-and-bound refuses I > {MAX_EXACT_DCS} without force")
    calls = 0
    root_bounds = tuple((1.0, float(dc.server_count)) for dc in scenario.datacenters)
    root_total = (float(len(root_bounds)), float(sum(b[1] for b in root_bounds)))
    root = _node_solve(scenario, root_bounds, root_total, scp_kwargs)
    calls += 1
    best = incumbent.solution if incumbent is not None else None
    counter = 0
    heap = [(root.objective, counter, root_bounds, root_total, root)]
    nodes = 0

    def prunable(value):
        return best is not None and value >= best.objective - gap_tol * abs(best.objective)

    while heap:
        bound, _, bounds, total, sol = heapq.heappop(heap)
        if prunable(bound):
            heap.clear()
            break
        if nodes >= node_budget:
            heapq.heappush(heap, (bound, counter, bounds, total, sol))
            break
        nodes += 1
        ms = sol.active_servers
        m_sum = sum(ms)
        children = []
        if abs(m_sum - round(m_sum)) > 1e-7:
            children = [
                (bounds, (total[0], float(math.floor(m_sum)))),
                (bounds, (float(math.ceil(m_sum)), total[1])),
            ]
        else:
            k = _most_fractional(ms, bounds)
            if k is not None:
                lo, hi = bounds[k]
                for child in ((lo, float(math.floor(ms[k]))), (float(math.ceil(ms[k])), hi)):
                    children.append((bounds[:k] + (child,) + bounds[k + 1 :], total))
        if not children:
            rounded = [round(m) for m in ms]
            if any(m != x for m, x in zip(rounded, ms)):
                sol = solve_scp(scenario, m_bounds=_fixed_bounds(rounded), **scp_kwargs)
                calls += 1
            if best is None or sol.objective < best.objective:
                best = sol
            continue
        for cb, ct in children:
            if ct[0] > ct[1] or any(b[0] > b[1] for b in cb):
                continue
            calls += 1
            try:
                csol = _node_solve(scenario, cb, ct, scp_kwargs)
            except InfeasibleError:
                continue
            if prunable(csol.objective):
                continue
            counter += 1
            heapq.heappush(heap, (csol.objective, counter, cb, ct, csol))
    if best is None:
        raise InfeasibleError("branch-and-bound found no integer-feasible point")
    open_bound = min((h[0] for h in heap), default=best.objective)
    gap = max(0.0, (best.objective - min(open_bound, best.objective)) / max(abs(best.objective), 1e-300))
    return IntegerSolution(
        best, root.objective, scp_calls=calls, method="branch_and_bound", nodes=max(nodes, 1), bound_gap=gap
    )
