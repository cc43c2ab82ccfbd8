"""Brute-force verifiers.

Only ``model``, ``battery`` and ``queueing`` formulas are used here; the
solver modules are never imported, so agreement between an oracle and a
solver is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .battery import feasible_delta_range
from .errors import ConfigError, DomainError, InfeasibleError
from .model import Scenario
from .queueing import DelayBudget, capacity_floor

MAX_ALLOCATION_SOURCES = 4
MAX_GRID_STEPS = 5000
MAX_JOINT_DCS = 3
MAX_JOINT_SOURCES = 3


@dataclass(frozen=True)
class OracleReport:
    best_value: float
    best_point: tuple
    grid_resolution: tuple
    evaluations_count: int


def _grid_allocation(a, p, base, caps, remaining, steps):
    """Exact minimum of a separable convex cost on a lattice.

    Distributes ``remaining`` in ``steps`` equal units on top of ``base``,
    with source ``n`` taking at most ``caps[n]`` units.  Because each
    source's unit increments are increasing, the cheapest ``steps``
    increments over all sources form the lattice optimum, which is the
    same answer exhaustive enumeration of the lattice would return.
    """
    h = remaining / steps if steps else 0.0
    increments, owner = [], []
    for n in range(len(a)):
        k = np.arange(1, min(caps[n], steps) + 1)
        lo = base[n] + (k - 1) * h
        hi = base[n] + k * h
        increments.append(a[n] * (hi * hi - lo * lo) + p[n] * h)
        owner.append(np.full(len(k), n))
    inc = np.concatenate(increments)
    who = np.concatenate(owner)
    if len(inc) < steps:
        raise DomainError("lattice caps cannot absorb the demand")
    # stable sort keeps each source's increments in order on ties
    chosen = np.argsort(inc, kind="stable")[:steps]
    counts = np.bincount(who[chosen], minlength=len(a))
    q = base + counts * h
    return q, len(inc)


def allocation_oracle(sources, demand, grid_steps=2000):
    """Grid minimum of ``sum a q^2 + p q`` over ``sum q = demand, q >= 0``."""
    sources = tuple(sources)
    if not sources:
        raise ConfigError("no sources")
    if len(sources) > MAX_ALLOCATION_SOURCES:
        raise ConfigError(f"allocation oracle refuses N > {MAX_ALLOCATION_SOURCES}")
    if not 1 <= grid_steps <= MAX_GRID_STEPS:
        raise ConfigError(f"grid_steps must lie in [1, {MAX_GRID_STEPS}]")
    if demand < 0.0:
        raise DomainError("demand must be >= 0")
    a = np.array([s.pif_coeff for s in sources])
    p = np.array([s.price for s in sources])

    def cost(q):
        return float(np.sum(a * q * q + p * q))

    n = len(sources)
    if demand == 0.0:
        return OracleReport(0.0, (0.0,) * n, (0.0,), 1)
    h = demand / grid_steps
    q, evals = _grid_allocation(a, p, np.zeros(n), [grid_steps] * n, demand, grid_steps)
    # refinement: one step either side of the coarse optimum, re-gridded
    lower = np.maximum(q - h, 0.0)
    upper = np.minimum(q + h, demand)
    remaining = demand - float(np.sum(lower))
    fine = remaining / grid_steps if remaining > 0 else 0.0
    if fine > 0.0:
        caps = [int(math.floor((upper[k] - lower[k]) / fine + 1e-9)) for k in range(n)]
        if sum(caps) >= grid_steps:
            q2, more = _grid_allocation(a, p, lower, caps, remaining, grid_steps)
            evals += more
            if cost(q2) < cost(q):
                q, h = q2, fine
    return OracleReport(cost(q), tuple(float(x) for x in q), (h,), evals)


def exhaustive_allocation(sources, demand, grid_steps):
    """Plain enumeration of every lattice point; only for tiny grids."""
    n = len(sources)
    if math.comb(grid_steps + n - 1, n - 1) > 2_000_000:
        raise ConfigError("lattice too large for plain enumeration")
    h = demand / grid_steps
    best, arg, count = math.inf, None, 0
    for head in itertools.product(range(grid_steps + 1), repeat=n - 1):
        last = grid_steps - sum(head)
        if last < 0:
            continue
        q = [k * h for k in head] + [last * h]
        count += 1
        value = sum(s.pif_coeff * x * x + s.price * x for s, x in zip(sources, q))
        if value < best:
            best, arg = value, tuple(q)
    return OracleReport(best, arg, (h,), count)


def _support_cost(a, p, demand):
    """Optimal allocation cost by enumerating supports; vectorised in demand."""
    demand = np.asarray(demand, dtype=float)
    best = np.full(demand.shape, np.inf)
    n = len(a)
    for r in range(1, n + 1):
        for subset in itertools.combinations(range(n), r):
            sa, sp = a[list(subset)], p[list(subset)]
            X = np.sum(1.0 / sa)
            Y = np.sum(sp / sa)
            v = (2.0 * demand + Y) / X
            ok = np.ones(demand.shape, dtype=bool)
            total = np.zeros(demand.shape)
            for ak, pk in zip(sa, sp):
                q = (v - pk) / (2.0 * ak)
                ok &= q >= -1e-12
                q = np.maximum(q, 0.0)
                total += ak * q * q + pk * q
            best = np.where(ok & (total < best), total, best)
    return best


class _DCGrid:
    def __init__(self, scenario, i):
        dc = scenario.datacenters[i]
        self.dc = dc
        self.tau = scenario.slot_hours
        self.u = dc.service_rate_per_server
        self.floor = capacity_floor(DelayBudget.for_datacenter(dc, scenario.delay_bound_s))
        self.a = np.array([s.pif_coeff for s in dc.sources])
        self.p = np.array([s.price for s in dc.sources])
        self.K = self.tau * dc.battery.capacity_kwh
        self.m_min = max(1.0, self.floor / self.u)
        self.m_max = float(dc.server_count)
        self.lam_max = self.m_max * self.u - self.floor

    def consumption(self, m):
        return self.tau * (m * self.dc.server_power_kw + self.dc.idle_power_kw)

    def grid_energy(self, delta):
        if self.K <= 0.0:
            return np.zeros_like(delta)
        c = self.dc.battery.efficiency
        return delta * np.polyval(c.coefficients, delta / self.K)

    def delta_range(self, m):
        return feasible_delta_range(self.dc.battery, self.consumption(m), self.tau)

    def cost_by_m(self, ms, n_delta, window=None):
        """Best cost term over a Delta grid, for each m; returns (cost, argmin Delta)."""
        rows = []
        for m in ms:
            lo, hi = self.delta_range(m)
            if window is not None:
                lo, hi = max(lo, window[0]), min(hi, window[1])
                if lo > hi:
                    lo, hi = self.delta_range(m)
            rows.append(np.linspace(lo, hi, n_delta) if hi > lo else np.full(n_delta, lo))
        deltas = np.array(rows)
        demand = self.consumption(np.asarray(ms))[:, None] + self.grid_energy(deltas)
        demand = np.maximum(demand, 0.0)
        eps = self.dc.battery.potential_price
        cost = self.dc.weight_cost * (_support_cost(self.a, self.p, demand) - eps * deltas)
        k = np.argmin(cost, axis=1)
        idx = np.arange(len(ms))
        return cost[idx, k], deltas[idx, k], deltas.size

    def values(self, lams, ms, cost_m):
        """Minimum over the m grid of delay plus cost, for each arrival rate."""
        lams = np.asarray(lams)[:, None]
        spare = np.asarray(ms)[None, :] * self.u - lams
        ok = (spare >= self.floor * (1 - 1e-12)) & (spare > 0) & (lams >= 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            delay = self.dc.weight_delay * (1.0 / spare + 1.0 / self.u)
        total = np.where(ok, delay + cost_m[None, :], np.inf)
        k = np.argmin(total, axis=1)
        return total[np.arange(len(lams)), k], k, total.size


def _min_plus(tables, target):
    """Minimise sum_i tables[i][j_i] subject to sum_i j_i == target."""
    best = np.asarray(tables[0])
    choices = []
    for t in tables[1:]:
        t = np.asarray(t)
        size = len(best) + len(t) - 1
        combined = np.full(size, np.inf)
        arg = np.zeros(size, dtype=int)
        for j, v in enumerate(t):
            if not np.isfinite(v):
                continue
            cand = best + v
            seg = combined[j : j + len(best)]
            better = cand < seg
            seg[better] = cand[better]
            arg[j : j + len(best)][better] = j
        choices.append(arg)
        best = combined
    if not 0 <= target < len(best) or not np.isfinite(best[target]):
        raise InfeasibleError("no grid point meets the load on this lattice")
    picks = []
    idx = target
    for arg in reversed(choices):
        j = int(arg[idx])
        picks.append(j)
        idx -= j
    picks.append(idx)
    return float(best[target]), list(reversed(picks))


def joint_oracle(scenario: Scenario, grid_steps=200, *, integer_m=False, refinements=3):
    """Dense-grid minimum of the slot objective for tiny scenarios.

    Each DC's value ``phi_i(lambda)`` is tabulated on a lattice of arrival
    rates by scanning a grid of server counts and battery actions; the
    lattice tables are combined by min-plus convolution so the arrival
    split is searched exhaustively.  Later rounds shrink every grid around
    the incumbent.  Every point evaluated is feasible, so the result is an
    upper bound on the true optimum that tightens with resolution.
    """
    I = scenario.size
    if I > MAX_JOINT_DCS:
        raise ConfigError(f"joint oracle refuses I > {MAX_JOINT_DCS}")
    if any(len(dc.sources) > MAX_JOINT_SOURCES for dc in scenario.datacenters):
        raise ConfigError(f"joint oracle refuses N > {MAX_JOINT_SOURCES}")
    if grid_steps < 4:
        raise ConfigError("grid_steps must be >= 4")
    L = scenario.total_load
    grids = [_DCGrid(scenario, i) for i in range(I)]
    if L > sum(g.lam_max for g in grids) * (1 + 1e-12):
        raise InfeasibleError("load exceeds delay-feasible capacity")

    evals = 0
    lam_step = L / grid_steps if L > 0 else 0.0
    centers = [0.0] * I
    offsets = [np.arange(grid_steps + 1) for _ in range(I)]
    m_windows = [(g.m_min, g.m_max) for g in grids]
    d_windows = [None] * I
    n_m = n_d = grid_steps
    best = None
    for _ in range(refinements + 1):
        tables, picks_m, picks_d, m_grids = [], [], [], []
        for i, g in enumerate(grids):
            lo, hi = m_windows[i]
            if integer_m:
                ms = np.arange(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1, dtype=float)
                ms = ms[(ms >= 1) & (ms <= g.m_max)]
                if len(ms) > 4 * n_m:
                    ms = np.unique(np.round(np.linspace(ms[0], ms[-1], 4 * n_m)))
            else:
                ms = np.linspace(lo, hi, n_m) if hi > lo else np.array([lo])
            cost_m, delta_m, count = g.cost_by_m(ms, n_d, d_windows[i])
            evals += count
            lams = centers[i] + offsets[i] * lam_step
            vals, k, count = g.values(lams, ms, cost_m)
            evals += count
            tables.append(vals)
            picks_m.append(ms[k])
            picks_d.append(delta_m[k])
            m_grids.append(ms)
        shift = sum(int(off[0]) for off in offsets)
        target = (grid_steps if best is None else 0) - shift
        value, picks = _min_plus(tables, target)
        point = tuple(
            (float(centers[i] + offsets[i][j] * lam_step), float(picks_m[i][j]), float(picks_d[i][j]))
            for i, j in enumerate(picks)
        )
        if best is None or value < best[0]:
            best = (value, point)
        # shrink every grid around the incumbent
        span_m = [(w[1] - w[0]) / max(n_m - 1, 1) for w in m_windows]
        new_windows = []
        for i, g in enumerate(grids):
            lam, m, delta = best[1][i]
            w = 2.0 * span_m[i] if not integer_m else max(2.0, 2.0 * span_m[i])
            m_windows[i] = (max(g.m_min, m - w), min(g.m_max, m + w))
            lo, hi = g.delta_range(m)
            step = (hi - lo) / max(n_d - 1, 1) if d_windows[i] is None else (d_windows[i][1] - d_windows[i][0]) / max(n_d - 1, 1)
            new_windows.append((delta - 2 * step, delta + 2 * step))
            centers[i] = lam
        d_windows = new_windows
        old_step = lam_step
        lam_step = 4.0 * old_step / grid_steps
        half = grid_steps // 2
        offsets = [np.arange(-half, half + 1) for _ in range(I)]
        if lam_step == 0.0:
            offsets = [np.array([0]) for _ in range(I)]
    resolution = (lam_step, max(w[1] - w[0] for w in m_windows) / max(n_m - 1, 1))
    return OracleReport(best[0], best[1], resolution, evals)
