"""Continuous joint problem: convex inner solves and the sequential loop.

For a fixed active source set per data center the purchase variables are
eliminated with the closed-form allocation cost, leaving a convex problem
in ``(lambda_i, m_i, Delta_i)`` coupled only through ``sum lambda_i = L``.
That problem is solved by bisection on the coupling multiplier with
per-site monotone root finding.  The outer loop then clamps sources whose
closed-form purchase went negative and releases clamped sources priced
below the current marginal cost, until no set changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .allocation import AllocationResult, LagrangeAggregates, allocate
from .battery import convexity_certificate, rate_box
from .errors import CertificateError, ConvergenceError, InfeasibleError
from .model import Decision, Scenario
from .queueing import DelayBudget, capacity_floor

check_convexity_condition = convexity_certificate

_NEG_TOL = 1e-12


@dataclass(frozen=True)
class P1Solution:
    arrival_rates: tuple
    active_servers: tuple
    battery_deltas: tuple
    demands: tuple
    objective: float
    multiplier: float
    kkt_residual: float
    site_solves: int


@dataclass(frozen=True)
class RelaxedSolution:
    decisions: tuple
    allocations: tuple
    objective: float
    delay_terms: tuple
    cost_terms: tuple
    queue_delays: tuple
    kkt_residual: float
    outer_iterations: int
    inner_solve_count: int
    multiplier: float
    active_sets: tuple
    objective_history: tuple = field(default=())

    @property
    def arrival_rates(self):
        return tuple(d.arrival_rate for d in self.decisions)

    @property
    def active_servers(self):
        return tuple(d.active_servers for d in self.decisions)

    @property
    def battery_deltas(self):
        return tuple(d.battery_delta_kwh for d in self.decisions)

    @property
    def power_cost(self):
        return float(sum(a.total_cost for a in self.allocations))

    @property
    def mean_queue_delay(self):
        return float(np.mean(self.queue_delays))


class _Site:
    """Constants of one data center's subproblem for a fixed active set."""

    def __init__(self, dc, agg, scenario, m_lo, m_hi, storage=True):
        tau = scenario.slot_hours
        self.dc = dc
        self.td = dc.weight_delay
        self.tc = dc.weight_cost
        self.u = dc.service_rate_per_server
        self.floor = capacity_floor(DelayBudget.for_datacenter(dc, scenario.delay_bound_s))
        self.tau = tau
        self.sa = dc.server_power_kw
        self.beta = dc.idle_power_kw
        self.X, self.Y, self.W = agg.X, agg.Y, agg.W
        b = dc.battery
        self.eps = b.potential_price
        self.K = tau * b.capacity_kwh
        self.ca, self.cb, self.cc, self.cd = b.efficiency.coefficients
        if storage and self.K > 0.0:
            self.box_lo, self.box_hi = rate_box(b, tau)
        else:
            self.box_lo = self.box_hi = 0.0
        self.m_lo = max(1.0, self.floor / self.u, m_lo)
        self.m_hi = min(float(dc.server_count), m_hi)
        self.fixed_m = self.m_hi - self.m_lo <= 1e-12 * max(1.0, self.m_hi)
        self._g_cache = None

    # grid-side battery energy and derivatives
    def g(self, x):
        if self.K <= 0.0:
            return 0.0
        t = x / self.K
        return x * (((self.ca * t + self.cb) * t + self.cc) * t + self.cd)

    def gp(self, x):
        if self.K <= 0.0:
            return self.cd
        t = x / self.K
        return ((4 * self.ca * t + 3 * self.cb) * t + 2 * self.cc) * t + self.cd

    def gpp(self, x):
        if self.K <= 0.0:
            return 0.0
        t = x / self.K
        return ((12 * self.ca * t + 6 * self.cb) * t + 2 * self.cc) / self.K

    def consumption(self, m):
        return self.tau * (m * self.sa + self.beta)

    def fprime(self, D):
        return (2.0 * D + self.Y) / self.X

    def cost(self, D):
        return (D * D + self.Y * D + self.W) / self.X

    def max_arrival(self):
        return self.m_hi * self.u - self.floor

    def purchase_floor(self, m):
        """Lowest Delta keeping purchases non-negative, and whether it binds."""
        target = -self.consumption(m)
        if self.g(self.box_lo) >= target:
            return self.box_lo, False
        x = min(0.0, self.box_hi)
        for _ in range(100):
            excess = self.g(x) - target
            if excess <= 1e-13 * max(1.0, -target):
                break
            step = excess / self.gp(x)
            x -= step
            if abs(step) <= 1e-15 * max(1.0, abs(x)):
                break
        return max(x, self.box_lo), True

    def delta_star(self, m):
        """Optimal Delta for fixed m, and which bound (if any) is active."""
        lower, qbind = self.purchase_floor(m)
        upper = self.box_hi
        if upper - lower <= 1e-14 * max(1.0, abs(upper)):
            return upper if upper <= lower else lower, "fixed"
        Q = self.consumption(m)

        def phi(x):
            return self.fprime(Q + self.g(x)) * self.gp(x) - self.eps

        f_lo = phi(lower)
        if f_lo >= 0.0:
            return lower, "qbuy" if qbind else "lo"
        f_hi = phi(upper)
        if f_hi <= 0.0:
            return upper, "hi"

        def dphi(x):
            gp = self.gp(x)
            return (2.0 * gp * gp + (2.0 * (Q + self.g(x)) + self.Y) * self.gpp(x)) / self.X

        return _bracketed_newton(phi, dphi, lower, upper, f_lo, f_hi), "int"

    def G(self, m):
        """Cost part of the site objective minimised over Delta, with its slope in m."""
        delta, mode = self.delta_star(m)
        D = self.consumption(m) + self.g(delta)
        value = self.tc * (self.cost(D) - self.eps * delta)
        if mode == "qbuy":
            slope = self.tc * self.eps * self.tau * self.sa / self.gp(delta)
        else:
            slope = self.tc * self.tau * self.sa * self.fprime(D)
        return value, slope, delta, D

    def G_fixed(self):
        if self._g_cache is None:
            self._g_cache = self.G(self.m_lo)
        return self._g_cache

    def lam_part(self, m, mu):
        cap = m * self.u
        if mu <= 0.0:
            return 0.0, -self.td * self.u / (cap * cap)
        s = min(max(math.sqrt(self.td / mu), self.floor), cap)
        if s >= cap:
            return 0.0, -self.td * self.u / (cap * cap)
        return cap - s, -mu * self.u

    def solve_given_mu(self, mu, nu=0.0):
        """Minimise ``Phi_i - mu * lambda_i + nu * m_i``; returns (lambda, m, Delta)."""
        if self.fixed_m:
            m = self.m_lo
            lam, _ = self.lam_part(m, mu)
            return lam, m, self.G_fixed()[2]
        fast = self._fast_path(mu, nu)
        if fast is not None:
            return fast

        def slope(m):
            return self.lam_part(m, mu)[1] + self.G(m)[1] + nu

        m = _monotone_argmin(slope, self.m_lo, self.m_hi)
        lam, _ = self.lam_part(m, mu)
        return lam, m, self.delta_star(m)[0]

    def _fast_path(self, mu, nu):
        # interior lambda and m, purchases strictly positive: first-order
        # conditions give the demand in closed form
        if mu <= 0.0:
            return None
        s = max(math.sqrt(self.td / mu), self.floor)
        fp = (mu * self.u - nu) / (self.tc * self.tau * self.sa)
        D = 0.5 * (fp * self.X - self.Y)
        if D <= 0.0:
            return None
        lo, hi = self.box_lo, self.box_hi
        if hi - lo <= 0.0:
            delta = lo
        else:
            target = self.eps / fp
            if self.gp(lo) >= target:
                delta = lo
            elif self.gp(hi) <= target:
                delta = hi
            else:
                delta = _bracketed_newton(
                    lambda x: self.gp(x) - target, self.gpp, lo, hi, self.gp(lo) - target, self.gp(hi) - target
                )
        m = ((D - self.g(delta)) / self.tau - self.beta) / self.sa
        if not (self.m_lo < m < self.m_hi) or m * self.u <= s:
            return None
        return m * self.u - s, m, delta

    def solve_given_lambda(self, lam, nu=0.0):
        """Minimise ``Phi_i + nu * m_i`` over (m, Delta) with the arrival rate fixed."""
        m_lo = max(self.m_lo, (lam + self.floor) / self.u)
        if m_lo > self.m_hi * (1 + 1e-12):
            raise InfeasibleError(f"arrival rate {lam:g} exceeds the site's delay-feasible capacity")
        m_lo = min(m_lo, self.m_hi)
        if self.fixed_m or m_lo >= self.m_hi:
            m = self.m_hi if not self.fixed_m else self.m_lo
            return m, (self.G_fixed() if self.fixed_m else self.G(m))[2]

        def slope(m):
            spare = m * self.u - lam
            return -self.td * self.u / (spare * spare) + self.G(m)[1] + nu

        m = _monotone_argmin(slope, m_lo, self.m_hi)
        return m, self.delta_star(m)[0]

    def objective(self, lam, m, delta):
        D = self.consumption(m) + self.g(delta)
        spare = m * self.u - lam
        delay = self.td * (1.0 / spare + 1.0 / self.u)
        return delay, self.tc * (self.cost(D) - self.eps * delta)


def _bracketed_newton(f, df, lo, hi, f_lo, f_hi, rtol=1e-14):
    """Root of an increasing function with f(lo) < 0 < f(hi)."""
    x = lo - f_lo * (hi - lo) / (f_hi - f_lo)
    for _ in range(200):
        fx = f(x)
        if fx == 0.0:
            return x
        if fx < 0.0:
            lo = x
        else:
            hi = x
        if hi - lo <= rtol * max(1.0, abs(x)):
            return x
        d = df(x)
        nxt = x - fx / d if d > 0.0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= rtol * max(1.0, abs(x)):
            return nxt
        x = nxt
    return x


def _monotone_argmin(slope, lo, hi):
    """Minimiser on [lo, hi] of a convex function given its slope."""
    s_lo = slope(lo)
    if s_lo >= 0.0:
        return lo
    s_hi = slope(hi)
    if s_hi <= 0.0:
        return hi
    return brentq(slope, lo, hi, xtol=1e-13 * max(1.0, hi), rtol=1e-14, maxiter=300)


def _build_sites(scenario, active_sets, m_bounds, storage):
    sites = []
    for i, dc in enumerate(scenario.datacenters):
        agg = LagrangeAggregates.from_sources([dc.sources[n] for n in active_sets[i]])
        lo, hi = m_bounds[i] if m_bounds is not None else (1.0, float(dc.server_count))
        cert = convexity_certificate(dc.battery.efficiency)
        if storage and dc.battery.capacity_kwh > 0 and not cert.holds:
            raise CertificateError(
                f"DC {i}: efficiency curve fails the convexity certificate at delta={cert.argmin_delta:.4g}",
                delta=cert.argmin_delta,
            )
        sites.append(_Site(dc, agg, scenario, lo, hi, storage))
    return sites


def _check_feasible(sites, load, server_total=None):
    for i, s in enumerate(sites):
        if s.m_lo > s.m_hi * (1 + 1e-12):
            raise InfeasibleError(
                f"DC {i}: no server count in [{s.m_lo:g}, {s.m_hi:g}] meets the delay floor {s.floor:g}"
            )
    capacity = sum(s.max_arrival() for s in sites)
    if server_total is not None:
        lo, hi = server_total
        if sum(s.m_lo for s in sites) > hi * (1 + 1e-12) or sum(s.m_hi for s in sites) < lo * (1 - 1e-12):
            raise InfeasibleError(f"server total range [{lo:g}, {hi:g}] misses the per-site bounds")
        # best capacity under the total: fill the fastest sites first
        budget = hi - sum(s.m_lo for s in sites)
        capacity = sum(s.m_lo * s.u - s.floor for s in sites)
        for s in sorted(sites, key=lambda x: -x.u):
            extra = min(budget, s.m_hi - s.m_lo)
            capacity += extra * s.u
            budget -= extra
    if load > capacity * (1 + 1e-12):
        raise InfeasibleError(
            f"total load {load:g} exceeds delay-feasible capacity sum(m_i u_i - floor_i) = {capacity:g}"
        )


def _recover(sites, lams, load):
    """Spread the residual of sum(lambda) - L over sites with room."""
    lams = list(lams)
    residual = load - sum(lams)
    if residual > 0.0:
        room = [max(s.max_arrival() - x, 0.0) for s, x in zip(sites, lams)]
    else:
        room = list(lams)
    total = sum(room)
    if total > 0.0 and residual != 0.0:
        lams = [x + residual * r / total for x, r in zip(lams, room)]
    return [min(max(x, 0.0), s.max_arrival()) for s, x in zip(sites, lams)]


def _recover_servers(sites, lams, ms, target):
    """Spread the residual of sum(m) - target over sites with room."""
    lower = [max(s.m_lo, (lam + s.floor) / s.u) for s, lam in zip(sites, lams)]
    residual = target - sum(ms)
    if residual > 0.0:
        room = [max(s.m_hi - m, 0.0) for s, m in zip(sites, ms)]
    else:
        room = [max(m - lo, 0.0) for m, lo in zip(ms, lower)]
    total = sum(room)
    if total > 0.0 and residual != 0.0:
        ms = [m + residual * r / total for m, r in zip(ms, room)]
    return [min(max(m, lo), s.m_hi) for s, m, lo in zip(sites, ms, lower)]


def _find_mu(sites, load, nu, tally):
    """Multiplier of sum(lambda) = L for a fixed server multiplier."""
    if load <= 0.0:
        return 0.0

    def total(mu):
        tally[0] += len(sites)
        return sum(s.solve_given_mu(mu, nu)[0] for s in sites)

    hi, lo = 1e-6, 0.0
    while total(hi) < load:
        lo, hi = hi, hi * 4.0
        if hi > 1e18:
            raise InfeasibleError("coupling multiplier diverged; load cannot be served")
    if total(lo) >= load:
        return lo
    return brentq(lambda x: total(x) - load, lo, hi, xtol=1e-300, rtol=1e-13, maxiter=400)


def _solve_sites(sites, load, arrival_rates=None, server_total=None):
    _check_feasible(sites, load, server_total)
    tally = [0]

    def at_nu(nu):
        tally[0] += len(sites)
        if arrival_rates is None:
            mu = _find_mu(sites, load, nu, tally)
            return mu, [s.solve_given_mu(mu, nu) for s in sites]
        return float("nan"), [(lam,) + s.solve_given_lambda(lam, nu) for s, lam in zip(sites, arrival_rates)]

    nu = 0.0
    mu, triples = at_nu(nu)
    target = None
    if server_total is not None:
        total_m = sum(t[1] for t in triples)
        if total_m > server_total[1] * (1 + 1e-13):
            target = server_total[1]
        elif total_m < server_total[0] * (1 - 1e-13):
            target = server_total[0]
    if target is not None:
        # a positive server multiplier pushes the total down
        sign = 1.0 if target == server_total[1] else -1.0

        def excess(nu):
            return sum(t[1] for t in at_nu(nu)[1]) - target

        a, b = 0.0, sign * 1e-9
        while sign * excess(b) > 0.0:
            a, b = b, 4.0 * b
            if abs(b) > 1e12:
                raise InfeasibleError(f"server total {target:g} cannot be met")
        nu = brentq(excess, min(a, b), max(a, b), xtol=1e-300, rtol=1e-13, maxiter=400)
        mu, triples = at_nu(nu)
    lams = [t[0] for t in triples]
    if arrival_rates is None:
        lams = _recover(sites, lams, load)
    ms, deltas = [], []
    for s, lam in zip(sites, lams):
        m, delta = s.solve_given_lambda(lam, nu)
        tally[0] += 1
        ms.append(m)
        deltas.append(delta)
    if target is not None:
        ms = _recover_servers(sites, lams, ms, target)
        deltas = [s.delta_star(m)[0] for s, m in zip(sites, ms)]
    return lams, ms, deltas, mu, nu, tally[0]


def _kkt(sites, lams, ms, deltas, load, free_lambda, nu=0.0):
    """Largest relative violation of stationarity, feasibility and complementarity."""
    worst = abs(sum(lams) - load) / max(1.0, load)
    grads = [s.td / (m * s.u - lam) ** 2 for s, lam, m in zip(sites, lams, ms)]
    interior = [
        g
        for s, lam, m, g in zip(sites, lams, ms, grads)
        if lam > 1e-9 * max(1.0, load) and m * s.u - lam > s.floor * (1 + 1e-9)
    ]
    mu = float(np.median(interior)) if interior and free_lambda else None
    for s, lam, m, delta, g in zip(sites, lams, ms, deltas, grads):
        spare = m * s.u - lam
        worst = max(worst, -lam / max(1.0, load), (s.floor - spare) / max(1.0, s.floor))
        worst = max(worst, (s.m_lo - m) / s.m_hi, (m - s.m_hi) / s.m_hi)
        lower, _ = s.purchase_floor(m)
        worst = max(worst, (lower - delta) / max(1.0, abs(lower)), (delta - s.box_hi) / max(1.0, abs(s.box_hi)))
        at_floor = spare <= s.floor * (1 + 1e-9)
        at_zero = lam <= 1e-9 * max(1.0, load)
        floor_mult = 0.0
        if mu is not None:
            if at_zero:
                worst = max(worst, (mu - g) / mu)
            elif at_floor:
                worst = max(worst, (g - mu) / mu)
                floor_mult = max(0.0, mu - g)
            else:
                worst = max(worst, abs(g - mu) / mu)
        if not s.fixed_m:
            g_slope = s.G(m)[1]
            slope = -g * s.u + g_slope + nu - floor_mult * s.u
            scale = max(abs(g_slope), g * s.u, abs(nu), 1e-300)
            m_lower = s.m_lo if free_lambda else max(s.m_lo, (lam + s.floor) / s.u)
            r = slope / scale
            if m <= m_lower * (1 + 1e-12):
                r = min(r, 0.0)
            if m >= s.m_hi * (1 - 1e-12):
                r = max(r, 0.0)
            worst = max(worst, abs(r))
        if s.box_hi > s.box_lo:
            D = s.consumption(m) + s.g(delta)
            pull = s.fprime(D) * s.gp(delta)
            r = (pull - s.eps) / max(abs(pull), s.eps, 1e-300)
            if delta <= lower + 1e-12 * max(1.0, abs(lower)):
                r = min(r, 0.0)
            if delta >= s.box_hi - 1e-12 * max(1.0, abs(s.box_hi)):
                r = max(r, 0.0)
            worst = max(worst, abs(r))
    return worst


def solve_p1(
    scenario: Scenario,
    aggregates=None,
    active_sets=None,
    *,
    m_bounds=None,
    arrival_rates=None,
    storage=True,
    server_total=None,
):
    """Solve the convex problem for fixed active sets.

    ``aggregates`` may be given directly (one LagrangeAggregates per DC);
    otherwise they are computed from ``active_sets`` (default: all sources).
    ``server_total`` optionally bounds ``sum m_i`` to a ``(lo, hi)`` range.
    """
    if active_sets is None:
        active_sets = [tuple(range(len(dc.sources))) for dc in scenario.datacenters]
    sites = _build_sites(scenario, active_sets, m_bounds, storage)
    if aggregates is not None:
        for s, agg in zip(sites, aggregates):
            s.X, s.Y, s.W = agg.X, agg.Y, agg.W
    lams, ms, deltas, mu, nu, count = _solve_sites(sites, scenario.total_load, arrival_rates, server_total)
    objective = 0.0
    demands = []
    for s, lam, m, delta in zip(sites, lams, ms, deltas):
        delay, cost = s.objective(lam, m, delta)
        objective += delay + cost
        demands.append(s.consumption(m) + s.g(delta))
    kkt = _kkt(sites, lams, ms, deltas, scenario.total_load, arrival_rates is None, nu)
    return P1Solution(tuple(lams), tuple(ms), tuple(deltas), tuple(demands), objective, mu, kkt, count)


def true_objective(scenario: Scenario, arrival_rates, active_servers, deltas):
    """Objective with purchases from the exact allocation; returns (total, delays, costs)."""
    delays, costs = [], []
    for dc, lam, m, delta in zip(scenario.datacenters, arrival_rates, active_servers, deltas):
        tau = scenario.slot_hours
        spare = m * dc.service_rate_per_server - lam
        delays.append(dc.weight_delay * (1.0 / spare + 1.0 / dc.service_rate_per_server))
        demand = tau * (m * dc.server_power_kw + dc.idle_power_kw)
        demand += dc.battery.efficiency.grid_energy(delta, tau * dc.battery.capacity_kwh)
        alloc = allocate(dc.sources, max(demand, 0.0))
        costs.append(dc.weight_cost * (alloc.total_cost - dc.battery.potential_price * delta))
    return float(sum(delays) + sum(costs)), tuple(delays), tuple(costs)


def solve_scp(scenario: Scenario, *, m_bounds=None, arrival_rates=None, storage=True, server_total=None):
    """Globally optimal continuous solution with active-set updates."""
    n_total = sum(len(dc.sources) for dc in scenario.datacenters)
    limit = max(2 * n_total, 1)
    active = [set(range(len(dc.sources))) for dc in scenario.datacenters]
    history = []
    site_solves = 0
    for outer in range(1, limit + 1):
        sets = [tuple(sorted(a)) for a in active]
        p1 = solve_p1(
            scenario,
            None,
            sets,
            m_bounds=m_bounds,
            arrival_rates=arrival_rates,
            storage=storage,
            server_total=server_total,
        )
        site_solves += p1.site_solves
        history.append(true_objective(scenario, p1.arrival_rates, p1.active_servers, p1.battery_deltas)[0])
        changed = False
        for i, dc in enumerate(scenario.datacenters):
            agg = LagrangeAggregates.from_sources([dc.sources[n] for n in sets[i]])
            v = agg.marginal(p1.demands[i])
            negative = {n for n in sets[i] if (v - dc.sources[n].price) / (2 * dc.sources[n].pif_coeff) < -_NEG_TOL}
            if negative:
                active[i] -= negative
                changed = True
            released = {
                n
                for n in range(len(dc.sources))
                if n not in active[i] and dc.sources[n].price < v - 1e-12 * max(1.0, abs(v))
            }
            if released:
                active[i] |= released
                changed = True
        if not changed:
            break
    else:
        raise ConvergenceError(f"active sets still changing after {limit} outer iterations")
    return _package(scenario, p1, sets, outer, site_solves, history)


def _package(scenario, p1, sets, outer, site_solves, history):
    decisions, allocations, delays, costs, qdelays = [], [], [], [], []
    for i, dc in enumerate(scenario.datacenters):
        lam, m, delta = p1.arrival_rates[i], p1.active_servers[i], p1.battery_deltas[i]
        delta += 0.0  # no negative zero in reports
        alloc = allocate(dc.sources, max(p1.demands[i], 0.0))
        allocations.append(alloc)
        decisions.append(Decision(lam, m, delta, alloc.purchases))
        spare = m * dc.service_rate_per_server - lam
        qd = 1.0 / spare + 1.0 / dc.service_rate_per_server
        qdelays.append(qd)
        delays.append(dc.weight_delay * qd)
        costs.append(dc.weight_cost * (alloc.total_cost - dc.battery.potential_price * delta))
    return RelaxedSolution(
        decisions=tuple(decisions),
        allocations=tuple(allocations),
        objective=p1.objective,
        delay_terms=tuple(delays),
        cost_terms=tuple(costs),
        queue_delays=tuple(qdelays),
        kkt_residual=p1.kkt_residual,
        outer_iterations=outer,
        inner_solve_count=site_solves,
        multiplier=p1.multiplier,
        active_sets=tuple(sets),
        objective_history=tuple(history),
    )


# Analytic derivatives of one site's objective in x = (lambda, m, Delta).


def _site_terms(dc, agg, slot_hours, x):
    lam, m, delta = x
    K = slot_hours * dc.battery.capacity_kwh
    curve = dc.battery.efficiency
    u = dc.service_rate_per_server
    spare = m * u - lam
    D = slot_hours * (m * dc.server_power_kw + dc.idle_power_kw) + curve.grid_energy(delta, K)
    return spare, D, curve.grid_energy_slope(delta, K), curve.grid_energy_curvature(delta, K), K


def phi_value(dc, agg: LagrangeAggregates, slot_hours, x):
    spare, D, _, _, _ = _site_terms(dc, agg, slot_hours, x)
    u = dc.service_rate_per_server
    return dc.weight_delay * (1.0 / spare + 1.0 / u) + dc.weight_cost * (
        agg.cost(D) - dc.battery.potential_price * x[2]
    )


def phi_gradient(dc, agg: LagrangeAggregates, slot_hours, x):
    spare, D, gp, _, _ = _site_terms(dc, agg, slot_hours, x)
    td, tc, u = dc.weight_delay, dc.weight_cost, dc.service_rate_per_server
    fp = agg.marginal(D)
    return np.array(
        [
            td / spare**2,
            -td * u / spare**2 + tc * slot_hours * dc.server_power_kw * fp,
            tc * (fp * gp - dc.battery.potential_price),
        ]
    )


def phi_hessian(dc, agg: LagrangeAggregates, slot_hours, x):
    spare, D, gp, gpp, _ = _site_terms(dc, agg, slot_hours, x)
    td, tc, u = dc.weight_delay, dc.weight_cost, dc.service_rate_per_server
    ts = slot_hours * dc.server_power_kw
    X = agg.X
    h_ll = 2 * td / spare**3
    h_lm = -2 * td * u / spare**3
    h_mm = 2 * td * u * u / spare**3 + 2 * tc * ts * ts / X
    h_md = 2 * tc * ts * gp / X
    h_dd = tc * (2 * gp * gp + (2 * D + agg.Y) * gpp) / X
    return np.array([[h_ll, h_lm, 0.0], [h_lm, h_mm, h_md], [0.0, h_md, h_dd]])


def leading_minors(dc, agg: LagrangeAggregates, slot_hours, x):
    """Closed-form leading principal minors of the site Hessian."""
    spare, D, _, gpp, _ = _site_terms(dc, agg, slot_hours, x)
    td, tc = dc.weight_delay, dc.weight_cost
    ts = slot_hours * dc.server_power_kw
    X = agg.X
    m1 = 2 * td / spare**3
    m2 = 4 * td * tc * ts * ts / (X * spare**3)
    m3 = 8 * td * tc * tc * ts * ts * (D + 0.5 * agg.Y) * gpp / (X * X * spare**3)
    return m1, m2, m3
