"""Optimal purchase split across power sources.

Minimises ``sum_n a_n q_n^2 + p_n q_n`` subject to ``sum_n q_n = demand``
and ``q >= 0``.  Without the sign constraint the optimum is closed form; the
clamping loop removes sources whose unconstrained share is negative until
none remain.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, DomainError

NEGATIVE_TOL_KWH = 1e-12


@dataclass(frozen=True)
class LagrangeAggregates:
    X: float
    Y: float
    Z: float
    W: float

    @classmethod
    def from_sources(cls, sources):
        if not sources:
            raise ConfigError("aggregates need at least one active source")
        inv = [1.0 / s.pif_coeff for s in sources]
        X = sum(inv)
        Y = sum(s.price * w for s, w in zip(sources, inv))
        Z = sum(s.price * s.price * w for s, w in zip(sources, inv))
        # (Y^2 - XZ)/4 written as a sum of squares, free of cancellation
        W = 0.0
        for j in range(len(sources)):
            for k in range(j + 1, len(sources)):
                dp = sources[j].price - sources[k].price
                W -= 0.25 * dp * dp * inv[j] * inv[k]
        return cls(X, Y, Z, W)

    def marginal(self, demand):
        return (2.0 * demand + self.Y) / self.X

    def cost(self, demand):
        return (demand * demand + self.Y * demand + self.W) / self.X


@dataclass(frozen=True)
class LagrangeSplit:
    purchases: tuple
    marginal_cost: float


@dataclass(frozen=True)
class AllocationResult:
    purchases: tuple
    marginal_cost: float
    unit_cost: float
    total_cost: float
    clamped: tuple
    iterations: int

    @property
    def active(self):
        return tuple(n for n in range(len(self.purchases)) if n not in self.clamped)

    @property
    def total_purchase(self):
        return float(sum(self.purchases))


def lagrange_split(sources, demand_kwh):
    """Unclamped stationary point; entries may be negative."""
    agg = LagrangeAggregates.from_sources(sources)
    v = agg.marginal(demand_kwh)
    return LagrangeSplit(tuple((v - s.price) / (2.0 * s.pif_coeff) for s in sources), v)


def optimal_cost_closed_form(aggregates: LagrangeAggregates, demand_kwh):
    return aggregates.cost(demand_kwh)


def allocate(sources, demand_kwh):
    """Globally optimal non-negative split of ``demand_kwh``."""
    sources = tuple(sources)
    if not sources:
        raise ConfigError("no power sources to allocate across")
    if demand_kwh < 0.0:
        raise DomainError("demand must be >= 0")
    n = len(sources)
    if demand_kwh == 0.0:
        cheapest = min(s.price for s in sources)
        clamped = tuple(k for k in range(n) if sources[k].price > cheapest)
        return AllocationResult((0.0,) * n, cheapest, 0.0, 0.0, clamped, 1)

    active = list(range(n))
    iterations = 0
    while True:
        iterations += 1
        split = lagrange_split([sources[k] for k in active], demand_kwh)
        negative = [k for k, q in zip(active, split.purchases) if q < -NEGATIVE_TOL_KWH]
        if not negative:
            break
        active = [k for k in active if k not in negative]

    q = [0.0] * n
    for k, qk in zip(active, split.purchases):
        q[k] = max(qk, 0.0)
    cost = sum(s.pif_coeff * x * x + s.price * x for s, x in zip(sources, q))
    clamped = tuple(k for k in range(n) if k not in active)
    return AllocationResult(tuple(q), split.marginal_cost, cost / demand_kwh, cost, clamped, iterations)
