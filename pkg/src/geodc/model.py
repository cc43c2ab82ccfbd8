"""Domain types and the static power/cost formulas shared by every solver."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

from .battery import EfficiencyCurve, default_horizon_weights
from .errors import ConfigError, DomainError

SOURCE_NAMES = ("tp", "wp", "sp")
DEFAULT_POLLUTION = (0.5, 0.4, 0.3)
MAX_CHARGE_RATE = 0.3  # fraction of capacity per hour


class ConsistencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PowerSource:
    """One purchasable power type.

    ``pif_coeff`` is the quadratic coefficient of the pollution index
    function; use :meth:`from_power_factor` to derive it from the pollution
    factor and the data center's maximum energy per slot.
    """

    price: float
    pollution_factor: float
    pif_coeff: float
    name: str = ""

    def __post_init__(self):
        if not (self.price >= 0.0 and math.isfinite(self.price)):
            raise ConfigError(f"price must be finite and >= 0, got {self.price}")
        if not self.pollution_factor > 0.0:
            raise ConfigError("pollution factor must be > 0")
        if not (self.pif_coeff > 0.0 and math.isfinite(self.pif_coeff)):
            raise ConfigError("PIF coefficient must be finite and > 0")

    @classmethod
    def from_power_factor(cls, price, pollution_factor, slot_hours, p_max_kw, name=""):
        return cls(price, pollution_factor, pollution_factor / (slot_hours * p_max_kw), name)

    @classmethod
    def from_constant_factor(cls, price, pollution_factor, factor, name=""):
        return cls(price, pollution_factor, pollution_factor / factor, name)


@dataclass(frozen=True)
class BatteryConfig:
    capacity_kwh: float
    initial_charge_kwh: float
    delta_lb_kwh: float
    delta_ub_kwh: float
    efficiency: EfficiencyCurve = field(default_factory=EfficiencyCurve)
    potential_price: float = 0.0
    horizon_weights: tuple = field(default_factory=default_horizon_weights)

    def __post_init__(self):
        object.__setattr__(self, "horizon_weights", tuple(float(w) for w in self.horizon_weights))
        if self.capacity_kwh < 0.0:
            raise ConfigError("battery capacity must be >= 0")
        if not 0.0 <= self.initial_charge_kwh <= self.capacity_kwh:
            raise ConfigError("initial charge must lie in [0, capacity]")
        if not self.delta_lb_kwh <= 0.0 <= self.delta_ub_kwh:
            raise ConfigError("battery delta bounds must bracket 0")
        if self.potential_price < 0.0:
            raise ConfigError("potential price must be >= 0")
        w = self.horizon_weights
        if not w or any(x <= 0.0 for x in w):
            raise ConfigError("horizon weights must be positive")
        if any(w[h] <= w[h + 1] for h in range(len(w) - 1)):
            raise ConfigError("horizon weights must be strictly decreasing")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError("horizon weights must sum to 1")

    def with_charge(self, charge_kwh):
        return _replace(self, initial_charge_kwh=min(max(charge_kwh, 0.0), self.capacity_kwh))

    def with_potential_price(self, price):
        return _replace(self, potential_price=price)


def no_battery():
    return BatteryConfig(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DataCenterConfig:
    server_count: int
    server_power_kw: float
    idle_power_kw: float
    service_rate_per_server: float
    p_max_kw: float
    transmission_delay_s: float
    sources: tuple
    battery: BatteryConfig = field(default_factory=no_battery)
    weight_delay: float = 1.0
    weight_cost: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if int(self.server_count) != self.server_count or self.server_count < 1:
            raise ConfigError("server_count must be an integer >= 1")
        object.__setattr__(self, "server_count", int(self.server_count))
        for label in ("server_power_kw", "idle_power_kw", "service_rate_per_server", "p_max_kw"):
            if not getattr(self, label) > 0.0:
                raise ConfigError(f"{label} must be > 0")
        if self.transmission_delay_s < 0.0:
            raise ConfigError("transmission delay must be >= 0")
        if not self.sources:
            raise ConfigError("a data center needs at least one power source")
        if not (self.weight_delay > 0.0 and self.weight_cost > 0.0):
            raise ConfigError("objective weights must be > 0")
        full = self.server_count * self.server_power_kw + self.idle_power_kw
        if abs(full - self.p_max_kw) > 0.05 * self.p_max_kw:
            warnings.warn(
                f"p_max_kw={self.p_max_kw:g} differs from full-load power {full:g} by more than 5%",
                ConsistencyWarning,
                stacklevel=3,
            )

    @property
    def max_service_rate(self):
        return self.server_count * self.service_rate_per_server

    def with_sources(self, sources):
        return _replace(self, sources=tuple(sources))

    def with_battery(self, battery):
        return _replace(self, battery=battery)


@dataclass(frozen=True)
class Scenario:
    slot_hours: float
    total_load: float
    max_load: float
    delay_bound_s: float
    datacenters: tuple

    def __post_init__(self):
        object.__setattr__(self, "datacenters", tuple(self.datacenters))
        if not self.slot_hours > 0.0:
            raise ConfigError("slot length must be > 0")
        if not self.datacenters:
            raise ConfigError("a scenario needs at least one data center")
        capacity = sum(dc.max_service_rate for dc in self.datacenters)
        if not 0.0 <= self.total_load <= self.max_load * (1 + 1e-12):
            raise ConfigError("total load must lie in [0, max_load]")
        if self.max_load > capacity * (1 + 1e-12):
            raise ConfigError("max_load exceeds the fleet's total service rate")
        for i, dc in enumerate(self.datacenters):
            floor = 1.0 / dc.service_rate_per_server + dc.transmission_delay_s
            if not self.delay_bound_s > floor:
                raise ConfigError(
                    f"DC {i}: delay bound {self.delay_bound_s:g}s leaves no queueing budget "
                    f"(service + transmission = {floor:g}s)"
                )
            b = dc.battery
            tol = 1e-9 * max(1.0, b.capacity_kwh)
            if b.delta_lb_kwh < -self.slot_hours * b.capacity_kwh - tol:
                raise ConfigError(f"DC {i}: discharge bound exceeds slot_hours x capacity")
            if b.delta_ub_kwh > self.slot_hours * MAX_CHARGE_RATE * b.capacity_kwh + tol:
                raise ConfigError(f"DC {i}: charge bound exceeds slot_hours x 0.3 x capacity")

    @property
    def size(self):
        return len(self.datacenters)

    def with_load(self, total_load):
        return _replace(self, total_load=total_load)

    def with_datacenters(self, datacenters):
        return _replace(self, datacenters=tuple(datacenters))


@dataclass(frozen=True)
class Decision:
    """One slot's decision for one data center."""

    arrival_rate: float
    active_servers: float
    battery_delta_kwh: float
    purchases: tuple

    @property
    def total_purchase(self):
        return float(sum(self.purchases))


def _replace(obj, **changes):
    from dataclasses import replace

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConsistencyWarning)
        return replace(obj, **changes)


def consumption_kwh(dc: DataCenterConfig, active_servers, slot_hours):
    """Energy drawn in one slot by ``active_servers`` servers plus idle load."""
    if not 1.0 <= active_servers <= dc.server_count:
        raise DomainError(f"active servers {active_servers} outside [1, {dc.server_count}]")
    return slot_hours * (active_servers * dc.server_power_kw + dc.idle_power_kw)


def pif_cost(source: PowerSource, q):
    """Pollution-index plus monetary cost ``a q^2 + p q`` of buying ``q`` kWh."""
    if q < 0.0:
        raise DomainError("purchase must be >= 0")
    return source.pif_coeff * q * q + source.price * q


def unit_cost(total_cost, total_q):
    if total_q < 0.0:
        raise DomainError("total purchase must be >= 0")
    if total_q == 0.0:
        return 0.0
    return total_cost / total_q


def monetary_cost(sources, purchases):
    return float(sum(s.price * q for s, q in zip(sources, purchases)))


def pollution_cost(sources, purchases):
    return float(sum(s.pif_coeff * q * q for s, q in zip(sources, purchases)))


def decision_slacks(dc: DataCenterConfig, decision: Decision, scenario: Scenario):
    """Signed slack of every constraint a decision must satisfy.

    Non-negative values mean the constraint holds.  ``supply_demand`` is the
    negated relative imbalance of purchases against demand.
    """
    from .battery import effective_grid_power, rate_box

    m, lam, delta = decision.active_servers, decision.arrival_rate, decision.battery_delta_kwh
    tau = scenario.slot_hours
    b = dc.battery
    budget = scenario.delay_bound_s - 1.0 / dc.service_rate_per_server - dc.transmission_delay_s
    lo, hi = rate_box(b, tau)
    q_cons = tau * (m * dc.server_power_kw + dc.idle_power_kw)
    grid = effective_grid_power(b.efficiency, delta, b.capacity_kwh, tau) if b.capacity_kwh > 0 else 0.0
    demand = q_cons + grid
    imbalance = abs(decision.total_purchase - demand) / max(1.0, abs(demand))
    return {
        "arrival": lam,
        "servers_lo": m - 1.0,
        "servers_hi": dc.server_count - m,
        "stability": m * dc.service_rate_per_server - lam - 1.0 / budget,
        "delta_lo": delta - lo,
        "delta_hi": hi - delta,
        "purchase_floor": demand,
        "purchases": min(decision.purchases),
        "supply_demand": -imbalance,
    }
