"""Scenario generation, price series and multi-slot simulation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .battery import default_horizon_weights, potential_price
from .errors import ConfigError, PropagationError
from .model import (
    DEFAULT_POLLUTION,
    MAX_CHARGE_RATE,
    SOURCE_NAMES,
    BatteryConfig,
    DataCenterConfig,
    PowerSource,
    Scenario,
    _replace,
    monetary_cost,
    pollution_cost,
)
from .queueing import DelayBudget, capacity_floor

PRICE_BANDS = ((0.04, 0.12), (0.08, 0.14), (0.10, 0.18))
PRICE_HEADER = ("slot", "dc", "source", "price")


def _check_range(name, pair, lo_limit=0.0):
    lo, hi = pair
    if not (lo_limit <= lo <= hi and math.isfinite(hi)):
        raise ConfigError(f"{name}: invalid range {pair}")


@dataclass(frozen=True)
class ParameterRanges:
    """Generator families; defaults reproduce the reference settings."""

    p_max_kw: float = 1000.0
    server_power_kw: tuple = (0.4, 0.7)
    idle_power_kw: tuple = (40.0, 60.0)
    service_rate: float = 80.0
    capacity_fraction: tuple = (0.4, 0.6)
    pollution: tuple = DEFAULT_POLLUTION
    price_bands: tuple = PRICE_BANDS
    price_spread: float = 1.0
    transmission_s: tuple = (0.1, 0.9)
    delay_bound_s: float = 2.0
    load_fraction: float = 0.6
    slot_hours: float = 1.0
    initial_charge_fraction: float = 0.5
    weight_delay: float = 1.0
    weight_cost: float = 1.0

    def __post_init__(self):
        for name in ("server_power_kw", "idle_power_kw", "capacity_fraction", "transmission_s"):
            _check_range(name, getattr(self, name))
        if self.server_power_kw[0] <= 0.0:
            raise ConfigError("server power must be > 0")
        for k, band in enumerate(self.price_bands):
            _check_range(f"price band {k}", band)
        if len(self.price_bands) != len(self.pollution):
            raise ConfigError("one price band per pollution factor")
        if not self.p_max_kw > self.idle_power_kw[1] + self.server_power_kw[1]:
            raise ConfigError("p_max must exceed idle power plus one server")
        if not 0.0 < self.load_fraction <= 1.0:
            raise ConfigError("load fraction must lie in (0, 1]")
        if not 0.0 <= self.initial_charge_fraction <= 1.0:
            raise ConfigError("initial charge fraction must lie in [0, 1]")
        if self.price_spread < 0.0:
            raise ConfigError("price spread must be >= 0")
        for name in ("service_rate", "delay_bound_s", "slot_hours", "weight_delay", "weight_cost"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be > 0")


@dataclass(frozen=True)
class PriceSeries:
    """Prices indexed ``[slot, dc, source]`` in money per kWh."""

    prices: np.ndarray

    def __post_init__(self):
        arr = np.array(self.prices, dtype=float)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ConfigError("prices must have shape (slots, dcs, sources)")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
            raise ConfigError("prices must be finite and > 0")
        arr.setflags(write=False)
        object.__setattr__(self, "prices", arr)

    @property
    def slots(self):
        return self.prices.shape[0]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PRICE_HEADER)
        T, I, N = self.prices.shape
        for t in range(T):
            for i in range(I):
                for n in range(N):
                    w.writerow((t, i, SOURCE_NAMES[n], repr(float(self.prices[t, i, n]))))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != PRICE_HEADER:
            raise ConfigError(f"price CSV header must be {','.join(PRICE_HEADER)}")
        entries = {}
        for line, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ConfigError(f"line {line}: expected 4 fields")
            try:
                t, i = int(row[0]), int(row[1])
                price = float(row[3])
            except ValueError as exc:
                raise ConfigError(f"line {line}: {exc}") from None
            name = row[2].strip()
            if name not in SOURCE_NAMES:
                raise ConfigError(f"line {line}: unknown source {name!r}")
            if t < 0 or i < 0:
                raise ConfigError(f"line {line}: negative index")
            key = (t, i, SOURCE_NAMES.index(name))
            if key in entries:
                raise ConfigError(f"line {line}: duplicate entry")
            entries[key] = price
        if not entries:
            raise ConfigError("price CSV has no rows")
        shape = tuple(max(k[d] for k in entries) + 1 for d in range(3))
        if len(entries) != shape[0] * shape[1] * shape[2]:
            raise ConfigError("price CSV is missing (slot, dc, source) combinations")
        arr = np.empty(shape)
        for k, v in entries.items():
            arr[k] = v
        return cls(arr)


@dataclass(frozen=True)
class SlotChain:
    """A base scenario plus per-slot prices; SoC is threaded by :func:`step`."""

    base: Scenario
    prices: PriceSeries
    horizon_weights: tuple = field(default_factory=default_horizon_weights)

    def __post_init__(self):
        _, I, N = self.prices.prices.shape
        if I != self.base.size:
            raise ConfigError(f"prices cover {I} DCs, scenario has {self.base.size}")
        if any(len(dc.sources) != N for dc in self.base.datacenters):
            raise ConfigError("price sources do not match the scenario's sources")

    @property
    def slots(self):
        return self.prices.slots

    def initial_soc(self):
        return tuple(dc.battery.initial_charge_kwh for dc in self.base.datacenters)

    def scenario_at(self, t, soc=None, eps=None):
        """Slot ``t`` snapshot with the given state of charge and potential prices."""
        soc = self.initial_soc() if soc is None else soc
        eps = (0.0,) * self.base.size if eps is None else eps
        dcs = []
        for i, dc in enumerate(self.base.datacenters):
            sources = tuple(replace(s, price=float(self.prices.prices[t, i, n])) for n, s in enumerate(dc.sources))
            battery = _replace(dc.battery, initial_charge_kwh=float(soc[i]), potential_price=float(eps[i]))
            dcs.append(_replace(dc, sources=sources, battery=battery))
        return self.base.with_datacenters(dcs)


def generate(seed, I, N=3, slots=24, ranges=ParameterRanges()):
    """Deterministic scenario chain from a seed."""
    if not 1 <= N <= len(ranges.pollution):
        raise ConfigError(f"N must lie in [1, {len(ranges.pollution)}]")
    if I < 1 or slots < 1:
        raise ConfigError("need at least one DC and one slot")
    rng = np.random.default_rng(seed)
    tau = ranges.slot_hours
    dcs = []
    for _ in range(I):
        sa = float(rng.uniform(*ranges.server_power_kw))
        beta = float(rng.uniform(*ranges.idle_power_kw))
        cap = float(rng.uniform(*ranges.capacity_fraction)) * ranges.p_max_kw
        dt = float(rng.uniform(*ranges.transmission_s))
        M = int(math.floor((ranges.p_max_kw - beta) / sa))
        sources = tuple(
            PowerSource.from_power_factor(
                float(np.mean(ranges.price_bands[n])), ranges.pollution[n], tau, ranges.p_max_kw, SOURCE_NAMES[n]
            )
            for n in range(N)
        )
        battery = BatteryConfig(
            capacity_kwh=cap,
            initial_charge_kwh=ranges.initial_charge_fraction * cap,
            delta_lb_kwh=-tau * cap,
            delta_ub_kwh=tau * MAX_CHARGE_RATE * cap,
        )
        dcs.append(
            DataCenterConfig(
                M,
                sa,
                beta,
                ranges.service_rate,
                ranges.p_max_kw,
                dt,
                sources,
                battery,
                ranges.weight_delay,
                ranges.weight_cost,
            )
        )
    raw = np.empty((slots, I, N))
    for n in range(N):
        lo, hi = ranges.price_bands[n]
        raw[:, :, n] = rng.uniform(lo, hi, size=(slots, I))
    mid = np.array([np.mean(b) for b in ranges.price_bands[:N]])
    prices = mid + ranges.price_spread * (raw - mid)
    max_load = sum(
        dc.max_service_rate - capacity_floor(DelayBudget.for_datacenter(dc, ranges.delay_bound_s)) for dc in dcs
    )
    if max_load <= 0.0:
        raise ConfigError("delay bound leaves no servable load")
    base = Scenario(tau, ranges.load_fraction * max_load, max_load, ranges.delay_bound_s, dcs)
    return SlotChain(base, PriceSeries(np.maximum(prices, 1e-6)))


def step(chain: SlotChain, t, soc, decisions):
    """State of charge after slot ``t``; raises if a bound is broken."""
    new = []
    for i, (dc, d) in enumerate(zip(chain.base.datacenters, decisions)):
        cap = dc.battery.capacity_kwh
        c = soc[i] + d.battery_delta_kwh
        tol = 1e-9 * max(1.0, cap)
        if c < -tol or c > cap + tol:
            raise PropagationError(f"slot {t}, DC {i}: state of charge {c:g} outside [0, {cap:g}]")
        new.append(min(max(c, 0.0), cap))
    return tuple(new)


def potential_prices(chain: SlotChain, t, unit_costs, forecast_error=0.0, rng=None):
    """Weighted future unit costs for slot ``t``, wrapping past the last slot.

    ``unit_costs[s][i]`` is DC ``i``'s unit cost in slot ``s``.  With
    ``forecast_error > 0`` each future cost is scaled by ``1 + e * z`` with
    standard normal ``z`` drawn from ``rng``.
    """
    w = chain.horizon_weights
    T = chain.slots
    out = []
    for i in range(chain.base.size):
        future = np.array([unit_costs[(t + h) % T][i] for h in range(1, len(w) + 1)])
        if forecast_error > 0.0:
            future = np.maximum(future * (1.0 + forecast_error * rng.standard_normal(len(w))), 0.0)
        out.append(potential_price(w, future))
    return tuple(out)


def myopic_unit_costs(chain: SlotChain):
    """Per-slot, per-DC unit costs with storage idle."""
    from .scp import solve_scp

    return [[a.unit_cost for a in solve_scp(chain.scenario_at(t), storage=False).allocations] for t in range(chain.slots)]


def priced_snapshot(chain: SlotChain, t=0):
    """Slot ``t`` at the initial state of charge, storage priced from storage-idle unit costs."""
    return chain.scenario_at(t, eps=potential_prices(chain, t, myopic_unit_costs(chain)))


@dataclass(frozen=True)
class SlotResult:
    slot: int
    decisions: tuple
    soc_after: tuple
    potential_prices: tuple
    objective: float
    site_objectives: tuple
    allocations: tuple


def simulate(chain: SlotChain, *, passes=2, solver=None, forecast_error=0.0, seed=0, use_potential=True):
    """Solve every slot in order, threading SoC.

    The first pass solves each slot with storage idle to obtain unit costs;
    every later pass prices storage with the previous pass's unit costs.
    ``passes=1`` therefore returns the storage-free schedule.
    ``solver(scenario) -> solution`` defaults to the relaxed joint solver.
    """
    from .scp import solve_scp

    if passes < 1:
        raise ConfigError("passes must be >= 1")
    solver = solver or solve_scp
    T, I = chain.slots, chain.base.size
    soc = chain.initial_soc()
    results = []
    for t in range(T):
        sol = solve_scp(chain.scenario_at(t, soc), storage=False)
        sites = tuple(d + c for d, c in zip(sol.delay_terms, sol.cost_terms))
        results.append(SlotResult(t, sol.decisions, soc, (0.0,) * I, sol.objective, sites, sol.allocations))
    for _ in range(passes - 1):
        unit = [[a.unit_cost for a in r.allocations] for r in results]
        rng = np.random.default_rng(seed)
        soc = chain.initial_soc()
        results = []
        for t in range(T):
            eps = potential_prices(chain, t, unit, forecast_error, rng) if use_potential else (0.0,) * I
            sol = solver(chain.scenario_at(t, soc, eps))
            sites = tuple(d + c for d, c in zip(sol.delay_terms, sol.cost_terms))
            soc = step(chain, t, soc, sol.decisions)
            results.append(SlotResult(t, sol.decisions, soc, eps, sol.objective, sites, sol.allocations))
    return results


def simulation_csv(chain: SlotChain, results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("slot", "dc", "lambda", "m", "delta", "soc", "q_tp", "q_wp", "q_sp", "monetary", "pollution", "phi"))
    for r in results:
        scenario = chain.scenario_at(r.slot)
        for i, (d, dc) in enumerate(zip(r.decisions, scenario.datacenters)):
            q = list(d.purchases) + [0.0] * (len(SOURCE_NAMES) - len(d.purchases))
            w.writerow(
                (
                    r.slot,
                    i,
                    f"{d.arrival_rate:.10g}",
                    f"{d.active_servers:.10g}",
                    f"{d.battery_delta_kwh:.10g}",
                    f"{r.soc_after[i]:.10g}",
                    *(f"{x:.10g}" for x in q),
                    f"{monetary_cost(dc.sources, d.purchases):.10g}",
                    f"{pollution_cost(dc.sources, d.purchases):.10g}",
                    f"{r.site_objectives[i]:.10g}",
                )
            )
    return buf.getvalue()
