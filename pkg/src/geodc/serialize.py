"""Scenario and result files: deterministic JSON and CSV."""

from __future__ import annotations

import json
import warnings
from pathlib import Path

from .battery import EfficiencyCurve
from .errors import ConfigError
from .model import BatteryConfig, ConsistencyWarning, DataCenterConfig, PowerSource, Scenario

SCHEMA_VERSION = 1


def scenario_to_dict(scenario: Scenario):
    dcs = []
    for dc in scenario.datacenters:
        b = dc.battery
        dcs.append(
            {
                "server_count": dc.server_count,
                "server_power_kw": dc.server_power_kw,
                "idle_power_kw": dc.idle_power_kw,
                "service_rate_per_server": dc.service_rate_per_server,
                "p_max_kw": dc.p_max_kw,
                "transmission_delay_s": dc.transmission_delay_s,
                "weight_delay": dc.weight_delay,
                "weight_cost": dc.weight_cost,
                "sources": [
                    {"name": s.name, "price": s.price, "pollution_factor": s.pollution_factor, "pif_coeff": s.pif_coeff}
                    for s in dc.sources
                ],
                "battery": {
                    "capacity_kwh": b.capacity_kwh,
                    "initial_charge_kwh": b.initial_charge_kwh,
                    "delta_lb_kwh": b.delta_lb_kwh,
                    "delta_ub_kwh": b.delta_ub_kwh,
                    "potential_price": b.potential_price,
                    "horizon_weights": list(b.horizon_weights),
                    "efficiency": {
                        "coefficients": list(b.efficiency.coefficients),
                        "domain": [b.efficiency.domain_lo, b.efficiency.domain_hi],
                    },
                },
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "slot_hours": scenario.slot_hours,
        "total_load": scenario.total_load,
        "max_load": scenario.max_load,
        "delay_bound_s": scenario.delay_bound_s,
        "datacenters": dcs,
    }


def _get(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ConfigError(f"{where}: missing field {key!r}") from None


def scenario_from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    dcs = []
    for i, d in enumerate(_get(data, "datacenters", "scenario")):
        where = f"datacenters[{i}]"
        sources = tuple(
            PowerSource(
                float(_get(s, "price", where)),
                float(_get(s, "pollution_factor", where)),
                float(_get(s, "pif_coeff", where)),
                str(s.get("name", "")),
            )
            for s in _get(d, "sources", where)
        )
        b = d.get("battery")
        if b is None:
            battery = BatteryConfig(0.0, 0.0, 0.0, 0.0)
        else:
            eff = b.get("efficiency", {})
            lo, hi = eff.get("domain", [-1.0, 0.3])
            kwargs = {}
            if "horizon_weights" in b:
                kwargs["horizon_weights"] = tuple(b["horizon_weights"])
            curve = EfficiencyCurve(tuple(eff["coefficients"]), lo, hi) if "coefficients" in eff else EfficiencyCurve()
            battery = BatteryConfig(
                float(_get(b, "capacity_kwh", where)),
                float(_get(b, "initial_charge_kwh", where)),
                float(_get(b, "delta_lb_kwh", where)),
                float(_get(b, "delta_ub_kwh", where)),
                curve,
                float(b.get("potential_price", 0.0)),
                **kwargs,
            )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConsistencyWarning)
            dcs.append(
                DataCenterConfig(
                    _get(d, "server_count", where),
                    float(_get(d, "server_power_kw", where)),
                    float(_get(d, "idle_power_kw", where)),
                    float(_get(d, "service_rate_per_server", where)),
                    float(_get(d, "p_max_kw", where)),
                    float(_get(d, "transmission_delay_s", where)),
                    sources,
                    battery,
                    float(d.get("weight_delay", 1.0)),
                    float(d.get("weight_cost", 1.0)),
                )
            )
    return Scenario(
        float(_get(data, "slot_hours", "scenario")),
        float(_get(data, "total_load", "scenario")),
        float(_get(data, "max_load", "scenario")),
        float(_get(data, "delay_bound_s", "scenario")),
        dcs,
    )


def dumps(obj):
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_scenario(scenario, path):
    Path(path).write_text(dumps(scenario_to_dict(scenario)), encoding="utf-8", newline="\n")


def load_scenario(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(data)
