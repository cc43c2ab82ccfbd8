"""M/M/n-style delay model and the delay-feasibility floor."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, StabilityError

# Queueing delay above this is legal but flags a scenario worth a second look.
QUEUE_DELAY_WARN_S = 1.0


@dataclass(frozen=True)
class DelayBudget:
    total_bound_s: float
    transmission_s: float
    service_rate: float

    def __post_init__(self):
        if self.margin_s <= 0.0:
            raise ConfigError(
                f"delay bound {self.total_bound_s:g}s leaves no queueing budget "
                f"after service {1.0 / self.service_rate:g}s and transmission {self.transmission_s:g}s"
            )

    @property
    def margin_s(self):
        return self.total_bound_s - 1.0 / self.service_rate - self.transmission_s

    @property
    def min_capacity_margin(self):
        return capacity_floor(self)

    @classmethod
    def for_datacenter(cls, dc, delay_bound_s):
        return cls(delay_bound_s, dc.transmission_delay_s, dc.service_rate_per_server)


def queue_delay(active_servers, service_rate, arrival_rate):
    """Mean sojourn time ``1/(m u - lambda) + 1/u``."""
    spare = active_servers * service_rate - arrival_rate
    if spare <= 0.0:
        raise StabilityError(f"unstable queue: capacity {active_servers * service_rate:g} <= arrival {arrival_rate:g}")
    return 1.0 / spare + 1.0 / service_rate


def capacity_floor(budget: DelayBudget):
    """Smallest spare service rate ``m u - lambda`` meeting the delay bound."""
    margin = budget.margin_s
    if margin <= 0.0:
        raise ConfigError("non-positive queueing budget")
    if math.isinf(margin):
        return 0.0
    return 1.0 / margin
