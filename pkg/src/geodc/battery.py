"""Battery charge/discharge efficiency, grid-side energy and potential cost.

The efficiency curve ``eta'(delta)`` maps a normalised charge rate
``delta = Delta / (tau * C)`` to the ratio between grid-side energy and the
energy that actually enters (or leaves) the cells.  Grid-side energy of an
action ``Delta`` is ``g(Delta) = eta'(delta) * Delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import CertificateError, ConfigError, DomainError, FitError

if TYPE_CHECKING:  # pragma: no cover
    from .model import BatteryConfig

REFERENCE_CUBIC = (0.873, 1.830, 1.495, 1.038)
DEFAULT_DOMAIN = (-1.0, 0.3)
DEFAULT_HORIZON = 6

_DOMAIN_TOL = 1e-12
_MONOTONE_SAMPLES = 2001
# certificate slack for fitted curves, relative to the coefficient scale
_CERT_RTOL = 1e-10


@dataclass(frozen=True)
class ConvexityCertificate:
    holds: bool
    min_value: float
    argmin_delta: float


@dataclass(frozen=True)
class EfficiencyCurve:
    """Cubic ``a d^3 + b d^2 + c d + d0`` on ``[domain_lo, domain_hi]``.

    Coefficients are stored highest degree first.  Construction validates
    positivity, strict monotonicity of ``delta * eta'(delta)`` and the
    convexity certificate unless ``validate=False`` (used only to inspect
    pathological curves).
    """

    coefficients: tuple = REFERENCE_CUBIC
    domain_lo: float = DEFAULT_DOMAIN[0]
    domain_hi: float = DEFAULT_DOMAIN[1]
    validate: bool = True

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if len(coeffs) != 4:
            raise ConfigError(f"expected 4 cubic coefficients, got {len(coeffs)}")
        if not all(math.isfinite(c) for c in coeffs):
            raise ConfigError("efficiency coefficients must be finite")
        object.__setattr__(self, "coefficients", coeffs)
        if not self.domain_lo < 0.0 < self.domain_hi:
            raise ConfigError("efficiency domain must contain 0 in its interior")
        if self.validate:
            self._check()

    def _check(self):
        grid = np.linspace(self.domain_lo, self.domain_hi, _MONOTONE_SAMPLES)
        values = np.polyval(self.coefficients, grid)
        if np.any(values <= 0.0):
            bad = float(grid[np.argmin(values)])
            raise ConfigError(f"eta' must be positive on its domain (fails at delta={bad:.4g})")
        slope = np.polyval(self._energy_slope_poly(), grid)
        if np.any(slope <= 0.0):
            bad = float(grid[np.argmin(slope)])
            raise ConfigError(f"delta*eta'(delta) must be strictly increasing (fails at delta={bad:.4g})")
        cert = convexity_certificate(self)
        if not cert.holds:
            raise CertificateError(
                f"convexity certificate fails: min {cert.min_value:.6g} at delta={cert.argmin_delta:.6g}",
                delta=cert.argmin_delta,
            )

    def _energy_slope_poly(self):
        a, b, c, d = self.coefficients
        return (4 * a, 3 * b, 2 * c, d)

    def __call__(self, delta):
        a, b, c, d = self.coefficients
        return ((a * delta + b) * delta + c) * delta + d

    def in_domain(self, delta):
        return self.domain_lo - _DOMAIN_TOL <= delta <= self.domain_hi + _DOMAIN_TOL

    def loss_consistent(self):
        """True when eta' >= 1 for charging and <= 1 for discharging.

        The reference cubic is slightly above 1 just left of zero, so this
        is reported rather than enforced.
        """
        grid = np.linspace(self.domain_lo, self.domain_hi, _MONOTONE_SAMPLES)
        values = np.polyval(self.coefficients, grid)
        return bool(np.all(values[grid >= 0] >= 1.0) and np.all(values[grid < 0] <= 1.0))

    # grid-side energy g(Delta) = Delta * eta'(Delta / K) and its derivatives
    def grid_energy(self, delta_kwh, scale_kwh):
        if scale_kwh <= 0.0:
            return 0.0
        return delta_kwh * self(delta_kwh / scale_kwh)

    def grid_energy_slope(self, delta_kwh, scale_kwh):
        if scale_kwh <= 0.0:
            return self.coefficients[3]
        a, b, c, d = self.coefficients
        x = delta_kwh / scale_kwh
        return ((4 * a * x + 3 * b) * x + 2 * c) * x + d

    def grid_energy_curvature(self, delta_kwh, scale_kwh):
        if scale_kwh <= 0.0:
            return 0.0
        a, b, c, _ = self.coefficients
        x = delta_kwh / scale_kwh
        return ((12 * a * x + 6 * b) * x + 2 * c) / scale_kwh

    def invert_grid_energy(self, target_kwh, scale_kwh, start_kwh=0.0):
        """Largest-side root of ``g(Delta) = target`` for ``target <= g(start)``.

        Newton from the right on a convex increasing ``g`` never overshoots,
        so every iterate satisfies ``g(x) >= target``.
        """
        x = start_kwh
        for _ in range(100):
            gx = self.grid_energy(x, scale_kwh)
            excess = gx - target_kwh
            if excess <= 1e-13 * max(1.0, abs(target_kwh)):
                return x
            step = excess / self.grid_energy_slope(x, scale_kwh)
            x -= step
            if abs(step) <= 1e-15 * max(1.0, abs(x)):
                return x
        return x


@dataclass(frozen=True)
class FitResult:
    curve: EfficiencyCurve
    rms_residual: float
    degree: int


def convexity_certificate(curve):
    """Minimum over the domain of ``12 a d^2 + 6 b d + 2 c``.

    This is ``K * d^2 g / dDelta^2`` for the cubic curve; the joint cost is
    convex in the battery action whenever it is non-negative.  Values
    within rounding of zero count as non-negative so that fits of a
    constant curve are accepted.
    """
    a, b, c, _ = curve.coefficients
    lo, hi = curve.domain_lo, curve.domain_hi

    def q(x):
        return (12 * a * x + 6 * b) * x + 2 * c

    candidates = [lo, hi]
    if a != 0.0:
        vertex = -6 * b / (24 * a)
        if lo < vertex < hi:
            candidates.append(vertex)
    values = [q(x) for x in candidates]
    k = int(np.argmin(values))
    slack = _CERT_RTOL * max(abs(x) for x in curve.coefficients)
    return ConvexityCertificate(holds=values[k] >= -slack, min_value=float(values[k]), argmin_delta=float(candidates[k]))


def default_horizon_weights(horizon=DEFAULT_HORIZON, decay=0.7):
    raw = [decay ** h for h in range(1, horizon + 1)]
    total = sum(raw)
    return tuple(w / total for w in raw)


def _delta_ratio(delta_kwh, capacity_kwh, slot_hours):
    scale = slot_hours * capacity_kwh
    if scale <= 0.0:
        if delta_kwh != 0.0:
            raise DomainError("battery without capacity cannot charge or discharge")
        return 0.0
    return delta_kwh / scale


def eta_prime(curve, delta_kwh, capacity_kwh, slot_hours=1.0):
    delta = _delta_ratio(delta_kwh, capacity_kwh, slot_hours)
    if not curve.in_domain(delta):
        raise DomainError(f"normalised rate {delta:.6g} outside [{curve.domain_lo}, {curve.domain_hi}]")
    return curve(delta)


def effective_grid_power(curve, delta_kwh, capacity_kwh, slot_hours=1.0):
    """Grid-side energy of a battery action; same sign as ``delta_kwh``."""
    return eta_prime(curve, delta_kwh, capacity_kwh, slot_hours) * delta_kwh


def potential_price(weights, future_unit_costs):
    weights = tuple(weights)
    if len(weights) != len(future_unit_costs):
        raise DomainError(f"need {len(weights)} future unit costs, got {len(future_unit_costs)}")
    if abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError("horizon weights must sum to 1")
    return float(sum(w * v for w, v in zip(weights, future_unit_costs)))


def potential_cost(battery: "BatteryConfig", delta_kwh, future_unit_costs):
    """``-eps * Delta``: negative when charging, positive when discharging."""
    eps = potential_price(battery.horizon_weights, future_unit_costs)
    return -eps * delta_kwh


def rate_box(battery: "BatteryConfig", slot_hours=1.0):
    """Delta bounds from state of charge, rate limits and the curve domain."""
    scale = slot_hours * battery.capacity_kwh
    c, cap = battery.initial_charge_kwh, battery.capacity_kwh
    lo = max(-c, battery.delta_lb_kwh, battery.efficiency.domain_lo * scale)
    hi = min(cap - c, battery.delta_ub_kwh, battery.efficiency.domain_hi * scale)
    return lo, hi


def feasible_delta_range(battery: "BatteryConfig", consumption_kwh, slot_hours=1.0, tol_kwh=1e-8):
    """Interval of Delta satisfying SoC, rate and ``Q_buy >= 0`` constraints.

    The purchase floor is found by bisection on the monotone ``g``; the
    returned lower end always lies on the feasible side.
    """
    if consumption_kwh < 0.0:
        raise DomainError("consumption must be non-negative")
    lo, hi = rate_box(battery, slot_hours)
    if lo > hi:
        raise DomainError(f"battery range is empty: [{lo:.6g}, {hi:.6g}]")
    scale = slot_hours * battery.capacity_kwh
    curve = battery.efficiency
    if curve.grid_energy(lo, scale) + consumption_kwh < 0.0:
        left, right = lo, min(0.0, hi)
        while right - left > tol_kwh:
            mid = 0.5 * (left + right)
            if curve.grid_energy(mid, scale) + consumption_kwh >= 0.0:
                right = mid
            else:
                left = mid
        lo = right
    if lo > hi:
        raise DomainError(f"battery range is empty: [{lo:.6g}, {hi:.6g}]")
    return lo, hi


def fit_efficiency_curve(samples: Sequence, degree=3, domain=DEFAULT_DOMAIN):
    """Least-squares polynomial fit of ``(delta, eta')`` samples.

    Degrees below 3 are zero-padded to a cubic.  The resulting curve is
    validated, so a fit that breaks the certificate raises CertificateError.
    """
    if degree not in (1, 2, 3):
        raise FitError("degree must be 1, 2 or 3")
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise FitError("samples must be (delta, eta') pairs")
    if len(data) < degree + 1:
        raise FitError(f"need at least {degree + 1} samples, got {len(data)}")
    x, y = data[:, 0], data[:, 1]
    lo, hi = domain
    if np.any(x < lo - _DOMAIN_TOL) or np.any(x > hi + _DOMAIN_TOL):
        raise FitError(f"sample deltas must lie in [{lo}, {hi}]")
    design = np.vander(x, degree + 1)
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < degree + 1:
        raise FitError("rank-deficient sample set")
    rms = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    padded = (0.0,) * (3 - degree) + tuple(float(c) for c in coef)
    curve = EfficiencyCurve(padded, lo, hi)
    return FitResult(curve=curve, rms_residual=rms, degree=degree)
