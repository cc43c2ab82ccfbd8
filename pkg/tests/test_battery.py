import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geodc.battery import (
    REFERENCE_CUBIC,
    EfficiencyCurve,
    convexity_certificate,
    effective_grid_power,
    eta_prime,
    feasible_delta_range,
    fit_efficiency_curve,
    potential_cost,
    potential_price,
    rate_box,
)
from geodc.errors import CertificateError, ConfigError, DomainError, FitError
from geodc.model import BatteryConfig

REFERENCE = EfficiencyCurve()


def test_eta_prime_values():
    assert eta_prime(REFERENCE, 0.0, 100.0) == pytest.approx(1.038)
    assert eta_prime(REFERENCE, -100.0, 100.0) == pytest.approx(0.5)
    assert eta_prime(REFERENCE, 30.0, 100.0) == pytest.approx(1.674771)
    # hand evaluation: -0.109125 + 0.4575 - 0.7475 + 1.038
    assert eta_prime(REFERENCE, -50.0, 100.0) == pytest.approx(0.638875)
    with pytest.raises(DomainError):
        eta_prime(REFERENCE, 40.0, 100.0)
    with pytest.raises(DomainError):
        eta_prime(REFERENCE, -101.0, 100.0)


def test_grid_energy_values():
    assert effective_grid_power(REFERENCE, 0.0, 100.0) == 0.0
    assert effective_grid_power(REFERENCE, 30.0, 100.0) == pytest.approx(50.24313)
    assert effective_grid_power(REFERENCE, -50.0, 100.0) == pytest.approx(-31.94375)


@given(delta=st.floats(-0.999, 0.299))
def test_grid_energy_sign_and_derivatives(delta):
    K = 250.0
    x = delta * K
    g = REFERENCE.grid_energy(x, K)
    assert np.sign(g) == np.sign(x)
    h = 1e-4 * K
    lo, hi = x - h, x + h
    slope = (REFERENCE.grid_energy(hi, K) - REFERENCE.grid_energy(lo, K)) / (hi - lo)
    assert REFERENCE.grid_energy_slope(x, K) == pytest.approx(slope, rel=1e-5)
    assert REFERENCE.grid_energy_slope(x, K) > 0
    assert REFERENCE.grid_energy_curvature(x, K) > 0


@given(target_frac=st.floats(-0.9, 0.0))
def test_invert_grid_energy(target_frac):
    K = 100.0
    target = target_frac * 50.0
    x = REFERENCE.invert_grid_energy(target, K)
    assert REFERENCE.grid_energy(x, K) == pytest.approx(target, abs=1e-9)
    assert REFERENCE.grid_energy(x, K) >= target - 1e-12


def test_round_trip_loss_away_from_zero():
    # the fitted cubic exceeds 1 just left of zero, so the check is soft
    assert not REFERENCE.loss_consistent()
    assert REFERENCE(-0.02) > 1.0
    for d in np.linspace(0.03, 0.3, 28):
        assert REFERENCE(d) * d >= d >= REFERENCE(-d) * d


def test_potential_cost_examples():
    battery = BatteryConfig(100.0, 50.0, -100.0, 30.0)
    assert potential_cost(battery, 0.0, [0.1] * 6) == 0.0
    assert potential_cost(battery, -10.0, [0.1] * 6) == pytest.approx(1.0)
    w = (0.3, 0.25, 0.2, 0.15, 0.07, 0.03)
    battery = BatteryConfig(100.0, 50.0, -100.0, 30.0, horizon_weights=w)
    assert potential_cost(battery, 10.0, [0.2, 0.1, 0.1, 0.1, 0.1, 0.1]) == pytest.approx(-1.3)
    with pytest.raises(ConfigError):
        potential_price((0.5, 0.4), [0.1, 0.1])


def test_horizon_weights_validated():
    with pytest.raises(ConfigError):
        BatteryConfig(100.0, 50.0, -100.0, 30.0, horizon_weights=(0.5, 0.5))
    with pytest.raises(ConfigError):
        BatteryConfig(100.0, 50.0, -100.0, 30.0, horizon_weights=(0.6, 0.3))


def test_feasible_range_examples():
    full = BatteryConfig(100.0, 50.0, -100.0, 30.0)
    assert feasible_delta_range(full, 1e6) == pytest.approx((-50.0, 30.0))
    empty = BatteryConfig(100.0, 0.0, -100.0, 30.0)
    assert feasible_delta_range(empty, 1e6)[0] == 0.0
    charged = BatteryConfig(100.0, 100.0, -100.0, 30.0)
    lo, hi = feasible_delta_range(charged, 10.0)
    assert hi == 0.0
    assert REFERENCE.grid_energy(lo, 100.0) == pytest.approx(-10.0, abs=1e-6)
    assert REFERENCE.grid_energy(lo, 100.0) + 10.0 >= 0.0


@given(charge=st.floats(0.0, 1.0), consumption=st.floats(0.0, 500.0))
def test_feasible_range_is_feasible(charge, consumption):
    C = 200.0
    battery = BatteryConfig(C, charge * C, -C, 0.3 * C)
    lo, hi = feasible_delta_range(battery, consumption)
    box_lo, box_hi = rate_box(battery)
    assert box_lo <= lo <= hi <= box_hi
    assert REFERENCE.grid_energy(lo, C) + consumption >= 0.0
    assert 0.0 <= charge * C + lo and charge * C + hi <= C * (1 + 1e-12)


def test_certificate_reference_cubic():
    a, b, c, _ = REFERENCE_CUBIC
    disc = (6 * b) ** 2 - 4 * (12 * a) * (2 * c)
    assert disc == pytest.approx(-4.73, abs=0.01)
    cert = convexity_certificate(REFERENCE)
    assert cert.holds and cert.min_value > 0


def test_certificate_rejects_decreasing_curve():
    curve = EfficiencyCurve((0.0, 0.0, -1.0, 1.5), validate=False)
    cert = convexity_certificate(curve)
    assert not cert.holds and cert.min_value == pytest.approx(-2.0)
    with pytest.raises(CertificateError) as info:
        EfficiencyCurve((0.0, 0.0, -1.0, 1.5))
    assert info.value.delta is not None


def test_certificate_constant_curve():
    cert = convexity_certificate(EfficiencyCurve((0.0, 0.0, 0.0, 1.0)))
    assert cert.holds and cert.min_value == 0.0


def test_fit_exact_samples():
    x = np.linspace(-1.0, 0.3, 15)
    fit = fit_efficiency_curve(np.c_[x, REFERENCE(x)])
    assert np.allclose(fit.curve.coefficients, REFERENCE_CUBIC, atol=1e-9)
    assert fit.rms_residual < 1e-12


def test_fit_constant_samples():
    x = np.linspace(-1.0, 0.3, 15)
    fit = fit_efficiency_curve(np.c_[x, np.ones_like(x)])
    assert np.allclose(fit.curve.coefficients, (0.0, 0.0, 0.0, 1.0), atol=1e-12)
    assert convexity_certificate(fit.curve).holds


@pytest.mark.parametrize("seed", range(20))
def test_fit_noisy_samples(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 0.3, 1000)
    fit = fit_efficiency_curve(np.c_[x, REFERENCE(x) + rng.normal(0.0, 0.01, x.size)])
    assert np.max(np.abs(np.array(fit.curve.coefficients) - REFERENCE_CUBIC)) <= 0.05


def test_fit_errors():
    with pytest.raises(FitError):
        fit_efficiency_curve([(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)])
    with pytest.raises(FitError):
        fit_efficiency_curve([(0.0, 1.0)])
    with pytest.raises(FitError):
        fit_efficiency_curve([(0.5, 1.0)] * 5)
    x = np.linspace(-1.0, 0.3, 20)
    with pytest.raises(CertificateError):
        fit_efficiency_curve(np.c_[x, 1.5 - x])
