import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geodc.allocation import LagrangeAggregates, allocate, lagrange_split, optimal_cost_closed_form
from geodc.errors import ConfigError, DomainError
from geodc.model import PowerSource, pif_cost


def src(p, a):
    return PowerSource(p, 0.5, a)


def test_split_examples():
    one = lagrange_split([src(0.1, 1.0)], 1.0)
    assert one.marginal_cost == pytest.approx(2.1) and one.purchases == pytest.approx((1.0,))
    two = lagrange_split([src(0.1, 1.0), src(0.3, 1.0)], 1.0)
    assert two.marginal_cost == pytest.approx(1.2)
    assert two.purchases == pytest.approx((0.55, 0.45))
    neg = lagrange_split([src(0.0, 1.0), src(10.0, 1.0)], 1.0)
    assert neg.marginal_cost == pytest.approx(6.0)
    assert neg.purchases == pytest.approx((3.0, -2.0))


def test_allocate_examples():
    for c in (0.0, 0.1, 5.0):
        assert allocate([src(c, 1.0), src(c, 1.0)], 2.0).purchases == pytest.approx((1.0, 1.0))
    clamp = allocate([src(0.0, 1.0), src(10.0, 1.0)], 1.0)
    assert clamp.purchases == pytest.approx((1.0, 0.0))
    assert clamp.total_cost == pytest.approx(1.0)
    assert clamp.marginal_cost == pytest.approx(2.0)
    assert clamp.clamped == (1,) and 10.0 >= clamp.marginal_cost
    res = allocate([src(0.1, 1.0), src(0.3, 1.0)], 1.0)
    assert res.purchases == pytest.approx((0.55, 0.45))
    assert res.total_cost == pytest.approx(0.695)
    assert res.unit_cost == pytest.approx(0.695)


def test_closed_form_examples():
    assert optimal_cost_closed_form(LagrangeAggregates.from_sources([src(0.1, 1.0)]), 1.0) == pytest.approx(1.1)
    agg = LagrangeAggregates.from_sources([src(0.1, 1.0), src(0.3, 1.0)])
    assert optimal_cost_closed_form(agg, 1.0) == pytest.approx(0.695)
    assert agg.W == pytest.approx(0.25 * (agg.Y**2 - agg.X * agg.Z))
    # the raw formula is negative at zero demand; allocate returns zero cost
    assert optimal_cost_closed_form(agg, 0.0) < 0
    zero = allocate([src(0.1, 1.0), src(0.3, 1.0)], 0.0)
    assert zero.total_cost == 0.0 and zero.purchases == (0.0, 0.0) and zero.unit_cost == 0.0


def test_allocate_errors():
    with pytest.raises(ConfigError):
        allocate([], 1.0)
    with pytest.raises(DomainError):
        allocate([src(0.1, 1.0)], -1.0)


sources_st = st.lists(
    st.tuples(st.floats(0.0, 0.3), st.floats(1e-4, 1e-2)),
    min_size=1,
    max_size=4,
)


@given(specs=sources_st, demand=st.floats(0.0, 500.0))
def test_kkt_witness(specs, demand):
    sources = [src(p, a) for p, a in specs]
    res = allocate(sources, demand)
    assert min(res.purchases) >= 0.0
    assert res.total_purchase == pytest.approx(demand, rel=1e-12, abs=1e-12)
    v = res.marginal_cost
    for s, q in zip(sources, res.purchases):
        if q > 0:
            assert 2 * s.pif_coeff * q + s.price == pytest.approx(v, rel=1e-8)
        else:
            assert s.price >= v * (1 - 1e-12)


@given(specs=sources_st, demand=st.floats(1e-3, 500.0))
def test_closed_form_matches_allocation(specs, demand):
    sources = [src(p, a) for p, a in specs]
    res = allocate(sources, demand)
    agg = LagrangeAggregates.from_sources([sources[k] for k in res.active])
    summed = sum(pif_cost(s, q) for s, q in zip(sources, res.purchases))
    assert summed == pytest.approx(optimal_cost_closed_form(agg, demand), rel=1e-10)


@given(specs=sources_st, demand=st.floats(1e-3, 500.0))
def test_allocation_beats_every_active_subset(specs, demand):
    sources = [src(p, a) for p, a in specs]
    best = allocate(sources, demand).total_cost
    for r in range(1, len(sources) + 1):
        for subset in itertools.combinations(sources, r):
            split = lagrange_split(subset, demand)
            if min(split.purchases) >= 0:
                cost = sum(pif_cost(s, q) for s, q in zip(subset, split.purchases))
                assert best <= cost * (1 + 1e-12)


@given(specs=sources_st, demand=st.floats(0.0, 500.0), extra=st.floats(1e-3, 100.0))
def test_marginal_cost_increases_with_demand(specs, demand, extra):
    sources = [src(p, a) for p, a in specs]
    assert allocate(sources, demand + extra).marginal_cost > allocate(sources, demand).marginal_cost


def test_equal_prices_split_by_inverse_coefficient():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.uniform(1e-4, 1e-2, 3)
        res = allocate([src(0.1, x) for x in a], float(rng.uniform(1, 500)))
        q = np.array(res.purchases)
        assert q / q.sum() == pytest.approx((1 / a) / (1 / a).sum(), rel=1e-12)
