import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orderflow.errors import NoObservations, NonPositiveHalflife, NonPositiveInput, TimeRegression
from orderflow.midprice import EwVwap


def test_no_observations():
    with pytest.raises(NoObservations):
        EwVwap(2.0).estimate


@pytest.mark.parametrize("h", [0.0, -1.0])
def test_nonpositive_halflife(h):
    with pytest.raises(NonPositiveHalflife):
        EwVwap(h)


def test_first_observation_sets_estimate():
    ew = EwVwap(60.0)
    ew.update(100.0, 1, 0.0)
    assert ew.estimate == 100.0
    ew = EwVwap()
    ew.update(182.45, 500, 0.0)
    assert ew.estimate == 182.45


def test_hand_trace_plain_recurrence():
    ew = EwVwap(1.0, adjust=False)
    ew.update(100.0, 1, 0.0)
    ew.update(200.0, 1, 1.0)
    assert ew.numerator == pytest.approx(150.0, rel=1e-15)
    assert ew.denominator == pytest.approx(1.0, rel=1e-15)
    assert ew.estimate == pytest.approx(150.0, rel=1e-15)


def test_hand_trace_adjusted_recurrence():
    # weights 1/2 (t=0) and 1 (t=1): (0.5*100 + 200) / 1.5
    ew = EwVwap(1.0)
    ew.update(100.0, 1, 0.0)
    ew.update(200.0, 1, 1.0)
    assert ew.estimate == pytest.approx(500.0 / 3.0, rel=1e-15)


def test_errors():
    ew = EwVwap(1.0)
    ew.update(10.0, 1, 5.0)
    with pytest.raises(TimeRegression):
        ew.update(10.0, 1, 4.0)
    with pytest.raises(NonPositiveInput):
        ew.update(0.0, 1, 6.0)
    with pytest.raises(NonPositiveInput):
        ew.update(10.0, 0, 6.0)


trades = st.lists(
    st.tuples(st.floats(1e-2, 1e4), st.integers(1, 10**6), st.floats(0, 50)),
    min_size=1, max_size=60,
)


@settings(max_examples=200, deadline=None)
@given(trades, st.floats(1e-3, 1e3), st.booleans(), st.floats(1e-2, 1e4))
def test_constant_price_is_exact(tr, h, adjust, p):
    ew = EwVwap(h, adjust)
    t = 0.0
    for _, v, dt in tr:
        t += dt
        assert ew.update(p, v, t) == p and ew.estimate == p


@settings(max_examples=200, deadline=None)
@given(trades, st.floats(1e-3, 1e3), st.booleans())
def test_convexity(tr, h, adjust):
    ew = EwVwap(h, adjust)
    t, seen = 0.0, []
    for p, v, dt in tr:
        t += dt
        ew.update(p, v, t)
        seen.append(p)
        assert min(seen) * (1 - 1e-12) <= ew.estimate <= max(seen) * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(trades)
def test_long_halflife_is_vwap(tr):
    times = np.cumsum([dt for _, _, dt in tr])
    window = max(times[-1] - times[0], 1.0)
    ew = EwVwap(1e9 * window)
    for (p, v, _), t in zip(tr, times):
        ew.update(p, v, t)
    p = np.array([x[0] for x in tr])
    v = np.array([x[1] for x in tr], dtype=float)
    vwap = (p * v).sum() / v.sum()
    assert ew.estimate == pytest.approx(vwap, rel=1e-6)


@pytest.mark.parametrize("adjust", [True, False])
def test_volume_dominance(adjust):
    ew = EwVwap(2.0, adjust)
    ew.update(50.0, 10, 0.0)
    ew.update(101.0, 10**6, 3.0)
    ew.update(99.0, 1, 3.0)
    assert ew.estimate == pytest.approx(101.0, rel=1e-3)
