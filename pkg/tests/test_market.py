import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from putlab.errors import ParameterError
from putlab.market import (
    MarketParams,
    Regime,
    boundary_at_expiry,
    classify_regime,
    european_put,
    payoff,
    transform,
)

# CRR European lattice at N=20000, summed in closed form with binomial weights
EURO_PUT_N20000 = 6.266999039943871


def test_transform_examples():
    tp = transform(MarketParams(0.08, 0.0, 0.4, 100.0, 1.0))
    assert tp.k == pytest.approx(1.0) and tp.h == 0.0
    assert tp.t_max == pytest.approx(0.08) and tp.d == pytest.approx(math.log(100))
    tp = transform(MarketParams(0.06, 0.03, 0.2, 100.0, 1.0))
    assert (tp.k, tp.h, tp.t_max) == pytest.approx((3.0, 1.5, 0.02))
    tp = transform(MarketParams(0.05, 0.05, 0.3, 50.0, 2.0))
    assert tp.k == pytest.approx(10 / 9) and tp.h == pytest.approx(10 / 9)
    assert tp.t_max == pytest.approx(0.09)


@given(
    r=st.floats(0.0, 0.2),
    q=st.floats(0.0, 0.2),
    sigma=st.floats(0.05, 1.0),
    K=st.floats(1.0, 1000.0),
    T=st.floats(0.01, 5.0),
)
def test_transform_round_trip(r, q, sigma, K, T):
    p = MarketParams(r, q, sigma, K, T)
    tp = transform(p)
    assert tp.k * sigma**2 / 2 == pytest.approx(r, abs=1e-15)
    assert tp.h * sigma**2 / 2 == pytest.approx(q, abs=1e-15)
    for TT in (0.0, 0.3 * T, T):
        assert tp.calendar_time(tp.transformed_time(TT)) == pytest.approx(TT, abs=1e-12)
    assert tp.transformed_time(T) == pytest.approx(0.0, abs=1e-15)
    assert tp.transformed_time(0.0) == pytest.approx(tp.t_max)


@given(r=st.floats(0.0, 0.2), q=st.floats(0.0, 0.2), sigma=st.floats(0.05, 1.0))
def test_regime_partition(r, q, sigma):
    regime = classify_regime(MarketParams(r, q, sigma, 100.0, 1.0))
    if q == 0.0:
        assert regime is Regime.ZERO_DIVIDEND
    elif r < q:
        assert regime is Regime.NON_CONVEX
    elif q + sigma**2 / 2 <= r:
        assert regime is Regime.PROVEN_CONVEX
    else:
        assert regime is Regime.OPEN


def test_regime_examples():
    assert classify_regime(MarketParams(0.05, 0.0, 0.2, 100, 1)) is Regime.ZERO_DIVIDEND
    assert classify_regime(MarketParams(0.06, 0.03, 0.2, 100, 1)) is Regime.PROVEN_CONVEX
    assert classify_regime(MarketParams(0.03, 0.06, 0.2, 100, 1)) is Regime.NON_CONVEX
    assert classify_regime(MarketParams(0.05, 0.04, 0.3, 100, 1)) is Regime.OPEN
    # the hypothesis is an inequality, so the edge belongs to the proven set
    assert classify_regime(MarketParams(0.07, 0.05, 0.2, 100, 1)) is Regime.PROVEN_CONVEX


@pytest.mark.parametrize(
    "kw",
    [
        dict(sigma=0.0),
        dict(sigma=-0.1),
        dict(strike=0.0),
        dict(expiry=0.0),
        dict(r=-0.01),
        dict(q=-0.01),
        dict(r=float("nan")),
        dict(sigma=float("inf")),
    ],
)
def test_invalid_params(kw):
    base = dict(r=0.05, q=0.0, sigma=0.2, strike=100.0, expiry=1.0)
    base.update(kw)
    with pytest.raises(ParameterError):
        MarketParams(**base)


def test_payoff():
    assert payoff(100.0, 100.0) == 0.0
    assert payoff(0.0, 100.0) == 100.0
    assert payoff(150.0, 100.0) == 0.0
    np.testing.assert_array_equal(payoff(np.array([50.0, 120.0]), 100.0), [50.0, 0.0])


def test_boundary_at_expiry():
    assert boundary_at_expiry(MarketParams(0.05, 0.02, 0.2, 100, 1)) == 100.0
    assert boundary_at_expiry(MarketParams(0.02, 0.05, 0.2, 100, 1)) == pytest.approx(40.0)
    assert boundary_at_expiry(MarketParams(0.05, 0.0, 0.2, 100, 1)) == 100.0


def test_european_put():
    p = MarketParams(0.06, 0.03, 0.2, 100.0, 1.0)
    assert european_put(p, 1e9) == pytest.approx(0.0, abs=1e-12)
    assert european_put(MarketParams(0.06, 0.03, 0.2, 100.0, 1.0), 80.0, T=1.0) == 20.0
    # closed form vs the frozen lattice value (lattice error is O(1/N))
    assert european_put(p, 100.0) == pytest.approx(EURO_PUT_N20000, abs=5e-4)


def test_european_put_call_parity_bound():
    p = MarketParams(0.05, 0.02, 0.3, 100.0, 2.0)
    S = np.linspace(20, 300, 15)
    v = european_put(p, S)
    # put value lies between the discounted forward intrinsic and the discounted strike
    lower = np.maximum(p.strike * math.exp(-p.r * 2) - S * math.exp(-p.q * 2), 0.0)
    assert np.all(v >= lower - 1e-12)
    assert np.all(v <= p.strike * math.exp(-p.r * 2) + 1e-12)
