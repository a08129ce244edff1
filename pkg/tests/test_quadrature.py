import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphereplane.quadrature import QuadratureRule, gauss_laguerre


@pytest.mark.parametrize("n", [5, 20, 50])
def test_laguerre_integrates_polynomials_exactly(n):
    t, ln_w = gauss_laguerre(n)
    w = np.exp(ln_w)
    for k in range(0, min(2 * n - 1, 30)):
        assert np.sum(w * t**k) == pytest.approx(math.factorial(k), rel=1e-11)


@given(n=st.integers(1, 3000))
def test_weights_sum_to_one(n):
    t, ln_w = gauss_laguerre(n)
    assert np.all(np.diff(t) > 0) and t[0] > 0
    m = ln_w.max()
    assert m + math.log(np.sum(np.exp(ln_w - m))) == pytest.approx(0.0, abs=1e-11)


def test_high_order_log_weights_are_finite():
    t, ln_w = gauss_laguerre(4000)
    assert np.all(np.isfinite(ln_w))
    assert ln_w[-1] < -1000  # far below the double range as a plain weight


def test_rule_object():
    r = QuadratureRule(10)
    assert r.doubled().order == 20
    assert np.allclose(r.weights, np.exp(r.ln_weights))
    assert QuadratureRule.for_lmax(10).order == 50
    assert QuadratureRule.for_lmax(400).order == 200
    with pytest.raises(ValueError):
        QuadratureRule(0)
    with pytest.raises(ValueError):
        gauss_laguerre(0)
