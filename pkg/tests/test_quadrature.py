import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as sp_integrate

from leakmarket.quadrature import bisect_increasing, bisect_scalar, fixed_panels, integrate, segment_integrals


def test_polynomial_exact():
    assert integrate(lambda x: x**5 - 2 * x, -1.0, 2.0) == pytest.approx(2**6 / 6 - 1 / 6 - 3.0, abs=1e-13)


def test_reversed_limits_flip_sign():
    f = np.exp
    assert integrate(f, 1.0, 0.0) == pytest.approx(-(math.e - 1.0), rel=1e-13)


def test_kink_with_breakpoint_matches_quad():
    f = lambda x: np.minimum(1.0, 1.0 / np.sqrt(np.maximum(x, 1e-300)))
    ours = integrate(f, 0.0, 4.0, breakpoints=[1.0], rtol=1e-12)
    ref, _ = sp_integrate.quad(lambda x: min(1.0, 1.0 / math.sqrt(x)) if x > 0 else 1.0, 0.0, 4.0, points=[1.0])
    assert ours == pytest.approx(ref, rel=1e-12)
    assert ours == pytest.approx(3.0, rel=1e-12)


def test_integrable_singularity_settles():
    # int_0^1 x^{-1/2} = 2; the panel next to 0 keeps splitting
    assert integrate(lambda x: 1.0 / np.sqrt(x), 0.0, 1.0, rtol=1e-10) == pytest.approx(2.0, rel=1e-6)


def test_fixed_panels_and_segments():
    x, w = fixed_panels(0.0, 2.0, 8)
    assert w.sum() == pytest.approx(2.0, rel=1e-15)
    assert float(w @ np.cos(x)) == pytest.approx(math.sin(2.0), rel=1e-14)
    seg = segment_integrals(lambda t: t, np.array([0.0, 1.0, 3.0]))
    np.testing.assert_allclose(seg, [0.5, 4.0], rtol=1e-14)
    assert segment_integrals(np.sin, np.array([1.0])).size == 0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.0, 1.0))
def test_bisect_increasing_inverts_monotone_map(k, u):
    f = lambda x: np.tanh(k * x)
    target = math.tanh(k * u)
    x = float(bisect_increasing(f, target, 0.0, 1.0, xtol=1e-14))
    assert abs(x - u) <= 1e-12 or abs(math.tanh(k * x) - target) <= 1e-14


def test_bisect_increasing_clamps_outside_range():
    out = bisect_increasing(lambda x: x, np.array([-1.0, 2.0]), 0.0, 1.0, xtol=1e-14)
    np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-13)


def test_bisect_scalar_either_sign():
    assert bisect_scalar(lambda x: x * x - 2.0, 0.0, 2.0, xtol=1e-14) == pytest.approx(math.sqrt(2.0), abs=1e-13)
    assert bisect_scalar(lambda x: 2.0 - x * x, 0.0, 2.0, xtol=1e-14) == pytest.approx(math.sqrt(2.0), abs=1e-13)
