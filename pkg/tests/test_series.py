import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conformal_infill.grid import MacroGrid
from conformal_infill.harmonic import BoundaryDesign, boundary_loops
from conformal_infill.series import (CornerCompatibilityError, fourier_coefficients,
                                     rect_series_solution, series_from_design)

ZERO = lambda x: np.zeros_like(np.asarray(x, float))  # noqa: E731


def test_single_mode_coefficients():
    a, b, c, d = fourier_coefficients(lambda x: np.sin(math.pi * x), ZERO, ZERO, ZERO, 1)
    assert a == pytest.approx(1.0, abs=1e-10)
    assert b == pytest.approx(-math.cosh(math.pi) / math.sinh(math.pi), abs=1e-10)
    assert c == pytest.approx(0.0, abs=1e-14) and d == pytest.approx(0.0, abs=1e-14)
    for k in (2, 3, 7):
        a, b, _, _ = fourier_coefficients(lambda x: np.sin(math.pi * x), ZERO, ZERO, ZERO, k)
        assert abs(a) < 1e-12 and abs(b) < 1e-12


def test_single_mode_field():
    # ln(lambda) = sin(pi x1) sinh(pi (1 - x2)) / sinh(pi)
    s = rect_series_solution(lambda x: np.sin(math.pi * x), ZERO, ZERO, ZERO, 0.0, 1.0, 1.0, K=5)
    x1, x2 = np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11))
    exact = np.sin(math.pi * x1) * np.sinh(math.pi * (1 - x2)) / math.sinh(math.pi)
    conj = -np.cos(math.pi * x1) * np.cosh(math.pi * (1 - x2)) / math.sinh(math.pi)
    assert np.abs(s.lnlambda(x1, x2) - exact).max() < 1e-10
    assert np.abs(s.theta(x1, x2) - conj).max() < 1e-10
    assert s.coefficients[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_bilinear_only():
    L, H = 2.0, 1.0
    s = rect_series_solution(lambda x: x / L, lambda x: x / L, ZERO, lambda y: np.ones_like(y),
                             0.3, L, H, K=10)
    assert np.all(s.coefficients == 0.0)
    assert s.r == pytest.approx((0.0, 1 / L, 0.0, 0.0))
    x1, x2 = np.meshgrid(np.linspace(0, L, 9), np.linspace(0, H, 5))
    assert np.allclose(s.lnlambda(x1, x2), x1 / L, atol=1e-14)
    assert np.allclose(s.theta(x1, x2), (x2 - H / 2) / L + 0.3, atol=1e-14)


def test_bilinear_twist_is_harmonic_pair():
    # corner data of x1*x2: bilinear part carries r1, conjugate (x2^2 - x1^2)/2 + const
    L, H = 2.0, 1.0
    s = rect_series_solution(ZERO, lambda x: x * H, ZERO, lambda y: L * y, 0.0, L, H, K=1)
    assert s.r[0] == pytest.approx(1.0)
    x1, x2 = 1.3, 0.4
    e = 1e-6
    dl1 = (s.lnlambda(x1 + e, x2) - s.lnlambda(x1 - e, x2)) / (2 * e)
    dt2 = (s.theta(x1, x2 + e) - s.theta(x1, x2 - e)) / (2 * e)
    dl2 = (s.lnlambda(x1, x2 + e) - s.lnlambda(x1, x2 - e)) / (2 * e)
    dt1 = (s.theta(x1 + e, x2) - s.theta(x1 - e, x2)) / (2 * e)
    assert dl1 == pytest.approx(dt2, abs=1e-8) and dl2 == pytest.approx(-dt1, abs=1e-8)


def test_corner_mismatch():
    with pytest.raises(CornerCompatibilityError):
        rect_series_solution(ZERO, ZERO, lambda y: np.ones_like(y), ZERO, 0.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        rect_series_solution(ZERO, ZERO, ZERO, ZERO, 0.0, 2.0, 1.0, K=0)


def _smooth_case(K=50):
    # Re and Im of z^2/2 with z = x1 + i x2, theta mean subtracted
    L, H = 2.0, 1.0
    s = rect_series_solution(lambda x: 0.5 * x ** 2, lambda x: 0.5 * (x ** 2 - H ** 2),
                             lambda y: -0.5 * y ** 2, lambda y: 0.5 * (L ** 2 - y ** 2), 0.0, L, H, K=K)
    return s, L, H


def test_smooth_data_matches_exact_pair():
    s, L, H = _smooth_case()
    x1, x2 = np.meshgrid(np.linspace(0, L, 101), np.linspace(0, H, 51))
    assert np.abs(s.lnlambda(x1, x2) - 0.5 * (x1 ** 2 - x2 ** 2)).max() < 1e-3
    # mean of x1*x2 over the rectangle is L*H/4
    assert np.abs(s.theta(x1, x2) - (x1 * x2 - L * H / 4)).max() < 1e-3


def test_theta_mean_condition():
    s, L, H = _smooth_case()
    n = 400
    x = (np.arange(n) + 0.5) * L / n
    y = (np.arange(n // 2) + 0.5) * H / (n // 2)
    X, Y = np.meshgrid(x, y)
    assert s.theta(X, Y).mean() == pytest.approx(0.0, abs=1e-5)


def test_high_modes_stay_finite():
    rng = np.random.default_rng(2)
    g = MacroGrid.rectangle(2.0, 1.0, 20, 10)
    loops = boundary_loops(g, 60)
    d = BoundaryDesign(loops, (rng.uniform(-1.6, 1.6, 60),))
    s = series_from_design(d, 2.0, 1.0, K=400)
    x1, x2 = np.meshgrid(np.linspace(0, 2, 41), np.linspace(0, 1, 21))
    assert np.all(np.isfinite(s.lnlambda(x1, x2))) and np.all(np.isfinite(s.theta(x1, x2)))


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_series_converges_to_design_at_boundary_nodes(seed):
    rng = np.random.default_rng(seed)
    g = MacroGrid.rectangle(2.0, 1.0, 20, 10)
    loops = boundary_loops(g, 60)
    d = BoundaryDesign(loops, (rng.uniform(-1.6, 1.6, 60),))
    p = loops[0].point_at(loops[0].design_positions())
    errs = []
    for K in (50, 200):
        s = series_from_design(d, 2.0, 1.0, K=K)
        errs.append(np.abs(s.lnlambda(p[:, 0], p[:, 1]) - d.values[0]).max())
    # corner values are exact; kinks converge slowly but steadily
    assert errs[1] < 0.5 * errs[0]
