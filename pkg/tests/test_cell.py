import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from conformal_infill.cell import (CellConfigError, ComponentParams, MatrixCellSpec,
                                   calibrate_x_cell, cell_from_dict, cell_tdf, pixel_centers,
                                   rasterize, smoothed_density, solid_area, tdf_component,
                                   volume_fraction, x_cell)

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.fixture(scope="module")
def xcell():
    return calibrate_x_cell()


def test_tdf_component_closed_forms():
    c = ComponentParams((0.5, 0.5), 0.2, 0.05, 0.3, 6)
    assert tdf_component(c, (0.5, 0.5)) == pytest.approx(1.0)
    tip = (0.5 + 0.2 * math.cos(0.3), 0.5 + 0.2 * math.sin(0.3))
    assert tdf_component(c, tip) == pytest.approx(0.0, abs=1e-12)
    c0 = ComponentParams((0.5, 0.5), 0.1, 0.05, 0.0, 6)
    assert tdf_component(c0, (0.7, 0.5)) == pytest.approx(1 - 2 ** 6)


def test_component_validation():
    with pytest.raises(CellConfigError):
        ComponentParams((0.5, 0.5), 0.0, 0.1, 0.0)
    with pytest.raises(CellConfigError):
        ComponentParams((0.5, 0.5), 0.1, 0.1, 0.0, exponent=5)
    with pytest.raises(CellConfigError):
        ComponentParams((1.5, 0.5), 0.1, 0.1, 0.0)
    with pytest.raises(CellConfigError):
        cell_tdf(MatrixCellSpec((), 0.3), (0.5, 0.5))
    with pytest.raises(CellConfigError):
        MatrixCellSpec(x_cell(0.05).components, 0.0)
    with pytest.raises(CellConfigError):
        rasterize(x_cell(0.05), 8)


def test_x_cell_sign_examples():
    c = x_cell(0.02)
    assert cell_tdf(c, (0.5, 0.5)) > 0
    assert cell_tdf(c, (0.0, 0.0)) > 0
    assert cell_tdf(c, (0.5, 0.02)) < 0


@settings(max_examples=60, deadline=None)
@given(unit, unit, st.sampled_from([(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1)]))
def test_tdf_periodic(y1, y2, shift):
    c = x_cell(0.06)
    a = cell_tdf(c, (y1, y2))
    b = cell_tdf(c, (y1 + shift[0], y2 + shift[1]))
    assert a == pytest.approx(b, rel=1e-9, abs=1e-9)


def test_raster_agrees_with_tdf_sign(xcell):
    r = rasterize(xcell, 64)
    phi = cell_tdf(xcell, pixel_centers(64))
    assert np.array_equal(r.solid, phi >= 0)
    assert set(np.unique(r.values)) <= {r.rho_min, 1.0}


def test_full_and_empty_rasters():
    full = MatrixCellSpec((ComponentParams((0.5, 0.5), 5.0, 5.0, 0.0),))
    assert volume_fraction(rasterize(full, 32)) == 1.0
    thin = MatrixCellSpec((ComponentParams((0.5, 0.5), 1e-3, 1e-3, 0.0),), 0.01)
    assert volume_fraction(rasterize(thin, 32)) == 0.0


def test_axis_bar_fraction_matches_area():
    b = 0.1
    bar = MatrixCellSpec((ComponentParams((0.5, 0.5), 10.0, b, 0.0),), 0.2)
    # analytic area of the p = 6 superellipse strip over one period
    area, _ = integrate.quad(lambda u: 2 * b * (1 - (u / 10.0) ** 6) ** (1 / 6), -0.5, 0.5)
    assert volume_fraction(rasterize(bar, 200)) == pytest.approx(area, abs=1 / 200)


def test_calibrated_fraction(xcell):
    assert solid_area(xcell) == pytest.approx(0.3, abs=1e-3)
    for n in (128, 200, 256):
        assert abs(volume_fraction(rasterize(xcell, n)) - 0.3) <= 0.02
    assert volume_fraction(rasterize(xcell, 200)) == pytest.approx(0.30, abs=0.01)


def test_x_cell_symmetries(xcell):
    s = rasterize(xcell, 200).solid
    assert np.array_equal(s, np.rot90(s))
    assert np.array_equal(s, s.T)
    assert np.array_equal(s, np.rot90(s, 2).T)


def test_cell_from_dict_roundtrip(xcell):
    assert cell_from_dict({"type": "x", "target_fraction": 0.3}) == xcell
    with pytest.raises(CellConfigError):
        cell_from_dict({"type": "components", "components": []})


def test_smoothed_density_matches_fd(xcell):
    n = 48
    width = 0.5
    rho, drho, _ = smoothed_density(xcell, n, width=width)
    assert rho.min() >= 1e-6 and rho.max() <= 1.0
    step = 1e-6
    comps = list(xcell.components)
    c = comps[0]
    plus = MatrixCellSpec((ComponentParams(c.center, c.half_length, c.half_width + step, c.angle),
                           comps[1]), xcell.target_fraction)
    minus = MatrixCellSpec((ComponentParams(c.center, c.half_length, c.half_width - step, c.angle),
                            comps[1]), xcell.target_fraction)
    fd = (smoothed_density(plus, n, width=width)[0]
          - smoothed_density(minus, n, width=width)[0]) / (2 * step)
    assert np.abs(fd - drho[0, 3]).max() <= 1e-5 * max(1.0, np.abs(fd).max())
