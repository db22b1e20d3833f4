"""Conformal mapping from the harmonic pair and de-homogenization.

The mapping has Jacobian ``J = (1/lambda) R(theta)^T``, i.e.

    dy1 = (cos(theta) dx1 + sin(theta) dx2) / lambda
    dy2 = (-sin(theta) dx1 + cos(theta) dx2) / lambda

which is exact exactly when ``ln(lambda) + i*theta`` is holomorphic. The
fine structure is then the matrix cell composed with ``y(x)/h``.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import MatrixCellSpec, cell_tdf
from .grid import MacroGrid, ScalarField
from .harmonic import BoundaryLoop

log = logging.getLogger(__name__)


class MappingError(RuntimeError):
    pass


class LoopIntegralError(MappingError):
    """Raised when a hole circulation rules out a single-valued mapping."""

    def __init__(self, message: str, values):
        super().__init__(message)
        self.values = values


def jacobian_at(lam, theta) -> np.ndarray:
    """``(1/lambda) * [[cos, sin], [-sin, cos]]``; broadcasts over arrays."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("scaling factor must be positive")
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2) / lam[..., None, None]


def _same_grid(a: ScalarField, b: ScalarField):
    if not a.grid.same_as(b.grid):
        raise ValueError("fields live on different grids")


def cr_residual(lnlam: ScalarField, theta: ScalarField, norm: str = "max") -> tuple[float, float]:
    """Cauchy-Riemann residuals on nodes with all four neighbours.

    ``r1 = d lnlam/dx1 - d theta/dx2`` and ``r2 = d lnlam/dx2 + d theta/dx1``
    by central differences, reduced with the max norm or, for
    ``norm="rms"``, the root mean square over those nodes. Isolated kinks
    of the boundary data dominate the max norm without spoiling the
    mapping, so the rms value is the better health check.
    """
    if norm not in ("max", "rms"):
        raise ValueError(f"unknown norm {norm!r}")
    _same_grid(lnlam, theta)
    g = lnlam.grid
    L, T = lnlam.values, theta.values
    m = g.node_mask
    inner = m[1:-1, 1:-1] & m[1:-1, 2:] & m[1:-1, :-2] & m[2:, 1:-1] & m[:-2, 1:-1]
    dLx = (L[1:-1, 2:] - L[1:-1, :-2]) / (2 * g.hx)
    dLy = (L[2:, 1:-1] - L[:-2, 1:-1]) / (2 * g.hy)
    dTx = (T[1:-1, 2:] - T[1:-1, :-2]) / (2 * g.hx)
    dTy = (T[2:, 1:-1] - T[:-2, 1:-1]) / (2 * g.hy)
    if not inner.any():
        return 0.0, 0.0
    e1 = np.abs(dLx - dTy)[inner]
    e2 = np.abs(dLy + dTx)[inner]
    if norm == "rms":
        return float(np.sqrt(np.mean(e1**2))), float(np.sqrt(np.mean(e2**2)))
    return float(e1.max()), float(e2.max())


def _forms(lnlam, theta):
    """Nodal coefficients of dy1 and dy2: ``(p1, q1, p2, q2)`` with dy = p dx1 + q dx2."""
    inv = np.exp(-lnlam)
    c, s = np.cos(theta), np.sin(theta)
    return inv * c, inv * s, -inv * s, inv * c


def loop_integrals(lnlam: ScalarField, theta: ScalarField, loop) -> tuple[float, float]:
    """Trapezoidal circulation of ``dy1`` and ``dy2`` around a closed loop.

    ``loop`` is a :class:`BoundaryLoop` or an ``(m+1, 2)`` array of grid node
    indices ``(i, j)`` whose first and last entries coincide.
    """
    _same_grid(lnlam, theta)
    g = lnlam.grid
    nodes = loop.nodes if isinstance(loop, BoundaryLoop) else np.asarray(loop, dtype=int)
    i, j = nodes[:, 0], nodes[:, 1]
    if (i.min() < 0 or i.max() > g.nx or j.min() < 0 or j.max() > g.ny
            or not g.node_mask[j, i].all()):
        raise MappingError("loop leaves the field domain")
    L = lnlam.values[j, i]
    T = theta.values[j, i]
    p1, q1, p2, q2 = _forms(L, T)
    dx = np.diff(i) * g.hx
    dy = np.diff(j) * g.hy
    mid = lambda a: 0.5 * (a[:-1] + a[1:])  # noqa: E731
    I1 = float(np.sum(mid(p1) * dx + mid(q1) * dy))
    I2 = float(np.sum(mid(p2) * dx + mid(q2) * dy))
    return I1, I2


@dataclasses.dataclass(frozen=True)
class MappingField:
    y1: ScalarField
    y2: ScalarField
    anchor: tuple[float, float]
    constants: tuple[float, float] = (0.0, 0.0)

    @property
    def grid(self) -> MacroGrid:
        return self.y1.grid

    def shifted(self, c1: float, c2: float) -> "MappingField":
        g = self.grid
        return MappingField(ScalarField(g, self.y1.values + (c1 - self.constants[0])),
                            ScalarField(g, self.y2.values + (c2 - self.constants[1])),
                            self.anchor, (c1, c2))

    def gradient(self) -> np.ndarray:
        """Element-centre gradient ``(ny, nx, 2, 2)`` with rows ``grad y1``, ``grad y2``."""
        g = self.grid
        out = []
        for f in (self.y1.values, self.y2.values):
            fx = 0.5 * ((f[:-1, 1:] - f[:-1, :-1]) + (f[1:, 1:] - f[1:, :-1])) / g.hx
            fy = 0.5 * ((f[1:, :-1] - f[:-1, :-1]) + (f[1:, 1:] - f[:-1, 1:])) / g.hy
            out.append(np.stack([fx, fy], -1))
        return np.stack(out, -2)


def integrate_mapping(lnlam: ScalarField, theta: ScalarField, x0=(0.0, 0.0),
                      constants=(0.0, 0.0), hole_loops=(), loop_tol: float = 1e-3,
                      cr_warn: float = 0.25) -> MappingField:
    """Least-squares potentials of the two mapping forms, anchored at ``x0``.

    Every in-domain grid edge contributes one equation ``y(b) - y(a) =
    trapezoid integral of the form along the edge``; the anchor node (the
    grid node nearest ``x0``) is held at ``constants``.

    Raises :class:`LoopIntegralError` if any hole loop has a circulation
    larger than ``loop_tol`` times its perimeter divided by the smallest
    scaling on it.
    """
    _same_grid(lnlam, theta)
    g = lnlam.grid
    r1, r2 = cr_residual(lnlam, theta, norm="rms")
    if max(r1, r2) > cr_warn:
        log.warning("rms Cauchy-Riemann residual %.3g exceeds %.3g; mapping will not be conformal",
                    max(r1, r2), cr_warn)
    bad = []
    for k, lp in enumerate(hole_loops):
        I = loop_integrals(lnlam, theta, lp)
        j, i = lp.nodes[:, 1], lp.nodes[:, 0]
        scale = lp.perimeter * float(np.exp(-lnlam.values[j, i]).max())
        if max(abs(I[0]), abs(I[1])) > loop_tol * scale:
            bad.append((k, I))
    if bad:
        raise LoopIntegralError(
            "mapping is multi-valued: nonzero circulation on hole loop(s) "
            + ", ".join(f"{k}: ({I[0]:.4g}, {I[1]:.4g})" for k, I in bad), bad)

    nm = g.node_mask
    ids = -np.ones(g.shape, dtype=int)
    ids[nm] = np.arange(nm.sum())
    p1, q1, p2, q2 = _forms(lnlam.values, theta.values)
    e = g.elem_mask
    # horizontal edges (j, i)-(j, i+1) used by an active cell above or below
    h_used = np.zeros((g.ny + 1, g.nx), dtype=bool)
    h_used[:-1] |= e
    h_used[1:] |= e
    v_used = np.zeros((g.ny, g.nx + 1), dtype=bool)
    v_used[:, :-1] |= e
    v_used[:, 1:] |= e
    jh, ih = np.nonzero(h_used)
    jv, iv = np.nonzero(v_used)
    a = np.concatenate([ids[jh, ih], ids[jv, iv]])
    b = np.concatenate([ids[jh, ih + 1], ids[jv + 1, iv]])
    g1 = np.concatenate([0.5 * (p1[jh, ih] + p1[jh, ih + 1]) * g.hx,
                         0.5 * (q1[jv, iv] + q1[jv + 1, iv]) * g.hy])
    g2 = np.concatenate([0.5 * (p2[jh, ih] + p2[jh, ih + 1]) * g.hx,
                         0.5 * (q2[jv, iv] + q2[jv + 1, iv]) * g.hy])
    ne, N = len(a), int(nm.sum())
    D = sp.csr_matrix((np.r_[-np.ones(ne), np.ones(ne)], (np.r_[np.arange(ne), np.arange(ne)],
                                                          np.r_[a, b])), shape=(ne, N))
    X, Y = g.node_coords()
    d2 = np.where(nm, (X - x0[0]) ** 2 + (Y - x0[1]) ** 2, np.inf)
    ja, ia = np.unravel_index(np.argmin(d2), d2.shape)
    anchor = ids[ja, ia]
    free = np.setdiff1d(np.arange(N), [anchor])
    Df = D[:, free].tocsc()
    lu = spla.splu((Df.T @ Df).tocsc())
    out = []
    for gk, ck in ((g1, constants[0]), (g2, constants[1])):
        rhs = Df.T @ (gk - D[:, anchor].toarray().ravel() * ck)
        y = np.empty(N)
        y[anchor] = ck
        y[free] = lu.solve(rhs)
        full = np.full(g.shape, np.nan)
        full[nm] = y
        out.append(ScalarField(g, full))
    return MappingField(out[0], out[1], (float(X[ja, ia]), float(Y[ja, ia])),
                        (float(constants[0]), float(constants[1])))


@dataclasses.dataclass(frozen=True)
class FineRaster:
    """Binary structure on an ``n2 x n1`` pixel grid (row 0 at the bottom)."""

    solid: np.ndarray
    domain: np.ndarray
    extent: tuple[float, float]
    designable: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.solid.shape

    @property
    def n1(self) -> int:
        return self.solid.shape[1]

    @property
    def n2(self) -> int:
        return self.solid.shape[0]

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        return pixel_centers(self.n1, self.n2, self.extent)


def pixel_centers(n1: int, n2: int, extent) -> tuple[np.ndarray, np.ndarray]:
    x = (np.arange(n1) + 0.5) * extent[0] / n1
    y = (np.arange(n2) + 0.5) * extent[1] / n2
    return np.meshgrid(x, y)


def interpolate_nodal(field: np.ndarray, grid: MacroGrid, x, y) -> np.ndarray:
    """Bilinear interpolation of a nodal array at physical points."""
    u = (np.asarray(x) - grid.origin[0]) / grid.hx
    v = (np.asarray(y) - grid.origin[1]) / grid.hy
    i = np.clip(np.floor(u).astype(int), 0, grid.nx - 1)
    j = np.clip(np.floor(v).astype(int), 0, grid.ny - 1)
    s, t = u - i, v - j
    f = field
    return ((1 - s) * (1 - t) * f[j, i] + s * (1 - t) * f[j, i + 1]
            + (1 - s) * t * f[j + 1, i] + s * t * f[j + 1, i + 1])


def domain_pixels(grid: MacroGrid, n1: int, n2: int) -> np.ndarray:
    """Pixels whose centre falls in an active macro cell."""
    X, Y = pixel_centers(n1, n2, grid.extent)
    i = np.clip(np.floor(X / grid.hx).astype(int), 0, grid.nx - 1)
    j = np.clip(np.floor(Y / grid.hy).astype(int), 0, grid.ny - 1)
    return grid.elem_mask[j, i]


def generate_structure(mapping: MappingField, cell: MatrixCellSpec, h: float,
                       resolution: tuple[int, int], solid_mask: np.ndarray | None = None,
                       max_pixels: int = 20_000_000, chunk_rows: int = 64) -> FineRaster:
    """Compose the matrix cell with ``y(x)/h`` on a pixel grid.

    Parameters
    ----------
    resolution : (n1, n2)
        Pixels along x1 and x2.
    solid_mask : (n2, n1) bool array, optional
        Non-designable pixels forced solid.
    """
    if h <= 0:
        raise ValueError("cell size h must be positive")
    n1, n2 = resolution
    if n1 * n2 > max_pixels:
        raise MemoryError(f"fine raster {n1}x{n2} exceeds the cap of {max_pixels} pixels")
    g = mapping.grid
    dom = domain_pixels(g, n1, n2)
    solid = np.zeros((n2, n1), dtype=bool)
    y1n = np.nan_to_num(mapping.y1.values)
    y2n = np.nan_to_num(mapping.y2.values)
    xs = (np.arange(n1) + 0.5) * g.extent[0] / n1
    ys = (np.arange(n2) + 0.5) * g.extent[1] / n2
    for r0 in range(0, n2, chunk_rows):
        rows = slice(r0, min(n2, r0 + chunk_rows))
        X, Y = np.meshgrid(xs, ys[rows])
        Y1 = interpolate_nodal(y1n, g, X, Y) / h
        Y2 = interpolate_nodal(y2n, g, X, Y) / h
        pts = np.stack([np.mod(Y1, 1.0), np.mod(Y2, 1.0)], axis=-1)
        solid[rows] = cell_tdf(cell, pts) >= 0.0
    designable = dom.copy()
    if solid_mask is not None:
        solid |= solid_mask
        designable &= ~solid_mask
    solid &= dom
    return FineRaster(solid, dom, g.extent, designable)


def conformality_defect(mapping: MappingField, lnlam: ScalarField, theta: ScalarField) -> float:
    """Max deviation of the element gradient of ``y`` from ``(1/lambda) R^T``."""
    G = mapping.gradient()
    lam = np.exp(lnlam.element_average())
    J = jacobian_at(np.where(np.isfinite(lam), lam, 1.0), np.nan_to_num(theta.element_average()))
    err = np.abs(G - J).max(axis=(-1, -2))
    m = mapping.grid.elem_mask
    return float(err[m].max()) if m.any() else 0.0
