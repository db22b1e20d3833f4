"""Conjugate harmonic fields ln(lambda) and theta on a macro grid.

ln(lambda) solves a Dirichlet problem with the boundary design as data;
theta solves the Neumann problem whose flux is minus the tangential
derivative of that data, with its domain mean pinned to ``theta_bar``.

Both use one vertex-centred finite-volume Laplacian. On nodes whose four
surrounding cells are all in the domain it is exactly the 5-point stencil;
on boundary nodes it integrates the prescribed flux over the half-edges
that bound the node's dual cell, so the flux of each closed loop telescopes
to zero.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import MacroGrid, ScalarField, trace_loops


class HarmonicSolveError(RuntimeError):
    pass


class FluxCompatibilityError(HarmonicSolveError):
    pass


@dataclasses.dataclass(frozen=True)
class BoundaryLoop:
    """One closed boundary curve with equidistant design nodes.

    Attributes
    ----------
    nodes : (m+1, 2) int array
        Grid node indices ``(i, j)`` along the loop, first == last.
    vertices : (m+1, 2) array
        Physical coordinates of ``nodes``.
    n_design : int
        Number of design nodes; node ``j`` sits at arc length ``j * l / n``.
    is_outer : bool
        Outer loops run counterclockwise, holes clockwise.
    """

    nodes: np.ndarray
    vertices: np.ndarray
    n_design: int
    is_outer: bool

    def __post_init__(self):
        if self.n_design < 4:
            raise ValueError(f"a boundary loop needs at least 4 design nodes, got {self.n_design}")
        if not np.array_equal(self.nodes[0], self.nodes[-1]):
            raise ValueError("boundary loop is not closed")

    @property
    def arc(self) -> np.ndarray:
        """Cumulative arc length at every vertex, ``arc[-1] == perimeter``."""
        seg = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def perimeter(self) -> float:
        return float(self.arc[-1])

    @property
    def spacing(self) -> float:
        return self.perimeter / self.n_design

    def design_positions(self) -> np.ndarray:
        return np.arange(self.n_design) * self.spacing

    def point_at(self, s) -> np.ndarray:
        """Physical point(s) at arc length ``s``."""
        s = np.asarray(s, dtype=float)
        arc = self.arc
        return np.stack([np.interp(s, arc, self.vertices[:, 0]),
                         np.interp(s, arc, self.vertices[:, 1])], axis=-1)

    def hat_matrix(self, s) -> np.ndarray:
        """Values ``W[k, j] = omega_j(s_k)`` of the periodic linear hats."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = s / self.spacing
        j = np.floor(t).astype(int)
        w = t - j
        W = np.zeros((len(s), self.n_design))
        rows = np.arange(len(s))
        np.add.at(W, (rows, j % self.n_design), 1.0 - w)
        np.add.at(W, (rows, (j + 1) % self.n_design), w)
        return W


def _check_arc(loop: BoundaryLoop, s):
    s = np.asarray(s, dtype=float)
    tol = 1e-12 * loop.perimeter
    if np.any(s < -tol) or np.any(s > loop.perimeter + tol):
        raise ValueError(f"arc length outside [0, {loop.perimeter}]")
    return np.clip(s, 0.0, loop.perimeter)


def interp_boundary(loop: BoundaryLoop, f: np.ndarray, s):
    """Periodic piecewise-linear interpolation of node values ``f`` at arc length ``s``."""
    s = _check_arc(loop, s)
    out = loop.hat_matrix(s) @ np.asarray(f, dtype=float)
    return out if s.ndim else float(out[0])


def tangential_derivative(loop: BoundaryLoop, f: np.ndarray, s):
    """Slope ``d f / d s`` along the loop direction (piecewise constant).

    At a design node the slope of the segment that starts there is returned.
    """
    s = _check_arc(loop, s)
    f = np.asarray(f, dtype=float)
    j = np.minimum(np.floor(s / loop.spacing).astype(int), loop.n_design - 1)
    out = (f[(j + 1) % loop.n_design] - f[j]) / loop.spacing
    return out if s.ndim else float(out)


@dataclasses.dataclass(frozen=True)
class BoundaryDesign:
    """Boundary values of ln(lambda) on every loop plus the mean rotation."""

    loops: tuple[BoundaryLoop, ...]
    values: tuple[np.ndarray, ...]
    theta_bar: float = 0.0

    def __post_init__(self):
        if not self.loops or not self.loops[0].is_outer:
            raise ValueError("boundary design needs the outer loop first")
        if len(self.values) != len(self.loops):
            raise ValueError("one value array per loop required")
        for lp, v in zip(self.loops, self.values):
            if len(v) != lp.n_design:
                raise ValueError(f"loop has {lp.n_design} design nodes but {len(v)} values")

    @property
    def n_vars(self) -> int:
        return sum(lp.n_design for lp in self.loops)

    def vector(self) -> np.ndarray:
        """Flattened ``F`` followed by ``theta_bar``."""
        return np.concatenate([*map(np.asarray, self.values), [self.theta_bar]])

    def with_vector(self, x: np.ndarray) -> "BoundaryDesign":
        x = np.asarray(x, dtype=float)
        if len(x) != self.n_vars + 1:
            raise ValueError(f"expected {self.n_vars + 1} design values, got {len(x)}")
        parts, k = [], 0
        for lp in self.loops:
            parts.append(x[k:k + lp.n_design].copy())
            k += lp.n_design
        return BoundaryDesign(self.loops, tuple(parts), float(x[-1]))

    def check_bounds(self, lo: float, hi: float, tol: float = 1e-12) -> None:
        for i, v in enumerate(self.values):
            if v.min() < lo - tol or v.max() > hi + tol:
                raise ValueError(f"loop {i}: ln(lambda_b) outside [{lo}, {hi}]")

    @property
    def min_value(self) -> float:
        return min(float(v.min()) for v in self.values)

    @property
    def max_value(self) -> float:
        return max(float(v.max()) for v in self.values)


def boundary_loops(grid: MacroGrid, n_design) -> tuple[BoundaryLoop, ...]:
    """Trace the grid boundary and attach design-node counts.

    ``n_design`` is either one count per loop or a single total that is split
    over the loops in proportion to their perimeters.
    """
    raw = trace_loops(grid)
    verts = [np.column_stack([grid.origin[0] + grid.hx * p[:, 0],
                              grid.origin[1] + grid.hy * p[:, 1]]) for p in raw]
    if np.ndim(n_design) == 0:
        total = int(n_design)
        per = np.array([np.linalg.norm(np.diff(v, axis=0), axis=1).sum() for v in verts])
        counts = np.maximum(4, np.round(total * per / per.sum()).astype(int))
        counts[0] += total - counts.sum()
    else:
        counts = np.asarray(n_design, dtype=int)
        if len(counts) != len(raw):
            raise ValueError(f"domain has {len(raw)} boundary loops, got {len(counts)} node counts")
    return tuple(BoundaryLoop(p, v, int(c), k == 0) for k, (p, v, c) in enumerate(zip(raw, verts, counts)))


def uniform_design(loops, value: float = 0.0, theta_bar: float = 0.0) -> BoundaryDesign:
    return BoundaryDesign(tuple(loops), tuple(np.full(lp.n_design, float(value)) for lp in loops),
                          float(theta_bar))


class HarmonicOperator:
    """Finite-volume Laplacian of a macro grid with its two factorizations.

    The Dirichlet factorization acts on the interior nodes; the Neumann one
    is a bordered system whose last row imposes the weighted mean.
    """

    def __init__(self, grid: MacroGrid, loops: tuple[BoundaryLoop, ...]):
        self.grid = grid
        self.loops = loops
        nm = grid.node_mask.ravel()
        self.active = np.flatnonzero(nm)
        self.index = -np.ones(grid.n_nodes, dtype=int)
        self.index[self.active] = np.arange(len(self.active))
        self.A = self._assemble()
        N = len(self.active)

        # boundary nodes: each loop vertex, with its arc-length position
        bnd = []
        for lp in loops:
            ids = lp.nodes[:-1, 1] * (grid.nx + 1) + lp.nodes[:-1, 0]
            bnd.append(self.index[ids])
        self.boundary = bnd
        all_b = np.concatenate(bnd)
        if len(np.unique(all_b)) != len(all_b):
            raise HarmonicSolveError("a boundary node belongs to two loops")
        is_b = np.zeros(N, dtype=bool)
        is_b[all_b] = True
        self.interior = np.flatnonzero(~is_b)
        self.bnodes = all_b

        A = self.A.tocsr()
        self._A_II = A[self.interior][:, self.interior].tocsc()
        self._A_IB = A[self.interior][:, all_b]
        self._lu_d = spla.splu(self._A_II) if len(self.interior) else None

        w = grid.node_weights().ravel()[self.active]
        self.weights = w
        border = sp.bmat([[self.A, sp.csc_matrix(w[:, None])],
                          [sp.csc_matrix(w[None, :]), None]], format="csc")
        self._border = border
        self._lu_n = spla.splu(border)

    def _assemble(self) -> sp.csc_matrix:
        g = self.grid
        J, I = np.nonzero(g.elem_mask)
        n00 = J * (g.nx + 1) + I
        n10, n01, n11 = n00 + 1, n00 + g.nx + 1, n00 + g.nx + 2
        cx = 0.5 * g.hy / g.hx           # half dual face over edge length, x-edges
        cy = 0.5 * g.hx / g.hy
        pairs = [(n00, n10, cx), (n01, n11, cx), (n00, n01, cy), (n10, n11, cy)]
        rows, cols, vals = [], [], []
        for a, b, c in pairs:
            a, b = self.index[a], self.index[b]
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [np.full(len(a), c)] * 2 + [np.full(len(a), -c)] * 2
        N = len(self.active)
        return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(N, N)).tocsc()

    # -- boundary data --------------------------------------------------
    def boundary_values(self, design: BoundaryDesign) -> np.ndarray:
        return np.concatenate([lp.hat_matrix(lp.arc[:-1]) @ v
                               for lp, v in zip(self.loops, design.values)])

    def dirichlet_matrix(self) -> np.ndarray:
        """``(n_boundary_nodes, n_vars)`` map from F to boundary node values."""
        blocks = [lp.hat_matrix(lp.arc[:-1]) for lp in self.loops]
        return _block_diag(blocks)

    def flux_matrix(self) -> np.ndarray:
        """``(n_boundary_nodes, n_vars)`` map from F to integrated normal flux.

        Node ``k`` collects ``-(g(s_k + d+/2) - g(s_k - d-/2))``, half of each
        adjacent boundary edge.
        """
        blocks = []
        for lp in self.loops:
            arc = lp.arc
            mids = 0.5 * (arc[:-1] + arc[1:])                    # midpoint of edge k -> k+1
            Wm = lp.hat_matrix(mids)
            blocks.append(-(Wm - np.roll(Wm, 1, axis=0)))
        return _block_diag(blocks)

    def boundary_flux(self, design: BoundaryDesign) -> np.ndarray:
        out = []
        for i, (lp, v) in enumerate(zip(self.loops, design.values)):
            arc = lp.arc
            gm = lp.hat_matrix(0.5 * (arc[:-1] + arc[1:])) @ v
            b = -(gm - np.roll(gm, 1))
            total = b.sum()
            if abs(total) > 1e-10 * max(1.0, np.abs(b).sum()):
                raise FluxCompatibilityError(f"loop {i}: net Neumann flux {total:.3e} is not zero")
            out.append(b)
        return np.concatenate(out)

    # -- solves ---------------------------------------------------------
    def solve_dirichlet_nodes(self, gb: np.ndarray) -> np.ndarray:
        """Active-node solution for boundary node values ``gb`` (columns allowed)."""
        gb = np.asarray(gb, dtype=float)
        out = np.zeros((len(self.active),) + gb.shape[1:])
        out[self.bnodes] = gb
        if self._lu_d is not None:
            rhs = -(self._A_IB @ gb)
            out[self.interior] = self._lu_d.solve(np.ascontiguousarray(rhs))
            res = np.linalg.norm(self._A_II @ out[self.interior] - rhs)
            if res > 1e-10 * max(np.linalg.norm(rhs), 1e-300) and res > 1e-14:
                raise HarmonicSolveError(f"Dirichlet solve relative residual {res:.3e} above tolerance")
        return out

    def solve_neumann_nodes(self, flux_b: np.ndarray, theta_bar) -> np.ndarray:
        flux_b = np.asarray(flux_b, dtype=float)
        N = len(self.active)
        rhs = np.zeros((N + 1,) + flux_b.shape[1:])
        rhs[self.bnodes] = flux_b
        rhs[N] = np.asarray(theta_bar) * self.weights.sum()
        sol = self._lu_n.solve(np.ascontiguousarray(rhs))
        res = np.linalg.norm(self._border @ sol - rhs)
        if res > 1e-10 * max(np.linalg.norm(rhs), 1e-300) and res > 1e-14:
            raise HarmonicSolveError(f"Neumann solve relative residual {res:.3e} above tolerance")
        return sol[:N]

    def to_field(self, node_values: np.ndarray) -> ScalarField:
        full = np.full(self.grid.n_nodes, np.nan)
        full[self.active] = node_values
        return ScalarField(self.grid, full.reshape(self.grid.shape))


def _block_diag(blocks) -> np.ndarray:
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def _operator(grid: MacroGrid, design: BoundaryDesign) -> HarmonicOperator:
    for lp in design.loops:
        i, j = lp.nodes[:, 0], lp.nodes[:, 1]
        if i.min() < 0 or i.max() > grid.nx or j.min() < 0 or j.max() > grid.ny:
            raise HarmonicSolveError("boundary design does not belong to this grid")
    return HarmonicOperator(grid, design.loops)


def solve_dirichlet(grid: MacroGrid, design: BoundaryDesign,
                    op: HarmonicOperator | None = None) -> ScalarField:
    """ln(lambda) with the boundary design as Dirichlet data."""
    op = op or _operator(grid, design)
    return op.to_field(op.solve_dirichlet_nodes(op.boundary_values(design)))


def solve_neumann_theta(grid: MacroGrid, design: BoundaryDesign,
                        op: HarmonicOperator | None = None) -> ScalarField:
    """theta with flux ``-d ln(lambda_b)/d tau`` and weighted mean ``theta_bar``."""
    op = op or _operator(grid, design)
    return op.to_field(op.solve_neumann_nodes(op.boundary_flux(design), design.theta_bar))


@dataclasses.dataclass(frozen=True)
class InfluenceMap:
    """Linear maps from the boundary design to theta (and ln(lambda)).

    ``theta_cols[:, v]`` is the response of the active nodes to a unit value
    of design node ``v`` with ``theta_bar = 0``; theta_bar adds a constant.
    """

    op: HarmonicOperator
    theta_cols: np.ndarray
    lnlam_cols: np.ndarray

    @property
    def grid(self) -> MacroGrid:
        return self.op.grid

    def theta_nodes(self, design: BoundaryDesign) -> np.ndarray:
        F = design.vector()
        return self.theta_cols @ F[:-1] + F[-1]

    def theta(self, design: BoundaryDesign) -> ScalarField:
        return self.op.to_field(self.theta_nodes(design))

    def lnlambda(self, design: BoundaryDesign) -> ScalarField:
        return self.op.to_field(self.lnlam_cols @ design.vector()[:-1])

    def element_theta_jacobian(self) -> np.ndarray:
        """``(n_active_elements, n_vars)`` derivative of element-average theta w.r.t. F."""
        g = self.grid
        J, I = np.nonzero(g.elem_mask)
        n00 = J * (g.nx + 1) + I
        corners = [n00, n00 + 1, n00 + g.nx + 1, n00 + g.nx + 2]
        return 0.25 * sum(self.theta_cols[self.op.index[c]] for c in corners)


def precompute_theta_influence(grid: MacroGrid, loops: tuple[BoundaryLoop, ...]) -> InfluenceMap:
    """One factorization, one solve per boundary design node."""
    op = HarmonicOperator(grid, tuple(loops))
    flux = op.flux_matrix()
    theta_cols = op.solve_neumann_nodes(flux, np.zeros(flux.shape[1]))
    lnlam_cols = op.solve_dirichlet_nodes(op.dirichlet_matrix())
    return InfluenceMap(op, theta_cols, lnlam_cols)


def min_feature_size(design: BoundaryDesign, h: float, D_min: float,
                     p_min: float | None = None) -> tuple[float, bool]:
    """Smallest member size ``h * D_min * min lambda_b`` and printability.

    By the maximum principle the smallest scaling anywhere equals the
    smallest boundary value, which for linear hats sits at a design node.
    """
    if not 0.0 < D_min <= 1.0:
        raise ValueError("D_min must lie in (0, 1]")
    lam_min = math.exp(design.min_value)
    d_min = h * D_min * lam_min
    feasible = True if p_min is None else lam_min >= p_min / (h * D_min)
    return d_min, feasible
