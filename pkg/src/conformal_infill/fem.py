"""Plane-stress Q4 analysis on the coarse (homogenized) and fine (pixel) grids."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elements, masks
from .cell import RHO_MIN
from .grid import MacroGrid

log = logging.getLogger(__name__)


class FEMError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class BoundaryData:
    """Supports and tractions in physical coordinates.

    supports : list of dict
        ``{"edge"|"segment"|"point": ..., "dofs": "xy"|"x"|"y"}``.
    loads : list of dict
        ``{"edge"|"segment": ..., "traction": [tx, ty]}``; traction is force
        per unit length (unit thickness).
    """

    supports: tuple
    loads: tuple


class StructuredFE:
    """Q4 mesh of the active cells of a grid with fixed sparsity pattern."""

    def __init__(self, grid: MacroGrid, bc: BoundaryData):
        self.grid = grid
        self.bc = bc
        nm = grid.node_mask.ravel()
        self.node_ids = -np.ones(grid.n_nodes, dtype=int)
        self.node_ids[nm] = np.arange(nm.sum())
        self.n_nodes = int(nm.sum())
        self.ndof = 2 * self.n_nodes
        J, I = np.nonzero(grid.elem_mask)
        self.elem_ij = (J, I)
        conn = elements.grid_connectivity(grid.nx, grid.ny)[J * grid.nx + I]
        self.conn = self.node_ids[conn]
        self.edofs = elements.element_dofs(self.conn)
        self.n_elem = len(self.conn)
        self._rows = np.repeat(self.edofs, 8, axis=1).ravel()
        self._cols = np.tile(self.edofs, (1, 8)).ravel()
        self.fixed = self._fixed_dofs()
        if len(self.fixed) == 0:
            raise FEMError("no Dirichlet supports found on the mesh")
        self.free = np.setdiff1d(np.arange(self.ndof), self.fixed)
        self.F = self._load_vector()

    def _node_xy(self):
        X, Y = self.grid.node_coords()
        m = self.grid.node_mask
        return X[m], Y[m]

    def _fixed_dofs(self) -> np.ndarray:
        x, y = self._node_xy()
        tol = 1e-9 * max(self.grid.hx, self.grid.hy) + 1e-12
        bnd = self._boundary_nodes()
        fixed = []
        for s in self.bc.supports:
            if "point" in s:
                px, py = s["point"]
                d = np.where(bnd, np.hypot(x - px, y - py), np.inf)
                sel = np.array([int(np.argmin(d))])
            else:
                seg = masks.resolve_segment(s, self.grid)
                sel = np.flatnonzero(bnd & masks.points_on_segment(x, y, seg, tol))
            if len(sel) == 0:
                raise FEMError(f"support {s} selects no boundary node")
            dofs = s.get("dofs", "xy")
            if "x" in dofs:
                fixed.append(2 * sel)
            if "y" in dofs:
                fixed.append(2 * sel + 1)
        return np.unique(np.concatenate(fixed)) if fixed else np.array([], dtype=int)

    def _boundary_nodes(self) -> np.ndarray:
        g = self.grid
        e = np.pad(g.elem_mask, 1)
        full = np.zeros(g.shape, dtype=bool)
        # a node is on the boundary if some but not all of its 4 cells are active
        cnt = (e[:-1, :-1].astype(int) + e[:-1, 1:] + e[1:, :-1] + e[1:, 1:])
        full[:] = (cnt > 0) & (cnt < 4)
        return full[g.node_mask]

    def _boundary_edges(self):
        """Boundary edges as (node_a, node_b) local ids with endpoint coordinates."""
        g = self.grid
        e = np.pad(g.elem_mask, 1)
        J, I = np.nonzero(g.elem_mask)
        ej, ei = J + 1, I + 1
        n00 = J * (g.nx + 1) + I
        edges = []
        for missing, a, b in ((~e[ej - 1, ei], n00, n00 + 1),
                              (~e[ej, ei + 1], n00 + 1, n00 + g.nx + 2),
                              (~e[ej + 1, ei], n00 + g.nx + 2, n00 + g.nx + 1),
                              (~e[ej, ei - 1], n00 + g.nx + 1, n00)):
            edges.append(np.stack([a[missing], b[missing]], 1))
        E = np.concatenate(edges)
        return self.node_ids[E[:, 0]], self.node_ids[E[:, 1]]

    def _load_vector(self) -> np.ndarray:
        F = np.zeros(self.ndof)
        if not self.bc.loads:
            return F
        x, y = self._node_xy()
        a, b = self._boundary_edges()
        tol = 1e-9 * max(self.grid.hx, self.grid.hy) + 1e-12
        for ld in self.bc.loads:
            seg = masks.resolve_segment(ld, self.grid)
            (sx, sy), (tx_, ty_) = seg
            L = np.hypot(tx_ - sx, ty_ - sy)
            ux, uy = (tx_ - sx) / L, (ty_ - sy) / L
            # boundary edges lying on the segment's supporting line
            dist = lambda px, py: np.abs((px - sx) * uy - (py - sy) * ux)  # noqa: E731
            on = (dist(x[a], y[a]) <= tol) & (dist(x[b], y[b]) <= tol)
            traction = np.asarray(ld["traction"], dtype=float)
            applied = 0.0
            for na, nb in zip(a[on], b[on]):
                ta = (x[na] - sx) * ux + (y[na] - sy) * uy
                tb = (x[nb] - sx) * ux + (y[nb] - sy) * uy
                le = abs(tb - ta)
                lo, hi = max(min(ta, tb), 0.0), min(max(ta, tb), L)
                if hi <= lo:
                    continue
                # integrals of the two linear shape functions over [lo, hi]
                t1 = max(ta, tb)
                n_first = ((t1 - lo) ** 2 - (t1 - hi) ** 2) / (2 * le)
                n_second = (hi - lo) - n_first
                w_a, w_b = (n_first, n_second) if ta < tb else (n_second, n_first)
                F[2 * na:2 * na + 2] += traction * w_a
                F[2 * nb:2 * nb + 2] += traction * w_b
                applied += hi - lo
            if applied < 1e-12:
                raise FEMError(f"load {ld} does not touch the domain boundary")
        return F

    def stiffness(self, Ke: np.ndarray) -> sp.csc_matrix:
        """Global matrix from element matrices ``(E, 8, 8)``."""
        K = sp.coo_matrix((Ke.ravel(), (self._rows, self._cols)), shape=(self.ndof, self.ndof))
        return K.tocsc()

    def solve(self, Ke: np.ndarray, F: np.ndarray | None = None,
              method: str = "direct") -> np.ndarray:
        F = self.F if F is None else F
        K = self.stiffness(Ke)
        Kf = K[self.free][:, self.free].tocsc()
        u = np.zeros(self.ndof)
        if method == "direct":
            try:
                u[self.free] = spla.splu(Kf, permc_spec="MMD_AT_PLUS_A").solve(F[self.free])
            except RuntimeError as exc:
                raise FEMError(f"stiffness matrix is singular: {exc}") from exc
        elif method == "amg":
            import pyamg
            # rigid-body modes as near-nullspace: two translations, one rotation
            x, y = self._node_xy()
            B = np.zeros((self.ndof, 3))
            B[0::2, 0] = 1.0
            B[1::2, 1] = 1.0
            B[0::2, 2] = -y
            B[1::2, 2] = x
            ml = pyamg.smoothed_aggregation_solver(
                Kf.tocsr(), B=B[self.free], symmetry="hermitian",
                strength=("symmetric", {"theta": 0.0}), smooth="jacobi", max_coarse=2000)
            res: list = []
            u[self.free] = ml.solve(F[self.free], tol=1e-9, accel="cg", residuals=res, maxiter=5000)
            if res[-1] > 1e-8 * res[0]:
                raise FEMError(f"AMG-CG did not converge (residual ratio {res[-1] / res[0]:.2e})")
        else:
            raise ValueError(f"unknown solver {method!r}")
        if not np.all(np.isfinite(u)):
            raise FEMError("non-finite displacements; check supports")
        rel = np.linalg.norm(Kf @ u[self.free] - F[self.free]) / max(np.linalg.norm(F[self.free]), 1e-300)
        if rel > 1e-6:
            raise FEMError(f"linear solve residual {rel:.2e} too large; stiffness may be singular")
        return u


@dataclasses.dataclass
class MacroModel:
    """Coarse design problem: grid, boundary data, material, masks and bounds."""

    grid: MacroGrid
    bc: BoundaryData
    base: np.ndarray
    nondesign: np.ndarray                 # (ny, nx) bool, solid non-designable cells
    epsilon: float = 0.05
    reference_length: float = 1.0
    lnlam_bounds: tuple[float, float] = (-np.log(5.0), np.log(5.0))
    volume_bound: float = 1.0
    mask_specs: tuple = ()

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        lo, hi = self.lnlam_bounds
        if not lo < hi:
            raise ValueError("ln(lambda_b) bounds must satisfy lo < hi")
        self.fe = StructuredFE(self.grid, self.bc)
        J, I = self.fe.elem_ij
        self.nondesign_e = self.nondesign[J, I]

    @property
    def cell_size(self) -> float:
        """Physical period ``h`` of the unscaled cell."""
        return self.epsilon * self.reference_length

    def volume_fraction(self, cell_fraction: float) -> float:
        nd = self.nondesign_e.mean()
        return float(nd + (1.0 - nd) * cell_fraction)


@dataclasses.dataclass(frozen=True)
class Solution:
    u: np.ndarray
    compliance: float
    energy: np.ndarray            # per element u_e^T K_e u_e
    element_tensors: np.ndarray

    @property
    def energy_compliance(self) -> float:
        return float(self.energy.sum())


def element_tensors(model: MacroModel, C_hat: np.ndarray, theta_e: np.ndarray) -> np.ndarray:
    """Rotated homogenized tensors, base tensor on non-designable cells."""
    from .tensors import rotate_tensor
    C = rotate_tensor(C_hat, theta_e)
    C[model.nondesign_e] = model.base
    return C


def assemble_solve(model: MacroModel, C_e: np.ndarray) -> Solution:
    """Solve with one Voigt tensor per active element (row-major order)."""
    g = model.grid
    C_e = np.asarray(C_e, dtype=float)
    if C_e.shape != (model.fe.n_elem, 3, 3):
        raise ValueError(f"expected {model.fe.n_elem} element tensors, got shape {C_e.shape}")
    Ke = elements.element_stiffness(C_e, g.hx, g.hy)
    u = model.fe.solve(Ke)
    ue = u[model.fe.edofs]
    energy = np.einsum("ei,eij,ej->e", ue, Ke, ue)
    comp = float(model.fe.F @ u)
    if comp < -1e-12 * max(1.0, abs(comp)):
        raise FEMError("negative compliance; stiffness is not positive definite")
    return Solution(u, comp, energy, C_e)


def _supported_region(solid: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Solid pixels plus a one-pixel ersatz ring inside the domain.

    Void pixels farther from the solid only add ``rho_min`` stiffness in
    regions that carry no load; dropping them shrinks the system without
    changing the compliance beyond that level.
    """
    return ndi.binary_dilation(solid, structure=np.ones((3, 3), dtype=bool)) & domain


def block_density(solid: np.ndarray, domain: np.ndarray, factor: int):
    """Solid area fraction of every ``factor x factor`` pixel block.

    Returns the block densities and the blocks whose centre pixel lies in
    the domain.
    """
    if factor == 1:
        return solid.astype(float), domain
    n2, n1 = solid.shape
    if n1 % factor or n2 % factor:
        raise ValueError(f"raster {n1}x{n2} is not divisible into {factor}x{factor} blocks")
    shape = (n2 // factor, factor, n1 // factor, factor)
    rho = (solid & domain).reshape(shape).mean(axis=(1, 3))
    mid = factor // 2
    return rho, domain[mid::factor, mid::factor]


def fine_scale_solve(raster, bc: BoundaryData, base: np.ndarray, rho_min: float = RHO_MIN,
                     method: str = "auto", max_dofs: int = 3_000_000,
                     direct_limit: int = 250_000, block: int = 1) -> float:
    """Compliance of a pixel structure with one Q4 element per ``block x block`` pixels.

    With ``block = 1`` every element is a pixel of the binary raster; larger
    blocks carry their solid area fraction as a linear stiffness scaling,
    which keeps members thinner than an element connected. Elements outside
    the domain are left out of the mesh and void ones inside it carry
    ``rho_min`` (see :func:`_supported_region` for the elements actually
    assembled). Material pieces are edge-connected element sets; pieces
    that reach no support, or reach the rest only through an element corner
    (a hinge), are turned into void. A load that then acts on no material
    is an error.
    """
    density, domain = block_density(raster.solid, raster.domain, block)
    n2, n1 = density.shape
    L, H = raster.extent
    solid = (density > 0.0) & domain
    labels, _ = ndi.label(solid)
    no_material = FEMError("no solid material at the supports")
    if not solid.any():
        raise no_material
    grid = MacroGrid(n1, n2, L / n1, H / n2, _supported_region(solid, domain))
    try:
        fe = StructuredFE(grid, BoundaryData(bc.supports, ()))
    except FEMError as exc:
        raise no_material from exc
    J, I = fe.elem_ij
    touches = np.isin(fe.edofs, fe.fixed).any(axis=1)
    held = np.unique(labels[J, I][touches])
    held = held[held > 0]
    if held.size == 0:
        raise no_material
    solid = np.isin(labels, held)
    unsupported = FEMError("a load acts on a piece of the structure with no support")
    grid = MacroGrid(n1, n2, L / n1, H / n2, _supported_region(solid, domain))
    try:
        fe = StructuredFE(grid, bc)
    except FEMError as exc:
        # the loaded edge went away with the piece it belonged to
        raise unsupported from exc
    J, I = fe.elem_ij
    loaded = np.flatnonzero(fe.F)
    if not np.isin(loaded, fe.edofs[solid[J, I]]).all():
        raise unsupported
    if fe.ndof > max_dofs:
        raise MemoryError(f"fine mesh has {fe.ndof} dofs, above the cap of {max_dofs}")
    rho = np.where(solid[J, I], np.maximum(density[J, I], rho_min), rho_min)
    Ke0 = elements.element_stiffness(base, grid.hx, grid.hy)
    Ke = rho[:, None, None] * Ke0[None]
    if method == "auto":
        method = "direct" if fe.ndof <= direct_limit else "amg"
    log.info("fine-scale solve: %d dofs, %s", fe.ndof, method)
    u = fe.solve(Ke, method=method)
    return float(fe.F @ u)


def structure_volume_fraction(raster, region: np.ndarray | None = None) -> float:
    """Solid pixels over in-domain pixels (optionally restricted to ``region``)."""
    dom = raster.domain if region is None else (raster.domain & region)
    n = int(dom.sum())
    return float(np.count_nonzero(raster.solid & dom)) / n if n else 0.0
