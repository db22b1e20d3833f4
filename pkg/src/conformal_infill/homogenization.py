"""Periodic cell problem and homogenized stiffness of the matrix cell.

The cell is meshed with one Q4 element per pixel. Periodicity is built into
the numbering (opposite-face nodes share an id), and the translation
nullspace is removed by enforcing a zero mean displacement. A single LU
factorization serves all three unit strains.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elements
from .cell import CellRaster
from .tensors import rotate_tensor, rotation_matrix

log = logging.getLogger(__name__)

# macro unit strains in Voigt order (engineering shear)
UNIT_STRAINS = np.eye(3)


class CellSolveError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class CorrectorField:
    """Correctors for the three unit strains.

    ``values[c, k, j, i]`` is component ``k`` of the corrector for Voigt load
    case ``c`` at periodic node ``(i, j)``; node ``(i, j)`` sits at
    ``(i/n, j/n)``. The shear case uses a unit engineering shear strain.
    """

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    def as_tensor(self) -> np.ndarray:
        """Corrector as ``xi[k, s, t, j, i]`` for the symmetric strain ``e_s (x) e_t``."""
        v = self.values
        out = np.empty((2, 2, 2) + v.shape[2:])
        out[:, 0, 0] = v[0]
        out[:, 1, 1] = v[1]
        out[:, 0, 1] = 0.5 * v[2]
        out[:, 1, 0] = 0.5 * v[2]
        return out

    @classmethod
    def from_tensor(cls, xi: np.ndarray) -> "CorrectorField":
        return cls(np.stack([xi[:, 0, 0], xi[:, 1, 1], xi[:, 0, 1] + xi[:, 1, 0]]))


@dataclasses.dataclass(frozen=True)
class HomogenizedCell:
    C_hat: np.ndarray
    corrector: CorrectorField
    raster: CellRaster
    residual: float = 0.0


def _periodic_connectivity(n: int) -> np.ndarray:
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    ip, jp = (i + 1) % n, (j + 1) % n
    return np.stack([j * n + i, j * n + ip, jp * n + ip, jp * n + i], axis=1)


class PeriodicCellSolver:
    """Factorized periodic stiffness for one density field.

    Parameters
    ----------
    density : (n, n) array
        Stiffness scaling per pixel (row index is Y2).
    base : (3, 3) array
        Voigt stiffness of the solid phase.
    """

    def __init__(self, density: np.ndarray, base: np.ndarray):
        density = np.asarray(density, dtype=float)
        n = density.shape[0]
        if density.shape != (n, n):
            raise ValueError("cell density must be square")
        self.n = n
        self.density = density
        self.base = np.asarray(base, dtype=float)
        self.h = 1.0 / n
        self.conn = _periodic_connectivity(n)
        self.edofs = elements.element_dofs(self.conn)
        self.Ke0 = elements.element_stiffness(self.base, self.h, self.h)
        # int B^T C dA for unit density, (8, 3)
        self.fe0 = self.h * self.h * elements.mean_strain_matrix(self.h, self.h).T @ self.base

        rho = density.ravel()
        ndof = 2 * n * n
        rows = np.repeat(self.edofs, 8, axis=1).ravel()
        cols = np.tile(self.edofs, (1, 8)).ravel()
        vals = (rho[:, None, None] * self.Ke0[None]).ravel()
        K = sp.coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsc()
        self.K = K
        # Pin node 0, factor once, then shift every solution to zero mean.
        # The shift removes exactly the translation nullspace, so the result
        # is the zero-mean corrector without a bordered (dense-row) system.
        self._free = np.arange(2, ndof)
        self.lu = spla.splu(K[self._free][:, self._free].tocsc(), permc_spec="MMD_AT_PLUS_A")

    def load_vectors(self) -> np.ndarray:
        """Right-hand sides (ndof, 3) of the three unit-strain cases."""
        rho = self.density.ravel()
        F = np.zeros((2 * self.n * self.n, 3))
        fe = rho[:, None, None] * self.fe0[None]
        for c in range(3):
            np.add.at(F[:, c], self.edofs.ravel(), fe[:, :, c].ravel())
        return F

    def solve(self, F: np.ndarray | None = None) -> tuple[np.ndarray, float]:
        """Zero-mean solutions (ndof, k) for right-hand sides ``F`` (default: unit strains)."""
        if F is None:
            F = self.load_vectors()
        chi = np.zeros_like(F)
        chi[self._free] = self.lu.solve(np.ascontiguousarray(F[self._free]))
        for comp in range(2):
            chi[comp::2] -= chi[comp::2].mean(axis=0)
        res = np.linalg.norm(self.K @ chi - F) / max(np.linalg.norm(F), 1e-300)
        if not np.isfinite(res) or res > 1e-8:
            raise CellSolveError(f"cell problem solve failed, relative residual {res:.3e}")
        return chi, float(res)

    def element_values(self, chi: np.ndarray) -> np.ndarray:
        """Gather nodal solutions (ndof, 3) to (E, 8, 3)."""
        return chi[self.edofs]


def solve_cell_problem(r: CellRaster, base: np.ndarray) -> CorrectorField:
    solver = PeriodicCellSolver(r.values, base)
    chi, _ = solver.solve()
    return _to_field(chi, r.n)


def _to_field(chi: np.ndarray, n: int) -> CorrectorField:
    # chi rows: node*2 + comp
    v = chi.reshape(n, n, 2, 3)               # j, i, comp, case
    return CorrectorField(np.transpose(v, (3, 2, 0, 1)).copy())


def homogenize(r: CellRaster, base: np.ndarray) -> HomogenizedCell:
    """Homogenized stiffness ``<C> - <C grad(xi)>`` of the raster at J = I."""
    solver = PeriodicCellSolver(r.values, base)
    chi, res = solver.solve()
    C_hat = homogenized_from_corrector(solver, chi)
    return HomogenizedCell(C_hat, _to_field(chi, r.n), r, res)


def homogenized_from_corrector(solver: PeriodicCellSolver, chi: np.ndarray) -> np.ndarray:
    rho = solver.density.ravel()
    area = solver.h * solver.h
    chi_e = solver.element_values(chi)                    # (E, 8, 3)
    mean_C = rho.sum() * area * solver.base
    # sum_e rho_e * int C B chi_e = sum_e rho_e fe0^T chi_e
    corr = np.einsum("e,ia,eib->ab", rho, solver.fe0, chi_e)
    C = mean_C - corr
    return 0.5 * (C + C.T)


def transform_corrector(xi_hat: CorrectorField, lam: float, theta: float) -> CorrectorField:
    """Corrector of a cell rescaled by ``lam`` and rotated by ``theta``.

    Applies ``xi_w^{uv} = lam * R_us R_vt R_wk xi_hat_k^{st}`` nodewise.
    """
    if lam <= 0:
        raise ValueError(f"scaling factor must be positive, got {lam}")
    R = rotation_matrix(theta)
    xi = xi_hat.as_tensor()
    out = lam * np.einsum("us,vt,wk,kst...->wuv...", R, R, R, xi)
    return CorrectorField.from_tensor(out)


def onsite_tensors(C_hat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Homogenized tensors at every point of a rotation field."""
    return rotate_tensor(C_hat, theta)


def write_tensor_csv(path, C: np.ndarray) -> None:
    np.savetxt(path, np.asarray(C), delimiter=",", fmt="%.12e")


def write_corrector_csv(path, xi: CorrectorField) -> None:
    n = xi.n
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cols = [i.ravel() / n, j.ravel() / n]
    header = ["y1", "y2"]
    for c, name in enumerate(("11", "22", "12")):
        for k in range(2):
            cols.append(xi.values[c, k].ravel())
            header.append(f"xi{k + 1}_{name}")
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(header),
               comments="", fmt="%.10e")
