"""Bilinear quadrilateral (Q4) element matrices for rectangular elements.

Local node order is counterclockwise from the lower-left corner; each node
carries (u1, u2), so element dof ``2*k + d`` is component ``d`` of node ``k``.
"""

from __future__ import annotations

import functools

import numpy as np

_G = 1.0 / np.sqrt(3.0)
GAUSS_POINTS = [(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)]
NODE_XI = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def shape_gradients(xi: float, eta: float, hx: float, hy: float) -> np.ndarray:
    """Physical gradients (2, 4) of the four shape functions."""
    dxi = NODE_XI[:, 0] * (1.0 + NODE_XI[:, 1] * eta) / 4.0
    deta = NODE_XI[:, 1] * (1.0 + NODE_XI[:, 0] * xi) / 4.0
    return np.vstack([dxi * 2.0 / hx, deta * 2.0 / hy])


def strain_matrix(xi: float, eta: float, hx: float, hy: float) -> np.ndarray:
    """Voigt strain-displacement matrix (3, 8), engineering shear."""
    g = shape_gradients(xi, eta, hx, hy)
    B = np.zeros((3, 8))
    B[0, 0::2] = g[0]
    B[1, 1::2] = g[1]
    B[2, 0::2] = g[1]
    B[2, 1::2] = g[0]
    return B


@functools.lru_cache(maxsize=None)
def stiffness_basis(hx: float, hy: float) -> np.ndarray:
    """``K[a, b]`` (3, 3, 8, 8) with ``Ke = sum_ab C[a, b] * K[a, b]``."""
    w = hx * hy / 4.0
    K = np.zeros((3, 3, 8, 8))
    for xi, eta in GAUSS_POINTS:
        B = strain_matrix(xi, eta, hx, hy)
        K += w * np.einsum("ai,bj->abij", B, B)
    K.setflags(write=False)
    return K


@functools.lru_cache(maxsize=None)
def mean_strain_matrix(hx: float, hy: float) -> np.ndarray:
    """Element average of B (3, 8); ``int B dA = hx*hy * Bbar``."""
    B = sum(strain_matrix(xi, eta, hx, hy) for xi, eta in GAUSS_POINTS) / 4.0
    B.setflags(write=False)
    return B


def element_stiffness(C: np.ndarray, hx: float, hy: float) -> np.ndarray:
    """Stiffness (..., 8, 8) for constant element tensor(s) ``C`` (..., 3, 3)."""
    return np.einsum("...ab,abij->...ij", C, stiffness_basis(hx, hy))


def grid_connectivity(nx: int, ny: int) -> np.ndarray:
    """Node ids (ny*nx, 4) of a structured grid with (nx+1)*(ny+1) nodes.

    Node id is ``j*(nx+1) + i`` for column ``i`` and row ``j``; elements are
    numbered row-major with row 0 at the bottom.
    """
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    return np.stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=1)


def element_dofs(conn: np.ndarray) -> np.ndarray:
    """Expand node connectivity (E, 4) to dof connectivity (E, 8)."""
    return np.stack([2 * conn, 2 * conn + 1], axis=2).reshape(len(conn), 8)
