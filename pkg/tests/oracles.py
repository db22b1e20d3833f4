"""Independent reference computations used by the tests.

Nothing here imports the package's solvers; each function re-derives its
quantity by a different route so agreement is meaningful.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def laminate_tensor(Ca: np.ndarray, Cb: np.ndarray, fa: float) -> np.ndarray:
    """Effective Voigt stiffness of layers stacked along x2 (interfaces normal to e2).

    Strain e11 and tractions (s22, s12) are continuous across the layers,
    which gives the classical closed form for orthotropic phases aligned
    with the axes.
    """
    fb = 1.0 - fa
    avg = lambda f: fa * f(Ca) + fb * f(Cb)  # noqa: E731
    c22 = 1.0 / avg(lambda C: 1.0 / C[1, 1])
    r = avg(lambda C: C[0, 1] / C[1, 1])
    c12 = r * c22
    c11 = avg(lambda C: C[0, 0] - C[0, 1] ** 2 / C[1, 1]) + r ** 2 * c22
    c66 = 1.0 / avg(lambda C: 1.0 / C[2, 2])
    return np.array([[c11, c12, 0.0], [c12, c22, 0.0], [0.0, 0.0, c66]])


def _q4_stiffness(C: np.ndarray, h: float) -> np.ndarray:
    """Square bilinear element of side ``h``, 2x2 Gauss, nodes CCW from (0, 0)."""
    g = 1.0 / np.sqrt(3.0)
    xi_n = np.array([-1, 1, 1, -1])
    eta_n = np.array([-1, -1, 1, 1])
    K = np.zeros((8, 8))
    for xi in (-g, g):
        for eta in (-g, g):
            dN = np.array([xi_n * (1 + eta * eta_n) / 4, eta_n * (1 + xi * xi_n) / 4]) * (2 / h)
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[0]
            B[1, 1::2] = dN[1]
            B[2, 0::2] = dN[1]
            B[2, 1::2] = dN[0]
            K += B.T @ C @ B * (h / 2) ** 2
    return K


def energy_homogenize(density: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Homogenized Voigt tensor from the strain energy of imposed macro strains.

    The displacement is ``E x + w`` with ``w`` periodic; ``w`` is found by
    minimizing the total energy on a mesh with duplicated boundary nodes
    mapped onto their periodic partners. The tensor follows from energies of
    the unit strains and their pairwise sums (polarization).
    """
    n = density.shape[0]
    h = 1.0 / n
    Ke = _q4_stiffness(base, h)
    j, i = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
    per = np.stack([(b % n) * n + (a % n) for a, b in corners], -1).reshape(-1, 4)
    xy = np.stack([np.stack([a * h, b * h], -1) for a, b in corners], -2).reshape(-1, 4, 2)
    dofs = np.stack([2 * per, 2 * per + 1], -1).reshape(-1, 8)
    rho = density.ravel()
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    K = sp.coo_matrix(((rho[:, None, None] * Ke[None]).ravel(), (rows, cols)),
                      shape=(2 * n * n, 2 * n * n)).tocsc()
    free = np.arange(2, 2 * n * n)
    lu = spla.splu(K[free][:, free])

    def energy(eps):
        G = np.array([[eps[0], 0.5 * eps[2]], [0.5 * eps[2], eps[1]]])
        ue = np.einsum("ab,enb->ena", G, xy).reshape(-1, 8)
        fe = -np.einsum("e,ij,ej->ei", rho, Ke, ue)
        F = np.zeros(2 * n * n)
        np.add.at(F, dofs.ravel(), fe.ravel())
        w = np.zeros(2 * n * n)
        w[free] = lu.solve(F[free])
        tot = ue + w[dofs]
        return float(np.einsum("e,ei,ij,ej->", rho, tot, Ke, tot))

    E = np.eye(3)
    diag = [energy(E[a]) for a in range(3)]
    C = np.diag(diag)
    for a in range(3):
        for b in range(a + 1, 3):
            C[a, b] = C[b, a] = 0.5 * (energy(E[a] + E[b]) - diag[a] - diag[b])
    return C


def central_difference(f, x: np.ndarray, direction: np.ndarray, step: float) -> float:
    return (f(x + step * direction) - f(x - step * direction)) / (2.0 * step)
