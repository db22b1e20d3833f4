"""Plane-stress elasticity tensors in Voigt form.

Voigt order is (11, 22, 12) with engineering shear strain, i.e. the strain
vector is ``[e11, e22, 2*e12]``. Under that convention the 3x3 stiffness
entries are exactly the tensor components ``C[ij, kl]`` with no factors of 2.
"""

from __future__ import annotations

import numpy as np

_VOIGT = ((0, 0), (1, 1), (0, 1))
_PAIR_TO_VOIGT = np.array([[0, 2], [2, 1]])


def base_tensor(E: float, nu: float) -> np.ndarray:
    """Plane-stress stiffness of an isotropic material."""
    if E <= 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    f = E / (1.0 - nu ** 2)
    return f * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def voigt_to_tensor(C: np.ndarray) -> np.ndarray:
    """Expand (..., 3, 3) Voigt matrices to (..., 2, 2, 2, 2) tensors."""
    idx = _PAIR_TO_VOIGT
    return C[..., idx[:, :, None, None], idx[None, None, :, :]]


def tensor_to_voigt(T: np.ndarray) -> np.ndarray:
    out = np.empty(T.shape[:-4] + (3, 3))
    for a, (i, j) in enumerate(_VOIGT):
        for b, (k, l) in enumerate(_VOIGT):
            out[..., a, b] = T[..., i, j, k, l]
    return out


def rotation_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def rotate_tensor(C: np.ndarray, theta) -> np.ndarray:
    """Rotate a Voigt stiffness counterclockwise by ``theta``.

    ``theta`` may be an array; the result then has shape ``theta.shape + (3, 3)``.
    """
    R = rotation_matrix(np.asarray(theta, dtype=float))
    T = voigt_to_tensor(np.asarray(C, dtype=float))
    out = np.einsum("...ip,...jq,...ks,...lt,pqst->...ijkl", R, R, R, R, T, optimize=True)
    return tensor_to_voigt(out)


def rotation_derivative(C: np.ndarray, theta) -> np.ndarray:
    """Analytic d/dtheta of :func:`rotate_tensor`."""
    theta = np.asarray(theta, dtype=float)
    R = rotation_matrix(theta)
    c, s = np.cos(theta), np.sin(theta)
    dR = np.stack([np.stack([-s, -c], -1), np.stack([c, -s], -1)], -2)
    T = voigt_to_tensor(np.asarray(C, dtype=float))
    spec = "...ip,...jq,...ks,...lt,pqst->...ijkl"
    out = (np.einsum(spec, dR, R, R, R, T, optimize=True)
           + np.einsum(spec, R, dR, R, R, T, optimize=True)
           + np.einsum(spec, R, R, dR, R, T, optimize=True)
           + np.einsum(spec, R, R, R, dR, T, optimize=True))
    return tensor_to_voigt(out)


def is_spd(C: np.ndarray, tol: float = 0.0) -> bool:
    C = np.asarray(C)
    if not np.allclose(C, C.T, rtol=1e-10, atol=1e-14):
        return False
    return bool(np.linalg.eigvalsh(C).min() > tol)
