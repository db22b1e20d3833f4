"""Separation-of-variables solution of the conjugate pair on a rectangle.

On ``[0, L] x [0, H]`` the boundary data splits into a bilinear part fixed
by the four corner values and four "hat" parts that vanish at the corners.
Each hat part is a sine series; its conjugate follows by swapping sinh and
cosh. All hyperbolic ratios are evaluated in decaying-exponential form so
high modes never overflow.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable

import numpy as np

from .harmonic import BoundaryDesign, interp_boundary

Func = Callable[[np.ndarray], np.ndarray]


class CornerCompatibilityError(ValueError):
    pass


def _simpson(f: np.ndarray, a: float, b: float) -> float:
    n = len(f) - 1
    dx = (b - a) / n
    return dx / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())


def _panels(min_panels: int, segments: int | None) -> int:
    """Even panel count >= ``min_panels``, a multiple of ``2*segments`` when given.

    Aligning panels with the kinks of piecewise-linear data keeps Simpson's
    rule at full order.
    """
    if segments:
        step = 2 * segments
        return step * max(1, math.ceil(min_panels / step))
    return min_panels + (min_panels % 2)


def _sine_coef(f: Func, length: float, k: int, panels: int) -> float:
    x = np.linspace(0.0, length, panels + 1)
    return 2.0 / length * _simpson(f(x) * np.sin(k * math.pi * x / length), 0.0, length)


def fourier_coefficients(psi0_hat: Func, psi1_hat: Func, phi0_hat: Func, phi1_hat: Func,
                         k: int, L: float = 1.0, H: float = 1.0, panels: int = 512,
                         segments: tuple[int | None, int | None] = (None, None)):
    """Series coefficients ``(a_k, b_k, c_k, d_k)`` of mode ``k``.

    ``a_k, c_k`` are the sine coefficients of the bottom and left data;
    ``b_k, d_k`` are chosen so the top and right data are met. The integral
    for ``d_k`` runs over the vertical side ``[0, H]``.
    ``segments`` gives the number of linear pieces along x1 and x2 so that
    panel boundaries hit every kink.
    """
    nx = _panels(panels, segments[0])
    ny = _panels(panels, segments[1])
    A0 = _sine_coef(psi0_hat, L, k, nx)
    A1 = _sine_coef(psi1_hat, L, k, nx)
    C0 = _sine_coef(phi0_hat, H, k, ny)
    C1 = _sine_coef(phi1_hat, H, k, ny)
    kl = k * math.pi * H / L
    kh = k * math.pi * L / H
    # b = (A1 - A0 cosh)/sinh written as A1/sinh - A0 coth
    b = A1 / math.sinh(kl) - A0 / math.tanh(kl) if kl < 700 else -A0
    d = C1 / math.sinh(kh) - C0 / math.tanh(kh) if kh < 700 else -C0
    return A0, b, C0, d


def _ratio_sinh(kq, y, Y):
    """sinh(kq*y)/sinh(kq*Y) for 0 <= y <= Y, stable for large kq."""
    return np.exp(-kq * (Y - y)) * (-np.expm1(-2.0 * kq * y)) / (-math.expm1(-2.0 * kq * Y))


def _ratio_cosh(kq, y, Y):
    """cosh(kq*y)/sinh(kq*Y)."""
    return np.exp(-kq * (Y - y)) * (1.0 + np.exp(-2.0 * kq * y)) / (-math.expm1(-2.0 * kq * Y))


@dataclasses.dataclass(frozen=True)
class RectSeries:
    """Evaluable series pair on ``[0, L] x [0, H]``.

    The mode data are kept as the end-point coefficients of each strip
    (``A0, A1`` bottom/top, ``C0, C1`` left/right) because that form is
    numerically stable; ``coefficients`` reports the equivalent
    ``(a, b, c, d)``.
    """

    L: float
    H: float
    corners: tuple[float, float, float, float]      # psi0(0), psi0(L), psi1(0), psi1(L)
    A0: np.ndarray
    A1: np.ndarray
    C0: np.ndarray
    C1: np.ndarray
    theta_bar: float

    @property
    def r(self) -> tuple[float, float, float, float]:
        p00, p0L, p10, p1L = self.corners
        L, H = self.L, self.H
        return ((p00 - p0L + p1L - p10) / (H * L), (p0L - p00) / L, (p10 - p00) / H, p00)

    @property
    def coefficients(self) -> np.ndarray:
        """``(K, 4)`` array of ``a_k, b_k, c_k, d_k``."""
        out = np.zeros((len(self.A0), 4))
        for i in range(len(self.A0)):
            kl = (i + 1) * math.pi * self.H / self.L
            kh = (i + 1) * math.pi * self.L / self.H
            out[i] = (self.A0[i], self.A1[i] / math.sinh(kl) - self.A0[i] / math.tanh(kl),
                      self.C0[i], self.C1[i] / math.sinh(kh) - self.C0[i] / math.tanh(kh))
        return out

    def lnlambda(self, x1, x2) -> np.ndarray:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        r1, r2, r3, r4 = self.r
        out = r1 * x1 * x2 + r2 * x1 + r3 * x2 + r4
        L, H = self.L, self.H
        for i in range(len(self.A0)):
            k = i + 1
            q = k * math.pi / L
            if self.A0[i] or self.A1[i]:
                out = out + (self.A0[i] * _ratio_sinh(q, H - x2, H)
                             + self.A1[i] * _ratio_sinh(q, x2, H)) * np.sin(q * x1)
            q = k * math.pi / H
            if self.C0[i] or self.C1[i]:
                out = out + (self.C0[i] * _ratio_sinh(q, L - x1, L)
                             + self.C1[i] * _ratio_sinh(q, x1, L)) * np.sin(q * x2)
        return out

    def theta(self, x1, x2) -> np.ndarray:
        x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
        r1, r2, r3, _ = self.r
        L, H = self.L, self.H
        # zero-mean conjugate of the bilinear part
        out = (r1 * (3 * x2 ** 2 - 3 * x1 ** 2 - H ** 2 + L ** 2) / 6.0
               + r2 * (x2 - H / 2) - r3 * (x1 - L / 2) + self.theta_bar)
        for i in range(len(self.A0)):
            k = i + 1
            q = k * math.pi / L
            if self.A0[i] or self.A1[i]:
                out = out + (-self.A0[i] * _ratio_cosh(q, H - x2, H)
                             + self.A1[i] * _ratio_cosh(q, x2, H)) * np.cos(q * x1)
            q = k * math.pi / H
            if self.C0[i] or self.C1[i]:
                out = out - (-self.C0[i] * _ratio_cosh(q, L - x1, L)
                             + self.C1[i] * _ratio_cosh(q, x1, L)) * np.cos(q * x2)
        return out


def rect_series_solution(psi0: Func, psi1: Func, phi0: Func, phi1: Func, theta_bar: float,
                         L: float, H: float, K: int = 50, panels: int = 512,
                         segments: tuple[int | None, int | None] = (None, None),
                         corner_tol: float = 1e-9, truncate: float = 1e-12) -> RectSeries:
    """Series solution for ln(lambda) and theta from the four side functions.

    ``psi0, psi1`` give the bottom and top data as functions of x1;
    ``phi0, phi1`` the left and right data as functions of x2.
    """
    if K < 1:
        raise ValueError("mode count K must be at least 1")
    p00, p0L = float(psi0(np.array(0.0))), float(psi0(np.array(L)))
    p10, p1L = float(psi1(np.array(0.0))), float(psi1(np.array(L)))
    f00, f0H = float(phi0(np.array(0.0))), float(phi0(np.array(H)))
    f10, f1H = float(phi1(np.array(0.0))), float(phi1(np.array(H)))
    for name, a, b in (("phi0(0) vs psi0(0)", f00, p00), ("phi0(H) vs psi1(0)", f0H, p10),
                       ("phi1(0) vs psi0(L)", f10, p0L), ("phi1(H) vs psi1(L)", f1H, p1L)):
        if abs(a - b) > corner_tol:
            raise CornerCompatibilityError(f"corner mismatch {name}: {a} != {b}")

    def hat(f, v0, v1, length):
        return lambda x: f(x) - (v0 + (v1 - v0) * x / length)

    ph0, ph1 = hat(psi0, p00, p0L, L), hat(psi1, p10, p1L, L)
    fh0, fh1 = hat(phi0, p00, p10, H), hat(phi1, p0L, p1L, H)
    # keep >= 16 panels per period of the highest mode
    nx = _panels(max(panels, 16 * K), segments[0])
    ny = _panels(max(panels, 16 * K), segments[1])
    A0, A1, C0, C1 = (np.zeros(K) for _ in range(4))
    for i in range(K):
        k = i + 1
        A0[i] = _sine_coef(ph0, L, k, nx)
        A1[i] = _sine_coef(ph1, L, k, nx)
        C0[i] = _sine_coef(fh0, H, k, ny)
        C1[i] = _sine_coef(fh1, H, k, ny)
        if abs(A0[i]) + abs(A1[i]) + abs(C0[i]) + abs(C1[i]) < truncate:
            A0[i] = A1[i] = C0[i] = C1[i] = 0.0
    return RectSeries(L, H, (p00, p0L, p10, p1L), A0, A1, C0, C1, float(theta_bar))


def series_from_design(design: BoundaryDesign, L: float, H: float, K: int = 50,
                       panels: int = 512) -> RectSeries:
    """Series pair for a boundary design on the counterclockwise rectangle loop.

    The loop starts at the origin and runs bottom, right, top (backwards),
    left (backwards).
    """
    loop = design.loops[0]
    f = design.values[0]
    if len(design.loops) != 1:
        raise ValueError("rectangle series needs a simply connected domain")
    P = loop.perimeter

    def side(s0, sign):
        return lambda x: interp_boundary(loop, f, np.clip(s0 + sign * np.asarray(x, float), 0.0, P))

    psi0 = side(0.0, 1.0)
    phi1 = side(L, 1.0)
    psi1 = side(2 * L + H, -1.0)
    phi0 = lambda x: interp_boundary(loop, f, np.mod(P - np.asarray(x, float), P))  # noqa: E731
    seg = loop.spacing
    sx = int(round(L / seg)) if abs(L / seg - round(L / seg)) < 1e-9 else None
    sy = int(round(H / seg)) if abs(H / seg - round(H / seg)) < 1e-9 else None
    return rect_series_solution(psi0, psi1, phi0, phi1, design.theta_bar, L, H, K,
                                panels=panels, segments=(sx, sy))
