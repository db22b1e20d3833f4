"""Method of moving asymptotes for box-bounded problems with few constraints.

The problem is

    minimize f0(x)  subject to  f_i(x) <= 0,  xmin <= x <= xmax.

Each step builds the separable convex approximation

    f_i(x) ~ r_i + sum_j p_ij / (U_j - x_j) + q_ij / (x_j - L_j)

around the current point and minimizes it over the move box
``[alpha, beta]``. Asymptote rules (fixed, see module constants): on the
first two steps ``L, U = x -/+ ASY_INIT * (xmax - xmin)``; afterwards the
distance of each asymptote to ``x`` is multiplied by ``ASY_DECR`` when the
variable oscillates, by ``ASY_INCR`` when it moves monotonically, and is
kept in ``[ASY_MIN, ASY_MAX] * (xmax - xmin)``. The lower limit is
smaller than the customary 0.01 so that persistent oscillation keeps
tightening the approximation instead of cycling.

Without constraints the subproblem is solved in closed form per variable;
with constraints its concave dual in the multipliers is maximized with
L-BFGS-B. Constraint violations are absorbed by elastic variables ``y_i``
with a linear plus quadratic penalty ``c y + y^2 / 2`` so the subproblem is
always feasible.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.optimize import minimize

ASY_INIT = 0.5
ASY_DECR = 0.7
ASY_INCR = 1.2
ALBEFA = 0.1        # move box keeps this fraction of the distance to each asymptote
RAA0 = 1e-5         # regularization of the convex approximation
MOVE = 0.5          # move limit as a fraction of the variable range
PENALTY = 1e3       # linear penalty on constraint violation
ASY_MIN = 1e-4      # closest asymptote distance, fraction of the variable range
ASY_MAX = 10.0


class MMAError(ValueError):
    pass


@dataclasses.dataclass
class MMAMemory:
    """Asymptote memory between steps."""

    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    k: int = 0

    def to_dict(self) -> dict:
        conv = lambda a: None if a is None else [float(v) for v in a]  # noqa: E731
        return {"xold1": conv(self.xold1), "xold2": conv(self.xold2),
                "low": conv(self.low), "upp": conv(self.upp), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "MMAMemory":
        conv = lambda a: None if a is None else np.asarray(a, dtype=float)  # noqa: E731
        return cls(conv(d["xold1"]), conv(d["xold2"]), conv(d["low"]), conv(d["upp"]), int(d["k"]))


def _asymptotes(x, xmin, xmax, mem: MMAMemory):
    span = xmax - xmin
    if mem.k < 2 or mem.low is None:
        return x - ASY_INIT * span, x + ASY_INIT * span
    osc = (x - mem.xold1) * (mem.xold1 - mem.xold2)
    factor = np.where(osc > 0, ASY_INCR, np.where(osc < 0, ASY_DECR, 1.0))
    low = x - factor * (mem.xold1 - mem.low)
    upp = x + factor * (mem.upp - mem.xold1)
    low = np.clip(low, x - ASY_MAX * span, x - ASY_MIN * span)
    upp = np.clip(upp, x + ASY_MIN * span, x + ASY_MAX * span)
    return low, upp


def _approx(df, x, low, upp, span):
    """Coefficients p, q of the convex approximation for gradient rows ``df``."""
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    pos = np.maximum(df, 0.0)
    neg = np.maximum(-df, 0.0)
    reg = RAA0 / span
    p = ux2 * (1.001 * pos + 0.001 * neg + reg)
    q = xl2 * (0.001 * pos + 1.001 * neg + reg)
    return p, q


def _argmin_separable(p, q, low, upp, alpha, beta):
    """Minimizer of p/(U - x) + q/(x - L) on [alpha, beta] (p, q > 0)."""
    sp, sq = np.sqrt(p), np.sqrt(q)
    x = (sp * low + sq * upp) / (sp + sq)
    return np.clip(x, alpha, beta)


def mma_update(x, f0, df0, fc, dfc, xmin, xmax, mem: MMAMemory, move: float = MOVE):
    """One MMA step; returns the new point (``mem`` is advanced in place).

    Parameters
    ----------
    x : (n,) current point, inside ``[xmin, xmax]``.
    f0, df0 : objective value and gradient.
    fc, dfc : ``(m,)`` constraint values and ``(m, n)`` gradients; ``m`` may be 0.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    xmin = np.asarray(xmin, dtype=float) * np.ones_like(x)
    xmax = np.asarray(xmax, dtype=float) * np.ones_like(x)
    fc = np.atleast_1d(np.asarray(fc, dtype=float))
    dfc = np.asarray(dfc, dtype=float).reshape(len(fc), len(x))
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dfc)) and np.isfinite(f0)
            and np.all(np.isfinite(fc))):
        raise MMAError("objective or constraint gradient is not finite")
    if np.any(xmax <= xmin):
        raise MMAError("invalid bounds: xmax must exceed xmin")
    x = np.clip(x, xmin, xmax)
    span = xmax - xmin
    low, upp = _asymptotes(x, xmin, xmax, mem)
    alpha = np.maximum.reduce([low + ALBEFA * (x - low), x - move * span, xmin])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + move * span, xmax])
    p0, q0 = _approx(df0, x, low, upp, span)
    if len(fc) == 0:
        xnew = _argmin_separable(p0, q0, low, upp, alpha, beta)
    else:
        P, Q = _approx(dfc, x, low, upp, span)
        # constant term so the approximation matches f_i at x
        b = (P / (upp - x) + Q / (x - low)).sum(axis=1) - fc
        xnew = _solve_dual(p0, q0, P, Q, b, low, upp, alpha, beta)
    mem.xold2 = mem.xold1
    mem.xold1 = x.copy()
    mem.low, mem.upp = low, upp
    mem.k += 1
    return np.clip(xnew, xmin, xmax)


def _solve_dual(p0, q0, P, Q, b, low, upp, alpha, beta):
    m = len(b)

    def primal(lam):
        p = p0 + lam @ P
        q = q0 + lam @ Q
        return _argmin_separable(p, q, low, upp, alpha, beta), p, q

    def neg_dual(lam):
        x, p, q = primal(lam)
        # elastic variable minimizing c*y + y^2/2 - lam*y over y >= 0
        y = np.maximum(lam - PENALTY, 0.0)
        g = (P / (upp - x) + Q / (x - low)).sum(axis=1) - b
        W = (p / (upp - x) + q / (x - low)).sum() - lam @ b + PENALTY * y.sum() + 0.5 * y @ y - lam @ y
        return -W, -(g - y)

    res = minimize(neg_dual, np.ones(m), jac=True, method="L-BFGS-B",
                   bounds=[(0.0, None)] * m, options={"ftol": 1e-14, "gtol": 1e-10, "maxiter": 500})
    return primal(res.x)[0]
