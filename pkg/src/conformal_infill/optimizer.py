"""Compliance minimization over the boundary scaling design.

Design vector layout: ``x = [f_1 .. f_N, theta_bar, d_1 .. d_M]`` where the
``f`` are ln(lambda_b) at the boundary design nodes (all loops, in loop
order) and the optional ``d`` are matrix-cell parameters. theta is linear in
``(f, theta_bar)`` through a precomputed influence matrix, so one iteration
costs one macro FE solve (plus one cell solve when ``d`` is active).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import elements, mma
from .cell import (MatrixCellSpec, ComponentParams, RHO_MIN, heaviside_width, rasterize,
                   smoothed_density, solid_area)
from .fem import MacroModel, Solution, assemble_solve, element_tensors
from .harmonic import (BoundaryDesign, BoundaryLoop, InfluenceMap, precompute_theta_influence,
                       uniform_design)
from .homogenization import PeriodicCellSolver, homogenize, homogenized_from_corrector
from .tensors import rotate_tensor, rotation_derivative

log = logging.getLogger(__name__)

THETA_BAR_BOUNDS = (-0.5 * math.pi, 0.5 * math.pi - 1e-9)
MICRO_NAMES = ("center_x", "center_y", "half_length", "half_width", "angle")
DEFAULT_MICRO_BOUNDS = {
    "center_x": (0.0, 1.0),
    "center_y": (0.0, 1.0),
    "half_length": (0.05, 1.5),
    "half_width": (0.01, 0.3),
    "angle": (-math.pi, math.pi),
}


class OptimizationError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class OptSettings:
    max_iters: int = 100
    rel_tol: float = 1e-4
    window: int = 5
    move: float = 0.1
    cell_resolution: int = 200
    micro: tuple[str, ...] = ()          # cell parameter names to design, e.g. ("half_width",)
    micro_bounds: dict | None = None
    theta_route: str = "fd"              # "fd" or "series" (rectangles only)
    series_modes: int = 50


@dataclasses.dataclass
class OptState:
    """Iteration counter, current point, history and MMA memory."""

    iteration: int
    x: np.ndarray
    n_boundary: int
    history: list = dataclasses.field(default_factory=list)
    mma: mma.MMAMemory = dataclasses.field(default_factory=mma.MMAMemory)
    constraints: list = dataclasses.field(default_factory=list)
    converged: bool = False

    @property
    def F(self) -> np.ndarray:
        return self.x[:self.n_boundary]

    @property
    def theta_bar(self) -> float:
        return float(self.x[self.n_boundary])

    @property
    def D(self) -> np.ndarray:
        return self.x[self.n_boundary + 1:]

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "x": [float(v) for v in self.x],
                "n_boundary": self.n_boundary, "history": self.history,
                "mma": self.mma.to_dict(), "constraints": [float(c) for c in self.constraints],
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict) -> "OptState":
        return cls(int(d["iteration"]), np.asarray(d["x"], dtype=float), int(d["n_boundary"]),
                   list(d["history"]), mma.MMAMemory.from_dict(d["mma"]),
                   list(d["constraints"]), bool(d["converged"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "OptState":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclasses.dataclass(frozen=True)
class Evaluation:
    compliance: float
    gradient: np.ndarray
    volume_fraction: float
    volume_gradient: np.ndarray
    theta_e: np.ndarray
    solution: Solution
    C_hat: np.ndarray


def element_strain_products(model: MacroModel, sol: Solution) -> np.ndarray:
    """``S_e[a, b] = u_e^T K_ab u_e`` so that ``dC/dC_e = -S_e`` (elementwise)."""
    g = model.grid
    ue = sol.u[model.fe.edofs]
    return np.einsum("ei,abij,ej->eab", ue, elements.stiffness_basis(g.hx, g.hy), ue, optimize=True)


def sens_macro(model: MacroModel, sol: Solution, theta_jacobian: np.ndarray, C_hat: np.ndarray,
               theta_e: np.ndarray) -> np.ndarray:
    """Gradient of the compliance w.r.t. ``(f_1 .. f_N, theta_bar)``.

    ``theta_jacobian`` is ``d theta_e / d f`` of shape ``(n_elem, N)``;
    ``d theta_e / d theta_bar = 1``. Non-designable elements carry the base
    tensor and do not contribute.
    """
    if theta_jacobian is None:
        raise OptimizationError("an influence map is required for macro sensitivities")
    S = element_strain_products(model, sol)
    dC = rotation_derivative(C_hat, theta_e)
    g_e = -np.einsum("eab,eab->e", dC, S)
    g_e[model.nondesign_e] = 0.0
    return np.concatenate([theta_jacobian.T @ g_e, [g_e.sum()]])


def cell_energy_weights(solver: PeriodicCellSolver, chi: np.ndarray) -> np.ndarray:
    """Per-pixel ``(E, 3, 3)`` strain-energy sandwich for unit density.

    ``W_e[a, b] = int_e (e_a - B chi_a)^T C (e_b - B chi_b)``; the
    homogenized tensor is ``sum_e rho_e W_e`` at the solution, and its
    derivative w.r.t. a density parameter is ``sum_e (d rho_e) W_e``
    because the corrector is stationary.
    """
    chi_e = solver.element_values(chi)                    # (E, 8, 3)
    area = solver.h * solver.h
    cross = np.einsum("ia,eib->eab", solver.fe0, chi_e)
    quad = np.einsum("eia,ij,ejb->eab", chi_e, solver.Ke0, chi_e, optimize=True)
    return area * solver.base[None] - cross - np.transpose(cross, (0, 2, 1)) + quad


def sens_micro(solver: PeriodicCellSolver, chi: np.ndarray, drho: np.ndarray) -> np.ndarray:
    """``dC_hat / dv`` of shape ``drho.shape[:-2] + (3, 3)``.

    ``drho`` holds pixel-density derivatives ``(..., n, n)`` as returned by
    :func:`smoothed_density`.
    """
    W = cell_energy_weights(solver, chi)
    n = solver.n
    d = drho.reshape(-1, n * n)
    out = np.einsum("ve,eab->vab", d, W)
    out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
    return out.reshape(drho.shape[:-2] + (3, 3))


def homogenize_density(rho: np.ndarray, base: np.ndarray):
    """Homogenized tensor of a gray density field; returns ``(C_hat, solver, chi)``."""
    solver = PeriodicCellSolver(rho, base)
    chi, _ = solver.solve()
    return homogenized_from_corrector(solver, chi), solver, chi


def cell_with_params(cell: MatrixCellSpec, names, values) -> MatrixCellSpec:
    """Copy of ``cell`` with the named parameters of every component replaced."""
    it = iter(values)
    comps = []
    for c in cell.components:
        v = dict(zip(MICRO_NAMES, c.as_vector()))
        for nm in names:
            v[nm] = float(next(it))
        comps.append(ComponentParams((v["center_x"], v["center_y"]), v["half_length"],
                                     v["half_width"], v["angle"], c.exponent))
    return MatrixCellSpec(tuple(comps), cell.target_fraction)


def cell_params(cell: MatrixCellSpec, names) -> np.ndarray:
    out = []
    for c in cell.components:
        v = dict(zip(MICRO_NAMES, c.as_vector()))
        out.extend(v[nm] for nm in names)
    return np.array(out, dtype=float)


def series_theta_jacobian(model: MacroModel, loops, K: int = 50) -> np.ndarray:
    """Element-centre theta response to each boundary node from the rectangle series."""
    from .series import series_from_design
    g = model.grid
    if len(loops) != 1 or not g.elem_mask.all():
        raise OptimizationError("the series route needs a rectangular domain")
    L, H = g.extent
    xc, yc = g.element_centers()
    J, I = model.fe.elem_ij
    x1, x2 = xc[J, I] - g.origin[0], yc[J, I] - g.origin[1]
    base = uniform_design(loops)
    n = base.n_vars
    out = np.zeros((len(x1), n))
    for v in range(n):
        e = np.zeros(n + 1)
        e[v] = 1.0
        out[:, v] = series_from_design(base.with_vector(e), L, H, K=K).theta(x1, x2)
    return out


class DesignProblem:
    """Objective, constraint and gradients for a macro model and a matrix cell.

    Parameters
    ----------
    model : MacroModel
    loops : boundary loops carrying the design nodes.
    cell : matrix cell (its parameters are design variables when
        ``settings.micro`` is non-empty).
    settings : OptSettings
    """

    def __init__(self, model: MacroModel, loops: tuple[BoundaryLoop, ...], cell: MatrixCellSpec,
                 settings: OptSettings = OptSettings(), lnlam_bounds=None):
        self.model = model
        self.loops = tuple(loops)
        self.cell = cell
        self.settings = settings
        self.influence: InfluenceMap = precompute_theta_influence(model.grid, self.loops)
        if settings.theta_route == "series":
            self.theta_jacobian = series_theta_jacobian(model, self.loops, settings.series_modes)
        elif settings.theta_route == "fd":
            self.theta_jacobian = self.influence.element_theta_jacobian()
        else:
            raise ValueError(f"unknown theta route {settings.theta_route!r}")
        self.n_boundary = self.theta_jacobian.shape[1]
        self.lnlam_bounds = tuple(lnlam_bounds or model.lnlam_bounds)
        self.micro = tuple(settings.micro)
        for nm in self.micro:
            if nm not in MICRO_NAMES:
                raise ValueError(f"unknown cell parameter {nm!r}")
        self._width = heaviside_width(cell, settings.cell_resolution)
        if not self.micro:
            hc = homogenize(rasterize(cell, settings.cell_resolution), model.base)
            self._C_hat = hc.C_hat
            self._cell_fraction = solid_area(cell)

    @property
    def n_vars(self) -> int:
        return self.n_boundary + 1 + len(self.micro) * len(self.cell.components)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.lnlam_bounds
        xmin = [lo] * self.n_boundary + [THETA_BAR_BOUNDS[0]]
        xmax = [hi] * self.n_boundary + [THETA_BAR_BOUNDS[1]]
        mb = dict(DEFAULT_MICRO_BOUNDS, **(self.settings.micro_bounds or {}))
        for _ in self.cell.components:
            for nm in self.micro:
                xmin.append(mb[nm][0])
                xmax.append(mb[nm][1])
        return np.array(xmin), np.array(xmax)

    def initial_point(self, theta_bar: float = 0.0, lnlam: float = 0.0) -> np.ndarray:
        x = np.concatenate([np.full(self.n_boundary, lnlam), [theta_bar],
                            cell_params(self.cell, self.micro)])
        xmin, xmax = self.bounds()
        return np.clip(x, xmin, xmax)

    def design(self, x: np.ndarray) -> BoundaryDesign:
        return uniform_design(self.loops).with_vector(np.asarray(x[:self.n_boundary + 1]))

    def current_cell(self, x: np.ndarray) -> MatrixCellSpec:
        if not self.micro:
            return self.cell
        return cell_with_params(self.cell, self.micro, x[self.n_boundary + 1:])

    def theta_elements(self, x: np.ndarray) -> np.ndarray:
        return self.theta_jacobian @ x[:self.n_boundary] + x[self.n_boundary]

    def evaluate(self, x: np.ndarray, gradient: bool = True) -> Evaluation:
        x = np.asarray(x, dtype=float)
        m = self.model
        nd = m.nondesign_e.mean()
        if self.micro:
            cell = self.current_cell(x)
            rho, drho, ties = smoothed_density(cell, self.settings.cell_resolution, RHO_MIN,
                                              width=self._width)
            if ties:
                log.debug("%d pixels at a component tie; sensitivity split evenly", ties)
            C_hat, solver, chi = homogenize_density(rho, m.base)
            cell_frac = float(rho.mean())
        else:
            C_hat, cell_frac = self._C_hat, self._cell_fraction
        theta_e = self.theta_elements(x)
        sol = assemble_solve(m, element_tensors(m, C_hat, theta_e))
        vf = float(nd + (1.0 - nd) * cell_frac)
        grad = np.zeros(self.n_vars)
        vgrad = np.zeros(self.n_vars)
        if gradient:
            grad[:self.n_boundary + 1] = sens_macro(m, sol, self.theta_jacobian, C_hat, theta_e)
            if self.micro:
                idx = [MICRO_NAMES.index(nm) for nm in self.micro]
                dC_hat = sens_micro(solver, chi, drho[:, idx]).reshape(-1, 3, 3)
                S = element_strain_products(m, sol)
                des = ~m.nondesign_e
                for v, dCv in enumerate(dC_hat):
                    dCe = rotate_tensor(dCv, theta_e[des])
                    grad[self.n_boundary + 1 + v] = -np.einsum("eab,eab->", dCe, S[des])
                dvf = drho[:, idx].reshape(len(dC_hat), -1).mean(axis=1)
                vgrad[self.n_boundary + 1:] = (1.0 - nd) * dvf
        return Evaluation(sol.compliance, grad, vf, vgrad, theta_e, sol, C_hat)


def _converged(history: list, tol: float, window: int) -> bool:
    if len(history) < window + 1:
        return False
    c = np.array([h["compliance"] for h in history[-(window + 1):]])
    return bool(np.max(np.abs(np.diff(c)) / np.abs(c[1:])) < tol)


def run_optimization(problem: DesignProblem, state: OptState | None = None,
                     theta_bar0: float = 0.0, checkpoint=None, callback=None) -> OptState:
    """MMA loop until ``max_iters`` updates or a stalled compliance.

    History entry ``k`` describes the design after ``k`` updates, so a run
    with ``max_iters = 0`` evaluates only the initial design.
    """
    s = problem.settings
    xmin, xmax = problem.bounds()
    if state is None:
        state = OptState(0, problem.initial_point(theta_bar0), problem.n_boundary)
    if len(state.x) != problem.n_vars:
        raise OptimizationError("checkpoint does not match the design problem")
    volume_bound = problem.model.volume_bound
    c0 = state.history[0]["compliance"] if state.history else None
    while True:
        ev = problem.evaluate(state.x)
        if not np.isfinite(ev.compliance):
            raise OptimizationError(f"non-finite compliance at iteration {state.iteration}")
        c0 = c0 or ev.compliance
        entry = {"iter": state.iteration, "compliance": ev.compliance,
                 "volume_fraction": ev.volume_fraction,
                 "max_grad": float(np.max(np.abs(ev.gradient)))}
        if state.history and state.history[-1]["iter"] == state.iteration:
            state.history[-1] = entry        # resumed from a checkpoint written at this point
        else:
            state.history.append(entry)
        state.constraints = [ev.volume_fraction / volume_bound - 1.0]
        if callback is not None:
            callback(state, ev)
        if _converged(state.history, s.rel_tol, s.window):
            state.converged = True
            break
        if state.iteration >= s.max_iters:
            break
        if problem.micro:
            fc = np.array(state.constraints)
            dfc = (ev.volume_gradient / volume_bound)[None]
        else:
            fc, dfc = np.zeros(0), np.zeros((0, problem.n_vars))
        # objective scaled by the initial compliance so MMA sees O(1) values
        state.x = mma.mma_update(state.x, ev.compliance / c0, ev.gradient / c0, fc, dfc,
                                 xmin, xmax, state.mma, move=s.move)
        state.iteration += 1
        if np.any(state.x < xmin) or np.any(state.x > xmax):
            raise OptimizationError("design left its bounds after an update")
        if checkpoint is not None:
            state.save(checkpoint)
    if checkpoint is not None:
        state.save(checkpoint)
    return state


def write_history_csv(path, history: list) -> None:
    with open(path, "w") as f:
        f.write("iter,compliance,volume_fraction,max_grad\n")
        for h in history:
            f.write(f"{h['iter']},{h['compliance']:.12g},{h['volume_fraction']:.12g},{h['max_grad']:.12g}\n")
