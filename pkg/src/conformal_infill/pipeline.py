"""Pipeline stages behind the command-line subcommands.

Each stage reads its inputs from the configuration and the output
directory, writes its artifacts there and merges its numbers into
``report.json``. Wall-clock timings go to ``timings.json`` only, so the
other artifacts are reproducible byte for byte.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, export, masks, plotting
from .cell import rasterize, solid_area, volume_fraction
from .fem import BoundaryData, fine_scale_solve, structure_volume_fraction
from .harmonic import BoundaryDesign, HarmonicOperator, min_feature_size, uniform_design
from .homogenization import homogenize, write_tensor_csv
from .mapping import FineRaster, cr_residual, domain_pixels, generate_structure, integrate_mapping
from .optimizer import DesignProblem, OptState, run_optimization, write_history_csv

log = logging.getLogger(__name__)

STAGE_CODES = {"config": 3, "homogenize": 4, "fields": 5, "optimize": 6, "dehom": 7, "validate": 8}
HEADLINE_KEYS = ("compliance_homogenized", "compliance_fine", "volume_fraction", "d_min")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        self.code = STAGE_CODES[stage]
        super().__init__(f"[{stage}] {message}")


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """Package version with the short commit id when run from a git checkout."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclasses.dataclass
class Context:
    cfg: cfgmod.RunConfig
    out: Path
    seed: int = 0

    def __post_init__(self):
        self.out = Path(self.out)
        self.out.mkdir(parents=True, exist_ok=True)

    @functools.cached_property
    def grid(self):
        return cfgmod.build_grid(self.cfg)

    @functools.cached_property
    def cell(self):
        return cfgmod.build_cell(self.cfg)

    @functools.cached_property
    def model(self):
        return cfgmod.build_model(self.cfg, self.grid, self.cell)

    @functools.cached_property
    def loops(self):
        return cfgmod.build_loops(self.cfg, self.grid)

    @property
    def h(self) -> float:
        return self.cfg["epsilon"] * self.cfg["reference_length"]

    # -- report handling ----------------------------------------------------

    def _load(self, name: str) -> dict:
        p = self.out / name
        return json.loads(p.read_text()) if p.exists() else {}

    def update_report(self, stage: str, section: dict, headline: dict) -> dict:
        rep = self._load("report.json")
        if rep.get("config_hash") not in (None, self.cfg.hash):
            rep = {}        # stale report from another configuration
        rep["config_hash"] = self.cfg.hash
        rep["version"] = version_string()
        rep["name"] = self.cfg.name
        head = rep.get("headline", dict.fromkeys(HEADLINE_KEYS))
        head.update(headline)
        rep["headline"] = head
        rep.setdefault("stages", {})[stage] = section
        export.write_json(self.out / "report.json", rep)
        return rep

    def record_time(self, stage: str, seconds: float) -> None:
        t = self._load("timings.json")
        t[stage] = round(seconds, 3)
        export.write_json(self.out / "timings.json", t)

    # -- designs ----------------------------------------------------------

    def design_from_dict(self, d: dict) -> BoundaryDesign:
        values = tuple(np.asarray(v, dtype=float) for v in d["values"])
        return BoundaryDesign(self.loops, values, float(d.get("theta_bar", 0.0)))

    def current_design(self) -> BoundaryDesign:
        p = self.out / "design.json"
        if p.exists():
            return self.design_from_dict(json.loads(p.read_text()))
        if "design" in self.cfg.raw:
            return self.design_from_dict(self.cfg["design"])
        return uniform_design(self.loops, 0.0, self.cfg["theta_bar_init"])

    def d_min(self, design: BoundaryDesign) -> float:
        return min_feature_size(design, self.h, self.cell.min_member_size)[0]


def design_to_dict(design: BoundaryDesign) -> dict:
    return {"values": [[float(v) for v in f] for f in design.values],
            "theta_bar": float(design.theta_bar)}


def _timed(stage):
    def deco(fn):
        @functools.wraps(fn)
        def run(ctx: Context, *a, **kw):
            t0 = time.perf_counter()
            try:
                result = fn(ctx, *a, **kw)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - tag any failure with its stage
                raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
            ctx.record_time(stage, time.perf_counter() - t0)
            return result
        return run
    return deco


@_timed("homogenize")
def stage_homogenize(ctx: Context) -> dict:
    raster = rasterize(ctx.cell, ctx.cfg["cell_resolution"])
    hc = homogenize(raster, ctx.model.base)
    write_tensor_csv(ctx.out / "C_hat.csv", hc.C_hat)
    export.raster_to_pgm(ctx.out / "cell.pgm", raster.solid)
    plotting.plot_structure(ctx.out / "cell.png", raster.solid, (1.0, 1.0), "matrix cell")
    section = {"C_hat": hc.C_hat.tolist(), "raster_fraction": volume_fraction(raster),
               "resolution": raster.n, "residual": hc.residual}
    headline = {"volume_fraction": ctx.model.volume_fraction(solid_area(ctx.cell)),
                "d_min": ctx.d_min(uniform_design(ctx.loops))}
    return ctx.update_report("homogenize", section, headline)


def _solve_fields(ctx: Context, design: BoundaryDesign):
    op = HarmonicOperator(ctx.grid, ctx.loops)
    lnlam = op.to_field(op.solve_dirichlet_nodes(op.boundary_values(design)))
    theta = op.to_field(op.solve_neumann_nodes(op.boundary_flux(design), design.theta_bar))
    return lnlam, theta


def _write_fields(ctx: Context, lnlam, theta) -> None:
    lo, hi = ctx.model.lnlam_bounds
    export.write_field_csv(ctx.out / "lnlambda.csv", lnlam)
    export.write_field_csv(ctx.out / "theta.csv", theta)
    export.field_to_pgm(ctx.out / "lnlambda.pgm", lnlam.values, lo, hi)
    export.field_to_pgm(ctx.out / "theta.pgm", theta.values, -math.pi, math.pi)
    plotting.plot_field(ctx.out / "lnlambda.png", lnlam, r"$\ln\lambda$", lo, hi)
    plotting.plot_field(ctx.out / "theta.png", theta, r"$\theta$", cmap="twilight")


@_timed("fields")
def stage_fields(ctx: Context) -> dict:
    design = ctx.current_design()
    lnlam, theta = _solve_fields(ctx, design)
    _write_fields(ctx, lnlam, theta)
    section = {"cr_residual_max": list(cr_residual(lnlam, theta)),
               "cr_residual_rms": list(cr_residual(lnlam, theta, norm="rms")),
               "lnlambda_range": [float(np.nanmin(lnlam.values)),
                                  float(np.nanmax(lnlam.values))]}
    return ctx.update_report("fields", section, {"d_min": ctx.d_min(design)})


@_timed("optimize")
def stage_optimize(ctx: Context, resume: bool = False) -> dict:
    cfg = ctx.cfg
    problem = DesignProblem(ctx.model, ctx.loops, ctx.cell, cfgmod.opt_settings(cfg))
    ckpt = ctx.out / "state.json"
    state = None
    if resume and ckpt.exists():
        state = OptState.load(ckpt)
    else:
        x0 = problem.initial_point(cfg["theta_bar_init"])
        noise = cfg["optimizer"]["init_perturbation"]
        if noise > 0:
            rng = np.random.default_rng(ctx.seed)
            x0[:problem.n_boundary] += noise * rng.standard_normal(problem.n_boundary)
            lo, hi = problem.bounds()
            x0 = np.clip(x0, lo, hi)
        state = OptState(0, x0, problem.n_boundary)
    state = run_optimization(problem, state, checkpoint=ckpt)
    design = problem.design(state.x)
    export.write_json(ctx.out / "design.json", design_to_dict(design))
    write_history_csv(ctx.out / "history.csv", state.history)
    plotting.plot_history(ctx.out / "history.png", state.history)
    lo, hi = problem.lnlam_bounds
    plotting.plot_boundary_design(ctx.out / "design.png", ctx.loops, design.values, lo, hi)
    # ln(lambda) is only needed for output, so it is solved here once
    lnlam, theta = _solve_fields(ctx, design)
    _write_fields(ctx, lnlam, theta)
    last = state.history[-1]
    section = {"iterations": state.iteration, "converged": state.converged,
               "initial_compliance": state.history[0]["compliance"],
               "theta_bar": design.theta_bar, "lnlam_bounds": [lo, hi]}
    headline = {"compliance_homogenized": last["compliance"],
                "volume_fraction": last["volume_fraction"], "d_min": ctx.d_min(design)}
    return ctx.update_report("optimize", section, headline)


@_timed("dehom")
def stage_dehom(ctx: Context) -> dict:
    design = ctx.current_design()
    lnlam, theta = _solve_fields(ctx, design)
    mapping = integrate_mapping(lnlam, theta, hole_loops=ctx.loops[1:])
    n1, n2 = ctx.cfg.raster_resolution
    X, Y = np.meshgrid((np.arange(n1) + 0.5) * ctx.grid.extent[0] / n1,
                       (np.arange(n2) + 0.5) * ctx.grid.extent[1] / n2)
    forced = masks.solid_mask(ctx.cfg["masks"], ctx.grid, X, Y)
    raster = generate_structure(mapping, ctx.cell, ctx.h, (n1, n2), forced,
                                max_pixels=ctx.cfg["fine"]["max_pixels"])
    export.raster_to_pgm(ctx.out / "structure.pgm", raster.solid)
    plotting.plot_structure(ctx.out / "structure.png", raster.solid, raster.extent)
    vf = structure_volume_fraction(raster)
    section = {"raster_resolution": [n1, n2], "structure_volume_fraction": vf,
               "designable_volume_fraction": structure_volume_fraction(raster, raster.designable)}
    return ctx.update_report("dehom", section, {"d_min": ctx.d_min(design)})


@_timed("validate")
def stage_validate(ctx: Context) -> dict:
    p = ctx.out / "structure.pgm"
    if not p.exists():
        raise FileNotFoundError(f"{p} not found; run 'dehom' first")
    solid = export.pgm_to_raster(p)
    n2, n1 = solid.shape
    block = ctx.cfg["fine"]["supersample"]
    raster = FineRaster(solid, domain_pixels(ctx.grid, n1, n2), ctx.grid.extent)
    bc = BoundaryData(tuple(ctx.cfg["supports"]), tuple(ctx.cfg["loads"]))
    c_fs = fine_scale_solve(raster, bc, ctx.model.base, method=ctx.cfg["fine"]["solver"],
                            block=block)
    rep = ctx._load("report.json")
    c_h = rep.get("headline", {}).get("compliance_homogenized")
    if c_h is None:
        c_h = homogenized_compliance(ctx, ctx.current_design())
    section = {"mesh_resolution": [n1 // block, n2 // block], "supersample": block,
               "compliance_homogenized": c_h,
               "relative_gap": abs(c_h - c_fs) / c_fs,
               "structure_volume_fraction": structure_volume_fraction(raster)}
    return ctx.update_report("validate", section, {"compliance_fine": c_fs,
                                                   "compliance_homogenized": c_h})


def homogenized_compliance(ctx: Context, design: BoundaryDesign) -> float:
    problem = DesignProblem(ctx.model, ctx.loops, ctx.cell, cfgmod.opt_settings(ctx.cfg))
    x = np.concatenate([design.vector(), problem.initial_point()[problem.n_boundary + 1:]])
    return problem.evaluate(x, gradient=False).compliance


STAGES = {
    "homogenize": stage_homogenize,
    "fields": stage_fields,
    "optimize": stage_optimize,
    "dehom": stage_dehom,
    "validate": stage_validate,
}
