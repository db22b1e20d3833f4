"""Report figures (PNG) for the command-line pipeline."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import ScalarField  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.grid": False,
    "image.cmap": "viridis",
}


def _save(fig, path) -> None:
    # no version/date metadata so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_history(path, history: list) -> None:
    it = [h["iter"] for h in history]
    c = [h["compliance"] for h in history]
    vf = [h["volume_fraction"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(it, c, "-o", ms=2.5, color="C0")
        ax.set_xlabel("iteration")
        ax.set_ylabel("compliance", color="C0")
        ax2 = ax.twinx()
        ax2.plot(it, vf, "--", color="C1")
        ax2.set_ylabel("volume fraction", color="C1")
        lo, hi = min(vf), max(vf)
        pad = max(0.01, 0.5 * (hi - lo))
        ax2.set_ylim(lo - pad, hi + pad)
        _save(fig, path)


def plot_field(path, field: ScalarField, title: str, vmin=None, vmax=None, cmap=None) -> None:
    g = field.grid
    L, H = g.extent
    x0, y0 = g.origin
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 5.0 * H / L + 0.6))
        im = ax.imshow(np.ma.masked_invalid(field.values), origin="lower",
                       extent=(x0, x0 + L, y0, y0 + H), vmin=vmin, vmax=vmax, cmap=cmap,
                       interpolation="bilinear")
        fig.colorbar(im, ax=ax, shrink=0.8)
        ax.set_title(title)
        ax.set_aspect("equal")
        _save(fig, path)


def plot_structure(path, solid: np.ndarray, extent, title: str = "structure") -> None:
    L, H = extent
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 6.0 * H / L + 0.4))
        ax.imshow(solid, origin="lower", extent=(0, L, 0, H), cmap="gray_r",
                  interpolation="nearest", vmin=0, vmax=1)
        ax.set_title(title)
        ax.set_aspect("equal")
        _save(fig, path)


def plot_boundary_design(path, loops, values, lo: float, hi: float) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.6))
        for k, (loop, f) in enumerate(zip(loops, values)):
            s = loop.design_positions()
            ax.plot(np.r_[s, loop.perimeter], np.r_[f, f[0]], "-o", ms=2.5, label=f"loop {k}")
        ax.axhline(lo, color="0.5", lw=0.8, ls=":")
        ax.axhline(hi, color="0.5", lw=0.8, ls=":")
        ax.set_xlabel("arc length")
        ax.set_ylabel(r"$\ln\lambda_b$")
        if len(loops) > 1:
            ax.legend()
        _save(fig, path)
