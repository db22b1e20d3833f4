"""Non-designable regions and boundary-condition geometry in physical coordinates.

Masks and boundary specs are evaluated on points, so the same description
serves the coarse grid (element centres, boundary nodes) and the fine
raster (pixel centres, pixel-grid nodes).
"""

from __future__ import annotations

import numpy as np

from .grid import MacroGrid, trace_loops


def boundary_segments(grid: MacroGrid) -> np.ndarray:
    """All boundary edges of the domain as ``(k, 2, 2)`` endpoint pairs (merged collinear runs)."""
    segs = []
    for p in trace_loops(grid):
        v = np.column_stack([grid.origin[0] + grid.hx * p[:, 0], grid.origin[1] + grid.hy * p[:, 1]])
        d = np.diff(v, axis=0)
        # keep the vertices where the direction changes
        turn = np.ones(len(d), dtype=bool)
        turn[1:] = np.any(d[1:] != d[:-1], axis=1) | np.any(np.sign(d[1:]) != np.sign(d[:-1]), axis=1)
        starts = np.flatnonzero(turn)
        for a, b in zip(starts, np.r_[starts[1:], len(d)]):
            segs.append((v[a], v[b]))
    return np.array(segs)


def distance_to_segments(x, y, segs: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    best = np.full(x.shape, np.inf)
    for (ax, ay), (bx, by) in segs:
        dx, dy = bx - ax, by - ay
        t = np.clip(((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        best = np.minimum(best, np.hypot(x - ax - t * dx, y - ay - t * dy))
    return best


def solid_mask(specs, grid: MacroGrid, x, y) -> np.ndarray:
    """Evaluate non-designable mask specs at points ``(x, y)``.

    Spec forms: ``{"type": "skin", "thickness": t}`` marks points within ``t``
    of the domain boundary; ``{"type": "box", "box": [x0, y0, x1, y1]}``
    marks a closed rectangle.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(x.shape, dtype=bool)
    segs = None
    tol = 1e-12
    for s in specs or ():
        kind = s["type"]
        if kind == "skin":
            if segs is None:
                segs = boundary_segments(grid)
            out |= distance_to_segments(x, y, segs) <= s["thickness"] + tol
        elif kind == "box":
            x0, y0, x1, y1 = s["box"]
            out |= (x >= x0 - tol) & (x <= x1 + tol) & (y >= y0 - tol) & (y <= y1 + tol)
        else:
            raise ValueError(f"unknown mask type {kind!r}")
    return out


def named_segment(name: str, grid: MacroGrid):
    """Sides of the bounding box by name."""
    L, H = grid.extent
    x0, y0 = grid.origin
    return {
        "left": ((x0, y0), (x0, y0 + H)),
        "right": ((x0 + L, y0), (x0 + L, y0 + H)),
        "bottom": ((x0, y0), (x0 + L, y0)),
        "top": ((x0, y0 + H), (x0 + L, y0 + H)),
    }[name]


def resolve_segment(spec: dict, grid: MacroGrid):
    """Segment ``((ax, ay), (bx, by))`` of a support/load spec.

    ``{"edge": "right", "range": [0.4, 0.6]}`` restricts a named side to a
    coordinate range along it; ``{"segment": [[ax, ay], [bx, by]]}`` is
    explicit.
    """
    if "segment" in spec:
        (ax, ay), (bx, by) = spec["segment"]
        return (float(ax), float(ay)), (float(bx), float(by))
    (ax, ay), (bx, by) = named_segment(spec["edge"], grid)
    if "range" in spec:
        lo, hi = spec["range"]
        if ax == bx:
            ay, by = lo, hi
        else:
            ax, bx = lo, hi
    return (ax, ay), (bx, by)


def points_on_segment(x, y, seg, tol: float) -> np.ndarray:
    (ax, ay), (bx, by) = seg
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return (np.abs(x - ax) <= tol) & (np.abs(y - ay) <= tol)
    t = ((x - ax) * dx + (y - ay) * dy) / L2
    dist = np.abs((x - ax) * dy - (y - ay) * dx) / np.sqrt(L2)
    return (dist <= tol) & (t >= -tol / np.sqrt(L2)) & (t <= 1 + tol / np.sqrt(L2))
