"""Structured macro grid over an axis-aligned design domain.

The domain is a union of grid cells selected by an element mask, so every
boundary runs along grid lines. Boundary loops are traced with the domain on
the left: the outer loop comes out counterclockwise and every hole clockwise.
"""

from __future__ import annotations

import dataclasses
from collections import defaultdict

import numpy as np


class DomainError(ValueError):
    """Raised for masks that do not describe a valid design domain."""


@dataclasses.dataclass(frozen=True)
class MacroGrid:
    """Rectangular grid of ``nx * ny`` cells with an active-cell mask.

    Node ``(i, j)`` sits at ``origin + (i*hx, j*hy)`` and has flat id
    ``j*(nx+1) + i``. ``elem_mask[j, i]`` marks cell ``(i, j)`` as in-domain.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    elem_mask: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.hx <= 0 or self.hy <= 0:
            raise DomainError("grid needs positive cell counts and spacings")
        if self.elem_mask.shape != (self.ny, self.nx):
            raise DomainError(f"element mask shape {self.elem_mask.shape} != {(self.ny, self.nx)}")
        if not self.elem_mask.any():
            raise DomainError("domain mask selects no cells")

    @classmethod
    def rectangle(cls, L: float, H: float, nx: int, ny: int) -> "MacroGrid":
        return cls(nx, ny, L / nx, H / ny, np.ones((ny, nx), dtype=bool))

    @classmethod
    def from_boxes(cls, L: float, H: float, nx: int, ny: int,
                   cutouts=()) -> "MacroGrid":
        """Rectangle ``[0, L] x [0, H]`` minus axis-aligned boxes ``(x0, y0, x1, y1)``."""
        g = cls.rectangle(L, H, nx, ny)
        xc, yc = g.element_centers()
        mask = np.ones((ny, nx), dtype=bool)
        for x0, y0, x1, y1 in cutouts:
            mask &= ~((xc > x0) & (xc < x1) & (yc > y0) & (yc < y1))
        return cls(nx, ny, g.hx, g.hy, mask)

    @classmethod
    def from_polygon(cls, L: float, H: float, nx: int, ny: int, vertices) -> "MacroGrid":
        """Cells of ``[0, L] x [0, H]`` whose centres lie inside a polygon (even-odd rule)."""
        g = cls.rectangle(L, H, nx, ny)
        xc, yc = g.element_centers()
        v = np.asarray(vertices, dtype=float)
        inside = np.zeros((ny, nx), dtype=bool)
        for (ax, ay), (bx, by) in zip(v, np.roll(v, -1, axis=0)):
            if ay == by:
                continue
            crosses = (ay > yc) != (by > yc)
            xint = ax + (yc - ay) * (bx - ax) / (by - ay)
            inside ^= crosses & (xc < xint)
        return cls(nx, ny, g.hx, g.hy, inside)

    @property
    def shape(self) -> tuple[int, int]:
        """Node array shape ``(ny+1, nx+1)``."""
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.nx * self.hx, self.ny * self.hy)

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.hx * np.arange(self.nx + 1)
        y = self.origin[1] + self.hy * np.arange(self.ny + 1)
        return np.meshgrid(x, y)

    def element_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.hx * (np.arange(self.nx) + 0.5)
        y = self.origin[1] + self.hy * (np.arange(self.ny) + 0.5)
        return np.meshgrid(x, y)

    @property
    def node_mask(self) -> np.ndarray:
        """Nodes touching at least one active cell."""
        m = np.zeros(self.shape, dtype=bool)
        e = self.elem_mask
        m[:-1, :-1] |= e
        m[:-1, 1:] |= e
        m[1:, :-1] |= e
        m[1:, 1:] |= e
        return m

    def same_as(self, other: "MacroGrid") -> bool:
        return (self.nx, self.ny, self.hx, self.hy, self.origin) == (
            other.nx, other.ny, other.hx, other.hy, other.origin
        ) and np.array_equal(self.elem_mask, other.elem_mask)

    def node_weights(self) -> np.ndarray:
        """Dual-cell areas: each active cell gives a quarter of its area to its corners."""
        w = np.zeros(self.shape)
        q = 0.25 * self.hx * self.hy * self.elem_mask
        w[:-1, :-1] += q
        w[:-1, 1:] += q
        w[1:, :-1] += q
        w[1:, 1:] += q
        return w

    @property
    def area(self) -> float:
        return float(self.elem_mask.sum()) * self.hx * self.hy


@dataclasses.dataclass(frozen=True)
class ScalarField:
    """Nodal values on a macro grid; nodes outside the domain hold NaN."""

    grid: MacroGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} != grid nodes {self.grid.shape}")

    def element_average(self) -> np.ndarray:
        v = self.values
        return 0.25 * (v[:-1, :-1] + v[:-1, 1:] + v[1:, :-1] + v[1:, 1:])

    def mean(self) -> float:
        w = self.grid.node_weights()
        m = self.grid.node_mask
        return float((w[m] * self.values[m]).sum() / w[m].sum())

    def domain_values(self) -> np.ndarray:
        return self.values[self.grid.node_mask]


def trace_loops(grid: MacroGrid) -> list[np.ndarray]:
    """Closed boundary loops as arrays of ``(i, j)`` node indices.

    Each loop starts at its lowest-left node and keeps the domain on the
    left; the first and last entries coincide. The loop enclosing the
    largest area (the outer boundary) comes first.
    """
    e = np.pad(grid.elem_mask, 1)
    nxt: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    # directed unit edges with the active cell on their left
    J, I = np.nonzero(e[1:-1, 1:-1])
    for j, i in zip(J.tolist(), I.tolist()):
        ej, ei = j + 1, i + 1
        if not e[ej - 1, ei]:                    # bottom face, run +x
            nxt[(i, j)].append((i + 1, j))
        if not e[ej, ei + 1]:                    # right face, run +y
            nxt[(i + 1, j)].append((i + 1, j + 1))
        if not e[ej + 1, ei]:                    # top face, run -x
            nxt[(i + 1, j + 1)].append((i, j + 1))
        if not e[ej, ei - 1]:                    # left face, run -y
            nxt[(i, j + 1)].append((i, j))
    for node, outs in nxt.items():
        if len(outs) > 1:
            raise DomainError(f"domain boundary touches itself at node {node}; "
                              "cells meeting only at a corner are not supported")
    unused = {k: v[0] for k, v in nxt.items()}
    loops = []
    while unused:
        start = min(unused, key=lambda n: (n[1], n[0]))
        path = [start]
        cur = start
        while True:
            cur = unused.pop(cur)
            path.append(cur)
            if cur == start:
                break
        loops.append(np.array(path))

    def signed_area(p):
        x, y = p[:, 0].astype(float), p[:, 1].astype(float)
        return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))

    loops.sort(key=lambda p: -signed_area(p))
    if signed_area(loops[0]) <= 0:
        raise DomainError("no counterclockwise outer boundary found")
    if sum(signed_area(p) > 0 for p in loops) > 1:
        raise DomainError("domain mask has more than one connected component")
    return loops
