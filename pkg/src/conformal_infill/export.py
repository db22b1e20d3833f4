"""Plain-file artifacts: binary PGM images with a range sidecar, and CSV tables."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .grid import ScalarField


def write_pgm(path, img: np.ndarray) -> None:
    """Binary (P5) 8-bit greyscale; ``img`` rows are written top to bottom."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM image must be a 2-D uint8 array")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    # header: magic, width, height, maxval separated by whitespace (comments allowed)
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5" or maxval != 255:
        raise ValueError(f"{path}: only 8-bit binary PGM is supported")
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


def raster_to_pgm(path, solid: np.ndarray) -> None:
    """Binary structure (row 0 at the bottom) as 255 = solid, 0 = void."""
    write_pgm(path, np.where(solid[::-1], 255, 0).astype(np.uint8))


def pgm_to_raster(path) -> np.ndarray:
    return read_pgm(path)[::-1] >= 128


def field_to_pgm(path, values: np.ndarray, vmin: float, vmax: float) -> None:
    """Heatmap of a nodal array; grey 1..255 spans ``[vmin, vmax]``, 0 marks no data.

    The range is written to ``<path>.json`` so the image can be decoded.
    """
    if not vmax > vmin:
        raise ValueError("heatmap range must satisfy vmax > vmin")
    v = np.asarray(values, dtype=float)
    t = np.clip((v - vmin) / (vmax - vmin), 0.0, 1.0)
    img = np.where(np.isfinite(v), 1 + np.rint(254 * np.nan_to_num(t)), 0).astype(np.uint8)
    write_pgm(path, img[::-1])
    Path(str(path) + ".json").write_text(json.dumps(
        {"min": vmin, "max": vmax, "levels": [1, 255], "no_data": 0}, indent=1) + "\n")


def write_field_csv(path, field: ScalarField) -> None:
    """One row ``x1, x2, value`` per in-domain node."""
    X, Y = field.grid.node_coords()
    m = field.grid.node_mask
    with open(path, "w") as f:
        f.write("x1,x2,value\n")
        for x, y, v in zip(X[m], Y[m], field.values[m]):
            f.write(f"{x:.10g},{y:.10g},{v:.12g}\n")


def read_field_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
