"""Run configuration: JSON schema, validation and construction of the model objects."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from . import masks
from .cell import MatrixCellSpec, cell_from_dict
from .fem import BoundaryData, MacroModel
from .grid import MacroGrid
from .harmonic import boundary_loops
from .optimizer import OptSettings
from .tensors import base_tensor

SCHEMA_VERSION = 1

_positive = {"type": "number", "exclusiveMinimum": 0}
_pos_int = {"type": "integer", "minimum": 1}
_point = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_segment_spec = {
    "type": "object",
    "properties": {
        "edge": {"enum": ["left", "right", "bottom", "top"]},
        "range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "segment": {"type": "array", "items": _point, "minItems": 2, "maxItems": 2},
        "point": _point,
        "dofs": {"enum": ["xy", "x", "y"]},
        "traction": _point,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "domain", "mesh", "epsilon", "cell", "boundary_nodes",
                 "lambda_bounds", "load_case"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "domain": {
            "type": "object",
            "required": ["L", "H"],
            "properties": {
                "type": {"enum": ["rectangle", "polygon"]},
                "L": _positive,
                "H": _positive,
                "cutouts": {"type": "array", "items": {
                    "type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}},
                "vertices": {"type": "array", "items": _point, "minItems": 4},
            },
            "additionalProperties": False,
        },
        "mesh": {
            "type": "object",
            "required": ["nx", "ny"],
            "properties": {"nx": _pos_int, "ny": _pos_int},
            "additionalProperties": False,
        },
        "epsilon": _positive,
        "reference_length": _positive,
        "material": {
            "type": "object",
            "properties": {"E": _positive, "nu": {"type": "number", "exclusiveMinimum": -1,
                                                  "exclusiveMaximum": 0.5}},
            "additionalProperties": False,
        },
        "cell": {"type": "object"},
        "cell_resolution": {"type": "integer", "minimum": 16},
        "boundary_nodes": {"oneOf": [_pos_int, {"type": "array", "items": _pos_int, "minItems": 1}]},
        "lambda_bounds": {"type": "array", "items": _positive, "minItems": 2, "maxItems": 2},
        "p_min": _positive,
        "theta_bar_init": {"type": "number"},
        "load_case": {"enum": ["cantilever-right-patch", "cantilever-top", "bridge", "l-beam",
                               "custom"]},
        "supports": {"type": "array", "items": _segment_spec},
        "loads": {"type": "array", "items": _segment_spec},
        "masks": {"type": "array", "items": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["skin", "box"]},
                "thickness": _positive,
                "box": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
            },
            "additionalProperties": False,
        }},
        "volume_bound": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "optimizer": {
            "type": "object",
            "properties": {
                "max_iters": {"type": "integer", "minimum": 0},
                "rel_tol": _positive,
                "window": _pos_int,
                "move": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "theta_route": {"enum": ["fd", "series"]},
                "series_modes": _pos_int,
                "micro": {"type": "array", "items": {
                    "enum": ["center_x", "center_y", "half_length", "half_width", "angle"]}},
                "init_perturbation": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "fine": {
            "type": "object",
            "properties": {
                "resolution": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2},
                "supersample": {"type": "integer", "minimum": 1, "maximum": 8},
                "solver": {"enum": ["auto", "direct", "amg"]},
                "max_pixels": _pos_int,
            },
            "additionalProperties": False,
        },
        "design": {
            "type": "object",
            "required": ["values"],
            "properties": {
                "values": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "theta_bar": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "output": {"type": "string"},
    },
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """All problems found in a configuration, one message per entry of ``errors``."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# Supports and loads of the named load cases; unit load per unit length
# unless stated. Patch widths are configurable defaults.
LOAD_CASES = {
    "cantilever-right-patch": {
        "supports": [{"edge": "left", "dofs": "xy"}],
        "loads": [{"edge": "right", "range": [0.4, 0.6], "traction": [0.0, -5.0]}],
    },
    "cantilever-top": {
        "supports": [{"edge": "left", "dofs": "xy"}],
        "loads": [{"edge": "top", "traction": [0.0, -0.5]}],
    },
    "bridge": {
        "supports": [{"edge": "bottom", "range": [0.0, 0.05], "dofs": "xy"},
                     {"edge": "bottom", "range": [1.95, 2.0], "dofs": "xy"}],
        "loads": [{"edge": "bottom", "range": [0.9, 1.1], "traction": [0.0, -5.0]}],
    },
    "l-beam": {
        "supports": [{"segment": [[0.0, 1.0], [0.4, 1.0]], "dofs": "xy"}],
        "loads": [{"segment": [[1.0, 0.1], [1.0, 0.3]], "traction": [0.0, -5.0]}],
    },
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``raw`` is the JSON document with defaults filled in."""

    raw: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def name(self) -> str:
        return self.raw.get("name", "run")

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def lnlam_bounds(self) -> tuple[float, float]:
        lo, hi = self.raw["lambda_bounds"]
        return math.log(lo), math.log(hi)

    @property
    def fine_resolution(self) -> tuple[int, int]:
        """Elements of the validation mesh along x1 and x2."""
        return tuple(self.raw["fine"]["resolution"])

    @property
    def raster_resolution(self) -> tuple[int, int]:
        """Pixels of the structure raster: ``supersample`` per element and axis."""
        s = self.raw["fine"]["supersample"]
        return tuple(s * n for n in self.raw["fine"]["resolution"])

    def with_overrides(self, **kw) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        if kw.get("max_iters") is not None:
            raw["optimizer"]["max_iters"] = int(kw["max_iters"])
        if kw.get("fine_res") is not None:
            raw["fine"]["resolution"] = list(kw["fine_res"])
        validate(raw)
        return RunConfig(raw, self.source)


DEFAULTS = {
    "name": "run",
    "reference_length": 1.0,
    "material": {"E": 1.0, "nu": 0.3},
    "cell_resolution": 200,
    "theta_bar_init": 0.0,
    "masks": [],
    "volume_bound": 1.0,
    "optimizer": {"max_iters": 100, "rel_tol": 1e-4, "window": 5, "move": 0.1,
                  "theta_route": "fd", "series_modes": 50, "micro": [], "init_perturbation": 0.0},
    "fine": {"resolution": [1600, 800], "supersample": 2, "solver": "auto",
             "max_pixels": 20_000_000},
}


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _with_defaults(doc: dict) -> dict:
    out = copy.deepcopy(doc)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict):
            out[k] = {**v, **out.get(k, {})}
        else:
            out.setdefault(k, v)
    case = out.get("load_case")
    if case in LOAD_CASES:
        out.setdefault("supports", copy.deepcopy(LOAD_CASES[case]["supports"]))
        out.setdefault("loads", copy.deepcopy(LOAD_CASES[case]["loads"]))
    return out


def _semantic_errors(doc: dict) -> list[str]:
    errs = []
    lo, hi = doc["lambda_bounds"]
    if not lo < hi:
        errs.append("lambda_bounds: lower bound must be below the upper bound")
    if not doc.get("supports"):
        errs.append("supports: at least one support is required")
    if not doc.get("loads"):
        errs.append("loads: at least one load is required")
    L, H = doc["domain"]["L"], doc["domain"]["H"]
    for i, m in enumerate(doc.get("masks", [])):
        if m["type"] == "box":
            x0, y0, x1, y1 = m["box"]
            if not (0 <= x0 < x1 <= L and 0 <= y0 < y1 <= H):
                errs.append(f"masks[{i}].box: {m['box']} is not an ordered box inside the domain")
        elif "thickness" not in m:
            errs.append(f"masks[{i}].thickness: required for a skin mask")
    for i, c in enumerate(doc["domain"].get("cutouts", [])):
        if not (0 <= c[0] < c[2] <= L and 0 <= c[1] < c[3] <= H):
            errs.append(f"domain.cutouts[{i}]: {c} is not an ordered box inside the domain")
    return errs


def validate(doc) -> dict:
    """Check ``doc`` against the schema; raise :class:`ConfigError` listing every problem."""
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: configuration must be a JSON object"])
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = []
    for e in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        where = ".".join(str(p) for p in e.absolute_path)
        if e.validator == "required":
            missing = [k for k in e.validator_value if k not in e.instance]
            errs.extend(f"{(where + '.') if where else ''}{k}: required key is missing" for k in missing)
        else:
            errs.append(f"{where or '<root>'}: {e.message}")
    if errs:
        raise ConfigError(errs)
    errs = _semantic_errors(doc)
    if errs:
        raise ConfigError(errs)
    return doc


def load_config(doc: dict, source: str | None = None) -> RunConfig:
    full = _with_defaults(doc) if isinstance(doc, dict) else doc
    return RunConfig(validate(full), source)


def parse_config(path) -> RunConfig:
    """Read and validate a JSON configuration file."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"configuration file not found: {p}")
    text = p.read_text()
    if not text.strip():
        doc: dict = {}
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<root>: not valid JSON ({exc})"]) from exc
    return load_config(doc, str(p))


# -- construction of model objects ----------------------------------------

def build_grid(cfg: RunConfig) -> MacroGrid:
    d, m = cfg["domain"], cfg["mesh"]
    if d.get("type", "rectangle") == "polygon":
        return MacroGrid.from_polygon(d["L"], d["H"], m["nx"], m["ny"], d["vertices"])
    return MacroGrid.from_boxes(d["L"], d["H"], m["nx"], m["ny"], d.get("cutouts", []))


def build_cell(cfg: RunConfig) -> MatrixCellSpec:
    return cell_from_dict(cfg["cell"])


def build_base(cfg: RunConfig) -> np.ndarray:
    return base_tensor(cfg["material"]["E"], cfg["material"]["nu"])


def boundary_data(cfg: RunConfig) -> BoundaryData:
    return BoundaryData(tuple(cfg["supports"]), tuple(cfg["loads"]))


def effective_lnlam_bounds(cfg: RunConfig, cell: MatrixCellSpec) -> tuple[float, float]:
    """Configured bounds, with the lower one raised so members stay >= p_min."""
    lo, hi = cfg.lnlam_bounds
    if "p_min" in cfg.raw:
        h = cfg["epsilon"] * cfg["reference_length"]
        lo = max(lo, math.log(cfg["p_min"] / (h * cell.min_member_size)))
        if lo >= hi:
            raise ConfigError([f"p_min: requires ln(lambda_b) >= {lo:.4g}, above the upper bound"])
    return lo, hi


def build_model(cfg: RunConfig, grid: MacroGrid | None = None,
                cell: MatrixCellSpec | None = None) -> MacroModel:
    grid = grid or build_grid(cfg)
    cell = cell or build_cell(cfg)
    xc, yc = grid.element_centers()
    nondesign = masks.solid_mask(cfg["masks"], grid, xc, yc) & grid.elem_mask
    return MacroModel(grid, boundary_data(cfg), build_base(cfg), nondesign,
                      epsilon=cfg["epsilon"], reference_length=cfg["reference_length"],
                      lnlam_bounds=effective_lnlam_bounds(cfg, cell),
                      volume_bound=cfg["volume_bound"], mask_specs=tuple(cfg["masks"]))


def build_loops(cfg: RunConfig, grid: MacroGrid):
    return boundary_loops(grid, cfg["boundary_nodes"])


def opt_settings(cfg: RunConfig) -> OptSettings:
    o = cfg["optimizer"]
    return OptSettings(max_iters=o["max_iters"], rel_tol=o["rel_tol"], window=o["window"],
                       move=o["move"], cell_resolution=cfg["cell_resolution"],
                       micro=tuple(o["micro"]), theta_route=o["theta_route"],
                       series_modes=o["series_modes"])
