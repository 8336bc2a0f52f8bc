"""Problem configuration: YAML files, built-in presets and design files."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..amr import AmrParams
from ..fem import BoundaryConditions, Box, EdgeLoad, Material, PointLoad, Support
from ..geometry import ProjectionParams, bars_to_array
from ..mesh import QuadMesh, _divide
from ..optimizer import MmaParams
from ..responses import StressParams
from . import presets


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "material": {"E": 1.0e5, "nu": 0.3, "plane_stress": True},
    "projection": {"penalty": 3.0, "ks": 10.0, "rho_min": 1.0e-4},
    "amr": {"n_levels": 0, "rho_threshold": 0.9, "band_factor": 2.0, "frozen_fine": []},
    "optimizer": {"move": 0.05, "c": 10.0, "max_iters": 300, "tol": 5.0e-3,
                  "asyinit": 0.5, "asyincr": 1.2, "asydecr": 0.7, "asymin": 0.01,
                  "objective_scale": "initial", "conservative": False, "max_inner": 10,
                  "inner_tol": 1e-3},
    "stress": {"ks": 30.0, "relaxation": 0.5},
    "output": {"dir": "out", "vtk_every": 10},
}

_COMPONENT_INDEX = {"x": 0, "y": 1}

# fields that only affect meshing; excluded from the setup hash
MESH_KEYS = ("amr",)
NON_SETUP_KEYS = ("output", "name", "optimizer_state", "objective_scale", "iteration",
                  "history")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ProblemConfig:
    raw: dict
    kind: str
    material: Material
    bcs: BoundaryConditions
    projection: ProjectionParams
    amr: AmrParams
    h_coarse: float
    mma: MmaParams
    move: float
    max_iters: int
    tol: float
    conservative: bool
    max_inner: int
    inner_tol: float
    volume_limit: float | None
    stress: StressParams | None
    design: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    output_dir: Path
    vtk_every: int
    optimizer_state: dict | None = None

    @property
    def n_bars(self):
        return self.design.shape[0]

    def coarse_mesh(self) -> QuadMesh:
        env = self.raw["envelope"]
        L = self.amr.n_levels
        if env["type"] == "rectangle":
            return QuadMesh.rectangle(env["width"], env["height"], self.h_coarse, L,
                                      origin=tuple(env.get("origin", (0.0, 0.0))))
        return QuadMesh.l_shape(env["outer"], env["cut"], self.h_coarse, L)

    def setup_hash(self):
        """Hash of every field except meshing and output settings."""
        data = {k: v for k, v in self.raw.items() if k not in MESH_KEYS + NON_SETUP_KEYS}
        blob = json.dumps(data, sort_keys=True, default=_jsonable)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj).__name__)


def _box(spec):
    if len(spec) != 4:
        raise ConfigError(f"box needs [xmin, xmax, ymin, ymax], got {spec}")
    return Box(*(float(v) for v in spec))


def _envelope_bbox(env):
    if env["type"] == "rectangle":
        ox, oy = env.get("origin", (0.0, 0.0))
        return ox, ox + env["width"], oy, oy + env["height"]
    if env["type"] == "l_shape":
        return 0.0, float(env["outer"][0]), 0.0, float(env["outer"][1])
    raise ConfigError(f"unknown envelope type {env['type']!r}")


def parse_components(items):
    """Design array from component mappings.

    Zero-length bars (p0 == p1, a disc of diameter ``width``) are accepted
    here because the optimizer may produce them.
    """
    rows = []
    try:
        for c in items:
            row = [*map(float, c["p0"]), *map(float, c["p1"]), float(c["width"]),
                   float(c.get("alpha", 1.0))]
            if len(row) != 6:
                raise ConfigError(f"bad component entry {c}: endpoints must be 2D")
            rows.append(row)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad component entry: {exc}") from exc
    if not rows:
        raise ConfigError("design has no components")
    z = np.array(rows)
    if np.any(z[:, 4] <= 0) or np.any((z[:, 5] < 0) | (z[:, 5] > 1)):
        raise ConfigError("component widths must be positive and sizes lie in [0, 1]")
    return z


def components_to_list(z):
    z = bars_to_array(z)
    return [{"p0": [float(r[0]), float(r[1])], "p1": [float(r[2]), float(r[3])],
             "width": float(r[4]), "alpha": float(r[5])} for r in z]


def from_dict(data: dict) -> ProblemConfig:
    raw = _merge(DEFAULTS, data)
    for key in ("envelope", "problem", "supports", "loads", "bounds"):
        if key not in raw:
            raise ConfigError(f"missing required section {key!r}")
    kind = raw["problem"]
    if kind not in ("compliance", "stress"):
        raise ConfigError(f"problem must be 'compliance' or 'stress', got {kind!r}")
    if kind == "compliance" and "volume_limit" not in raw:
        raise ConfigError("compliance problems need volume_limit")
    if kind == "stress" and "limit" not in raw["stress"]:
        raise ConfigError("stress problems need stress.limit")

    env = raw["envelope"]
    xmin, xmax, ymin, ymax = _envelope_bbox(env)
    amr_raw = raw["amr"]
    if "h_coarse" not in amr_raw:
        raise ConfigError("amr.h_coarse is required")
    h_c = float(amr_raw["h_coarse"])
    try:
        _divide(xmax - xmin, h_c), _divide(ymax - ymin, h_c)
        if env["type"] == "l_shape":
            _divide(env["cut"][0], h_c), _divide(env["cut"][1], h_c)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    frozen = [_box(b) for b in amr_raw.get("frozen_fine", [])]
    frozen_fn = None
    if frozen:
        def frozen_fn(xy, _boxes=tuple(frozen)):
            mask = np.zeros(len(xy), dtype=bool)
            for b in _boxes:
                mask |= b.contains(xy)
            return mask

    supports = []
    for s in raw["supports"]:
        comps = tuple(_COMPONENT_INDEX[c] for c in s.get("components", ["x", "y"]))
        supports.append(Support(_box(s["box"]), comps))
    loads = []
    for ld in raw["loads"]:
        if ld["type"] == "point":
            loads.append(PointLoad(tuple(ld["point"]), tuple(ld["force"])))
        elif ld["type"] == "edge":
            loads.append(EdgeLoad(_box(ld["box"]), tuple(ld["force"])))
        else:
            raise ConfigError(f"unknown load type {ld['type']!r}")

    if "components" not in raw:
        raise ConfigError("no initial components given")
    design = parse_components(raw["components"])

    b = raw["bounds"]
    bx = b.get("x", [xmin, xmax])
    by = b.get("y", [ymin, ymax])
    bw = b["width"]
    ba = b.get("alpha", [0.0, 1.0])
    lo_row = np.array([bx[0], by[0], bx[0], by[0], bw[0], ba[0]], dtype=float)
    hi_row = np.array([bx[1], by[1], bx[1], by[1], bw[1], ba[1]], dtype=float)
    n = design.shape[0]
    lower, upper = np.tile(lo_row, n), np.tile(hi_row, n)
    flat = design.ravel()
    if np.any(flat < lower - 1e-12) or np.any(flat > upper + 1e-12):
        raise ConfigError("initial design violates the variable bounds")

    opt = raw["optimizer"]
    mma = MmaParams(c=float(opt["c"]), asyinit=float(opt["asyinit"]),
                    asyincr=float(opt["asyincr"]), asydecr=float(opt["asydecr"]),
                    asymin=float(opt["asymin"]))
    out = raw["output"]
    cfg = ProblemConfig(
        raw=raw,
        kind=kind,
        material=Material(float(raw["material"]["E"]), float(raw["material"]["nu"]),
                          bool(raw["material"]["plane_stress"])),
        bcs=BoundaryConditions(tuple(supports), tuple(loads)),
        projection=ProjectionParams(radius=1.0, penalty=float(raw["projection"]["penalty"]),
                                    ks=float(raw["projection"]["ks"]),
                                    rho_min=float(raw["projection"]["rho_min"])),
        amr=AmrParams(int(amr_raw["n_levels"]), float(amr_raw["rho_threshold"]),
                      float(amr_raw["band_factor"]), frozen_fn),
        h_coarse=h_c,
        mma=mma,
        move=float(opt["move"]),
        conservative=bool(opt["conservative"]),
        max_inner=int(opt["max_inner"]),
        inner_tol=float(opt["inner_tol"]),
        max_iters=int(opt["max_iters"]),
        tol=float(opt["tol"]),
        volume_limit=float(raw["volume_limit"]) if kind == "compliance" else None,
        stress=(StressParams(float(raw["stress"]["limit"]), float(raw["stress"]["ks"]),
                             float(raw["stress"]["relaxation"])) if kind == "stress" else None),
        design=design,
        lower=lower,
        upper=upper,
        output_dir=Path(out["dir"]),
        vtk_every=int(out["vtk_every"]),
        optimizer_state=raw.get("optimizer_state"),
    )
    return cfg


def load_config(source, design=None, overrides=None) -> ProblemConfig:
    """Load a config from a YAML path or a preset name, optionally replacing the design.

    ``design`` is a design file written by a previous run; its components
    (and optimizer state, when present) replace the initial layout.
    """
    if isinstance(source, dict):
        data = copy.deepcopy(source)
    elif str(source) in presets.PRESETS:
        data = presets.PRESETS[str(source)]()
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config {source!r} is neither a file nor a preset "
                              f"({', '.join(presets.PRESETS)})")
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        if "preset" in data:
            data = _merge(presets.PRESETS[data.pop("preset")](), data)
    if design is not None:
        data = _merge(data, read_design(design))
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data)


def read_design(path) -> dict:
    with open(path) as fh:
        d = yaml.safe_load(fh)
    if not isinstance(d, dict) or "components" not in d:
        raise ConfigError(f"{path}: not a design file (no components)")
    keep = ("components", "optimizer_state")
    return {k: d[k] for k in keep if k in d}


def write_design(path, z, iteration=None, optimizer_state=None, extra=None):
    doc = {"components": components_to_list(z)}
    if iteration is not None:
        doc["iteration"] = int(iteration)
    if optimizer_state is not None:
        doc["optimizer_state"] = optimizer_state
    if extra:
        doc.update(extra)
    path = Path(path)
    try:
        with open(path, "w") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)
    except OSError as exc:
        raise OSError(f"cannot write design file {path}: {exc}") from exc
    return path

