"""File formats, bundled scenario fixtures, and result export.

Terrain and scenario documents are versioned JSON; run artifacts are CSVs plus
a JSON summary. All exports are deterministic for a given (scenario, seed):
fields are written in a fixed order and floats use their shortest round-trip
representation.

Schemas (version 1):

terrain::

    {"version": 1, "patches": [
        {"id": str, "vertices": [[x, y], ...], "height": float, "friction": float}]}

scenario::

    {"version": 1, "name": str,
     "terrain": {...} | "terrain_file": str,
     "gait": {"preset": str, "cycle": float},
     "reference_velocity": [{"t0": float, "vx": float, "vy": float}, ...],
     "duration": float, "seed": int, "start_xy": [x, y],
     "limits": {...}, "weights": {...}, "robot": {...}, "mpc": {...},
     "penalties": {...}, "disturbance_sigma": float}

Log CSVs: touchdowns.csv (t, foot, x, y, z, patch_id, penalty, winding),
forces.csv (t, foot, fx, fy, fz, torque_proxy, residual_min),
solve.csv (t, iters, cost, violation, wall_ms).
"""

from __future__ import annotations

import dataclasses
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .field import FieldGrid
from .geometry import Polygon2, SurfacePatch, TerrainModel, validate_polygon
from .model import CostWeights, LimitSet, ReducedState, RobotParams, make_gait
from .planner import (
    MpcLog,
    MpcSettings,
    PenaltyWeights,
    Scenario,
    VelocitySegment,
    standing_start,
    validate_scenario,
)

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """Document does not match the expected schema."""


def _check_version(doc: dict, kind: str) -> None:
    version = doc.get("version")
    if not isinstance(version, int):
        raise SchemaError(f"{kind}: missing integer 'version' field")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: unsupported schema version {version} (expected {SCHEMA_VERSION})")


# --- terrain --------------------------------------------------------------------


def terrain_to_dict(terrain: TerrainModel) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "patches": [
            {
                "id": p.id,
                "vertices": [[float(x), float(y)] for x, y in p.polygon.vertices],
                "height": float(p.height),
                "friction": float(p.friction),
            }
            for p in terrain.patches
        ],
    }


def terrain_from_dict(doc: dict) -> tuple[TerrainModel, list[str]]:
    """Build a terrain from a schema document, validating every polygon.

    Returns (terrain, warnings); raises SchemaError on structural problems and
    ValueError naming the offending patch on invalid geometry.
    """
    _check_version(doc, "terrain")
    raw = doc.get("patches")
    if not isinstance(raw, list):
        raise SchemaError("terrain: 'patches' must be a list")
    patches = []
    warnings: list[str] = []
    for i, entry in enumerate(raw):
        pid = entry.get("id", f"patch{i}")
        for key in ("vertices", "height", "friction"):
            if key not in entry:
                raise SchemaError(f"terrain patch {pid!r}: missing field {key!r}")
        report = validate_polygon(entry["vertices"])
        if not report.valid:
            raise ValueError(f"terrain patch {pid!r}: invalid polygon: {'; '.join(report.errors)}")
        warnings.extend(f"patch {pid!r}: {w}" for w in report.warnings)
        patches.append(
            SurfacePatch(
                polygon=Polygon2(entry["vertices"]),
                height=float(entry["height"]),
                friction=float(entry["friction"]),
                id=str(pid),
            )
        )
    return TerrainModel(tuple(patches)), warnings


def load_terrain(path) -> TerrainModel:
    terrain, _warnings = load_terrain_with_warnings(path)
    return terrain


def load_terrain_with_warnings(path) -> tuple[TerrainModel, list[str]]:
    doc = json.loads(Path(path).read_text())
    return terrain_from_dict(doc)


def save_terrain(terrain: TerrainModel, path) -> None:
    Path(path).write_text(json.dumps(terrain_to_dict(terrain), indent=2) + "\n")


# --- scenario -------------------------------------------------------------------


def _dataclass_from(cls, doc: dict | None, context: str):
    if doc is None:
        return cls()
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - fields
    if unknown:
        raise SchemaError(f"{context}: unknown fields {sorted(unknown)}")
    kwargs = dict(doc)
    for key, value in kwargs.items():
        if isinstance(value, list):
            kwargs[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return cls(**kwargs)


def scenario_to_dict(scenario: Scenario, inline_terrain: bool = True) -> dict:
    doc = {
        "version": SCHEMA_VERSION,
        "name": scenario.name,
        "terrain": terrain_to_dict(scenario.terrain) if inline_terrain else None,
        "gait": {"preset": scenario.gait.name, "cycle": float(scenario.gait.cycle_duration)},
        "reference_velocity": [
            {"t0": float(s.t0), "vx": float(s.vx), "vy": float(s.vy)}
            for s in scenario.reference_velocity
        ],
        "duration": float(scenario.duration),
        "seed": int(scenario.seed),
        "disturbance_sigma": float(scenario.disturbance_sigma),
        "initial_state": {
            "r": [float(v) for v in scenario.initial_state.r],
            "rdot": [float(v) for v in scenario.initial_state.rdot],
            "feet": [[float(v) for v in foot] for foot in scenario.initial_state.feet],
        },
        "limits": dataclasses.asdict(scenario.limits),
        "weights": dataclasses.asdict(scenario.weights),
        "robot": dataclasses.asdict(scenario.robot),
        "mpc": {
            "horizon": scenario.mpc.horizon,
            "replan_rate": scenario.mpc.replan_rate,
            "node_dt": scenario.mpc.node_dt,
            "solver_iterations": scenario.mpc.solver_iterations,
            "offline_iterations": scenario.mpc.offline_iterations,
            "touchdown_margin": scenario.mpc.touchdown_margin,
            "friction_margin": scenario.mpc.friction_margin,
            "torque_margin": scenario.mpc.torque_margin,
        },
        "penalties": dataclasses.asdict(scenario.penalties),
    }
    return doc


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> Scenario:
    _check_version(doc, "scenario")
    if doc.get("terrain") is not None:
        terrain, _ = terrain_from_dict(doc["terrain"])
    elif doc.get("terrain_file"):
        ref = Path(doc["terrain_file"])
        if base_dir is not None and not ref.is_absolute():
            ref = base_dir / ref
        terrain = load_terrain(ref)
    else:
        raise SchemaError("scenario: needs 'terrain' or 'terrain_file'")

    gait_doc = doc.get("gait") or {}
    if "preset" not in gait_doc or "cycle" not in gait_doc:
        raise SchemaError("scenario: gait needs 'preset' and 'cycle'")
    gait = make_gait(gait_doc["preset"], float(gait_doc["cycle"]))

    segments = tuple(
        VelocitySegment(float(s["t0"]), float(s["vx"]), float(s["vy"]))
        for s in doc.get("reference_velocity", [])
    )
    robot = _dataclass_from(RobotParams, doc.get("robot"), "scenario.robot")
    limits = _dataclass_from(LimitSet, doc.get("limits"), "scenario.limits")
    weights = _dataclass_from(CostWeights, doc.get("weights"), "scenario.weights")
    penalties = _dataclass_from(PenaltyWeights, doc.get("penalties"), "scenario.penalties")
    mpc = _dataclass_from(MpcSettings, doc.get("mpc"), "scenario.mpc")

    if doc.get("initial_state") is not None:
        st = doc["initial_state"]
        initial = ReducedState(st["r"], st["rdot"], st["feet"])
    else:
        initial = standing_start(terrain, robot, doc.get("start_xy", (0.0, 0.0)))

    scenario = Scenario(
        terrain=terrain,
        gait=gait,
        reference_velocity=segments,
        duration=float(doc.get("duration", 10.0)),
        initial_state=initial,
        limits=limits,
        weights=weights,
        robot=robot,
        mpc=mpc,
        penalties=penalties,
        seed=int(doc.get("seed", 0)),
        disturbance_sigma=float(doc.get("disturbance_sigma", 0.0)),
        name=str(doc.get("name", "")),
    )
    validate_scenario(scenario)
    return scenario


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(json.loads(path.read_text()), base_dir=path.parent)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


def bundled_path(name: str) -> Path:
    """Path of a bundled terrain/scenario fixture, e.g. 'gap30.terrain.json'."""
    ref = resources.files("stepfield.data").joinpath(name)
    with resources.as_file(ref) as p:
        return Path(p)


def bundled_scenario(name: str) -> Scenario:
    return load_scenario(bundled_path(f"{name}.scenario.json"))


def bundled_terrain(name: str) -> TerrainModel:
    return load_terrain(bundled_path(f"{name}.terrain.json"))


# --- run artifacts ----------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_log(log: MpcLog, out_dir) -> list[Path]:
    """Export an MpcLog as touchdowns.csv, forces.csv, solve.csv, summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    p = out / "touchdowns.csv"
    _write_csv(
        p,
        ["t", "foot", "x", "y", "z", "patch_id", "penalty", "winding"],
        (
            (e.t, e.foot, e.x, e.y, e.z, e.patch_id or "", e.penalty, e.winding)
            for e in log.touchdowns
        ),
    )
    paths.append(p)

    p = out / "forces.csv"
    _write_csv(
        p,
        ["t", "foot", "fx", "fy", "fz", "torque_proxy", "residual_min"],
        (
            (rec.t, foot, fx, fy, fz, tau, rmin)
            for rec in log.ticks
            for (foot, fx, fy, fz, tau, rmin) in rec.foot_forces
        ),
    )
    paths.append(p)

    p = out / "solve.csv"
    _write_csv(
        p,
        ["t", "iters", "cost", "violation", "wall_ms"],
        (
            (
                rec.t,
                rec.iterations,
                rec.cost,
                max(rec.violations.values(), default=0.0),
                rec.solve_ms,
            )
            for rec in log.ticks
        ),
    )
    paths.append(p)

    p = out / "summary.json"
    p.write_text(json.dumps(log.summary(), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def write_field_grid(grid: FieldGrid, path) -> Path:
    """Row-major CSV of a field grid: x, y, penalty, winding, potential."""
    path = Path(path)
    rows = []
    for j, y in enumerate(grid.ys):
        for i, x in enumerate(grid.xs):
            rows.append((x, y, grid.penalty[j, i], grid.winding[j, i], grid.potential[j, i]))
    _write_csv(path, ["x", "y", "penalty", "winding", "potential"], rows)
    return path
