"""
Shared data access: problem configs, offline table files and run outputs.
Single source of truth for every on-disk format; other modules import from here.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .closedloop import DisturbanceSpec, NoiseSpec, ScenarioConfig, ScenarioError, SimTrace
from .estimator import FusionMode, InitTables
from .offline import OfflineTables
from .reach import DisturbanceTables, ReachConfig
from .setcalc import Ellipsoid, SetCalcError, clamp_psd
from .sysmodel import (
    ControllerModel,
    ModelError,
    PlantModel,
    TransitionTables,
    TriggerConfig,
    check_compatible,
)
from .trigger import TriggerTables

TABLE_FORMAT_VERSION = 1


class ConfigError(ValueError):
    """A problem config cannot be read or violates a model invariant."""


class TableMismatchError(ValueError):
    """A table file is missing, stale or was built for another config."""


def _psd(value, n: int, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(value, dtype=float))
    if m.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}, got {m.shape}")
    try:
        return clamp_psd(m)
    except SetCalcError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class ProblemConfig:
    """Models, bounds and algorithm options of one PSTC experiment."""

    name: str
    plant: PlantModel
    controller: ControllerModel
    trigger: TriggerConfig
    wbar: np.ndarray
    v: np.ndarray
    x0: Optional[Ellipsoid] = None
    reach: ReachConfig = ReachConfig()
    fusion: FusionMode = FusionMode()
    qbar: Optional[np.ndarray] = None
    seed: int = 0
    scenarios: Dict[str, ScenarioConfig] = field(default_factory=dict)

    def __post_init__(self):
        try:
            check_compatible(self.plant, self.controller)
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
        object.__setattr__(self, "wbar", _psd(self.wbar, self.plant.n_w, "Wbar"))
        object.__setattr__(self, "v", _psd(self.v, self.plant.n_y, "V"))
        if self.x0 is not None and self.x0.dim != self.plant.n_x:
            raise ConfigError(f"X0 has dimension {self.x0.dim}, plant has {self.plant.n_x}")
        if self.qbar is not None:
            n = 2 * (self.plant.n_y + self.plant.n_u)
            q = np.asarray(self.qbar, dtype=float)
            if q.shape != (n, n) or not np.allclose(q, q.T, atol=1e-12):
                raise ConfigError(f"qbar must be a symmetric {n}x{n} matrix")
            object.__setattr__(self, "qbar", q)

    def with_epsilon(self, epsilon: Optional[float]) -> "ProblemConfig":
        if epsilon is None:
            return self
        try:
            return replace(self, trigger=replace(self.trigger, epsilon=float(epsilon)))
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc

    def scenario(self, name: Optional[str] = None) -> ScenarioConfig:
        if not self.scenarios:
            raise ConfigError(f"config '{self.name}' defines no scenarios")
        if name is None:
            return next(iter(self.scenarios.values()))
        if name not in self.scenarios:
            known = ", ".join(self.scenarios)
            raise ConfigError(f"unknown scenario '{name}' (known: {known})")
        return self.scenarios[name]


def _matrix_list(m) -> list:
    return np.asarray(m, dtype=float).tolist()


def _scenario_from_dict(name: str, d: dict, default_seed: int) -> ScenarioConfig:
    dist = d.get("disturbance", {"kind": "zero"})
    noise = d.get("noise", {"kind": "zero"})
    return ScenarioConfig(
        name=name,
        duration=float(d["duration"]),
        x_p0=tuple(d["x_p0"]),
        x_c0=tuple(d.get("x_c0", ())),
        disturbance=DisturbanceSpec(
            kind=dist.get("kind", "zero"),
            schedule=tuple((t, tuple(np.atleast_1d(v))) for t, v in dist.get("schedule", ())),
        ),
        noise=NoiseSpec(kind=noise.get("kind", "zero"), amplitude=noise.get("amplitude")),
        substeps=int(d.get("substeps", 16)),
        seed=int(d.get("seed", default_seed)),
        allow_violation=bool(d.get("allow_violation", False)),
    )


def _scenario_to_dict(s: ScenarioConfig) -> dict:
    return {
        "duration": s.duration,
        "x_p0": list(s.x_p0),
        "x_c0": list(s.x_c0),
        "disturbance": {
            "kind": s.disturbance.kind,
            "schedule": [[t, list(v)] for t, v in s.disturbance.schedule],
        },
        "noise": {"kind": s.noise.kind, "amplitude": s.noise.amplitude},
        "substeps": s.substeps,
        "seed": s.seed,
        "allow_violation": s.allow_violation,
    }


def problem_from_dict(d: dict) -> ProblemConfig:
    """Build a ProblemConfig from the parsed JSON config; every failure is a ConfigError."""
    section = "config"
    try:
        section = "plant"
        p = d["plant"]
        plant = PlantModel(p["Ap"], p["Bp"], p["Cp"], p["E"])
        section = "controller"
        c = d["controller"]
        controller = ControllerModel(c["Ac"], c["Bc"], c["Cc"], c["Dc"], c["h"])
        section = "trigger"
        t = d["trigger"]
        trigger = TriggerConfig(
            sigma=float(t["sigma"]),
            epsilon=float(t.get("epsilon", 0.0)),
            kappa_max=t.get("kappa_max", 25),
        )
        qbar = t.get("qbar")
        section = "bounds"
        b = d["bounds"]
        x0 = b.get("X0")
        x0 = None if x0 is None else Ellipsoid(x0["center"], x0["shape"])
        section = "reach"
        r = d.get("reach", {})
        reach = ReachConfig(
            directions=r.get("directions"),
            substeps=int(r.get("substeps", 32)),
            q0=r.get("q0"),
        )
        section = "fusion"
        f = d.get("fusion", {})
        fusion = FusionMode(fixed_lambda=f.get("lambda"), tol=float(f.get("tol", 1e-4)))
        section = "scenarios"
        seed = int(d.get("seed", 0))
        scenarios = {
            name: _scenario_from_dict(name, s, seed) for name, s in d.get("scenarios", {}).items()
        }
        section = "config"
        return ProblemConfig(
            name=str(d.get("name", "problem")),
            plant=plant,
            controller=controller,
            trigger=trigger,
            wbar=b["Wbar"],
            v=b["V"],
            x0=x0,
            reach=reach,
            fusion=fusion,
            qbar=None if qbar is None else np.asarray(qbar, dtype=float),
            seed=seed,
            scenarios=scenarios,
        )
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{section}: missing key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def problem_to_dict(problem: ProblemConfig) -> dict:
    pl, ct, tr = problem.plant, problem.controller, problem.trigger
    return {
        "name": problem.name,
        "plant": {
            "Ap": _matrix_list(pl.Ap),
            "Bp": _matrix_list(pl.Bp),
            "Cp": _matrix_list(pl.Cp),
            "E": _matrix_list(pl.E),
        },
        "controller": {
            "Ac": _matrix_list(ct.Ac),
            "Bc": _matrix_list(ct.Bc),
            "Cc": _matrix_list(ct.Cc),
            "Dc": _matrix_list(ct.Dc),
            "h": ct.h,
        },
        "trigger": {
            "sigma": tr.sigma,
            "epsilon": tr.epsilon,
            "kappa_max": tr.kappa_max,
            "qbar": None if problem.qbar is None else _matrix_list(problem.qbar),
        },
        "bounds": {
            "Wbar": _matrix_list(problem.wbar),
            "V": _matrix_list(problem.v),
            "X0": None
            if problem.x0 is None
            else {"center": problem.x0.center.tolist(), "shape": _matrix_list(problem.x0.shape)},
        },
        "reach": {
            "directions": None
            if problem.reach.directions is None
            else [list(d) for d in problem.reach.directions],
            "substeps": problem.reach.substeps,
            "q0": problem.reach.q0,
        },
        "fusion": {"lambda": problem.fusion.fixed_lambda, "tol": problem.fusion.tol},
        "seed": problem.seed,
        "scenarios": {name: _scenario_to_dict(s) for name, s in problem.scenarios.items()},
    }


def load_config(path) -> ProblemConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found at {path}")
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return problem_from_dict(raw)


def save_config(problem: ProblemConfig, path):
    with open(path, "w") as f:
        json.dump(problem_to_dict(problem), f, indent=2)


def config_hash(problem: ProblemConfig) -> str:
    """SHA-256 over the parts of the config the offline tables depend on."""
    d = problem_to_dict(problem)
    relevant = {
        "plant": d["plant"],
        "controller": d["controller"],
        "sigma": d["trigger"]["sigma"],
        "kappa_max": d["trigger"]["kappa_max"],
        "qbar": d["trigger"]["qbar"],
        "Wbar": d["bounds"]["Wbar"],
        "V": d["bounds"]["V"],
        "reach": d["reach"],
        "format_version": TABLE_FORMAT_VERSION,
    }
    canonical = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


_TABLE_GROUPS = (
    ("trans", TransitionTables),
    ("dist", DisturbanceTables),
    ("trig", TriggerTables),
    ("init", InitTables),
)


def table_paths(stem) -> Tuple[Path, Path]:
    stem = Path(stem)
    return stem.with_suffix(".npz"), stem.with_suffix(".json")


def save_tables(tables: OfflineTables, stem, problem: ProblemConfig) -> Tuple[Path, Path]:
    """Write ``<stem>.npz`` and its ``<stem>.json`` sidecar."""
    npz_path, meta_path = table_paths(stem)
    npz_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for group, _ in _TABLE_GROUPS:
        obj = getattr(tables, group)
        for f in fields(obj):
            arrays[f"{group}.{f.name}"] = np.asarray(getattr(obj, f.name))
    np.savez_compressed(npz_path, **arrays)
    meta = {
        "format_version": TABLE_FORMAT_VERSION,
        "config_hash": config_hash(problem),
        "name": problem.name,
        "kappa_max": tables.kappa_max,
        "kbar": tables.init.kbar,
        "created": datetime.now().isoformat(timespec="seconds"),
        "timings_ms": {k: 1e3 * v for k, v in tables.timings.items()},
    }
    with open(meta_path, "w") as f:
        json.dump(meta, f, indent=2)
    return npz_path, meta_path


def read_table_meta(stem) -> Optional[dict]:
    _, meta_path = table_paths(stem)
    if not meta_path.exists():
        return None
    with open(meta_path, "r") as f:
        return json.load(f)


def tables_up_to_date(stem, problem: ProblemConfig) -> bool:
    meta = read_table_meta(stem)
    return (
        meta is not None
        and table_paths(stem)[0].exists()
        and meta.get("format_version") == TABLE_FORMAT_VERSION
        and meta.get("config_hash") == config_hash(problem)
    )


def load_tables(stem, problem: Optional[ProblemConfig] = None) -> OfflineTables:
    """Load tables; with ``problem`` given, refuse tables built for another config."""
    npz_path, _ = table_paths(stem)
    meta = read_table_meta(stem)
    if meta is None or not npz_path.exists():
        raise TableMismatchError(
            f"no tables at {npz_path}. Run 'pstc precompute' to build them first."
        )
    if meta.get("format_version") != TABLE_FORMAT_VERSION:
        raise TableMismatchError(f"{npz_path} has format {meta.get('format_version')}")
    if problem is not None and meta.get("config_hash") != config_hash(problem):
        raise TableMismatchError(
            f"{npz_path} was built for a different config. Rerun 'pstc precompute'."
        )
    with np.load(npz_path, allow_pickle=False) as npz:
        groups = {}
        for group, cls in _TABLE_GROUPS:
            kwargs = {}
            for f in fields(cls):
                arr = npz[f"{group}.{f.name}"]
                kwargs[f.name] = arr.item() if arr.ndim == 0 else np.array(arr)
            groups[group] = cls(**kwargs)
    timings = {k: v / 1e3 for k, v in meta.get("timings_ms", {}).items()}
    return OfflineTables(timings=timings, **groups)


def trace_columns(dims: Dict[str, int]) -> list:
    """CSV column order of a SimTrace."""

    def block(prefix, n):
        return [f"{prefix}_{i + 1}" for i in range(n)]

    return (
        ["k", "t"]
        + block("xi_p", dims["n_x"])
        + block("x_c", dims["n_c"])
        + block("y", dims["n_y"])
        + block("u", dims["n_u"])
        + block("nu", dims["n_y"])
        + block("w", dims["n_w"])
        + ["trigger", "kappa", "petc_kappa", "eta_bar"]
        + block("est_center", dims["n_x"])
        + ["est_trace", "contained"]
    )


def _fmt(x) -> str:
    return repr(float(x))


def write_trace_csv(trace: SimTrace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_x = trace.dims["n_x"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(trace_columns(trace.dims))
        for r in trace.rows:
            center = r.est_center if r.est_center is not None else [float("nan")] * n_x
            writer.writerow(
                [r.k, _fmt(r.t)]
                + [_fmt(x) for x in r.xi_p]
                + [_fmt(x) for x in r.x_c]
                + [_fmt(x) for x in r.y]
                + [_fmt(x) for x in r.u]
                + [_fmt(x) for x in r.nu]
                + [_fmt(x) for x in r.w]
                + [int(r.trigger), r.kappa, r.petc_kappa, ";".join(_fmt(e) for e in r.eta_bar)]
                + [_fmt(x) for x in center]
                + [_fmt(r.est_trace), "" if r.contained is None else int(r.contained)]
            )
    return path


def write_summary(summary: dict, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(summary, f, indent=2)
    return path


def load_summary(path) -> dict:
    with open(path, "r") as f:
        return json.load(f)


__all__ = [
    "ConfigError",
    "TableMismatchError",
    "ProblemConfig",
    "ScenarioError",
    "load_config",
    "save_config",
    "problem_from_dict",
    "problem_to_dict",
    "config_hash",
    "save_tables",
    "load_tables",
    "tables_up_to_date",
    "read_table_meta",
    "trace_columns",
    "write_trace_csv",
    "write_summary",
    "load_summary",
]
