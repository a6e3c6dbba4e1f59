"""Preventive self-triggered control for output-feedback LTI systems."""

__version__ = "0.1.0"

from .closedloop import Mode, ScenarioConfig, run_closed_loop, summarize
from .data import ProblemConfig, load_config, load_tables, save_tables
from .offline import OfflineTables, build_offline_tables
from .setcalc import Ellipsoid, EllipticalCylinder

__all__ = [
    "Ellipsoid",
    "EllipticalCylinder",
    "Mode",
    "OfflineTables",
    "ProblemConfig",
    "ScenarioConfig",
    "build_offline_tables",
    "load_config",
    "load_tables",
    "run_closed_loop",
    "save_tables",
    "summarize",
]
