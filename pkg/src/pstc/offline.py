"""Everything Algorithm-side that can be computed before the loop starts."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict

from .estimator import InitTables, build_init_tables, observability_index
from .reach import DisturbanceTables, build_disturbance_tables
from .sysmodel import TransitionTables, build_transition_tables
from .trigger import TriggerTables, build_trigger_tables

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OfflineTables:
    trans: TransitionTables
    dist: DisturbanceTables
    trig: TriggerTables
    init: InitTables
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def kappa_max(self) -> int:
        return self.trig.kappa_max


def build_offline_tables(problem) -> OfflineTables:
    """Build all tables for a ProblemConfig; ``timings`` holds seconds per phase."""
    plant, controller, trig_cfg = problem.plant, problem.controller, problem.trigger
    timings = {}

    started = time.perf_counter()
    trans = build_transition_tables(plant, controller, trig_cfg)
    timings["transition"] = time.perf_counter() - started

    # initialization looks kbar periods back, which may exceed kappa_max
    kbar = observability_index(trans.PhiP[1], plant.Cp)
    started = time.perf_counter()
    dist = build_disturbance_tables(
        plant, problem.wbar, controller.h, max(trig_cfg.kappa_max, kbar), problem.reach
    )
    timings["reachability"] = time.perf_counter() - started

    started = time.perf_counter()
    trig = build_trigger_tables(
        plant, controller, trans, dist, problem.v, trig_cfg.sigma, trig_cfg.kappa_max, problem.qbar
    )
    timings["trigger"] = time.perf_counter() - started

    started = time.perf_counter()
    init = build_init_tables(plant.Cp, trans, dist, problem.v)
    timings["initialization"] = time.perf_counter() - started

    logger.info(
        "offline tables: %s",
        ", ".join(f"{k} {1e3 * v:.1f} ms" for k, v in timings.items()),
    )
    return OfflineTables(trans, dist, trig, init, timings)
