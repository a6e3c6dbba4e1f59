"""
Monte Carlo checks of the soundness properties the controller relies on.

Each suite draws random instances from ``numpy.random.default_rng`` seeded by
(seed, suite, instance), so a reported failure replays bit-identically with
the same seed. ``scale`` multiplies every sample count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Sequence

import numpy as np
import scipy.linalg as la

from . import setcalc as sc
from .closedloop import (
    Mode,
    NoiseSpec,
    PlantSimulator,
    ScenarioConfig,
    containment_failures,
    lower_bound_violations,
    run_closed_loop,
)
from .data import ProblemConfig
from .estimator import FusionMode
from .offline import OfflineTables, build_offline_tables
from .reach import ReachConfig
from .sysmodel import ControllerModel, PlantModel, TriggerConfig
from .trigger import eta_bar, eta_prime, info_vector

logger = logging.getLogger(__name__)

SUITES = ("setcalc", "reach", "estimator", "trigger")
SET_TOL = 1e-9
REACH_TOL = 1e-6
MAX_RECORDED_FAILURES = 5


@dataclass
class SuiteReport:
    name: str
    samples: int = 0
    violations: int = 0
    worst_margin: float = float("inf")
    failures: List[dict] = field(default_factory=list)
    notes: Dict[str, float] = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def record(self, margin: float, violated: bool, **detail):
        self.samples += 1
        self.worst_margin = min(self.worst_margin, float(margin))
        if violated:
            self.violations += 1
            if len(self.failures) < MAX_RECORDED_FAILURES:
                self.failures.append({"suite": self.name, "margin": float(margin), **detail})

    def record_batch(self, margins: np.ndarray, tol: float, **detail):
        margins = np.asarray(margins, dtype=float)
        if margins.size == 0:
            return
        self.samples += int(margins.size)
        self.worst_margin = min(self.worst_margin, float(margins.min()))
        bad = margins < -tol
        count = int(bad.sum())
        if count:
            self.violations += count
            if len(self.failures) < MAX_RECORDED_FAILURES:
                self.failures.append(
                    {
                        "suite": self.name,
                        "margin": float(margins.min()),
                        "sample": int(np.argmin(margins)),
                        **detail,
                    }
                )

    def as_dict(self) -> dict:
        return {
            "suite": self.name,
            "samples": self.samples,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "notes": self.notes,
            "elapsed_s": self.elapsed,
            "failures": self.failures,
        }


def _rng(seed: int, suite: str, instance: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, SUITES.index(suite), instance])


def membership_margins(e: sc.Ellipsoid, points: np.ndarray) -> np.ndarray:
    """1 - (x - m)' M^-1 (x - m) per row; negative means outside. PD shapes only."""
    d = np.atleast_2d(points) - e.center
    factor = la.cho_factor(e.shape, lower=True)
    return 1.0 - np.einsum("ij,ji->i", d, la.cho_solve(factor, d.T))


def _random_ellipsoid(rng, n: int, scale: float = 1.0) -> sc.Ellipsoid:
    return sc.Ellipsoid(rng.normal(size=n), sc.random_psd(rng, n, scale))


# --- set calculus -----------------------------------------------------------


def _consistent_cylinder(rng, e: sc.Ellipsoid, rows: int) -> sc.EllipticalCylinder:
    c = rng.normal(size=(rows, e.dim))
    inside = sc.sample_ellipsoid(e, rng, 1)[0]
    y = c @ (e.center + 0.5 * (inside - e.center))
    return sc.EllipticalCylinder(y, sc.random_psd(rng, rows, 1.0, 0.05), c)


def _points_in_both(rng, e: sc.Ellipsoid, inside: Callable, count: int) -> np.ndarray:
    pts = sc.sample_ellipsoid(e, rng, 8 * count)
    keep = np.array([inside(x) for x in pts], dtype=bool)
    return pts[keep][:count]


def check_setcalc(problem, tables, seed: int, scale: float = 1.0) -> SuiteReport:
    report = SuiteReport("setcalc")
    instances = max(1, int(round(100 * scale)))
    samples = max(10, int(round(1000 * scale)))
    n = 4
    for i in range(instances):
        rng = _rng(seed, "setcalc", i)
        tag = {"seed": seed, "instance": i}

        e1, e2 = _random_ellipsoid(rng, n), _random_ellipsoid(rng, n, 2.0)
        total = sc.minksum_outer(e1, e2)
        pts = sc.sample_ellipsoid(e1, rng, samples) + sc.sample_ellipsoid(e2, rng, samples, boundary=True)
        report.record_batch(membership_margins(total, pts), SET_TOL, op="minksum_outer", **tag)

        e = _random_ellipsoid(rng, n)
        cyl = _consistent_cylinder(rng, e, 2)
        both = _points_in_both(rng, e, cyl.contains, samples)
        for op, fused in (
            ("fusion", sc.fusion(e, cyl, 0.5)),
            ("fusion_optimal", sc.fusion_optimal(e, cyl)),
        ):
            report.record_batch(membership_margins(fused, both), SET_TOL, op=op, **tag)

        m1, m2 = sc.random_psd(rng, n), sc.random_psd(rng, n)
        meet = sc.intersect_outer_centered([m1, m2])
        other = sc.Ellipsoid.centered(m2)
        pts = _points_in_both(rng, sc.Ellipsoid.centered(m1), lambda x: sc.contains(other, x), samples)
        report.record_batch(membership_margins(meet, pts), SET_TOL, op="intersect_outer_centered", **tag)

        e3 = _random_ellipsoid(rng, 3)
        c = rng.normal(size=(1, 3))
        y = c @ (e3.center + 0.5 * (sc.sample_ellipsoid(e3, rng, 1)[0] - e3.center))
        cut = sc.hyperplane_fusion(e3, c, y)
        for x in sc.sample_ellipsoid(cut, rng, max(10, samples // 10)):
            resid = float(np.linalg.norm(c @ x - y))
            ok = resid <= 1e-8 * (1.0 + np.linalg.norm(y)) and sc.contains(e3, x, SET_TOL)
            report.record(-resid if not ok else 0.0, not ok, op="hyperplane_fusion", **tag)

        a = rng.normal(size=(3, n))
        b = rng.normal(size=3)
        image = sc.affine_map(a, e1, b)
        for l in rng.normal(size=(10, 3)):
            lhs = sc.support(image, l)
            rhs = sc.support(e1, a.T @ l) + l @ b
            gap = abs(lhs - rhs)
            report.record(-gap, gap > 1e-9 * (1.0 + abs(rhs)), op="affine_map", **tag)
    return report


# --- reachability -------------------------------------------------------------


def _support_signal(plant: PlantModel, wbar, l, kappa: int, h: float, substeps: int) -> np.ndarray:
    # w(s) maximizing l' x(h kappa) under w(s) in E(0, Wbar), evaluated at substep midpoints
    s_w = sc.psd_factor(wbar)
    delta = h / substeps
    t_end = h * kappa
    out = np.zeros((kappa * substeps, plant.n_w))
    for j in range(kappa * substeps):
        s = (j + 0.5) * delta
        g = s_w.T @ plant.E.T @ la.expm(plant.Ap.T * (t_end - s)) @ l
        norm = np.linalg.norm(g)
        if norm > 0:
            out[j] = s_w @ g / norm
    return out


def _random_signal(rng, wbar, steps: int) -> np.ndarray:
    boundary = sc.sample_ellipsoid(sc.Ellipsoid.centered(wbar), rng, steps, boundary=True)
    if rng.random() < 0.5:
        return sc.sample_ellipsoid(sc.Ellipsoid.centered(wbar), rng, steps)
    # bang-bang: hold boundary values for random stretches
    out = np.empty_like(boundary)
    j = 0
    while j < steps:
        run = int(rng.integers(1, 64))
        out[j:j + run] = boundary[j]
        j += run
    return out


def _reach_check(report, plant, w_tables, h, kappa_max, signals, substeps, tag):
    sim = PlantSimulator(plant, h, substeps)
    shapes = [sc.Ellipsoid.centered(w_tables[k]) for k in range(1, kappa_max + 1)]
    for idx, w in enumerate(signals):
        effect = sim.disturbance_effect(w.reshape(kappa_max, substeps, plant.n_w))
        x = np.zeros(plant.n_x)
        states = []
        for k in range(kappa_max):
            x = sim.phi_h @ x + effect[k]
            states.append(x)
        margins = []
        for k, shape in enumerate(shapes):
            if sc.is_positive_definite(shape.shape):
                margins.append(membership_margins(shape, states[k])[0])
            else:
                margins.append(0.0 if sc.contains(shape, states[k], REACH_TOL) else -1.0)
        report.record_batch(np.array(margins), REACH_TOL, signal=idx, **tag)


def _monotone_margin(rng, phi1, w_tables, samples: int) -> float:
    worst = float("inf")
    for k in range(2, w_tables.shape[0]):
        outer = sc.Ellipsoid.centered(w_tables[k])
        if not sc.is_positive_definite(outer.shape):
            continue
        inner = sc.affine_map(phi1, sc.Ellipsoid.centered(w_tables[k - 1]))
        pts = sc.sample_ellipsoid(inner, rng, samples, boundary=True)
        worst = min(worst, float(membership_margins(outer, pts).min()))
    return worst


def check_reach(problem, tables: OfflineTables, seed: int, scale: float = 1.0) -> SuiteReport:
    report = SuiteReport("reach")
    n_signals = max(4, int(round(1000 * scale)))
    substeps = 16
    configs = [(problem, tables, "config")]
    configs += [
        (p, build_offline_tables(p), f"random-{i}")
        for i, p in enumerate(random_problems(seed, max(1, int(round(20 * scale)))))
    ]
    for idx, (prob, tab, label) in enumerate(configs):
        rng = _rng(seed, "reach", idx)
        plant, k_max = prob.plant, prob.trigger.kappa_max
        h = prob.controller.h
        steps = k_max * substeps
        signals = [_random_signal(rng, prob.wbar, steps) for _ in range(n_signals)]
        # trajectories reaching the support along each direction, stopped at kappa then zero
        for l in prob.reach.direction_set(plant.n_x):
            for kappa in sorted({1, max(1, k_max // 2), k_max}):
                sig = np.zeros((steps, plant.n_w))
                sig[: kappa * substeps] = _support_signal(plant, prob.wbar, l, kappa, h, substeps)
                signals.append(sig)
        _reach_check(
            report, plant, tab.dist.W, h, k_max, signals, substeps,
            {"seed": seed, "system": label},
        )
        report.notes[f"monotone_margin[{label}]"] = _monotone_margin(
            rng, tab.trans.PhiP[1], tab.dist.W, 200
        )
    return report


# --- trigger bound ------------------------------------------------------------


def _trigger_samples(report, prob, tab, rng, count: int, tag: dict):
    n_x, n_c, n_y = prob.plant.n_x, prob.controller.n_c, prob.plant.n_y
    k_max = tab.trig.kappa_max
    v_set = sc.Ellipsoid.centered(prob.v)
    for j in range(count):
        kappa = int(rng.integers(1, k_max + 1))
        mag = 10.0 ** rng.uniform(-2, 1)
        p = info_vector(mag * rng.normal(size=n_x), mag * rng.normal(size=n_c), mag * rng.normal(size=n_y))
        x_shape = sc.random_psd(rng, n_x, 10.0 ** rng.uniform(-4, 0), None)
        boundary = rng.random() < 0.5
        e = sc.sample_ellipsoid(sc.Ellipsoid.centered(x_shape), rng, 1, boundary)[0]
        d = sc.sample_ellipsoid(sc.Ellipsoid.centered(tab.dist.W[kappa]), rng, 1, boundary)[0]
        v = sc.sample_ellipsoid(v_set, rng, 1, boundary)[0]
        bound = eta_bar(kappa, p, x_shape, tab.trig)
        value = eta_prime(kappa, p, e, v, d, tab.trig)
        margin = (bound - value) / (1.0 + abs(bound))
        report.record(margin, margin < -1e-9, sample=j, kappa=kappa, **tag)


def check_trigger(problem, tables: OfflineTables, seed: int, scale: float = 1.0) -> SuiteReport:
    report = SuiteReport("trigger")
    count = max(10, int(round(10000 * scale)))
    _trigger_samples(report, problem, tables, _rng(seed, "trigger", 0), count, {"seed": seed, "system": "config"})
    for i, prob in enumerate(random_problems(seed + 1, max(1, int(round(20 * scale))))):
        tab = build_offline_tables(prob)
        _trigger_samples(
            report, prob, tab, _rng(seed, "trigger", i + 1), count, {"seed": seed, "system": f"random-{i}"}
        )
    return report


# --- estimator / closed loop ------------------------------------------------------------


def _estimator_run(args) -> dict:
    problem, tables, scenario = args
    trace = run_closed_loop(problem, tables, scenario, Mode.PSTC, reference=True)
    return {
        "seed": scenario.seed,
        "periods": len(trace.rows),
        "containment_failures": containment_failures(trace),
        "lower_bound_violations": lower_bound_violations(trace),
        "diverged": trace.diverged,
    }


def check_estimator(
    problem, tables: OfflineTables, seed: int, scale: float = 1.0, workers: int = 1
) -> SuiteReport:
    report = SuiteReport("estimator")
    runs = max(1, int(round(500 * scale)))
    base = problem.scenarios.get("noisy") or problem.scenario()
    if base.noise.kind == "zero":
        base = replace(base, noise=NoiseSpec("uniform"))
    jobs = [(problem, tables, replace(base, seed=seed + i)) for i in range(runs)]
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_estimator_run, jobs))
    else:
        results = [_estimator_run(job) for job in jobs]
    for res in results:
        bad = res["containment_failures"] + res["lower_bound_violations"] + int(res["diverged"])
        report.record(-float(bad), bad > 0, **res)
        report.samples += res["periods"] - 1
    report.notes["runs"] = runs
    return report


# --- random systems ---------------------------------------------------------------


def random_problem(rng: np.random.Generator, kappa_max: int = 5, deterministic: bool = False):
    """Random observable 2-4 state plant with a small dynamic output controller.

    ``deterministic`` zeroes the disturbance and noise bounds and starts from a
    point estimate at the scenario's initial state.
    """
    n = int(rng.integers(2, 5))
    n_u, n_y = 1, int(rng.integers(1, 3))
    while True:
        ap = rng.normal(size=(n, n))
        if deterministic:
            ap -= (np.max(np.linalg.eigvals(ap).real) + 0.5) * np.eye(n)
        cp = rng.normal(size=(n_y, n))
        try:
            plant = PlantModel(ap, rng.normal(size=(n, n_u)), cp, rng.normal(size=(n, 1)))
            break
        except ValueError:
            continue
    h = 0.05
    controller = ControllerModel(
        [[0.9]], 0.05 * rng.normal(size=(1, n_y)), 0.5 * rng.normal(size=(n_u, 1)),
        -0.5 * rng.normal(size=(n_u, n_y)), h,
    )
    x_p0 = tuple(rng.normal(size=n))
    scenario = ScenarioConfig(name="random", duration=30 * h, x_p0=x_p0, x_c0=(0.0,))
    if deterministic:
        wbar, v = np.zeros((1, 1)), np.zeros((n_y, n_y))
        x0 = sc.Ellipsoid.point(x_p0)
    else:
        wbar = np.array([[10.0 ** rng.uniform(-3, -1)]])
        v = sc.random_psd(rng, n_y, 1e-3, 1e-5)
        x0 = None
    return ProblemConfig(
        name="random",
        plant=plant,
        controller=controller,
        trigger=TriggerConfig(sigma=float(rng.uniform(0.05, 0.5)), epsilon=0.0, kappa_max=kappa_max),
        wbar=wbar,
        v=v,
        x0=x0,
        reach=ReachConfig(substeps=8),
        fusion=FusionMode(),
        scenarios={"random": scenario},
    )


def random_problems(seed: int, count: int, **kwargs) -> list:
    rng = np.random.default_rng([seed, 99])
    return [random_problem(rng, **kwargs) for _ in range(count)]


# --- driver ------------------------------------------------------------------------


def run_suites(
    problem,
    tables: OfflineTables,
    suites: Sequence[str] = SUITES,
    seed: int = 0,
    scale: float = 1.0,
    workers: int = 1,
) -> List[SuiteReport]:
    """Run the requested suites concurrently over shared read-only tables."""
    checks = {
        "setcalc": lambda: check_setcalc(problem, tables, seed, scale),
        "reach": lambda: check_reach(problem, tables, seed, scale),
        "estimator": lambda: check_estimator(problem, tables, seed, scale, workers),
        "trigger": lambda: check_trigger(problem, tables, seed, scale),
    }
    unknown = [s for s in suites if s not in checks]
    if unknown:
        raise ValueError(f"unknown suites: {', '.join(unknown)}")

    def timed(name):
        started = time.perf_counter()
        report = checks[name]()
        report.elapsed = time.perf_counter() - started
        logger.info("suite %s: %d samples, %d violations", name, report.samples, report.violations)
        return report

    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(suites)))) as pool:
        return list(pool.map(timed, suites))
