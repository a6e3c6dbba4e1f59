"""
Closed-loop simulation: plant + output-feedback controller + sampler.

Three samplers share the same plant, controller and pre-drawn noise and
disturbance streams:

- ``pstc``: the preventive self-trigger. At each sampling instant the
  estimate is corrected, the next instant kappa* is chosen from the bound on
  the triggering function and the estimate is predicted kappa* periods ahead.
- ``petc``: the periodic event trigger, evaluated on the true signals every
  period.
- ``periodic``: samples every period.

The controller runs every period with the held output; plant and controller
outputs only change at sampling instants.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .estimator import EstimatorState, correct, init_ingest, predict
from .offline import OfflineTables
from .setcalc import Ellipsoid, SetCalcError, contains, psd_factor, sample_ellipsoid
from .sysmodel import PlantModel, discretize_zoh
from .trigger import info_vector, scan_kappa, trigger_value

logger = logging.getLogger(__name__)

DEFAULT_SIM_SUBSTEPS = 16
DIVERGENCE_LIMIT = 1e12
CONTAINMENT_TOL = 1e-6
SCHEDULE_EPS = 1e-12


class Mode(str, Enum):
    PSTC = "pstc"
    PETC = "petc"
    PERIODIC = "periodic"


class ScenarioError(ValueError):
    """A scenario is inconsistent with the problem it is run on."""


@dataclass(frozen=True)
class DisturbanceSpec:
    """How w(t) is generated, one constant value per simulation substep.

    kind ``zero``; ``schedule``, a tuple of (until, value) pairs where value
    applies while t <= until and zero after the last entry; ``random``,
    uniform samples in E(0, Wbar).
    """

    kind: str = "zero"
    schedule: Tuple[Tuple[float, Tuple[float, ...]], ...] = ()

    def __post_init__(self):
        if self.kind not in ("zero", "schedule", "random"):
            raise ScenarioError(f"unknown disturbance kind '{self.kind}'")
        sched = tuple((float(t), tuple(float(x) for x in np.atleast_1d(v))) for t, v in self.schedule)
        object.__setattr__(self, "schedule", tuple(sorted(sched, key=lambda s: s[0])))

    def value_at(self, t: float, n_w: int) -> np.ndarray:
        for until, value in self.schedule:
            if t <= until + SCHEDULE_EPS:
                return np.asarray(value)
        return np.zeros(n_w)

    def sample(self, rng, periods: int, substeps: int, h: float, wbar: np.ndarray) -> np.ndarray:
        n_w = wbar.shape[0]
        if self.kind == "zero" or periods == 0:
            return np.zeros((periods, substeps, n_w))
        if self.kind == "random":
            draws = sample_ellipsoid(Ellipsoid.centered(wbar), rng, periods * substeps)
            return draws.reshape(periods, substeps, n_w)
        delta = h / substeps
        out = np.empty((periods, substeps, n_w))
        for k in range(periods):
            for i in range(substeps):
                out[k, i] = self.value_at(k * h + i * delta, n_w)
        return out


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise: ``zero`` or ``uniform`` per coordinate.

    With ``amplitude=None`` the uniform box is the largest one inscribed in
    E(0, V), mapped through a factor of V when V is not spherical.
    """

    kind: str = "zero"
    amplitude: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("zero", "uniform"):
            raise ScenarioError(f"unknown noise kind '{self.kind}'")
        if self.amplitude is not None and self.amplitude < 0:
            raise ScenarioError("noise amplitude must be non-negative")

    def sample(self, rng, periods: int, v: np.ndarray) -> np.ndarray:
        n_y = v.shape[0]
        if self.kind == "zero":
            return np.zeros((periods, n_y))
        unit = rng.uniform(-1.0, 1.0, size=(periods, n_y))
        if self.amplitude is not None:
            return self.amplitude * unit
        return unit @ psd_factor(v).T / np.sqrt(n_y)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    duration: float
    x_p0: Tuple[float, ...]
    x_c0: Tuple[float, ...] = ()
    disturbance: DisturbanceSpec = DisturbanceSpec()
    noise: NoiseSpec = NoiseSpec()
    substeps: int = DEFAULT_SIM_SUBSTEPS
    seed: int = 0
    allow_violation: bool = False

    def __post_init__(self):
        if self.duration < 0:
            raise ScenarioError("scenario duration must be non-negative")
        if self.substeps < 1:
            raise ScenarioError("scenario substeps must be positive")
        object.__setattr__(self, "x_p0", tuple(float(x) for x in self.x_p0))
        object.__setattr__(self, "x_c0", tuple(float(x) for x in self.x_c0))

    def with_overrides(self, **changes) -> "ScenarioConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


class PlantSimulator:
    """Exact sampled plant response with w held constant over each of ``substeps``."""

    def __init__(self, plant: PlantModel, h: float, substeps: int = DEFAULT_SIM_SUBSTEPS):
        self.plant = plant
        self.h = h
        self.substeps = substeps
        delta = h / substeps
        self.phi_d, self.gamma_d = discretize_zoh(plant.Ap, plant.Bp, delta)
        _, self.gamma_wd = discretize_zoh(plant.Ap, plant.E, delta)
        n = plant.n_x
        self.phi_h = np.eye(n)
        self.gamma_h = np.zeros_like(self.gamma_d)
        lifted = []
        for _ in range(substeps):
            lifted.insert(0, self.phi_h @ self.gamma_wd)
            self.gamma_h = self.phi_d @ self.gamma_h + self.gamma_d
            self.phi_h = self.phi_d @ self.phi_h
        # row i of a period's w maps through phi_d^(substeps-1-i) gamma_wd
        self.w_map = np.hstack(lifted)

    def disturbance_effect(self, w: np.ndarray) -> np.ndarray:
        """State increments caused by per-period disturbance blocks (periods x substeps x n_w)."""
        return w.reshape(w.shape[0], -1) @ self.w_map.T

    def advance(self, xi: np.ndarray, u: np.ndarray, w_effect: np.ndarray) -> np.ndarray:
        return self.phi_h @ xi + self.gamma_h @ u + w_effect


def simulate_plant_interval(
    plant: PlantModel, xi, u, w_signal, h: float, kappa: int, substeps: int = DEFAULT_SIM_SUBSTEPS
) -> np.ndarray:
    """State after ``kappa`` periods of held input ``u``.

    ``w_signal`` holds one disturbance value per substep, shape
    (kappa * substeps, n_w); ``None`` means no disturbance.
    """
    phi, gamma = discretize_zoh(plant.Ap, plant.Bp, h / substeps)
    _, gamma_w = discretize_zoh(plant.Ap, plant.E, h / substeps)
    if w_signal is None:
        w_signal = np.zeros((kappa * substeps, plant.n_w))
    w_signal = np.asarray(w_signal, dtype=float).reshape(kappa * substeps, plant.n_w)
    x = np.asarray(xi, dtype=float)
    u = np.asarray(u, dtype=float)
    for wi in w_signal:
        x = phi @ x + gamma @ u + gamma_w @ wi
    return x


@dataclass(frozen=True, eq=False)
class Streams:
    """Pre-drawn noise and disturbance for every period of a run plus look-ahead."""

    noise: np.ndarray
    w: np.ndarray
    w_effect: np.ndarray


def _outside(samples: np.ndarray, shape: np.ndarray, tol: float = 1e-9) -> int:
    if samples.size == 0:
        return 0
    mp = np.linalg.pinv(shape, 1e-10)
    quad = np.einsum("ij,jk,ik->i", samples, mp, samples)
    off = samples - samples @ (shape @ mp).T
    off_range = np.linalg.norm(off, axis=1) > tol * np.maximum(1.0, np.linalg.norm(samples, axis=1))
    return int(np.sum((quad > 1.0 + tol) | off_range))


def draw_streams(problem, scenario: ScenarioConfig, periods: int, sim: PlantSimulator) -> Streams:
    noise_seq, dist_seq = np.random.SeedSequence(scenario.seed).spawn(2)
    noise = scenario.noise.sample(np.random.default_rng(noise_seq), periods, problem.v)
    w = scenario.disturbance.sample(
        np.random.default_rng(dist_seq), periods, sim.substeps, sim.h, problem.wbar
    )
    bad_noise = _outside(noise, problem.v)
    bad_w = _outside(w.reshape(-1, problem.wbar.shape[0]), problem.wbar)
    if bad_noise or bad_w:
        msg = (
            f"scenario '{scenario.name}': {bad_noise} noise and {bad_w} disturbance "
            "samples fall outside their bounds"
        )
        if not scenario.allow_violation:
            raise ScenarioError(msg)
        logger.warning(msg)
    return Streams(noise, w, sim.disturbance_effect(w))


@dataclass(frozen=True, eq=False)
class LoopSnapshot:
    k: int
    xi_p: np.ndarray
    x_c: np.ndarray
    y_held: np.ndarray
    u_held: np.ndarray


@dataclass(frozen=True, eq=False)
class TraceRow:
    k: int
    t: float
    xi_p: np.ndarray
    x_c: np.ndarray
    y: np.ndarray
    u: np.ndarray
    nu: np.ndarray
    w: np.ndarray
    trigger: bool
    kappa: int
    petc_kappa: int
    eta_bar: Tuple[float, ...]
    est_center: Optional[np.ndarray]
    est_trace: float
    contained: Optional[bool]


@dataclass
class SimTrace:
    mode: str
    h: float
    dims: Dict[str, int]
    rows: List[TraceRow] = field(default_factory=list)
    diverged: bool = False
    model_violations: int = 0
    init_time: Optional[float] = None
    timings: Dict[str, List[float]] = field(
        default_factory=lambda: {"fusion": [], "eta_bar": [], "prediction": [], "cycle": []}
    )

    def trigger_rows(self) -> List[TraceRow]:
        return [r for r in self.rows if r.trigger]

    def state_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(r.xi_p) for r in self.rows])


class PstcStep(NamedTuple):
    u: np.ndarray
    kappa: int
    estimator: EstimatorState
    eta_bars: Tuple[float, ...]
    corrected: EstimatorState
    violation: bool
    timings: Dict[str, float]


def pstc_step(x_c, y, est: EstimatorState, problem, tables: OfflineTables) -> PstcStep:
    """One sampling instant of the self-trigger: control, correct, schedule, predict."""
    ctrl = problem.controller
    y = np.asarray(y, dtype=float)
    u = ctrl.Cc @ np.asarray(x_c, dtype=float) + ctrl.Dc @ y

    started = time.perf_counter()
    corrected = correct(est, y, problem.v, problem.plant.Cp, problem.fusion)
    t_fusion = time.perf_counter()
    p = info_vector(corrected.estimate.center, x_c, y)
    kappa, etas = scan_kappa(
        p, corrected.estimate.shape, tables.trig, problem.trigger.epsilon, problem.trigger.kappa_max
    )
    t_eta = time.perf_counter()
    predicted = predict(corrected, u, kappa, tables.trans, tables.dist)
    t_pred = time.perf_counter()
    timings = {
        "fusion": t_fusion - started,
        "eta_bar": t_eta - t_fusion,
        "prediction": t_pred - t_eta,
    }
    return PstcStep(u, kappa, predicted, etas, corrected, corrected is est, timings)


def petc_reference_time(
    snapshot: LoopSnapshot, problem, tables: OfflineTables, sim: PlantSimulator, streams: Streams
) -> int:
    """First period after ``snapshot`` at which the event trigger would fire on the true loop."""
    ctrl = problem.controller
    threshold = problem.trigger.epsilon**2
    k_max = problem.trigger.kappa_max
    held = np.concatenate([snapshot.y_held, snapshot.u_held])
    xi, xc = snapshot.xi_p, snapshot.x_c
    for kappa in range(1, k_max + 1):
        k = snapshot.k + kappa
        xc = ctrl.Ac @ xc + ctrl.Bc @ snapshot.y_held
        xi = sim.advance(xi, snapshot.u_held, streams.w_effect[k - 1])
        y = problem.plant.Cp @ xi + streams.noise[k]
        z = np.concatenate([y, ctrl.Cc @ xc + ctrl.Dc @ snapshot.y_held])
        if trigger_value(z, held, tables.trig) > threshold:
            return kappa
    return k_max


def run_closed_loop(
    problem,
    tables: OfflineTables,
    scenario: ScenarioConfig,
    mode=Mode.PSTC,
    reference: bool = True,
) -> SimTrace:
    """Simulate ``scenario.duration`` time units; one trace row per controller period.

    In PSTC mode ``reference`` also computes, at every sampling instant, the
    event-trigger time from the same true state and the same future noise.
    """
    mode = Mode(mode)
    plant, ctrl = problem.plant, problem.controller
    h = ctrl.h
    k_max = problem.trigger.kappa_max
    threshold = problem.trigger.epsilon**2
    periods = int(round(scenario.duration / h))
    sim = PlantSimulator(plant, h, scenario.substeps)
    streams = draw_streams(problem, scenario, periods + k_max + 1, sim)
    dims = {"n_x": plant.n_x, "n_c": ctrl.n_c, "n_y": plant.n_y, "n_u": plant.n_u, "n_w": plant.n_w}
    trace = SimTrace(mode=mode.value, h=h, dims=dims)

    xi = np.asarray(scenario.x_p0, dtype=float)
    xc = np.asarray(scenario.x_c0, dtype=float)
    if xc.size == 0:
        xc = np.zeros(ctrl.n_c)
    if xi.size != plant.n_x or xc.size != ctrl.n_c:
        raise ScenarioError(
            f"scenario '{scenario.name}' initial states have sizes {xi.size}/{xc.size}, "
            f"models need {plant.n_x}/{ctrl.n_c}"
        )
    if problem.x0 is not None:
        est = EstimatorState.running(problem.x0)
    else:
        est = EstimatorState.initializing()
    init_started = None
    anchor = None
    y_held = u_held = None
    next_trigger = 0
    last_trigger = 0

    for k in range(periods):
        cycle_started = time.perf_counter()
        y = plant.Cp @ xi + streams.noise[k]
        if mode is Mode.PERIODIC:
            fired = True
        elif mode is Mode.PETC:
            fired = y_held is None or k - last_trigger >= k_max
            if not fired:
                z = np.concatenate([y, ctrl.Cc @ xc + ctrl.Dc @ y_held])
                fired = trigger_value(z, np.concatenate([y_held, u_held]), tables.trig) > threshold
        else:
            fired = k == next_trigger

        kappa, petc_kappa, etas = 0, -1, ()
        current = None
        if fired:
            u = ctrl.Cc @ xc + ctrl.Dc @ y
            if mode is Mode.PERIODIC:
                kappa = 1
            elif mode is Mode.PSTC:
                if not est.is_running:
                    if init_started is None:
                        init_started = time.perf_counter()
                    est = init_ingest(est, y, u, tables.init)
                    if est.is_running:
                        trace.init_time = time.perf_counter() - init_started
                    else:
                        kappa = 1
                if est.is_running:
                    try:
                        step = pstc_step(xc, y, est, problem, tables)
                    except (SetCalcError, ArithmeticError) as exc:
                        logger.warning("estimator broke down at k=%d: %s", k, exc)
                        trace.diverged = True
                        break
                    u, kappa, est, etas = step.u, step.kappa, step.estimator, step.eta_bars
                    current = step.corrected.estimate
                    anchor = (current, u, k)
                    trace.model_violations += int(step.violation)
                    for phase, seconds in step.timings.items():
                        trace.timings[phase].append(seconds)
                next_trigger = k + kappa
                if reference:
                    snap = LoopSnapshot(k, xi, xc, y, u)
                    petc_kappa = petc_reference_time(snap, problem, tables, sim, streams)
            y_held, u_held = y, u
            last_trigger = k
        elif anchor is not None:
            base, u_anchor, k_anchor = anchor
            current = predict(
                EstimatorState.running(base), u_anchor, k - k_anchor, tables.trans, tables.dist
            ).estimate

        trace.rows.append(
            TraceRow(
                k=k,
                t=k * h,
                xi_p=xi,
                x_c=xc,
                y=y,
                u=u_held,
                nu=streams.noise[k],
                w=streams.w[k].mean(axis=0),
                trigger=fired,
                kappa=kappa,
                petc_kappa=petc_kappa,
                eta_bar=etas,
                est_center=None if current is None else current.center,
                est_trace=np.nan if current is None else current.trace,
                contained=None if current is None else contains(current, xi, CONTAINMENT_TOL),
            )
        )
        xc = ctrl.Ac @ xc + ctrl.Bc @ y_held
        xi = sim.advance(xi, u_held, streams.w_effect[k])
        if mode is Mode.PSTC:
            trace.timings["cycle"].append(time.perf_counter() - cycle_started)
        if not np.all(np.isfinite(xi)) or np.linalg.norm(xi) > DIVERGENCE_LIMIT:
            logger.warning("state diverged at k=%d", k)
            trace.diverged = True
            break

    if mode is Mode.PETC:
        _fill_event_gaps(trace, periods)
    return trace


def _fill_event_gaps(trace: SimTrace, periods: int):
    # PETC only learns its inter-event time at the next event
    fired = [i for i, r in enumerate(trace.rows) if r.trigger]
    for here, nxt in zip(fired, fired[1:] + [None]):
        row = trace.rows[here]
        gap = (trace.rows[nxt].k if nxt is not None else periods) - row.k
        trace.rows[here] = replace(row, kappa=gap)


def window_stats(trace: SimTrace, t_start: float, t_end: float) -> Dict[str, Optional[float]]:
    """Inter-sample times (in periods) of sampling instants with t_start <= t <= t_end.

    An empty window has count 0 and no mean or median.
    """
    kappas = [
        r.kappa for r in trace.rows if r.trigger and t_start - 1e-9 <= r.t <= t_end + 1e-9
    ]
    if not kappas:
        return {"count": 0, "mean": None, "median": None}
    return {
        "count": len(kappas),
        "mean": float(np.mean(kappas)),
        "median": float(np.median(kappas)),
    }


def decay_rate(trace: SimTrace) -> float:
    """Average exponential decay rate of |xi| over the run (positive when converging)."""
    norms = trace.state_norms()
    if norms.size < 2 or norms[0] <= 0 or norms[-1] <= 0:
        return float("nan")
    span = trace.rows[-1].t - trace.rows[0].t
    return float(np.log(norms[0] / norms[-1]) / span)


def lower_bound_violations(trace: SimTrace) -> int:
    return sum(1 for r in trace.rows if r.trigger and 0 <= r.petc_kappa < r.kappa)


def containment_failures(trace: SimTrace) -> int:
    return sum(1 for r in trace.rows if r.contained is False)


def _timing_stats(values: List[float]) -> Dict[str, float]:
    if not values:
        return {"count": 0, "mean_ms": 0.0, "max_ms": 0.0, "total_ms": 0.0}
    arr = 1e3 * np.asarray(values)
    return {
        "count": int(arr.size),
        "mean_ms": float(arr.mean()),
        "max_ms": float(arr.max()),
        "total_ms": float(arr.sum()),
    }


def _finite_or_none(x: float) -> Optional[float]:
    return float(x) if np.isfinite(x) else None


def summarize(trace: SimTrace) -> dict:
    """JSON-ready run summary."""
    triggered = [r.kappa for r in trace.trigger_rows() if r.kappa > 0]
    norms = trace.state_norms()
    summary = {
        "mode": trace.mode,
        "periods": len(trace.rows),
        "duration": len(trace.rows) * trace.h,
        "triggers": len(trace.trigger_rows()),
        "kappa_mean": float(np.mean(triggered)) if triggered else None,
        "kappa_min": int(min(triggered)) if triggered else None,
        "kappa_max": int(max(triggered)) if triggered else None,
        "initial_state_norm": float(norms[0]) if norms.size else None,
        "final_state_norm": float(norms[-1]) if norms.size else None,
        "decay_rate": _finite_or_none(decay_rate(trace)),
        "diverged": trace.diverged,
        "model_violations": trace.model_violations,
        "containment_failures": containment_failures(trace),
        "lower_bound_violations": lower_bound_violations(trace),
        "init_time_ms": None if trace.init_time is None else 1e3 * trace.init_time,
        "timing": {phase: _timing_stats(v) for phase, v in trace.timings.items()},
    }
    return summary
