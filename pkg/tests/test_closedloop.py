from dataclasses import replace

import numpy as np
import pytest

from pstc.closedloop import (
    DisturbanceSpec,
    Mode,
    NoiseSpec,
    PlantSimulator,
    ScenarioConfig,
    ScenarioError,
    pstc_step,
    run_closed_loop,
    simulate_plant_interval,
    summarize,
    window_stats,
)
from pstc.estimator import EstimatorState
from pstc.offline import build_offline_tables
from pstc.setcalc import Ellipsoid
from pstc.validate import random_problems


def _short(problem, name="noisy", duration=1.0, **changes):
    return replace(problem.scenario(name), duration=duration, **changes)


def test_simulate_plant_interval_scalar(scalar_plant) -> None:
    t = 0.3
    free = simulate_plant_interval(scalar_plant, [1.0], [0.0], None, 0.1, 3)
    assert free[0] == pytest.approx(np.exp(-t))
    forced = simulate_plant_interval(scalar_plant, [1.0], [1.0], None, 0.1, 3)
    assert forced[0] == pytest.approx(np.exp(-t) + (1.0 - np.exp(-t)))
    w = np.full((3 * 16, 1), 0.5)
    pushed = simulate_plant_interval(scalar_plant, [0.0], [0.0], w, 0.1, 3)
    assert pushed[0] == pytest.approx(0.5 * (1.0 - np.exp(-t)))


def test_lifted_simulator_matches_substeps(batch_problem, rng) -> None:
    plant, h = batch_problem.plant, batch_problem.controller.h
    sim = PlantSimulator(plant, h, 16)
    xi, u = rng.normal(size=4), rng.normal(size=2)
    w = rng.uniform(-0.1, 0.1, size=(1, 16, 1))
    lifted = sim.advance(xi, u, sim.disturbance_effect(w)[0])
    stepped = simulate_plant_interval(plant, xi, u, w[0], h, 1, 16)
    assert np.allclose(lifted, stepped, rtol=1e-10, atol=1e-12)


def test_scenario_validation() -> None:
    with pytest.raises(ScenarioError):
        ScenarioConfig(name="bad", duration=-1.0, x_p0=(0.0,))
    with pytest.raises(ScenarioError):
        DisturbanceSpec(kind="sine")
    with pytest.raises(ScenarioError):
        NoiseSpec(kind="gaussian")


def test_pstc_step(batch_problem, batch_tables) -> None:
    est = EstimatorState.running(Ellipsoid.ball([1.0, -1.0, -1.0, 1.0], 0.1))
    y = batch_problem.plant.Cp @ np.array([1.0, -1.0, -1.0, 1.0])
    step = pstc_step(np.zeros(2), y, est, batch_problem, batch_tables)
    assert 1 <= step.kappa <= 25
    assert len(step.eta_bars) == step.kappa
    assert step.estimator.is_running
    assert not step.violation
    assert step.corrected.estimate.trace <= est.estimate.trace + 1e-12
    assert set(step.timings) == {"fusion", "eta_bar", "prediction"}


def test_pstc_never_waits_longer_than_petc(batch_problem, batch_tables) -> None:
    trace = run_closed_loop(batch_problem, batch_tables, _short(batch_problem), Mode.PSTC)
    summary = summarize(trace)
    assert not trace.diverged
    assert summary["triggers"] > 0
    assert summary["lower_bound_violations"] == 0
    assert summary["containment_failures"] == 0
    assert trace.init_time is not None
    for row in trace.trigger_rows():
        assert 1 <= row.kappa <= 25
        assert row.petc_kappa >= row.kappa


def test_runs_are_deterministic(batch_problem, batch_tables) -> None:
    scenario = _short(batch_problem, duration=0.5)
    a = run_closed_loop(batch_problem, batch_tables, scenario, Mode.PSTC)
    b = run_closed_loop(batch_problem, batch_tables, scenario, Mode.PSTC)
    assert np.array_equal(a.state_norms(), b.state_norms())
    assert [r.kappa for r in a.rows] == [r.kappa for r in b.rows]


def test_petc_heartbeat(batch_problem, batch_tables) -> None:
    lazy = batch_problem.with_epsilon(1e6)
    trace = run_closed_loop(lazy, batch_tables, _short(lazy, "noiseless"), Mode.PETC)
    assert [r.k for r in trace.trigger_rows()] == [0, 25, 50, 75]
    assert [r.kappa for r in trace.trigger_rows()] == [25, 25, 25, 25]


def test_periodic_samples_every_period(batch_problem, batch_tables) -> None:
    trace = run_closed_loop(batch_problem, batch_tables, _short(batch_problem, duration=0.2), Mode.PERIODIC)
    assert len(trace.rows) == 20
    assert all(r.trigger and r.kappa == 1 for r in trace.rows)


def test_zero_duration(batch_problem, batch_tables) -> None:
    trace = run_closed_loop(batch_problem, batch_tables, _short(batch_problem, duration=0.0))
    assert trace.rows == []
    summary = summarize(trace)
    assert summary["periods"] == 0
    assert summary["decay_rate"] is None


def test_inadmissible_noise_rejected(batch_problem, batch_tables) -> None:
    loud = _short(batch_problem, duration=0.1, noise=NoiseSpec("uniform", 1.0))
    with pytest.raises(ScenarioError):
        run_closed_loop(batch_problem, batch_tables, loud)
    trace = run_closed_loop(batch_problem, batch_tables, replace(loud, allow_violation=True), Mode.PERIODIC)
    assert len(trace.rows) == 10


def test_window_stats(batch_problem, batch_tables) -> None:
    lazy = batch_problem.with_epsilon(1e6)
    trace = run_closed_loop(lazy, batch_tables, _short(lazy, "noiseless"), Mode.PETC)
    stats = window_stats(trace, 0.0, 0.4)
    assert stats == {"count": 2, "mean": 25.0, "median": 25.0}
    assert window_stats(trace, 0.9, 0.95) == {"count": 0, "mean": None, "median": None}


@pytest.mark.parametrize("seed", range(10))
def test_noiseless_pstc_matches_petc(seed) -> None:
    problem = random_problems(seed, 1, deterministic=True)[0]
    tables = build_offline_tables(problem)
    trace = run_closed_loop(problem, tables, problem.scenario(), Mode.PSTC)
    rows = trace.trigger_rows()
    assert rows
    for row in rows:
        assert row.kappa == row.petc_kappa


@pytest.mark.slow
def test_noiseless_pstc_matches_petc_many() -> None:
    for seed in range(100, 150):
        problem = random_problems(seed, 1, deterministic=True)[0]
        tables = build_offline_tables(problem)
        trace = run_closed_loop(problem, tables, problem.scenario(), Mode.PSTC)
        assert all(r.kappa == r.petc_kappa for r in trace.trigger_rows())


@pytest.mark.slow
def test_noiseless_scenario_converges(batch_problem, batch_tables) -> None:
    scenario = batch_problem.scenario("noiseless")
    pstc = summarize(run_closed_loop(batch_problem, batch_tables, scenario, Mode.PSTC))
    petc = summarize(run_closed_loop(batch_problem, batch_tables, scenario, Mode.PETC))
    for s in (pstc, petc):
        assert not s["diverged"]
        assert s["final_state_norm"] < 0.01 * s["initial_state_norm"]
    assert 0.5 <= pstc["decay_rate"] / petc["decay_rate"] <= 2.0
    assert pstc["lower_bound_violations"] == 0


@pytest.mark.slow
def test_larger_threshold_samples_less(batch_problem, batch_tables) -> None:
    scenario = batch_problem.scenario("noisy")
    tight = run_closed_loop(batch_problem, batch_tables, scenario)
    loose = run_closed_loop(batch_problem.with_epsilon(0.1), batch_tables, scenario)
    assert window_stats(tight, 8.0, 10.0)["median"] == 1.0
    assert window_stats(loose, 6.0, 10.0)["mean"] >= 2.0 * window_stats(tight, 6.0, 10.0)["mean"]
