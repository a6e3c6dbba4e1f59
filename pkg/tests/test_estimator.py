import numpy as np
import pytest

from pstc.estimator import (
    EstimatorState,
    FusionMode,
    ModelViolationWarning,
    build_init_tables,
    correct,
    cylinder_intersection_outer,
    init_ingest,
    observability_index,
    predict,
)
from pstc.reach import build_disturbance_tables
from pstc.setcalc import Ellipsoid, EllipticalCylinder, SetCalcError, contains
from pstc.sysmodel import ModelError, PlantModel, TriggerConfig, build_transition_tables


def _tables(plant, static_gain, v, wbar=1e-4, kappa_max=3, h=0.1):
    ctrl = static_gain(n_u=plant.n_u, n_y=plant.n_y, h=h)
    trans = build_transition_tables(plant, ctrl, TriggerConfig(0.1, kappa_max=kappa_max))
    dist = build_disturbance_tables(plant, [[wbar]], h, kappa_max)
    return trans, dist, build_init_tables(plant.Cp, trans, dist, v)


def test_observability_index(double_integrator) -> None:
    assert observability_index(np.eye(2), np.eye(2)) == 0
    assert observability_index(np.array([[1.0, 0.1], [0.0, 1.0]]), double_integrator.Cp) == 1
    with pytest.raises(ModelError):
        observability_index(np.eye(2), np.array([[1.0, 0.0]]))


def test_init_with_full_state_output(static_gain) -> None:
    plant = PlantModel([[0.0, 1.0], [-1.0, 0.0]], [[0.0], [1.0]], np.eye(2), [[0.0], [1.0]])
    v = 1e-2 * np.eye(2)
    _, _, init = _tables(plant, static_gain, v)
    assert init.kbar == 0
    state = init_ingest(EstimatorState.initializing(), [1.0, 2.0], np.zeros(2), init)
    assert state.is_running
    assert np.allclose(state.estimate.center, [1.0, 2.0])
    assert np.allclose(state.estimate.shape, v)
    with pytest.raises(ValueError):
        init_ingest(state, [1.0, 2.0], np.zeros(2), init)


def test_init_double_integrator_recovers_state(double_integrator, static_gain) -> None:
    trans, _, init = _tables(double_integrator, static_gain, np.array([[1e-4]]))
    assert init.kbar == 1
    x0 = np.array([1.0, -0.5])
    u0 = np.array([0.3])
    x1 = trans.PhiP[1] @ x0 + trans.GammaP[1] @ u0
    state = init_ingest(EstimatorState.initializing(), double_integrator.Cp @ x0, u0, init)
    assert not state.is_running
    assert state.step == 1
    state = init_ingest(state, double_integrator.Cp @ x1, np.array([0.0]), init)
    assert state.is_running
    assert np.allclose(state.estimate.center, x1, atol=1e-9)
    assert contains(state.estimate, x1)


def test_cylinder_intersection_outer() -> None:
    cyls = [
        EllipticalCylinder([1.0], [[1.0]], [[1.0, 0.0]]),
        EllipticalCylinder([2.0], [[1.0]], [[0.0, 1.0]]),
    ]
    outer = cylinder_intersection_outer(cyls)
    assert np.allclose(outer.center, [1.0, 2.0])
    assert np.allclose(outer.shape, 2.0 * np.eye(2))
    for corner in ([0.0, 1.0], [2.0, 3.0], [0.0, 3.0], [2.0, 1.0]):
        assert contains(outer, corner)


def test_cylinder_intersection_rank_deficient() -> None:
    cyls = [
        EllipticalCylinder([1.0], [[1.0]], [[1.0, 0.0]]),
        EllipticalCylinder([2.0], [[1.0]], [[2.0, 0.0]]),
    ]
    with pytest.raises(SetCalcError):
        cylinder_intersection_outer(cyls)
    with pytest.raises(SetCalcError):
        cylinder_intersection_outer(cyls[:1], mu=[0.5])


def test_correct_shrinks_and_keeps_consistent_states() -> None:
    prior = EstimatorState.running(Ellipsoid.ball([0.0, 0.0], 1.0))
    cp = np.array([[1.0, 0.0]])
    post = correct(prior, [0.2], np.array([[0.01]]), cp)
    assert post.estimate.trace < prior.estimate.trace
    assert contains(post.estimate, [0.2, 0.5])
    assert contains(post.estimate, [0.25, -0.9])


def test_correct_noiseless_uses_hyperplane() -> None:
    prior = EstimatorState.running(Ellipsoid.ball([0.0, 0.0], 1.0))
    post = correct(prior, [0.2], np.zeros((1, 1)), np.array([[1.0, 0.0]]))
    assert post.estimate.center[0] == pytest.approx(0.2)
    assert post.estimate.shape[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_correct_inconsistent_measurement_keeps_prior() -> None:
    prior = EstimatorState.running(Ellipsoid.ball([0.0, 0.0], 1.0))
    cp = np.array([[1.0, 0.0]])
    with pytest.warns(ModelViolationWarning):
        post = correct(prior, [5.0], np.array([[0.01]]), cp, FusionMode(fixed_lambda=0.5))
    assert post is prior
    with pytest.warns(ModelViolationWarning):
        post = correct(prior, [5.0], np.zeros((1, 1)), cp)
    assert post is prior


def test_correct_default_mode_flags_disjoint_measurement() -> None:
    prior = EstimatorState.running(Ellipsoid.ball([0.0, 0.0], 1.0))
    with pytest.warns(ModelViolationWarning):
        post = correct(prior, [3.0], np.array([[1.0]]), np.array([[1.0, 0.0]]), FusionMode())
    assert post is prior
    assert contains(post.estimate, [0.0, 0.0])


def test_correct_requires_running_state() -> None:
    with pytest.raises(ValueError):
        correct(EstimatorState.initializing(), [0.0], np.eye(1), np.eye(1))


def test_predict_point_estimate(double_integrator, static_gain) -> None:
    trans, dist, _ = _tables(double_integrator, static_gain, np.array([[1e-4]]))
    state = EstimatorState.running(Ellipsoid.point([1.0, 0.5]))
    moved = predict(state, [0.2], 2, trans, dist)
    assert np.allclose(moved.estimate.center, trans.PhiP[2] @ [1.0, 0.5] + trans.GammaP[2] @ [0.2])
    assert np.allclose(moved.estimate.shape, dist.W[2])
    with pytest.raises(ModelError):
        predict(state, [0.2], 4, trans, dist)


def test_fusion_mode_validation() -> None:
    assert FusionMode().optimal
    assert not FusionMode(fixed_lambda=0.3).optimal
    with pytest.raises(ValueError):
        FusionMode(fixed_lambda=1.5)
