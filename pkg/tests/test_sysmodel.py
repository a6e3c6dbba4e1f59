import numpy as np
import pytest
import scipy.linalg as la

from pstc.sysmodel import (
    ControllerModel,
    ModelError,
    PlantModel,
    TriggerConfig,
    build_transition_tables,
    check_compatible,
    discretize_one_step,
    discretize_zoh,
)


def test_unobservable_plant_rejected() -> None:
    with pytest.raises(ModelError):
        PlantModel(np.diag([1.0, 2.0]), [[1.0], [1.0]], [[1.0, 0.0]], [[1.0], [0.0]])


def test_dimension_mismatch_rejected() -> None:
    with pytest.raises(ModelError):
        PlantModel([[0.0, 1.0], [0.0, 0.0]], [[1.0], [1.0], [1.0]], [[1.0, 0.0]], [[1.0], [0.0]])


def test_discretize_scalar() -> None:
    phi, gamma = discretize_zoh(np.array([[-1.0]]), np.array([[1.0]]), 0.5)
    assert phi[0, 0] == pytest.approx(np.exp(-0.5))
    assert gamma[0, 0] == pytest.approx(1.0 - np.exp(-0.5))


def test_discretize_double_integrator() -> None:
    h = 0.2
    phi, gamma = discretize_zoh(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), h)
    assert np.allclose(phi, [[1.0, h], [0.0, 1.0]])
    assert np.allclose(gamma, [[h**2 / 2], [h]])


def test_discretize_one_step(scalar_plant) -> None:
    phi, gamma = discretize_one_step(scalar_plant, 0.5)
    assert phi[0, 0] == pytest.approx(np.exp(-0.5))
    assert gamma[0, 0] == pytest.approx(1.0 - np.exp(-0.5))
    with pytest.raises(ModelError):
        discretize_one_step(scalar_plant, 0.0)


def test_transition_tables(double_integrator) -> None:
    h = 0.1
    controller = ControllerModel([[0.5]], [[1.0]], [[1.0]], [[-1.0]], h)
    trans = build_transition_tables(double_integrator, controller, TriggerConfig(0.1, kappa_max=4))
    assert trans.kappa_max == 4
    assert np.array_equal(trans.PhiP[0], np.eye(2))
    assert not np.any(trans.GammaP[0])
    for k in range(1, 5):
        phi, gamma = discretize_zoh(double_integrator.Ap, double_integrator.Bp, k * h)
        assert np.allclose(trans.PhiP[k], phi)
        assert np.allclose(trans.GammaP[k], gamma)
        assert np.allclose(trans.PhiP[k], la.expm(double_integrator.Ap * k * h))
    assert trans.GammaC[3][0, 0] == pytest.approx(1.75)
    assert trans.PhiC[3][0, 0] == pytest.approx(0.125)
    with pytest.raises(ModelError):
        trans.check_kappa(5)


def test_static_controller(static_gain, scalar_plant) -> None:
    ctrl = static_gain()
    assert ctrl.n_c == 0
    trans = build_transition_tables(scalar_plant, ctrl, TriggerConfig(0.1, kappa_max=3))
    assert trans.PhiC.shape == (4, 0, 0)
    assert trans.GammaC.shape == (4, 0, 1)


def test_incompatible_controller(static_gain, scalar_plant) -> None:
    with pytest.raises(ModelError):
        check_compatible(scalar_plant, static_gain(n_u=2))


def test_controller_validation() -> None:
    with pytest.raises(ModelError):
        ControllerModel([[1.0]], [[1.0]], [[1.0]], [[1.0]], 0.0)
    with pytest.raises(ModelError):
        ControllerModel([[1.0, 0.0]], [[1.0]], [[1.0]], [[1.0]], 0.1)


def test_trigger_config_validation() -> None:
    with pytest.raises(ModelError):
        TriggerConfig(sigma=1.0)
    with pytest.raises(ModelError):
        TriggerConfig(sigma=0.1, kappa_max=0)
    with pytest.raises(ModelError):
        TriggerConfig(sigma=0.1, epsilon=-1.0)
