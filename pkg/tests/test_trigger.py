import numpy as np
import pytest

from pstc.offline import build_offline_tables
from pstc.trigger import (
    bound_pFx,
    bound_x1Fx2,
    bound_xQx,
    build_trigger_tables,
    default_qbar,
    eta,
    eta_bar,
    eta_prime,
    eta_quadratic,
    info_vector,
    kappa_star,
    scan_kappa,
    trigger_value,
)
from pstc.validate import check_trigger, random_problems


def test_eta_examples() -> None:
    assert eta([1.0, 0.0], [0.0, 0.0], 0.1) == pytest.approx(0.99)
    assert eta([1.0, 2.0], [1.0, 2.0], 0.5) == pytest.approx(-0.25 * 5.0)
    with pytest.raises(ValueError):
        eta([1.0], [1.0, 2.0], 0.1)


def test_default_qbar_reproduces_eta(rng) -> None:
    q = default_qbar(3, 0.2)
    for _ in range(10):
        z, zh = rng.normal(size=3), rng.normal(size=3)
        assert eta_quadratic(z, zh, q) == pytest.approx(eta(z, zh, 0.2))


def test_bounds_on_ellipsoids() -> None:
    assert bound_xQx(np.diag([1.0, -1.0]), np.eye(2)) == pytest.approx(1.0)
    assert bound_xQx(-np.eye(2), np.eye(2)) == 0.0
    assert bound_pFx([1.0, 0.0], np.eye(2), np.diag([4.0, 1.0])) == pytest.approx(2.0)
    assert bound_x1Fx2(np.eye(2), np.diag([4.0, 1.0]), np.diag([1.0, 9.0])) == pytest.approx(3.0)


def test_sigma_zero_gives_psd_q(batch_problem, batch_tables) -> None:
    trig = build_trigger_tables(
        batch_problem.plant,
        batch_problem.controller,
        batch_tables.trans,
        batch_tables.dist,
        batch_problem.v,
        0.0,
        batch_problem.trigger.kappa_max,
    )
    for k in range(1, trig.kappa_max + 1):
        w = np.linalg.eigvalsh(trig.q[k])
        assert w[0] >= -1e-9 * max(1.0, np.abs(w).max())


def test_noiseless_tables_have_no_noise_terms(batch_problem, batch_tables) -> None:
    trig = build_trigger_tables(
        batch_problem.plant,
        batch_problem.controller,
        batch_tables.trans,
        batch_tables.dist,
        np.zeros((2, 2)),
        0.1,
        batch_problem.trigger.kappa_max,
    )
    assert trig.cv == 0.0
    assert not np.any(trig.cvw)
    assert not np.any(trig.rv)


def test_deterministic_bound_is_exact() -> None:
    problem = random_problems(7, 1, deterministic=True)[0]
    tables = build_offline_tables(problem)
    trig, trans = tables.trig, tables.trans
    ctrl, cp = problem.controller, problem.plant.Cp
    rng = np.random.default_rng(3)
    for kappa in range(1, trig.kappa_max + 1):
        x, xc, y = rng.normal(size=problem.plant.n_x), rng.normal(size=ctrl.n_c), rng.normal(size=problem.plant.n_y)
        p = info_vector(x, xc, y)
        u = ctrl.Cc @ xc + ctrl.Dc @ y
        x_new = trans.PhiP[kappa] @ x + trans.GammaP[kappa] @ u
        xc_new = trans.PhiC[kappa] @ xc + trans.GammaC[kappa] @ y
        z_new = np.concatenate([cp @ x_new, ctrl.Cc @ xc_new + ctrl.Dc @ y])
        expected = trigger_value(z_new, np.concatenate([y, u]), trig)
        zeros = np.zeros(problem.plant.n_x)
        assert eta_prime(kappa, p, zeros, np.zeros(problem.plant.n_y), zeros, trig) == pytest.approx(expected)
        assert eta_bar(kappa, p, np.zeros((problem.plant.n_x,) * 2), trig) == pytest.approx(expected)


def test_scan_properties(batch_problem, batch_tables, rng) -> None:
    trig = batch_tables.trig
    for _ in range(5):
        p = info_vector(rng.normal(size=4), rng.normal(size=2), rng.normal(size=2))
        kappa, etas = scan_kappa(p, 1e-4 * np.eye(4), trig, 0.5)
        assert 1 <= kappa <= trig.kappa_max
        assert len(etas) == kappa
        assert all(v <= 0.25 for v in etas[:-1])
        assert etas[-1] > 0.25 or kappa == trig.kappa_max
        assert kappa_star(p, 1e-4 * np.eye(4), trig, 0.5) == kappa


def test_zero_information_samples_next_period(batch_tables) -> None:
    kappa, _ = scan_kappa(np.zeros(8), 1e-6 * np.eye(4), batch_tables.trig, 0.0)
    assert kappa == 1


def test_custom_qbar_is_used(batch_problem, batch_tables) -> None:
    qbar = default_qbar(4, 0.3)
    trig = build_trigger_tables(
        batch_problem.plant,
        batch_problem.controller,
        batch_tables.trans,
        batch_tables.dist,
        batch_problem.v,
        0.1,
        3,
        qbar,
    )
    assert trig.custom_qbar
    z, zh = np.array([1.0, 0.0, 0.5, 0.0]), np.zeros(4)
    assert trigger_value(z, zh, trig) == pytest.approx(eta(z, zh, 0.3))
    with pytest.raises(ValueError):
        build_trigger_tables(
            batch_problem.plant,
            batch_problem.controller,
            batch_tables.trans,
            batch_tables.dist,
            batch_problem.v,
            0.1,
            3,
            np.eye(3),
        )


def test_bound_dominates_realizations(batch_problem, batch_tables) -> None:
    report = check_trigger(batch_problem, batch_tables, seed=3, scale=0.01)
    assert report.samples >= 200
    assert report.passed, report.failures


@pytest.mark.slow
def test_bound_dominates_realizations_full(batch_problem, batch_tables) -> None:
    report = check_trigger(batch_problem, batch_tables, seed=0, scale=1.0)
    assert report.passed, report.failures
