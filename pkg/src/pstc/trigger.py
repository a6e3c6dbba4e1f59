"""
Triggering function and the worst-case bound on its future values.

The PETC rule closes the loop as soon as

    eta(zeta, zeta_hat) = |zeta - zeta_hat|^2 - sigma^2 |zeta|^2 > epsilon^2,

with zeta = [y; u] the current output/input pair and zeta_hat the held one.
For self-triggering we only know an ellipsoid E(x_p, X) around the plant
state, so ``eta_bar`` bounds eta(kappa periods ahead) from above over every
state in that ellipsoid, every disturbance response in E(0, W(kappa)) and
every measurement noise in E(0, V). The first kappa at which the bound
exceeds epsilon^2 is a safe next sampling time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from .reach import DisturbanceTables
from .setcalc import psd_factor, symmetrize
from .sysmodel import ControllerModel, PlantModel, TransitionTables

logger = logging.getLogger(__name__)

NEG_SQRT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TriggerTables:
    """Offline matrices of the bound, stacked by kappa (entry 0 unused).

    Rows of ``n_mat[k]`` map the information vector p = [x_p; x_c; y] to the
    noise- and disturbance-free zeta after k periods; ``ce`` maps it to the
    held zeta_hat. ``c_w``/``c_v`` inject a disturbance response and a noise
    sample into the stacked (zeta, zeta_hat).
    """

    sigma: float
    n_x: int
    qbar: np.ndarray
    ce: np.ndarray
    n_mat: np.ndarray
    q: np.ndarray
    fw: np.ndarray
    fv: np.ndarray
    rw: np.ndarray
    rv: np.ndarray
    qw: np.ndarray
    qv: np.ndarray
    c_w: np.ndarray
    c_v: np.ndarray
    cv: float
    cvw: np.ndarray
    wq: np.ndarray
    custom_qbar: bool = False

    @property
    def kappa_max(self) -> int:
        return self.q.shape[0] - 1


def default_qbar(n_zeta: int, sigma: float) -> np.ndarray:
    """[[(1 - sigma^2) I, -I], [-I, I]] over (zeta, zeta_hat)."""
    i = np.eye(n_zeta)
    return np.block([[(1.0 - sigma**2) * i, -i], [-i, i]])


def info_vector(x_p, x_c, y) -> np.ndarray:
    """p = [x_p; x_c; y]."""
    return np.concatenate(
        [np.atleast_1d(np.asarray(a, dtype=float)) for a in (x_p, x_c, y)]
    )


def eta(z_new, z_held, sigma: float) -> float:
    z_new = np.asarray(z_new, dtype=float)
    z_held = np.asarray(z_held, dtype=float)
    if z_new.shape != z_held.shape:
        raise ValueError(f"zeta shapes differ: {z_new.shape} vs {z_held.shape}")
    diff = z_new - z_held
    return float(diff @ diff - sigma**2 * (z_new @ z_new))


def eta_quadratic(z_new, z_held, qbar: np.ndarray) -> float:
    stacked = np.concatenate([np.asarray(z_new, dtype=float), np.asarray(z_held, dtype=float)])
    return float(stacked @ qbar @ stacked)


def trigger_value(z_new, z_held, tables: TriggerTables) -> float:
    """eta for the configured triggering matrix."""
    if tables.custom_qbar:
        return eta_quadratic(z_new, z_held, tables.qbar)
    return eta(z_new, z_held, tables.sigma)


def _safe_sqrt(value: float, scale: float = 1.0) -> float:
    if value < 0.0:
        if value < -NEG_SQRT_TOL * max(1.0, scale):
            raise ArithmeticError(f"negative argument {value:.3e} under a square root")
        return 0.0
    return float(np.sqrt(value))


def bound_pFx(p, f: np.ndarray, m: np.ndarray, factor: Optional[np.ndarray] = None) -> float:
    """max of p' F x over x in E(0, M), i.e. sqrt(p' F M F' p)."""
    s = psd_factor(m) if factor is None else factor
    g = s.T @ (f.T @ np.asarray(p, dtype=float))
    return float(np.linalg.norm(g))


def bound_xQx(q: np.ndarray, m: np.ndarray, factor: Optional[np.ndarray] = None) -> float:
    """max of x' Q x over x in E(0, M).

    Equals lambda_max(M Q) whenever that is positive; x = 0 makes 0 a floor.
    """
    s = psd_factor(m) if factor is None else factor
    if s.size == 0:
        return 0.0
    top = la.eigvalsh(symmetrize(s.T @ q @ s))[-1]
    return max(float(top), 0.0)


def bound_x1Fx2(
    f: np.ndarray,
    m1: np.ndarray,
    m2: np.ndarray,
    factor1: Optional[np.ndarray] = None,
    factor2: Optional[np.ndarray] = None,
) -> float:
    """max of x1' F x2 over x1 in E(0, M1), x2 in E(0, M2): sqrt(lambda_max(F M2 F' M1))."""
    s1 = psd_factor(m1) if factor1 is None else factor1
    s2 = psd_factor(m2) if factor2 is None else factor2
    g = s1.T @ f @ s2
    if g.size == 0:
        return 0.0
    return float(la.svdvals(g)[0])


def build_trigger_tables(
    plant: PlantModel,
    controller: ControllerModel,
    trans: TransitionTables,
    dist: DisturbanceTables,
    v: np.ndarray,
    sigma: float,
    kappa_max: int,
    qbar: Optional[np.ndarray] = None,
) -> TriggerTables:
    n_x, n_c, n_y, n_u = plant.n_x, controller.n_c, plant.n_y, plant.n_u
    n_zeta = n_y + n_u
    n_p = n_x + n_c + n_y
    custom = qbar is not None
    qbar = default_qbar(n_zeta, sigma) if qbar is None else symmetrize(np.asarray(qbar, dtype=float))
    if qbar.shape != (2 * n_zeta, 2 * n_zeta):
        raise ValueError(f"triggering matrix must be {2 * n_zeta} square, got {qbar.shape}")
    v = np.atleast_2d(np.asarray(v, dtype=float))
    cp, cc, dc = plant.Cp, controller.Cc, controller.Dc

    ce = np.zeros((n_zeta, n_p))
    ce[:n_y, n_x + n_c:] = np.eye(n_y)
    ce[n_y:, n_x:n_x + n_c] = cc
    ce[n_y:, n_x + n_c:] = dc
    c_w = np.zeros((2 * n_zeta, n_x))
    c_w[:n_y] = cp
    c_v = np.zeros((2 * n_zeta, n_y))
    c_v[:n_y] = np.eye(n_y)
    qw = symmetrize(c_w.T @ qbar @ c_w)
    qv = symmetrize(c_v.T @ qbar @ c_v)
    s_v = psd_factor(v)
    cv = bound_xQx(qv, v, s_v)
    cross = c_v.T @ qbar @ c_w

    k1 = kappa_max + 1
    n_mat = np.zeros((k1, n_zeta, n_p))
    q = np.zeros((k1, n_p, n_p))
    fw = np.zeros((k1, n_p, n_x))
    fv = np.zeros((k1, n_p, n_y))
    rw = np.zeros((k1, n_p, n_p))
    rv = np.zeros((k1, n_p, n_p))
    cvw = np.zeros(k1)
    wq = np.zeros(k1)
    for k in range(1, k1):
        gp = trans.GammaP[k]
        nk = n_mat[k]
        nk[:n_y, :n_x] = cp @ trans.PhiP[k]
        nk[:n_y, n_x:n_x + n_c] = cp @ gp @ cc
        nk[:n_y, n_x + n_c:] = cp @ gp @ dc
        nk[n_y:, n_x:n_x + n_c] = cc @ trans.PhiC[k]
        nk[n_y:, n_x + n_c:] = cc @ trans.GammaC[k] + dc
        stacked = np.vstack([nk, ce])
        q[k] = symmetrize(stacked.T @ qbar @ stacked)
        fw[k] = stacked.T @ qbar @ c_w
        fv[k] = stacked.T @ qbar @ c_v
        w_k = dist.W[k]
        s_w = psd_factor(w_k)
        rw[k] = symmetrize(fw[k] @ w_k @ fw[k].T)
        rv[k] = symmetrize(fv[k] @ v @ fv[k].T)
        cvw[k] = bound_x1Fx2(cross, v, w_k, s_v, s_w)
        wq[k] = bound_xQx(qw, w_k, s_w)
    logger.debug("trigger tables built for kappa 1..%d (cv=%.3g)", kappa_max, cv)
    return TriggerTables(
        sigma=float(sigma),
        n_x=n_x,
        qbar=qbar,
        ce=ce,
        n_mat=n_mat,
        q=q,
        fw=fw,
        fv=fv,
        rw=rw,
        rv=rv,
        qw=qw,
        qv=qv,
        c_w=c_w,
        c_v=c_v,
        cv=float(cv),
        cvw=cvw,
        wq=wq,
        custom_qbar=custom,
    )


def eta_bar(
    kappa: int,
    p_info,
    x_shape: np.ndarray,
    tables: TriggerTables,
    x_factor: Optional[np.ndarray] = None,
) -> float:
    """Upper bound on eta after ``kappa`` periods over all admissible uncertainty.

    ``p_info`` carries the estimate center; ``x_shape`` is the estimate shape.
    Pass ``x_factor`` (S with S S' = X) to skip refactoring X.
    """
    if not 1 <= kappa <= tables.kappa_max:
        raise ValueError(f"kappa={kappa} outside 1..{tables.kappa_max}")
    p = np.asarray(p_info, dtype=float)
    s = psd_factor(x_shape) if x_factor is None else x_factor
    n = tables.n_x
    q = tables.q[kappa]
    rv = tables.rv[kappa]
    rw = tables.rw[kappa]

    nominal = float(p @ q @ p)
    state_cross = 2.0 * bound_pFx(p, q[:, :n], x_shape, s)
    state_quad = bound_xQx(q[:n, :n], x_shape, s)
    noise_p = 2.0 * _safe_sqrt(float(p @ rv @ p), float(p @ p))
    noise_x = 2.0 * np.sqrt(bound_xQx(rv[:n, :n], x_shape, s))
    dist_p = 2.0 * _safe_sqrt(float(p @ rw @ p), float(p @ p))
    dist_x = 2.0 * np.sqrt(bound_xQx(rw[:n, :n], x_shape, s))
    constant = 2.0 * tables.cvw[kappa] + tables.cv + tables.wq[kappa]
    return nominal + state_cross + state_quad + noise_p + noise_x + dist_p + dist_x + constant


def eta_prime(kappa: int, p_info, e, v, d, tables: TriggerTables) -> float:
    """eta after ``kappa`` periods for one realization.

    ``e`` is the estimation error of the plant state, ``v`` the future noise and
    ``d`` the disturbance response accumulated over the interval.
    """
    p = np.array(p_info, dtype=float)
    p[: tables.n_x] += np.asarray(e, dtype=float)
    stacked = np.vstack([tables.n_mat[kappa], tables.ce])
    zz = stacked @ p + tables.c_v @ np.asarray(v, dtype=float) + tables.c_w @ np.asarray(d, dtype=float)
    return float(zz @ tables.qbar @ zz)


def scan_kappa(
    p_info,
    x_shape: np.ndarray,
    tables: TriggerTables,
    epsilon: float,
    kappa_max: Optional[int] = None,
) -> Tuple[int, Tuple[float, ...]]:
    """First kappa whose bound exceeds epsilon^2 (or kappa_max) and the bounds scanned."""
    k_max = tables.kappa_max if kappa_max is None else min(kappa_max, tables.kappa_max)
    s = psd_factor(x_shape)
    threshold = epsilon**2
    scanned = []
    for kappa in range(1, k_max + 1):
        value = eta_bar(kappa, p_info, x_shape, tables, s)
        scanned.append(value)
        if value > threshold:
            return kappa, tuple(scanned)
    return k_max, tuple(scanned)


def kappa_star(
    p_info, x_shape: np.ndarray, tables: TriggerTables, epsilon: float, kappa_max: Optional[int] = None
) -> int:
    return scan_kappa(p_info, x_shape, tables, epsilon, kappa_max)[0]
