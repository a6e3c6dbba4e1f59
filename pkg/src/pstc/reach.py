"""
Outer ellipsoidal approximations of the disturbance reach sets.

W(kappa) bounds every state reachable in kappa controller periods from the
origin while the disturbance w(t) stays in E(0, Wbar):

    x(h kappa) = int_0^{h kappa} exp(Ap (h kappa - s)) E w(s) ds.

Each W(kappa) is the outer intersection of shape-ODE solutions that are
tight along one direction each.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from .setcalc import (
    Ellipsoid,
    SetCalcError,
    clamp_psd,
    intersect_outer_centered,
    minksum_outer,
    psd_factor,
    symmetrize,
)
from .sysmodel import PlantModel

logger = logging.getLogger(__name__)

MIN_SUBSTEPS = 4
DEFAULT_SUBSTEPS = 32
SEED_SCALE = 1e-12
# below this fraction of Tr(G) the direction is treated as orthogonal to E
_DEGENERATE_RATE = 1e-14


@dataclass(frozen=True)
class ReachConfig:
    """Directions, RK4 substeps per controller period and seed regularization.

    ``directions=None`` means the canonical basis of the plant state space.
    ``q0=None`` means ``1e-12 * Tr(E Wbar E')``.
    """

    directions: Optional[Tuple[Tuple[float, ...], ...]] = None
    substeps: int = DEFAULT_SUBSTEPS
    q0: Optional[float] = None

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < MIN_SUBSTEPS:
            raise ValueError(f"reach substeps must be an integer >= {MIN_SUBSTEPS}")
        if self.q0 is not None and not self.q0 > 0:
            raise ValueError(f"q0 must be positive, got {self.q0}")
        if self.directions is not None:
            dirs = tuple(tuple(float(v) for v in d) for d in self.directions)
            if not dirs:
                raise ValueError("reach directions must not be empty")
            for d in dirs:
                if not np.any(np.asarray(d)):
                    raise ValueError("reach directions must be nonzero")
            object.__setattr__(self, "directions", dirs)

    def direction_set(self, n: int) -> list:
        if self.directions is None:
            return [row for row in np.eye(n)]
        out = []
        for d in self.directions:
            v = np.asarray(d, dtype=float)
            if v.size != n:
                raise ValueError(f"reach direction {d} is not in R^{n}")
            out.append(v / np.linalg.norm(v))
        return out


@dataclass(frozen=True, eq=False)
class DisturbanceTables:
    """W[k] is the reach-set shape after k periods; W[0] = 0."""

    W: np.ndarray

    @property
    def kappa_max(self) -> int:
        return self.W.shape[0] - 1

    def shape(self, kappa: int) -> np.ndarray:
        return self.W[kappa]


def disturbance_gain(plant: PlantModel, wbar) -> np.ndarray:
    """G = E Wbar E', the state-space disturbance shape."""
    wbar = np.atleast_2d(np.asarray(wbar, dtype=float))
    if wbar.shape != (plant.n_w, plant.n_w):
        raise SetCalcError(f"Wbar must be {plant.n_w}x{plant.n_w}, got {wbar.shape}")
    clamp_psd(wbar)
    return symmetrize(plant.E @ wbar @ plant.E.T)


def _seed_shape(plant: PlantModel, wbar: np.ndarray, g: np.ndarray, delta: float, q0: float):
    # x(delta) = delta * E w_avg + int_0^delta (exp(A(delta - s)) - I) E w(s) ds;
    # the second term is bounded in norm by r.
    e_s = plant.E @ psd_factor(np.atleast_2d(wbar))
    r = delta * np.expm1(np.linalg.norm(plant.Ap, 2) * delta) * np.linalg.norm(e_s, 2)
    n = plant.n_x
    first = Ellipsoid(np.zeros(n), delta**2 * g)
    rest = Ellipsoid.ball(np.zeros(n), r)
    return minksum_outer(first, rest).shape + q0 * np.eye(n)


def tight_reach_along(
    plant: PlantModel,
    wbar,
    t_end: float,
    l0,
    cfg: Optional[ReachConfig] = None,
    steps: Optional[int] = None,
) -> np.ndarray:
    """Shape of an outer approximation of the reach set at ``t_end``.

    Integrates dQ/dt = A Q + Q A' + pi Q + G / pi with RK4 from a sound seed at
    t = delta. The weight pi(t) = sqrt(l' G l / l' Q l) follows the adjoint
    direction l(t) = exp(A' (t_end - t)) l0, which makes the result touch the
    exact reach set along l0 at t_end. ``steps`` defaults to ``cfg.substeps``.
    """
    cfg = cfg or ReachConfig()
    n = plant.n_x
    g = disturbance_gain(plant, wbar)
    tr_g = float(np.trace(g))
    if tr_g <= 0.0:
        return np.zeros((n, n))
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    l0 = np.asarray(l0, dtype=float).reshape(-1)
    if l0.size != n or not np.any(l0):
        raise ValueError("l0 must be a nonzero vector in the plant state space")

    steps = max(int(steps or cfg.substeps), 2)
    delta = t_end / steps
    q0 = cfg.q0 if cfg.q0 is not None else SEED_SCALE * tr_g
    a = plant.Ap
    q = _seed_shape(plant, np.asarray(wbar, dtype=float), g, delta, q0)

    back_half = la.expm(-a.T * (0.5 * delta))
    l = la.expm(a.T * (t_end - delta)) @ l0
    l /= np.linalg.norm(l)
    pi = np.sqrt(tr_g / float(np.trace(q)))

    def rate(qm: np.ndarray, lv: np.ndarray) -> np.ndarray:
        nonlocal pi
        num = float(lv @ g @ lv)
        den = float(lv @ qm @ lv)
        if num > _DEGENERATE_RATE * tr_g * float(lv @ lv) and den > 0.0:
            pi = np.sqrt(num / den)
        return a @ qm + qm @ a.T + pi * qm + g / pi

    for _ in range(steps - 1):
        l_mid = back_half @ l
        l_end = back_half @ l_mid
        k1 = rate(q, l)
        k2 = rate(q + 0.5 * delta * k1, l_mid)
        k3 = rate(q + 0.5 * delta * k2, l_mid)
        k4 = rate(q + delta * k3, l_end)
        q = symmetrize(q + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        l = l_end / np.linalg.norm(l_end)
    return q


def build_disturbance_tables(
    plant: PlantModel,
    wbar,
    h: float,
    kappa_max: int,
    cfg: Optional[ReachConfig] = None,
) -> DisturbanceTables:
    """W(kappa) for kappa = 1..kappa_max, one tight solution per direction."""
    cfg = cfg or ReachConfig()
    n = plant.n_x
    directions = cfg.direction_set(n)
    w = np.zeros((kappa_max + 1, n, n))
    started = time.perf_counter()
    for kappa in range(1, kappa_max + 1):
        shapes = [
            tight_reach_along(plant, wbar, h * kappa, l, cfg, steps=cfg.substeps * kappa)
            for l in directions
        ]
        if not np.any(shapes[0]):
            continue
        w[kappa] = intersect_outer_centered(shapes).shape
        logger.debug("W(%d): trace %.4g", kappa, np.trace(w[kappa]))
    elapsed = time.perf_counter() - started
    logger.info("reach tables for kappa 1..%d built in %.1f ms", kappa_max, 1e3 * elapsed)
    return DisturbanceTables(w)
