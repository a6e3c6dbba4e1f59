"""
Plant and controller models, exact zero-order-hold discretization and the
kappa-indexed transition tables used by the estimator and the trigger.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg as la

logger = logging.getLogger(__name__)

OBSERVABILITY_RTOL = 1e-8


class ModelError(ValueError):
    """A model violates a structural assumption (dimensions, observability, ...)."""


def _matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ModelError(f"{name} must be a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ModelError(f"{name} has non-finite entries")
    return m


def observability_matrix(a: np.ndarray, c: np.ndarray, order: int) -> np.ndarray:
    """Stack C A^j for j = 0..order."""
    blocks = [c]
    for _ in range(order):
        blocks.append(blocks[-1] @ a)
    return np.vstack(blocks)


def _rank(m: np.ndarray, rtol: float) -> int:
    sv = la.svdvals(m)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True, eq=False)
class PlantModel:
    """dx/dt = Ap x + Bp u + E w,  y = Cp x + nu."""

    Ap: np.ndarray
    Bp: np.ndarray
    Cp: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        ap = _matrix(self.Ap, "Ap")
        bp = _matrix(self.Bp, "Bp")
        cp = _matrix(self.Cp, "Cp")
        e = _matrix(self.E, "E")
        n = ap.shape[0]
        if ap.shape != (n, n):
            raise ModelError(f"Ap must be square, got {ap.shape}")
        if bp.shape[0] != n:
            raise ModelError(f"Bp has {bp.shape[0]} rows, Ap has {n}")
        if cp.shape[1] != n:
            raise ModelError(f"Cp has {cp.shape[1]} columns, Ap has {n}")
        if e.shape[0] != n:
            raise ModelError(f"E has {e.shape[0]} rows, Ap has {n}")
        for name, value in (("Ap", ap), ("Bp", bp), ("Cp", cp), ("E", e)):
            object.__setattr__(self, name, value)
        obs = observability_matrix(ap, cp, n - 1)
        if _rank(obs, OBSERVABILITY_RTOL) != n:
            raise ModelError("(Ap, Cp) is not observable")

    @property
    def n_x(self) -> int:
        return self.Ap.shape[0]

    @property
    def n_u(self) -> int:
        return self.Bp.shape[1]

    @property
    def n_y(self) -> int:
        return self.Cp.shape[0]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]


@dataclass(frozen=True, eq=False)
class ControllerModel:
    """xc+ = Ac xc + Bc y_hat,  u = Cc xc + Dc y_hat, run every h time units."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray
    Dc: np.ndarray
    h: float

    def __post_init__(self):
        ac = np.asarray(self.Ac, dtype=float)
        if ac.size == 0:
            ac = ac.reshape(0, 0)
        dc = _matrix(self.Dc, "Dc")
        nc = ac.shape[0]
        n_u, n_y = dc.shape
        if ac.shape != (nc, nc):
            raise ModelError(f"Ac must be square, got {ac.shape}")
        try:
            bc = np.asarray(self.Bc, dtype=float).reshape(nc, n_y)
            cc = np.asarray(self.Cc, dtype=float).reshape(n_u, nc)
        except ValueError as exc:
            raise ModelError(f"Bc/Cc do not fit Ac {ac.shape} and Dc {dc.shape}") from exc
        if not self.h > 0:
            raise ModelError(f"controller period h must be positive, got {self.h}")
        for name, value in (("Ac", ac), ("Bc", bc), ("Cc", cc), ("Dc", dc)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "h", float(self.h))

    @property
    def n_c(self) -> int:
        return self.Ac.shape[0]


def check_compatible(plant: PlantModel, controller: ControllerModel):
    """Raise ModelError unless the controller closes the loop around the plant."""
    if controller.Dc.shape != (plant.n_u, plant.n_y):
        raise ModelError(
            f"Dc is {controller.Dc.shape}, plant needs ({plant.n_u}, {plant.n_y})"
        )


@dataclass(frozen=True)
class TriggerConfig:
    sigma: float
    epsilon: float = 0.0
    kappa_max: int = 25

    def __post_init__(self):
        if not 0.0 <= self.sigma < 1.0:
            raise ModelError(f"sigma must lie in [0, 1), got {self.sigma}")
        if self.epsilon < 0.0:
            raise ModelError(f"epsilon must be non-negative, got {self.epsilon}")
        if int(self.kappa_max) != self.kappa_max or self.kappa_max < 1:
            raise ModelError(f"kappa_max must be a positive integer, got {self.kappa_max}")
        object.__setattr__(self, "kappa_max", int(self.kappa_max))


def discretize_zoh(a: np.ndarray, b: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """exp(h [[A, B], [0, 0]]) -> (exp(A h), int_0^h exp(A s) B ds)."""
    n, m = b.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a
    aug[:n, n:] = b
    ex = la.expm(aug * h)
    return ex[:n, :n], ex[:n, n:]


def discretize_one_step(plant: PlantModel, h: float) -> Tuple[np.ndarray, np.ndarray]:
    if not h > 0:
        raise ModelError(f"step must be positive, got {h}")
    return discretize_zoh(plant.Ap, plant.Bp, h)


@dataclass(frozen=True, eq=False)
class TransitionTables:
    """Stacked Phi/Gamma matrices; entry ``[k]`` holds the k-period value.

    Entry 0 is the identity/zero so that indexing by kappa needs no offset.
    """

    PhiP: np.ndarray
    GammaP: np.ndarray
    PhiC: np.ndarray
    GammaC: np.ndarray

    @property
    def kappa_max(self) -> int:
        return self.PhiP.shape[0] - 1

    def check_kappa(self, kappa: int):
        if not 1 <= kappa <= self.kappa_max:
            raise ModelError(f"kappa={kappa} outside the tabulated range 1..{self.kappa_max}")


def _accumulate(phi1: np.ndarray, gamma1: np.ndarray, kappa_max: int):
    n, m = gamma1.shape
    phi = np.empty((kappa_max + 1, n, n))
    gamma = np.empty((kappa_max + 1, n, m))
    phi[0] = np.eye(n)
    gamma[0] = np.zeros((n, m))
    for k in range(1, kappa_max + 1):
        phi[k] = phi[k - 1] @ phi1
        gamma[k] = phi1 @ gamma[k - 1] + gamma1
    return phi, gamma


def build_transition_tables(
    plant: PlantModel, controller: ControllerModel, cfg: TriggerConfig
) -> TransitionTables:
    """Phi_p(k) = Phi_p(1)^k, Gamma_p(k) = sum_j Phi_p(1)^j Gamma_p(1); same for (Ac, Bc)."""
    check_compatible(plant, controller)
    k_max = cfg.kappa_max
    phi1, gamma1 = discretize_one_step(plant, controller.h)
    phi_p, gamma_p = _accumulate(phi1, gamma1, k_max)
    phi_c, gamma_c = _accumulate(controller.Ac, controller.Bc, k_max)
    logger.debug("transition tables built for kappa 1..%d", k_max)
    return TransitionTables(phi_p, gamma_p, phi_c, gamma_c)
