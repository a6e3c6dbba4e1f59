"""
Guaranteed (set-membership) state estimation.

The estimate is an ellipsoid that contains the true plant state whenever the
disturbance and the measurement noise respect their bounds. ``predict`` and
``correct`` are pure: they take an EstimatorState and return a new one.

Without a finite initial set the estimator starts in the initializing phase,
buffers k_bar + 1 periodic samples and then builds a bounded estimate from the
stacked, back-propagated measurements.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from .reach import DisturbanceTables
from .setcalc import (
    GOLDEN_TOL,
    EllipticalCylinder,
    Ellipsoid,
    EmptyIntersectionError,
    SetCalcError,
    affine_map,
    fusion,
    fusion_optimal,
    hyperplane_fusion,
    matrix_rank,
    minksum_outer,
    pinv,
)
from .sysmodel import ModelError, TransitionTables, observability_matrix

logger = logging.getLogger(__name__)


class ModelViolationWarning(UserWarning):
    """The measurement is inconsistent with the estimate and the noise bound."""


class Phase(Enum):
    INITIALIZING = "initializing"
    RUNNING = "running"


@dataclass(frozen=True)
class FusionMode:
    """Golden-section weight search (``fixed_lambda=None``) or a fixed weight."""

    fixed_lambda: Optional[float] = None
    tol: float = GOLDEN_TOL

    def __post_init__(self):
        if self.fixed_lambda is not None and not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed fusion weight must lie in [0, 1], got {self.fixed_lambda}")
        if not self.tol > 0:
            raise ValueError(f"golden-section tolerance must be positive, got {self.tol}")

    @property
    def optimal(self) -> bool:
        return self.fixed_lambda is None


@dataclass(frozen=True, eq=False)
class EstimatorState:
    phase: Phase
    estimate: Optional[Ellipsoid] = None
    outputs: Tuple[np.ndarray, ...] = ()
    inputs: Tuple[np.ndarray, ...] = ()

    @classmethod
    def initializing(cls) -> "EstimatorState":
        return cls(Phase.INITIALIZING)

    @classmethod
    def running(cls, estimate: Ellipsoid) -> "EstimatorState":
        return cls(Phase.RUNNING, estimate)

    @property
    def step(self) -> int:
        """Number of samples buffered so far while initializing."""
        return len(self.outputs)

    @property
    def is_running(self) -> bool:
        return self.phase is Phase.RUNNING


@dataclass(frozen=True, eq=False)
class InitTables:
    """Offline part of the bounded initialization.

    ``phi_inv_powers[i]`` is Phi_p(1)^-i for i = 0..kbar. ``shape`` is the
    final estimate shape, which does not depend on the measured data.
    """

    kbar: int
    obar_pinv: np.ndarray
    vbar: np.ndarray
    shape: np.ndarray
    phi_inv_powers: np.ndarray
    gamma1: np.ndarray
    cp: np.ndarray


def observability_index(phi1: np.ndarray, cp: np.ndarray) -> int:
    """Smallest k with rank [Cp; Cp Phi; ...; Cp Phi^k] = n."""
    n = phi1.shape[0]
    for k in range(n):
        if matrix_rank(observability_matrix(phi1, cp, k), 1e-8) == n:
            return k
    raise ModelError("(Phi_p(1), Cp) is not observable")


def build_init_tables(
    cp: np.ndarray, trans: TransitionTables, dist: DisturbanceTables, v: np.ndarray
) -> InitTables:
    phi1 = trans.PhiP[1]
    gamma1 = trans.GammaP[1]
    n = phi1.shape[0]
    kbar = observability_index(phi1, cp)
    if dist.kappa_max < kbar:
        raise ModelError(f"disturbance tables end at {dist.kappa_max}, initialization needs {kbar}")
    try:
        phi_inv = la.inv(phi1)
    except la.LinAlgError as exc:
        raise ModelError("Phi_p(1) is singular") from exc
    inv_powers = np.empty((kbar + 1, n, n))
    inv_powers[0] = np.eye(n)
    for i in range(1, kbar + 1):
        inv_powers[i] = inv_powers[i - 1] @ phi_inv

    rows = []
    blocks = []
    noise = Ellipsoid.centered(v)
    for k in range(kbar + 1):
        back = cp @ inv_powers[kbar - k]
        rows.append(back)
        spread = affine_map(back, Ellipsoid.centered(dist.W[kbar - k]))
        blocks.append((kbar + 1) * minksum_outer(noise, spread).shape)
    obar = np.vstack(rows)
    obar_pinv = pinv(obar)
    if not np.allclose(obar_pinv @ obar, np.eye(n), atol=1e-8):
        raise ModelError("stacked observation map is rank deficient")
    vbar = la.block_diag(*blocks)
    shape = obar_pinv @ vbar @ obar_pinv.T
    logger.debug("initialization needs %d samples, final trace %.4g", kbar + 1, np.trace(shape))
    return InitTables(kbar, obar_pinv, vbar, 0.5 * (shape + shape.T), inv_powers, gamma1, cp)


def _backpropagated_output(k: int, outputs, inputs, tables: InitTables) -> np.ndarray:
    # y(k) + Cp sum_{j=k}^{kbar-1} Phi^{k-1-j} Gamma u(j)
    acc = np.zeros(tables.phi_inv_powers.shape[1])
    for j in range(k, tables.kbar):
        acc += tables.phi_inv_powers[j + 1 - k] @ (tables.gamma1 @ inputs[j])
    return outputs[k] + tables.cp @ acc


def init_ingest(state: EstimatorState, y, u_held, tables: InitTables) -> EstimatorState:
    """Buffer one periodic sample; switch to running after kbar + 1 samples.

    The returned estimate bounds the plant state at the instant of the last
    ingested sample.
    """
    if state.is_running:
        raise ValueError("estimator is already running")
    outputs = state.outputs + (np.asarray(y, dtype=float).copy(),)
    inputs = state.inputs + (np.asarray(u_held, dtype=float).copy(),)
    if len(outputs) < tables.kbar + 1:
        return replace(state, outputs=outputs, inputs=inputs)
    psi = np.concatenate(
        [_backpropagated_output(k, outputs, inputs, tables) for k in range(tables.kbar + 1)]
    )
    estimate = Ellipsoid(tables.obar_pinv @ psi, tables.shape)
    logger.info("estimator initialized after %d samples", len(outputs))
    return EstimatorState.running(estimate)


def cylinder_intersection_outer(
    cyls: Sequence[EllipticalCylinder], mu: Optional[Sequence[float]] = None
) -> Ellipsoid:
    """Outer ellipsoid of an intersection of cylinders whose stacked map has full column rank."""
    if not cyls:
        raise SetCalcError("need at least one cylinder")
    if mu is None:
        mu = [1.0 / len(cyls)] * len(cyls)
    mu = np.asarray(mu, dtype=float)
    if mu.size != len(cyls) or np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise SetCalcError("weights must be positive and sum to one")
    c_bar = np.vstack([c.projector for c in cyls])
    n = c_bar.shape[1]
    if matrix_rank(c_bar) != n:
        raise SetCalcError("stacked cylinder maps do not have full column rank")
    c_pinv = pinv(c_bar)
    y_bar = np.concatenate([c.offset for c in cyls])
    m_bar = la.block_diag(*[c.shape / w for c, w in zip(cyls, mu)])
    return Ellipsoid(c_pinv @ y_bar, c_pinv @ m_bar @ c_pinv.T)


def correct(
    state: EstimatorState, y, v: np.ndarray, cp: np.ndarray, mode: FusionMode = FusionMode()
) -> EstimatorState:
    """Intersect the estimate with the measurement-consistent set {x : Cp x - y in E(0, V)}.

    On an empty intersection the prior is kept and a ModelViolationWarning
    is issued.
    """
    if not state.is_running:
        raise ValueError("correct needs a running estimator")
    prior = state.estimate
    y = np.asarray(y, dtype=float)
    try:
        if not np.any(v):
            posterior = hyperplane_fusion(prior, cp, y)
        else:
            cyl = EllipticalCylinder(y, v, cp)
            if mode.optimal:
                posterior = fusion_optimal(prior, cyl, mode.tol)
            elif prior.is_degenerate:
                posterior = prior
            else:
                posterior = fusion(prior, cyl, mode.fixed_lambda)
    except EmptyIntersectionError as exc:
        logger.warning("measurement inconsistent with estimate: %s", exc)
        warnings.warn(
            f"measurement {y} is outside the noise bound around the estimate; keeping prior",
            ModelViolationWarning,
            stacklevel=2,
        )
        return state
    return EstimatorState.running(posterior)


def predict(
    state: EstimatorState,
    u,
    kappa: int,
    trans: TransitionTables,
    dist: DisturbanceTables,
) -> EstimatorState:
    """Propagate the estimate kappa periods under the held input u."""
    if not state.is_running:
        raise ValueError("predict needs a running estimator")
    trans.check_kappa(kappa)
    drift = trans.GammaP[kappa] @ np.asarray(u, dtype=float)
    moved = affine_map(trans.PhiP[kappa], state.estimate, drift)
    return EstimatorState.running(minksum_outer(moved, Ellipsoid.centered(dist.W[kappa])))
