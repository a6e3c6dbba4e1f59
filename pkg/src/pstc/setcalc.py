"""
Ellipsoidal set calculus.

Ellipsoids E(m, M) are stored by center and PSD shape matrix. Every
outer-approximating operation here returns a set that contains the exact
result; none of them ever shrinks a set.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

logger = logging.getLogger(__name__)

PSD_TOL = 1e-9
RANK_RTOL = 1e-10
PINV_RCOND = 1e-10
GOLDEN_TOL = 1e-4

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


class SetCalcError(ValueError):
    """Raised on malformed sets or operands that violate a precondition."""


class EmptyIntersectionError(SetCalcError):
    """Raised when a fusion certifies that the operands do not intersect."""


def _as_vector(x, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise SetCalcError(f"{name} must be one-dimensional, got shape {v.shape}")
    return v


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise SetCalcError(f"{name} must be two-dimensional, got shape {m.shape}")
    return m


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def clamp_psd(m: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrize ``m`` and zero its slightly negative eigenvalues.

    Eigenvalues below ``-tol * max(1, |lambda|_max)`` mean the matrix is not
    PSD at all and raise ``SetCalcError``.
    """
    m = symmetrize(m)
    if m.size == 0:
        return m
    w, u = la.eigh(m)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -tol * scale:
        raise SetCalcError(f"shape matrix is not PSD (min eigenvalue {w[0]:.3e})")
    if w[0] < 0.0:
        w = np.clip(w, 0.0, None)
        m = symmetrize((u * w) @ u.T)
    return m


def psd_factor(m: np.ndarray) -> np.ndarray:
    """Return S with S @ S.T == m for a PSD matrix m."""
    m = symmetrize(_as_matrix(m))
    if m.size == 0:
        return m
    w, u = la.eigh(m)
    return u * np.sqrt(np.clip(w, 0.0, None))


def spd_inverse(m: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    try:
        factor = la.cho_factor(m, lower=True, check_finite=True)
    except la.LinAlgError as exc:
        raise SetCalcError("matrix is not positive definite") from exc
    return symmetrize(la.cho_solve(factor, np.eye(m.shape[0])))


def is_positive_definite(m: np.ndarray) -> bool:
    if m.size == 0:
        return False
    try:
        la.cholesky(symmetrize(m), lower=True)
    except la.LinAlgError:
        return False
    return True


def pinv(m: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse, singular values below 1e-10 * sigma_max cut."""
    return np.linalg.pinv(m, PINV_RCOND)


def matrix_rank(m: np.ndarray, rtol: float = RANK_RTOL) -> int:
    m = _as_matrix(m)
    if m.size == 0:
        return 0
    sv = la.svdvals(m)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """E(center, shape) = {x : l.x <= l.center + sqrt(l' shape l) for all l}."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        center = _as_vector(self.center, "center")
        shape = _as_matrix(self.shape, "shape")
        if shape.shape != (center.size, center.size):
            raise SetCalcError(
                f"shape {shape.shape} does not match center of length {center.size}"
            )
        if not np.all(np.isfinite(shape)) or not np.all(np.isfinite(center)):
            raise SetCalcError("ellipsoid has non-finite entries")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", clamp_psd(shape))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def trace(self) -> float:
        return float(np.trace(self.shape))

    @property
    def is_degenerate(self) -> bool:
        return not is_positive_definite(self.shape)

    @classmethod
    def point(cls, x) -> "Ellipsoid":
        x = _as_vector(x)
        return cls(x, np.zeros((x.size, x.size)))

    @classmethod
    def ball(cls, center, radius: float) -> "Ellipsoid":
        center = _as_vector(center)
        return cls(center, radius**2 * np.eye(center.size))

    @classmethod
    def centered(cls, shape) -> "Ellipsoid":
        shape = _as_matrix(shape)
        return cls(np.zeros(shape.shape[0]), shape)

    def __repr__(self):
        return f"Ellipsoid(dim={self.dim}, trace={self.trace:.6g})"


@dataclass(frozen=True, eq=False)
class EllipticalCylinder:
    """C(offset, shape, projector) = {x : (Cx - y)' M^-1 (Cx - y) <= 1}."""

    offset: np.ndarray
    shape: np.ndarray
    projector: np.ndarray

    def __post_init__(self):
        offset = _as_vector(self.offset, "offset")
        shape = symmetrize(_as_matrix(self.shape, "shape"))
        projector = _as_matrix(self.projector, "projector")
        m = offset.size
        if shape.shape != (m, m) or projector.shape[0] != m:
            raise SetCalcError(
                f"cylinder dimensions disagree: offset {m}, shape {shape.shape}, "
                f"projector {projector.shape}"
            )
        if m > projector.shape[1] or matrix_rank(projector) != m:
            raise SetCalcError("cylinder projector must have full row rank")
        if not is_positive_definite(shape):
            raise SetCalcError("cylinder shape must be positive definite")
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "projector", projector)

    @property
    def dim(self) -> int:
        return self.projector.shape[1]

    def contains(self, x, tol: float = 1e-9) -> bool:
        r = self.projector @ _as_vector(x) - self.offset
        return float(r @ la.solve(self.shape, r, assume_a="pos")) <= 1.0 + tol


def _check_dim(e: Ellipsoid, n: int, what: str):
    if e.dim != n:
        raise SetCalcError(f"{what} has dimension {n}, ellipsoid has {e.dim}")


def support(e: Ellipsoid, l) -> float:
    l = _as_vector(l, "direction")
    _check_dim(e, l.size, "direction")
    return float(l @ e.center + np.sqrt(max(float(l @ e.shape @ l), 0.0)))


def contains(e: Ellipsoid, x, tol: float = 1e-9) -> bool:
    """Membership test; degenerate shapes are handled through the pseudoinverse."""
    x = _as_vector(x, "point")
    _check_dim(e, x.size, "point")
    d = x - e.center
    if is_positive_definite(e.shape):
        q = float(d @ la.solve(e.shape, d, assume_a="pos"))
        return q <= 1.0 + tol
    mp = pinv(e.shape)
    off_range = d - e.shape @ (mp @ d)
    if np.linalg.norm(off_range) > tol * max(1.0, float(np.linalg.norm(d))):
        return False
    return float(d @ mp @ d) <= 1.0 + tol


def affine_map(a, e: Ellipsoid, b=None) -> Ellipsoid:
    """E(A m + b, A M A')."""
    a = _as_matrix(a, "map")
    if a.shape[1] != e.dim:
        raise SetCalcError(f"map has {a.shape[1]} columns, ellipsoid dimension {e.dim}")
    b = np.zeros(a.shape[0]) if b is None else _as_vector(b, "offset")
    if b.size != a.shape[0]:
        raise SetCalcError(f"offset has length {b.size}, map has {a.shape[0]} rows")
    return Ellipsoid(a @ e.center + b, a @ e.shape @ a.T)


def minksum_outer(e1: Ellipsoid, e2: Ellipsoid) -> Ellipsoid:
    """Trace-optimal outer ellipsoid of the Minkowski sum e1 + e2."""
    if e1.dim != e2.dim:
        raise SetCalcError(f"cannot add ellipsoids of dimension {e1.dim} and {e2.dim}")
    center = e1.center + e2.center
    t1, t2 = e1.trace, e2.trace
    if t2 <= 0.0:
        return Ellipsoid(center, e1.shape)
    if t1 <= 0.0:
        return Ellipsoid(center, e2.shape)
    p = np.sqrt(t1 / t2)
    return Ellipsoid(center, (1.0 + 1.0 / p) * e1.shape + (1.0 + p) * e2.shape)


class _FusionTerms:
    """Lambda-independent pieces of an ellipsoid/cylinder fusion."""

    def __init__(self, e: Ellipsoid, c: EllipticalCylinder):
        if c.dim != e.dim:
            raise SetCalcError(f"cylinder lives in R^{c.dim}, ellipsoid in R^{e.dim}")
        cm = c.projector
        self.m1_inv = spd_inverse(e.shape)
        m2_inv = spd_inverse(c.shape)
        self.ct_m2inv_c = symmetrize(cm.T @ m2_inv @ cm)
        self.m1_inv_m1 = self.m1_inv @ e.center
        self.ct_m2inv_y = cm.T @ (m2_inv @ c.offset)
        self.m2 = c.shape
        self.c_m1_ct = symmetrize(cm @ e.shape @ cm.T)
        self.innovation = c.offset - cm @ e.center

    def _scale(self, lam: float) -> float:
        s = lam * self.m2 + (1.0 - lam) * self.c_m1_ct
        r = self.innovation
        try:
            quad = float(r @ la.solve(s, r, assume_a="pos"))
        except la.LinAlgError as exc:
            raise SetCalcError("fusion innovation matrix is singular") from exc
        z = 1.0 - lam * (1.0 - lam) * quad
        if z <= 0.0:
            raise EmptyIntersectionError(f"fusion at lambda={lam:.6g} gives z={z:.3e}")
        return z

    def trace(self, lam: float) -> float:
        z = self._scale(lam)
        z_mat = lam * self.m1_inv + (1.0 - lam) * self.ct_m2inv_c
        return z * float(np.trace(spd_inverse(z_mat)))

    def fuse(self, lam: float) -> Ellipsoid:
        z = self._scale(lam)
        z_inv = spd_inverse(lam * self.m1_inv + (1.0 - lam) * self.ct_m2inv_c)
        center = z_inv @ (lam * self.m1_inv_m1 + (1.0 - lam) * self.ct_m2inv_y)
        return Ellipsoid(center, z * z_inv)


def fusion(e: Ellipsoid, c: EllipticalCylinder, lam: float) -> Ellipsoid:
    """Outer ellipsoid of e intersected with c for a fixed weight lam in [0, 1].

    Raises
    ------
    EmptyIntersectionError
        If the fusion scalar z is not positive, which certifies e and c
        are disjoint.
    """
    if not 0.0 <= lam <= 1.0:
        raise SetCalcError(f"fusion weight must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return e
    return _FusionTerms(e, c).fuse(lam)


def golden_section(
    f: Callable[[float], float], a: float = 0.0, b: float = 1.0, tol: float = GOLDEN_TOL
) -> Tuple[float, float]:
    """Minimize a unimodal ``f`` on [a, b]; returns (x, f(x))."""
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fusion_optimal(e: Ellipsoid, c: EllipticalCylinder, tol: float = GOLDEN_TOL) -> Ellipsoid:
    """Fusion with the weight chosen by golden-section search on Tr(M).

    The identity (lam = 1) is always a candidate, so the result never has a
    larger trace than ``e``. A degenerate ``e`` is returned as is.

    Raises
    ------
    EmptyIntersectionError
        If any weight visited by the search gives z <= 0.
    """
    if not is_positive_definite(e.shape):
        return e
    terms = _FusionTerms(e, c)
    empty: List[EmptyIntersectionError] = []

    def objective(lam: float) -> float:
        try:
            return terms.trace(lam)
        except EmptyIntersectionError as exc:
            empty.append(exc)
            return np.inf
        except SetCalcError:
            return np.inf

    # lam (1 - lam) peaks at 1/2
    objective(0.5)
    lam, _ = golden_section(objective, 0.0, 1.0, tol)
    if empty:
        raise empty[0]
    fused = terms.fuse(lam)
    logger.debug("fusion_optimal: lambda=%.5f trace %.4g -> %.4g", lam, e.trace, fused.trace)
    if fused.trace < e.trace:
        return fused
    return e


def hyperplane_fusion(e: Ellipsoid, c, y, tol: float = 1e-9) -> Ellipsoid:
    """Exact intersection of e with the affine subspace {x : C x = y}.

    Works in the coordinates x = m + S s with S S' = M, so degenerate
    shapes are admitted. The result is flat along the constrained directions.
    """
    c = _as_matrix(c, "constraint")
    y = _as_vector(y, "value")
    if c.shape != (y.size, e.dim):
        raise SetCalcError(f"constraint {c.shape} does not fit value {y.size} in R^{e.dim}")
    s = psd_factor(e.shape)
    cs = c @ s
    r = y - c @ e.center
    s_star = pinv(cs) @ r
    residual = np.linalg.norm(cs @ s_star - r)
    if residual > tol * (1.0 + np.linalg.norm(y)):
        raise EmptyIntersectionError(f"subspace misses the ellipsoid (residual {residual:.3e})")
    rho = 1.0 - float(s_star @ s_star)
    if rho < -tol:
        raise EmptyIntersectionError(f"subspace misses the ellipsoid (quadratic form {1 - rho:.6g})")
    rho = max(rho, 0.0)
    basis = s @ la.null_space(cs, rcond=PINV_RCOND)
    return Ellipsoid(e.center + s @ s_star, rho * basis @ basis.T)


def intersect_outer_centered(
    shapes: Sequence[np.ndarray], tol: float = GOLDEN_TOL
) -> Ellipsoid:
    """Outer ellipsoid of the intersection of centered ellipsoids E(0, M_i)."""
    if not shapes:
        raise SetCalcError("need at least one shape to intersect")
    mats = [symmetrize(_as_matrix(m)) for m in shapes]
    n = mats[0].shape[0]
    if any(m.shape != (n, n) for m in mats):
        raise SetCalcError("all shapes must share one dimension")
    order = sorted(range(len(mats)), key=lambda i: float(np.trace(mats[i])))
    current = Ellipsoid(np.zeros(n), mats[order[0]])
    identity = np.eye(n)
    for i in order[1:]:
        cyl = EllipticalCylinder(np.zeros(n), mats[i], identity)
        current = fusion_optimal(current, cyl, tol)
    return current


def sample_ellipsoid(
    e: Ellipsoid, rng: np.random.Generator, count: int, boundary: bool = False
) -> np.ndarray:
    """Draw ``count`` points of e (uniform in the ball image, or on its boundary)."""
    n = e.dim
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if not boundary:
        g *= rng.random((count, 1)) ** (1.0 / n)
    return e.center + g @ psd_factor(e.shape).T


def random_psd(
    rng: np.random.Generator, n: int, scale: float = 1.0, min_eig: Optional[float] = 1e-2
) -> np.ndarray:
    """Random PD matrix with eigenvalues in [min_eig, scale]; used by validation."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lo = 0.0 if min_eig is None else min_eig
    w = lo + (scale - lo) * rng.random(n)
    return symmetrize((q * w) @ q.T)
