"""Sweeping sets given by smooth inequalities, projections and normal cones.

A sweeping set is ``C = {y : g_i(y) >= 0, i = 1..m}``.  Normal vectors at a
point ``y`` of ``C`` are written ``-sum_i lam_i grad g_i(y)`` with ``lam >= 0``
supported on the active constraints.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, NumericalFailure, PreconditionViolation, ProxRadiusWarning

TOL_ACT = 1e-8

__all__ = [
    "TOL_ACT",
    "SweepingSet",
    "ActiveIndexSet",
    "NormalConeElement",
    "AssumptionReport",
    "Ball",
    "Box",
    "affine_set",
    "separation_set",
    "disk_set",
    "membership",
    "active_set",
    "project",
    "projection_jacobian",
    "normal_cone_element",
    "check_assumptions",
    "prox_modulus",
]


def _as_point(y, n=None, name="y"):
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InvalidArgument(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} has non-finite entries")
    if n is not None and arr.shape[0] != n:
        raise InvalidArgument(f"{name} has dimension {arr.shape[0]}, expected {n}")
    return arr


@dataclass(frozen=True)
class SweepingSet:
    """The set ``C = {y : g(y) >= 0}`` with derivative evaluators and constants.

    Attributes
    ----------
    dim : int
        Ambient dimension ``n``.
    num_constraints : int
        Number ``m`` of inequality functions.
    g, grad_g, hess_g : callable
        ``g(y) -> (m,)``, ``grad_g(y) -> (m, n)``, ``hess_g(y) -> (m, n, n)``.
    m1, m2, m3 : float
        Declared bounds ``m1 <= |grad g_i| <= m2`` and ``|hess g_i| <= m3``.
        ``m3 = 0`` is accepted for affine constraints.
    beta, rho : float
        Declared constant of the inverse triangle inequality and the
        activity radius of the perturbed index set.
    alpha : float or None
        Numerator of the prox-regularity modulus; ``m1`` when omitted.
    name : str
        Label used in reports.
    """

    dim: int
    num_constraints: int
    g: Callable[[np.ndarray], np.ndarray]
    grad_g: Callable[[np.ndarray], np.ndarray]
    hess_g: Callable[[np.ndarray], np.ndarray]
    m1: float
    m2: float
    m3: float
    beta: float = 1.0
    rho: float = 1.0
    alpha: float | None = None
    name: str = "set"

    def __post_init__(self):
        if self.dim < 1 or self.num_constraints < 1:
            raise InvalidArgument("dimension and constraint count must be positive")
        if not (self.m1 > 0 and self.m1 <= self.m2):
            raise InvalidArgument("need 0 < m1 <= m2")
        if self.m3 < 0:
            raise InvalidArgument("m3 must be nonnegative")
        if self.beta < 1:
            raise InvalidArgument("beta must be at least 1")
        if self.rho <= 0:
            raise InvalidArgument("rho must be positive")
        if self.alpha is not None and self.alpha <= 0:
            raise InvalidArgument("alpha must be positive")

    def values(self, y) -> np.ndarray:
        return np.asarray(self.g(y), dtype=float).reshape(self.num_constraints)

    def gradients(self, y) -> np.ndarray:
        return np.asarray(self.grad_g(y), dtype=float).reshape(self.num_constraints, self.dim)

    def hessians(self, y) -> np.ndarray:
        return np.asarray(self.hess_g(y), dtype=float).reshape(
            self.num_constraints, self.dim, self.dim
        )


@dataclass(frozen=True)
class ActiveIndexSet:
    """Sorted active indices (0-based) and the threshold used to build them."""

    indices: tuple[int, ...]
    threshold: float

    def __contains__(self, i):
        return i in self.indices

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)


@dataclass(frozen=True)
class NormalConeElement:
    multipliers: np.ndarray
    vector_value: np.ndarray


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def sample(self, rng, count):
        c = np.asarray(self.center, dtype=float)
        d = rng.standard_normal((count, c.size))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.random(count) ** (1.0 / c.size)
        return c + d * r[:, None]


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def sample(self, rng, count):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(hi < lo):
            raise InvalidArgument("box upper bound below lower bound")
        return lo + (hi - lo) * rng.random((count, lo.size))


@dataclass
class AssumptionReport:
    """Empirical constants of a sweeping set over a sample region."""

    grad_min: float
    grad_max: float
    hess_max: float
    beta_estimate: float
    samples_used: int
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def affine_set(A, b, *, beta=1.0, rho=1.0, alpha=None, name="affine") -> SweepingSet:
    """Polyhedron ``{y : A y + b >= 0}``; gradient bounds are read off ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(A.shape[0])
    m, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    if np.any(norms == 0):
        raise InvalidArgument("affine constraint with zero gradient")
    zeros = np.zeros((m, n, n))
    return SweepingSet(
        dim=n,
        num_constraints=m,
        g=lambda y: A @ np.asarray(y, dtype=float) + b,
        grad_g=lambda y: A,
        hess_g=lambda y: zeros,
        m1=float(norms.min()),
        m2=float(norms.max()),
        m3=0.0,
        beta=beta,
        rho=rho,
        alpha=alpha,
        name=name,
    )


def separation_set(distance, *, block=2, rho=1.0, name="separation") -> SweepingSet:
    """Two blocks ``y = (y1, y2)`` kept at least ``distance`` apart.

    ``g(y) = |y1 - y2| - distance``.  On ``|g| <= rho`` the gradient norm is
    ``sqrt(2)`` and the Hessian norm is at most ``2 / (distance - rho)``.
    """
    if distance <= 0 or rho >= distance:
        raise InvalidArgument("need 0 < rho < distance")
    n = 2 * block

    def g(y):
        y = np.asarray(y, dtype=float)
        return np.array([np.linalg.norm(y[:block] - y[block:]) - distance])

    def grad(y):
        y = np.asarray(y, dtype=float)
        d = y[:block] - y[block:]
        r = np.linalg.norm(d)
        if r == 0.0:
            raise NumericalFailure("separation gradient undefined at coincident blocks")
        e = d / r
        return np.concatenate([e, -e]).reshape(1, n)

    def hess(y):
        y = np.asarray(y, dtype=float)
        d = y[:block] - y[block:]
        r = np.linalg.norm(d)
        if r == 0.0:
            raise NumericalFailure("separation Hessian undefined at coincident blocks")
        e = d / r
        P = (np.eye(block) - np.outer(e, e)) / r
        return np.block([[P, -P], [-P, P]]).reshape(1, n, n)

    return SweepingSet(
        dim=n,
        num_constraints=1,
        g=g,
        grad_g=grad,
        hess_g=hess,
        m1=math.sqrt(2.0),
        m2=math.sqrt(2.0),
        m3=2.0 / (distance - rho),
        beta=1.0,
        rho=rho,
        name=name,
    )


def disk_set(radius=1.0, center=(0.0, 0.0), *, rho=None, name="disk") -> SweepingSet:
    """Closed disk ``{y : radius^2 - |y - center|^2 >= 0}``."""
    c = np.asarray(center, dtype=float)
    n = c.size
    r2 = float(radius) ** 2
    rho = 0.5 * r2 if rho is None else rho
    if not 0 < rho < r2:
        raise InvalidArgument("need 0 < rho < radius^2")
    hess = (-2.0 * np.eye(n)).reshape(1, n, n)
    return SweepingSet(
        dim=n,
        num_constraints=1,
        g=lambda y: np.array([r2 - np.sum((np.asarray(y, dtype=float) - c) ** 2)]),
        grad_g=lambda y: (-2.0 * (np.asarray(y, dtype=float) - c)).reshape(1, n),
        hess_g=lambda y: hess,
        m1=2.0 * math.sqrt(r2 - rho),
        m2=2.0 * math.sqrt(r2 + rho),
        m3=2.0,
        beta=1.0,
        rho=rho,
        name=name,
    )


def membership(cset: SweepingSet, y, tol: float = 0.0) -> bool:
    """True iff ``g_i(y) >= -tol`` for every constraint."""
    y = _as_point(y, cset.dim)
    if not math.isfinite(tol) or tol < 0:
        raise InvalidArgument("tol must be finite and nonnegative")
    return bool(np.all(cset.values(y) >= -tol))


def active_set(cset: SweepingSet, y, threshold: float = 0.0, tol_act: float = TOL_ACT) -> ActiveIndexSet:
    """Exact active set (``threshold = 0``) or the perturbed set ``g_i <= threshold``."""
    y = _as_point(y, cset.dim)
    if threshold < 0:
        raise InvalidArgument("threshold must be nonnegative")
    vals = cset.values(y)
    if np.any(vals < -tol_act):
        raise PreconditionViolation(f"point outside the set (min g = {vals.min():.3e})")
    cut = max(threshold, tol_act)
    return ActiveIndexSet(tuple(int(i) for i in np.flatnonzero(vals <= cut)), float(threshold))


def normal_cone_element(cset: SweepingSet, y, lambdas, tol_act: float = TOL_ACT) -> NormalConeElement:
    """Return ``-sum lam_i grad g_i(y)`` after checking sign and support."""
    y = _as_point(y, cset.dim)
    lam = _as_point(lambdas, cset.num_constraints, "lambdas")
    if np.any(lam < 0):
        raise InvalidArgument("multipliers must be nonnegative")
    act = active_set(cset, y, 0.0, tol_act)
    off = [i for i in np.flatnonzero(lam) if i not in act]
    if off:
        raise InvalidArgument(f"multipliers supported on inactive constraints {off}")
    return NormalConeElement(lam.copy(), -cset.gradients(y).T @ lam)


def prox_modulus(cset: SweepingSet) -> float:
    """Prox-regularity radius ``alpha / (m3 * beta)``, infinite when ``m3 = 0``."""
    if cset.m3 == 0:
        return math.inf
    alpha = cset.m1 if cset.alpha is None else cset.alpha
    return alpha / (cset.m3 * cset.beta)


def _kkt_step(cset, y, z, lam, W):
    n = cset.dim
    G = cset.gradients(y)[W]
    H = np.eye(n)
    if W:
        H = H - np.einsum("i,ijk->jk", lam[W], cset.hessians(y)[W])
    K = np.zeros((n + len(W), n + len(W)))
    K[:n, :n] = H
    K[:n, n:] = -G.T
    K[n:, :n] = G
    rhs = np.concatenate([-(y - z), -cset.values(y)[W]])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def _kkt_residual(cset, y, z, lam, W):
    r = y - z - cset.gradients(y).T @ lam
    gw = cset.values(y)[W] if W else np.zeros(0)
    return float(np.sqrt(r @ r + gw @ gw))


def project(cset: SweepingSet, z, *, tol: float = 1e-13, max_iter: int = 100,
            tol_act: float = TOL_ACT):
    """Euclidean projection of ``z`` onto ``C`` with KKT multipliers.

    Returns ``(y, lam)`` with ``y - z = sum_i lam_i grad g_i(y)``, so that
    ``z - y`` lies in the normal cone at ``y``, and ``lam_i g_i(y) = 0``.

    The solver is an active-set Newton method on the KKT system, started at
    ``z`` with the violated constraints as working set.  A
    :class:`ProxRadiusWarning` is emitted when the distance reaches the
    prox-regularity radius, where the projection may be non-unique.
    """
    z = _as_point(z, cset.dim, "z")
    m = cset.num_constraints
    vals = cset.values(z)
    if np.all(vals >= 0):
        return z.copy(), np.zeros(m)

    y = z.copy()
    lam = np.zeros(m)
    W = [int(np.argmin(vals))]
    best = (math.inf, y.copy(), lam.copy())
    scale = tol * (1.0 + float(np.linalg.norm(z)))
    for _ in range(max_iter):
        try:
            d, lw = _kkt_step(cset, y, z, lam, W)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"singular KKT system in projection: {exc}", best=best[1]) from exc
        lam_new = np.zeros(m)
        lam_new[W] = lw
        res0 = _kkt_residual(cset, y, z, lam_new, W)
        step = 1.0
        for _ in range(30):
            if _kkt_residual(cset, y + step * d, z, lam_new, W) < res0 or step < 1e-6:
                break
            step *= 0.5
        y = y + step * d
        lam = lam_new
        res = _kkt_residual(cset, y, z, lam, W)
        if res < best[0] and np.all(cset.values(y) >= -1e-10):
            best = (res, y.copy(), lam.copy())
        if res > scale:
            continue
        # Newton has converged for the current working set.
        neg = [i for i in W if lam[i] < -scale]
        if neg:
            drop = min(neg, key=lambda i: lam[i])
            W.remove(drop)
            lam[drop] = 0.0
            continue
        viol = cset.values(y)
        outside = [i for i in range(m) if i not in W and viol[i] < -scale]
        if outside:
            W.append(min(outside, key=lambda i: viol[i]))
            W.sort()
            continue
        lam = np.maximum(lam, 0.0)
        dist = float(np.linalg.norm(y - z))
        if dist >= prox_modulus(cset):
            warnings.warn(
                f"projection distance {dist:.3g} reaches the prox radius; the result may be non-unique",
                ProxRadiusWarning,
                stacklevel=2,
            )
        return y, lam
    raise NumericalFailure("active-set Newton projection did not converge", best=best[1])


def projection_jacobian(cset: SweepingSet, y, lam, tol: float = 0.0):
    """Derivatives of the projection and its multipliers with respect to ``z``.

    Returns ``(P, L)`` with ``P = dy/dz`` of shape ``(n, n)`` and
    ``L = dlam/dz`` of shape ``(m, n)``, from the implicit function theorem on
    the KKT system restricted to constraints with positive multipliers.
    """
    n, m = cset.dim, cset.num_constraints
    A = [i for i in range(m) if lam[i] > tol]
    if not A:
        return np.eye(n), np.zeros((m, n))
    G = cset.gradients(y)[A]
    H = np.eye(n) - np.einsum("i,ijk->jk", lam[A], cset.hessians(y)[A])
    K = np.zeros((n + len(A), n + len(A)))
    K[:n, :n] = H
    K[:n, n:] = -G.T
    K[n:, :n] = G
    rhs = np.zeros((n + len(A), n))
    rhs[:n] = np.eye(n)
    sol = np.linalg.solve(K, rhs)
    L = np.zeros((m, n))
    L[A] = sol[n:]
    return sol[:n], L


def check_assumptions(cset: SweepingSet, region=None, samples: int = 2000, *,
                      seed: int = 0, x0=None) -> AssumptionReport:
    """Estimate the constants of the set over a sample region.

    Gradient and Hessian bounds are measured on points with ``|g_i| <= rho``.
    The inverse-triangle constant is estimated from random nonnegative
    weights on the perturbed active set at feasible points, including
    boundary points obtained by projection.  The default region is the ball
    of radius ``2 (|x0| + 1)`` around ``x0`` (the origin when omitted).
    """
    rng = np.random.default_rng(seed)
    if region is None:
        c = np.zeros(cset.dim) if x0 is None else _as_point(x0, cset.dim, "x0")
        region = Ball(c, 2.0 * (np.linalg.norm(c) + 1.0))
    pts = region.sample(rng, samples)
    gmin, gmax, hmax, beta = math.inf, 0.0, 0.0, 1.0
    used = 0
    boundary = []
    for y in pts:
        try:
            vals = cset.values(y)
            grads = cset.gradients(y)
        except NumericalFailure:
            continue
        band = np.abs(vals) <= cset.rho
        if np.any(band):
            used += 1
            norms = np.linalg.norm(grads[band], axis=1)
            gmin = min(gmin, float(norms.min()))
            gmax = max(gmax, float(norms.max()))
            H = cset.hessians(y)[band]
            hmax = max(hmax, max(float(np.linalg.norm(h, 2)) for h in H))
        if np.all(vals >= 0):
            cand = y
        elif len(boundary) < samples // 4:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", ProxRadiusWarning)
                    cand, _ = project(cset, y)
            except NumericalFailure:
                continue
            boundary.append(cand)
        else:
            continue
        vals = cset.values(cand)
        idx = np.flatnonzero(vals <= cset.rho)
        if idx.size == 0:
            continue
        grads = cset.gradients(cand)[idx]
        norms = np.linalg.norm(grads, axis=1)
        for _ in range(4):
            w = rng.random(idx.size)
            denom = np.linalg.norm(w @ grads)
            if denom > 0:
                beta = max(beta, float(w @ norms / denom))
    if used == 0:
        gmin, gmax = math.nan, math.nan
    violations = []
    slack = 1e-9
    if used and gmin < cset.m1 * (1 - slack):
        violations.append(f"gradient norm {gmin:.6g} below declared m1 = {cset.m1:.6g}")
    if used and gmax > cset.m2 * (1 + slack):
        violations.append(f"gradient norm {gmax:.6g} above declared m2 = {cset.m2:.6g}")
    if hmax > cset.m3 * (1 + slack) + slack:
        violations.append(f"Hessian norm {hmax:.6g} above declared m3 = {cset.m3:.6g}")
    if beta > cset.beta * (1 + 1e-6):
        violations.append(f"beta estimate {beta:.6g} above declared beta = {cset.beta:.6g}")
    return AssumptionReport(gmin, gmax, hmax, beta, used, violations)
