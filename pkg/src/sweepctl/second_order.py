"""Coderivatives of normal-cone mappings for inequality-defined sets.

Set-valued results are stored as affine pieces ``base + sum_i gamma_i gen_i``
whose coefficients carry a tag: ``zero`` (gamma_i = 0), ``nonnegative``
(gamma_i >= 0) or ``free``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear, nnls

from .dynamics import ProcessSpec, recover_eta
from .errors import DomainViolation, InvalidArgument, PreconditionViolation
from .geometry import TOL_ACT, SweepingSet

__all__ = [
    "ZERO",
    "NONNEG",
    "FREE",
    "OrthantCoderivativeQuery",
    "IndexPartition",
    "CoderivativeValue",
    "AffinePiece",
    "NormalConeCoderivative",
    "FCoderivative",
    "coderivative_orthant",
    "orthant_tags",
    "mfcq_holds",
    "licq_holds",
    "coderivative_normal_cone",
    "coderivative_F",
]

ZERO, NONNEG, FREE = "zero", "nonnegative", "free"


@dataclass(frozen=True)
class OrthantCoderivativeQuery:
    """A graph point ``(x, v)`` of the normal cone to the nonpositive orthant and a direction ``y``."""

    x: np.ndarray
    v: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x, v, y = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.x, self.v, self.y))
        if not (x.shape == v.shape == y.shape) or x.ndim != 1:
            raise InvalidArgument("x, v and y must be vectors of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(y))):
            raise InvalidArgument("query has non-finite entries")
        if np.any(x > 0) or np.any(v < 0) or np.any(x * v != 0):
            raise InvalidArgument("(x, v) is not in the graph of the orthant normal cone")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class IndexPartition:
    i1: tuple[int, ...]
    i2: tuple[int, ...]
    free: tuple[int, ...]


@dataclass(frozen=True)
class CoderivativeValue:
    """Either ``empty`` or the set of ``gamma`` obeying per-index tags."""

    kind: str
    gamma_constraints: tuple[str, ...]
    partition: IndexPartition | None = None

    @property
    def empty(self) -> bool:
        return self.kind == "empty"

    def contains(self, gamma, tol: float = 0.0) -> bool:
        if self.empty:
            return False
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        for gi, tag in zip(g, self.gamma_constraints):
            if tag == ZERO and abs(gi) > tol:
                return False
            if tag == NONNEG and gi < -tol:
                return False
        return True


def orthant_tags(x, v, y, tol: float = 0.0):
    """Tags for the orthant coderivative, or ``None`` when the value is empty.

    Index ``i`` is tagged ``zero`` when ``x_i < 0`` or (``v_i = 0`` and
    ``y_i < 0``), ``nonnegative`` when ``x_i = v_i = 0`` and ``y_i > 0``, and
    ``free`` otherwise.  The value is empty when some ``v_i y_i`` is nonzero.
    """
    tags = []
    for xi, vi, yi in zip(x, v, y):
        if abs(vi) > tol and abs(yi) > tol:
            return None
        if xi < -tol or (abs(vi) <= tol and yi < -tol):
            tags.append(ZERO)
        elif abs(xi) <= tol and abs(vi) <= tol and yi > tol:
            tags.append(NONNEG)
        else:
            tags.append(FREE)
    return tuple(tags)


def coderivative_orthant(q: OrthantCoderivativeQuery, tol: float = 0.0) -> CoderivativeValue:
    """Coderivative of the normal cone to the nonpositive orthant at ``(x, v)`` in direction ``y``."""
    tags = orthant_tags(q.x, q.v, q.y, tol)
    if tags is None:
        return CoderivativeValue("empty", ())
    part = IndexPartition(
        tuple(i for i, t in enumerate(tags) if t == ZERO),
        tuple(i for i, t in enumerate(tags) if t == NONNEG),
        tuple(i for i, t in enumerate(tags) if t == FREE),
    )
    return CoderivativeValue("parameterized-set", tags, part)


@dataclass(frozen=True)
class AffinePiece:
    """``base + G^T gamma`` with tagged coefficients (rows of ``generators``)."""

    base: np.ndarray
    generators: np.ndarray
    tags: tuple[str, ...]
    multipliers: np.ndarray

    def _free_part(self):
        idx = [i for i, t in enumerate(self.tags) if t != ZERO]
        return idx, self.generators[idx]

    def fit(self, w):
        """Best coefficients for ``w`` and the residual norm."""
        w = np.asarray(w, dtype=float)
        idx, G = self._free_part()
        gamma = np.zeros(len(self.tags))
        target = w - self.base
        if not idx:
            return gamma, float(np.linalg.norm(target))
        lb = np.array([0.0 if self.tags[i] == NONNEG else -np.inf for i in idx])
        ub = np.full(len(idx), np.inf)
        res = lsq_linear(G.T, target, bounds=(lb, ub), method="bvls", tol=1e-14)
        gamma[idx] = res.x
        return gamma, float(np.linalg.norm(G.T @ res.x - target))

    def contains(self, w, tol: float = 1e-9) -> bool:
        return self.fit(w)[1] <= tol

    def element(self, gamma) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        for gi, tag in zip(gamma, self.tags):
            if (tag == ZERO and gi != 0) or (tag == NONNEG and gi < 0):
                raise InvalidArgument("coefficients violate the tags")
        return self.base + self.generators.T @ gamma


@dataclass(frozen=True)
class NormalConeCoderivative:
    """Union of affine pieces; ``exact`` is False in upper-estimate mode."""

    pieces: tuple[AffinePiece, ...]
    exact: bool
    domain_violation: bool = False

    @property
    def empty(self) -> bool:
        return not self.pieces

    def contains(self, w, tol: float = 1e-9) -> bool:
        return any(p.contains(w, tol) for p in self.pieces)

    def distance(self, w) -> float:
        return min((p.fit(w)[1] for p in self.pieces), default=np.inf)


def mfcq_holds(G, tol: float = 1e-10) -> bool:
    """Positive linear independence of the rows of ``G``."""
    G = np.atleast_2d(G)
    if G.shape[0] == 0:
        return True
    w = 1e3 * max(1.0, float(np.max(np.abs(G))))
    A = np.vstack([G.T, w * np.ones((1, G.shape[0]))])
    b = np.concatenate([np.zeros(G.shape[1]), [w]])
    lam, _ = nnls(A, b)
    return float(np.linalg.norm(G.T @ lam)) > tol


def licq_holds(G, tol: float = 1e-10) -> bool:
    G = np.atleast_2d(G)
    if G.shape[0] == 0:
        return True
    return int(np.linalg.matrix_rank(G, tol=tol * max(1.0, np.abs(G).max()))) == G.shape[0]


def _normal_multipliers(G_act, v, exact, tol):
    """Multiplier vectors ``lam >= 0`` with ``-G^T lam = v`` (all vertices unless exact)."""
    p = G_act.shape[0]
    if exact:
        lam, *_ = np.linalg.lstsq(-G_act.T, v, rcond=None)
        if np.any(lam < -tol) or np.linalg.norm(-G_act.T @ lam - v) > tol * (1 + np.linalg.norm(v)):
            return []
        return [np.maximum(lam, 0.0)]
    n = G_act.shape[1]
    out = []
    for size in range(0, min(p, n) + 1):
        for S in itertools.combinations(range(p), size):
            lam = np.zeros(p)
            if size:
                GS = G_act[list(S)]
                if not licq_holds(GS):
                    continue
                sol, *_ = np.linalg.lstsq(-GS.T, v, rcond=None)
                if np.any(sol < -tol):
                    continue
                lam[list(S)] = np.maximum(sol, 0.0)
            if np.linalg.norm(-G_act.T @ lam - v) > tol * (1 + np.linalg.norm(v)):
                continue
            if not any(np.allclose(lam, o, atol=tol) for o in out):
                out.append(lam)
    return out


def coderivative_normal_cone(cset: SweepingSet, x, v, u_dir, *, tol: float = 1e-10,
                             tol_act: float = TOL_ACT) -> NormalConeCoderivative:
    """Coderivative of ``N_C`` at ``(x, v)`` applied to ``u_dir``.

    Each piece is ``-(sum lam_i hess g_i(x)) u - grad g(x)^T gamma`` with
    ``gamma`` tagged by the orthant coderivative at
    ``(-g(x), lam)`` in direction ``-grad g(x) u``.  Under LICQ on the active
    gradients the multiplier is unique and the value is exact; otherwise the
    union over vertex multipliers is returned as an upper estimate.
    Directions with ``lam_i <grad g_i(x), u> != 0`` give an empty value with
    ``domain_violation`` set.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    u = np.asarray(u_dir, dtype=float)
    vals = cset.values(x)
    if np.any(vals < -tol_act):
        raise PreconditionViolation("x is not in C")
    m = cset.num_constraints
    act = [i for i in range(m) if vals[i] <= tol_act]
    G = cset.gradients(x)
    G_act = G[act]
    if not mfcq_holds(G_act):
        raise PreconditionViolation("MFCQ fails at x")
    exact = licq_holds(G_act)
    if act:
        lams_act = _normal_multipliers(G_act, v, exact, tol)
    else:
        lams_act = [np.zeros(0)] if np.linalg.norm(v) <= tol else []
    if not lams_act:
        raise InvalidArgument("v is not a normal vector at x")
    H = cset.hessians(x)
    Gu = G @ u
    gscale = tol * (1.0 + float(np.linalg.norm(u)) * max(1.0, float(np.abs(G).max())))
    pieces = []
    violated = False
    for la in lams_act:
        lam = np.zeros(m)
        lam[act] = la
        tags = orthant_tags(-np.where(vals <= tol_act, 0.0, vals), lam, -Gu, gscale)
        if tags is None:
            violated = True
            continue
        base = -np.einsum("i,ijk->jk", lam, H) @ u
        pieces.append(AffinePiece(base, -G, tags, lam))
    return NormalConeCoderivative(tuple(pieces), exact, violated and not pieces)


@dataclass(frozen=True)
class FCoderivative:
    """Value ``(x*, u*, a*)`` of the velocity-map coderivative as a tagged affine set."""

    base_x: np.ndarray
    base_u: np.ndarray
    base_a: np.ndarray
    gradients: np.ndarray
    tags: tuple[str, ...]
    multipliers: np.ndarray

    def element(self, gamma):
        gamma = np.asarray(gamma, dtype=float)
        for gi, tag in zip(gamma, self.tags):
            if (tag == ZERO and gi != 0) or (tag == NONNEG and gi < 0):
                raise InvalidArgument("coefficients violate the tags")
        Gg = self.gradients.T @ gamma
        return self.base_x - Gg, self.base_u + Gg, self.base_a.copy()

    def contains(self, xs, us, as_, tol: float = 1e-9) -> bool:
        if np.linalg.norm(np.asarray(as_) - self.base_a) > tol:
            return False
        piece = AffinePiece(
            np.concatenate([self.base_x, self.base_u]),
            np.hstack([-self.gradients, self.gradients]),
            self.tags,
            self.multipliers,
        )
        return piece.contains(np.concatenate([xs, us]), tol)


def coderivative_F(spec: ProcessSpec, x, u, a, w, y, *, tol: float = 1e-10,
                   tol_act: float = TOL_ACT) -> FCoderivative:
    """Coderivative of ``F(x, u, a) = N(x - u; C) + f(x, a)`` at ``w`` in direction ``y``.

    The value is ``(fx^T y - H y - G^T gamma, H y + G^T gamma, fa^T y)`` with
    ``H = sum lam_i hess g_i(x - u)`` and ``gamma`` tagged by the orthant
    coderivative at ``(-g, lam)`` in direction ``-G y``.

    Raises
    ------
    NotInCone
        If ``w`` is not in ``F(x, u, a)``.
    DomainViolation
        If ``lam_i <grad g_i(x - u), y> != 0`` for some ``i``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    y = np.asarray(y, dtype=float)
    z = x - u
    vals = spec.set.values(z)
    if np.any(vals < -tol_act):
        raise PreconditionViolation("x - u is not in C")
    lam = recover_eta(spec, x, u, -np.asarray(w, dtype=float), a, tol_act=tol_act)
    G = spec.set.gradients(z)
    Gy = G @ y
    scale = tol * (1.0 + float(np.linalg.norm(y)) * max(1.0, float(np.abs(G).max())))
    tags = orthant_tags(-np.where(vals <= tol_act, 0.0, vals), lam, -Gy, scale)
    if tags is None:
        raise DomainViolation("direction violates lam_i <grad g_i, y> = 0")
    Hy = np.einsum("i,ijk->jk", lam, spec.set.hessians(z)) @ y
    return FCoderivative(
        spec.fx(x, a).T @ y - Hy,
        Hy,
        spec.fa(x, a).T @ y,
        G,
        tags,
        lam,
    )
