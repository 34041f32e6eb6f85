"""Forward integration of the controlled sweeping process.

The process is ``-xdot in N(x - u; C) + f(x, a)`` with ``x(0) = x0`` and
``x0 - u(0) in C``.  On a uniform grid it is discretized by the catching-up
step ``x_{j+1} = u_{j+1} + proj_C(x_j - h f(x_j, a_j) - u_{j+1})``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .errors import InvalidArgument, NotInCone, NumericalFailure, PreconditionViolation
from .geometry import TOL_ACT, SweepingSet, active_set, project, projection_jacobian

__all__ = [
    "ProcessSpec",
    "DiscreteTrajectory",
    "step_catching_up",
    "step_explicit",
    "integrate",
    "trajectory_bound",
    "recover_eta",
    "w12_distance",
    "epsilon_k",
    "to_csv",
    "csv_text",
]


@dataclass(frozen=True)
class ProcessSpec:
    """Data of the controlled sweeping process.

    Attributes
    ----------
    set : SweepingSet
        The static set ``C``; the moving set is ``C + u(t)``.
    f, grad_f_x, grad_f_a : callable
        Perturbation ``f(x, a) -> (n,)`` and its Jacobians ``(n, n)``, ``(n, d)``.
    control_dim : int
        Dimension ``d`` of the perturbation control.
    horizon : float
        Final time ``T``.
    x0 : array
        Initial state.
    r1, r2 : float
        Bounds ``r1 <= |u(t)| <= r2``.
    lipschitz_k, growth_m : float
        Lipschitz constant of ``f`` in ``x`` and growth constant
        ``|f(x, a)| <= M (1 + |x|)``.
    control_coupling : array or None
        Optional matrix ``E`` imposing the linear constraint ``E u(t) = 0``.
    u0 : array or None
        Default set-control value used to start simulations and solvers.
    """

    set: SweepingSet
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_f_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_f_a: Callable[[np.ndarray, np.ndarray], np.ndarray]
    control_dim: int
    horizon: float
    x0: np.ndarray
    r1: float
    r2: float
    lipschitz_k: float = 0.0
    growth_m: float = 1.0
    control_coupling: np.ndarray | None = None
    u0: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(self.set.dim))
        if self.u0 is not None:
            object.__setattr__(self, "u0", np.asarray(self.u0, dtype=float).reshape(self.set.dim))
        if self.control_coupling is not None:
            E = np.atleast_2d(np.asarray(self.control_coupling, dtype=float))
            if E.shape[1] != self.set.dim:
                raise InvalidArgument("control_coupling must have n columns")
            object.__setattr__(self, "control_coupling", E)
        if not self.r1 > 0:
            raise InvalidArgument("r1 must be positive")
        if self.r2 < self.r1:
            raise InvalidArgument("need r1 <= r2")
        if not self.horizon > 0:
            raise InvalidArgument("horizon must be positive")
        if self.control_dim < 1:
            raise InvalidArgument("control_dim must be positive")
        if self.lipschitz_k < 0 or self.growth_m < 0:
            raise InvalidArgument("K and M must be nonnegative")
        if self.u0 is not None and np.any(self.set.values(self.x0 - self.u0) < -TOL_ACT):
            raise PreconditionViolation("x0 - u0 is not in C")

    @property
    def n(self) -> int:
        return self.set.dim

    @property
    def d(self) -> int:
        return self.control_dim

    @property
    def m(self) -> int:
        return self.set.num_constraints

    @property
    def coupling_rows(self) -> int:
        return 0 if self.control_coupling is None else self.control_coupling.shape[0]

    def fval(self, x, a) -> np.ndarray:
        return np.asarray(self.f(x, a), dtype=float).reshape(self.n)

    def fx(self, x, a) -> np.ndarray:
        return np.asarray(self.grad_f_x(x, a), dtype=float).reshape(self.n, self.n)

    def fa(self, x, a) -> np.ndarray:
        return np.asarray(self.grad_f_a(x, a), dtype=float).reshape(self.n, self.d)


@dataclass
class DiscreteTrajectory:
    """States and controls on the uniform grid ``t_j = j T / k``.

    ``eta[j]`` holds the normal-cone multipliers of step ``j``; the last row
    is the terminal multiplier (zero unless set by a solver or a model).
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    a: np.ndarray
    eta: np.ndarray
    bound: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.t.size - 1

    @property
    def h(self) -> float:
        return float(self.t[-1] - self.t[0]) / self.k

    @property
    def horizon(self) -> float:
        return float(self.t[-1])


def _check_h(h):
    if not (math.isfinite(h) and h > 0):
        raise InvalidArgument("step size must be positive")


def step_catching_up(spec: ProcessSpec, x_j, u_next, a_j, h: float):
    """One catching-up step; returns ``(x_next, eta_j)`` with ``eta_j = lam / h``."""
    _check_h(h)
    x_j = np.asarray(x_j, dtype=float)
    u_next = np.asarray(u_next, dtype=float)
    z = x_j - h * spec.fval(x_j, a_j) - u_next
    y, lam = project(spec.set, z)
    return u_next + y, lam / h


def step_explicit(spec: ProcessSpec, x_j, u_j, a_j, eta_j, h: float, tol_act: float = TOL_ACT):
    """Literal Euler step ``x_j - h (f(x_j, a_j) - sum eta_i grad g_i(x_j - u_j))``."""
    _check_h(h)
    x_j = np.asarray(x_j, dtype=float)
    eta_j = np.asarray(eta_j, dtype=float).reshape(spec.m)
    y = x_j - np.asarray(u_j, dtype=float)
    if np.any(eta_j < 0):
        raise InvalidArgument("eta must be nonnegative")
    act = active_set(spec.set, y, 0.0, tol_act)
    if any(eta_j[i] != 0 and i not in act for i in range(spec.m)):
        raise InvalidArgument("eta supported outside the active set")
    normal = spec.set.gradients(y).T @ eta_j
    return x_j - h * (spec.fval(x_j, a_j) - normal)


def trajectory_bound(spec: ProcessSpec, u_path) -> float:
    """A priori state bound ``|x0| + exp(2MT) (2MT (1 + |x0|) + sum |du|)``."""
    u_path = np.asarray(u_path, dtype=float)
    var = float(np.sum(np.linalg.norm(np.diff(u_path, axis=0), axis=1)))
    mt = 2.0 * spec.growth_m * spec.horizon
    x0n = float(np.linalg.norm(spec.x0))
    try:
        grow = math.exp(mt)
    except OverflowError:
        return math.inf
    return x0n + grow * (mt * (1.0 + x0n) + var)


def _as_path(path, k, dim, name):
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 1 and dim == 1:
        arr = arr.reshape(-1, 1)
    if arr.shape != (k + 1, dim):
        raise InvalidArgument(f"{name} must have shape ({k + 1}, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument(f"{name} has non-finite entries")
    return arr


def _forward(spec: ProcessSpec, u, a, k, want_jac=False, free=False):
    """Catching-up sweep; optionally returns per-step projection derivatives.

    With ``free`` the projection is skipped (drift-only map).
    """
    h = spec.horizon / k
    n, m = spec.n, spec.m
    x = np.empty((k + 1, n))
    eta = np.zeros((k + 1, m))
    x[0] = spec.x0
    jac = [] if want_jac else None
    for j in range(k):
        z = x[j] - h * spec.fval(x[j], a[j]) - u[j + 1]
        if free:
            y, lam = z, np.zeros(m)
        else:
            y, lam = project(spec.set, z)
        x[j + 1] = u[j + 1] + y
        eta[j] = lam / h
        if want_jac:
            if np.any(lam > 0):
                P, L = projection_jacobian(spec.set, y, lam)
            else:
                P, L = None, None
            jac.append((P, L))
    return x, eta, jac


def integrate(spec: ProcessSpec, u_path, a_path, k: int, *, check_controls: bool = True,
              tol_act: float = TOL_ACT) -> DiscreteTrajectory:
    """Integrate the catching-up scheme on ``k`` uniform steps.

    Raises
    ------
    PreconditionViolation
        If ``x0 - u_path[0]`` is not in ``C`` or a control violates the
        norm bounds (when ``check_controls``).
    NumericalFailure
        If a state exceeds the a priori trajectory bound.
    """
    if k < 1:
        raise InvalidArgument("k must be at least 1")
    u = _as_path(u_path, k, spec.n, "u_path")
    a = _as_path(a_path, k, spec.d, "a_path")
    if np.any(spec.set.values(spec.x0 - u[0]) < -tol_act):
        raise PreconditionViolation("x0 - u(0) is not in C")
    if check_controls:
        norms = np.linalg.norm(u, axis=1)
        slack = 1e-12 * max(1.0, spec.r2)
        if np.any(norms < spec.r1 - slack) or np.any(norms > spec.r2 + slack):
            raise PreconditionViolation("set-control outside the norm bounds r1 <= |u| <= r2")
    x, eta, _ = _forward(spec, u, a, k)
    bound = trajectory_bound(spec, u)
    worst = float(np.max(np.linalg.norm(x, axis=1)))
    if worst > bound * (1 + 1e-9):
        raise NumericalFailure(f"state norm {worst:.6g} exceeds the a priori bound {bound:.6g}")
    t = np.linspace(0.0, spec.horizon, k + 1)
    return DiscreteTrajectory(t, x, u.copy(), a.copy(), eta, bound)


def recover_eta(spec: ProcessSpec, x, u, xdot, a, *, tol: float | None = None,
                tol_act: float = TOL_ACT) -> np.ndarray:
    """Nonnegative multipliers with ``xdot + f(x, a) = sum eta_i grad g_i(x - u)``.

    The exact active set is tried first, then the perturbed set
    ``g_i <= rho``.  A tiny Tikhonov term selects a near minimum-norm
    solution when the gradients are dependent.

    Raises
    ------
    NotInCone
        If the residual exceeds ``tol`` (default ``1e-6 (1 + |f|)``).
    """
    x = np.asarray(x, dtype=float)
    y = x - np.asarray(u, dtype=float)
    fv = spec.fval(x, a)
    target = np.asarray(xdot, dtype=float) + fv
    if tol is None:
        tol = 1e-6 * (1.0 + float(np.linalg.norm(fv)))
    eta = np.zeros(spec.m)
    if float(np.linalg.norm(target)) <= tol:
        return eta
    grads = spec.set.gradients(y)
    scale = float(np.linalg.norm(target)) + 1.0
    best = math.inf
    for threshold in (0.0, spec.set.rho):
        idx = list(active_set(spec.set, y, threshold, tol_act))
        if not idx:
            continue
        A = grads[idx].T
        delta = 1e-12 * max(1.0, float(np.max(np.abs(A)))) ** 2
        A_aug = np.vstack([A, math.sqrt(delta) * np.eye(len(idx))])
        b_aug = np.concatenate([target, np.zeros(len(idx))])
        sol, _ = nnls(A_aug, b_aug)
        res = float(np.linalg.norm(A @ sol - target))
        if res <= tol:
            eta[idx] = sol
            return eta
        best = min(best, res)
    raise NotInCone(
        f"velocity not realizable by the normal cone (residual {best if best < math.inf else scale:.3e})",
        residual=best,
    )


def _sample_analytic(ref, times):
    z = np.array([np.concatenate([np.atleast_1d(c) for c in ref.state(t)]) for t in times])
    dz = np.array([np.concatenate([np.atleast_1d(c) for c in ref.velocity(t)]) for t in times])
    return z, dz


def _components(traj, which):
    parts = {"x": traj.x, "u": traj.u, "a": traj.a}
    return np.hstack([parts[c] for c in which])


def w12_distance(traj_a: DiscreteTrajectory, traj_b, components: str = "xua") -> float:
    """Sup-norm of the difference plus the L2 norm of the derivative difference.

    ``traj_b`` is either a :class:`DiscreteTrajectory` on the same grid, or an
    object with ``state(t)`` and ``velocity(t)`` returning ``(x, u, a)``
    tuples.  Trajectories are interpolated piecewise linearly; analytic
    paths are integrated with 3-point Gauss quadrature per interval and the
    sup is taken over nodes and interval midpoints.
    """
    if any(c not in "xua" for c in components) or not components:
        raise InvalidArgument("components must be a nonempty subset of 'xua'")
    za = _components(traj_a, components)
    h = traj_a.h
    if isinstance(traj_b, DiscreteTrajectory):
        if traj_b.k != traj_a.k or not np.allclose(traj_b.t, traj_a.t, rtol=0, atol=1e-12 * max(1.0, traj_a.horizon)):
            raise InvalidArgument("trajectories live on different grids")
        zb = _components(traj_b, components)
        diff = za - zb
        sup = float(np.max(np.linalg.norm(diff, axis=1)))
        dd = np.diff(diff, axis=0) / h
        return sup + float(math.sqrt(h * np.sum(dd ** 2)))
    if not (hasattr(traj_b, "state") and hasattr(traj_b, "velocity")):
        raise InvalidArgument("reference must be a trajectory or expose state/velocity")
    if abs(getattr(traj_b, "horizon", traj_a.horizon) - traj_a.horizon) > 1e-12 * max(1.0, traj_a.horizon):
        raise InvalidArgument("horizon mismatch")
    sel = {"x": 0, "u": 1, "a": 2}

    def pick(vals):
        return np.concatenate([np.atleast_1d(np.asarray(vals[sel[c]], dtype=float)) for c in components])

    t = traj_a.t
    zb = np.array([pick(traj_b.state(s)) for s in t])
    mids = 0.5 * (t[:-1] + t[1:])
    zb_mid = np.array([pick(traj_b.state(s)) for s in mids])
    za_mid = 0.5 * (za[:-1] + za[1:])
    sup = max(float(np.max(np.linalg.norm(za - zb, axis=1))),
              float(np.max(np.linalg.norm(za_mid - zb_mid, axis=1))))
    slopes = np.diff(za, axis=0) / h
    nodes, weights = np.polynomial.legendre.leggauss(3)
    total = 0.0
    for q, w in zip(nodes, weights):
        s = mids + 0.5 * h * q
        db = np.array([pick(traj_b.velocity(v)) for v in s])
        total += 0.5 * h * w * float(np.sum((slopes - db) ** 2))
    return sup + math.sqrt(total)


def epsilon_k(traj: DiscreteTrajectory, reference) -> float:
    """Largest state deviation ``max_j |x_j - xbar(t_j)|`` from a reference."""
    return float(max(np.linalg.norm(traj.x[j] - np.atleast_1d(reference.state(t)[0]))
                     for j, t in enumerate(traj.t)))


def csv_text(traj: DiscreteTrajectory) -> str:
    """CSV body with columns ``t, x*, u*, a*, eta*`` and 12 significant digits."""
    n, d, m = traj.x.shape[1], traj.a.shape[1], traj.eta.shape[1]
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
              + [f"a{i}" for i in range(d)] + [f"eta{i}" for i in range(m)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for j in range(traj.k + 1):
        row = np.concatenate([[traj.t[j]], traj.x[j], traj.u[j], traj.a[j], traj.eta[j]])
        w.writerow([f"{v:.12g}" for v in row])
    return buf.getvalue()


def to_csv(traj: DiscreteTrajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(traj))
