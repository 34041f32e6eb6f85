"""Discrete optimal control problems on a uniform grid and a shooting solver.

Decision variables are the control sequences ``u_j`` and ``a_j``.  States
follow from the catching-up integrator, so the sweeping inclusion and the
state constraint hold by construction.  Remaining constraints are handled
by an augmented Lagrangian whose subproblems are solved by L-BFGS with an
adjoint gradient through the projection.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .dynamics import DiscreteTrajectory, ProcessSpec, _as_path, _forward, integrate, w12_distance
from .errors import InvalidArgument, PreconditionViolation
from .geometry import TOL_ACT

__all__ = [
    "CostSpec",
    "DiscreteProblem",
    "SolverOptions",
    "SolveResult",
    "mu_tilde",
    "build_pk",
    "evaluate_cost",
    "solve",
    "convergence_study",
    "repair_controls",
]


@dataclass(frozen=True)
class CostSpec:
    """Bolza cost ``phi(x(T)) + int ell(t, z, zdot) dt``.

    ``ell(t, x, u, a, xdot, udot, adot)`` returns a scalar.  ``grad_phi(x)``
    returns ``(n,)`` and ``grad_ell`` (same arguments as ``ell``) returns a
    vector of length ``2 (2n + d)`` ordered ``(x, u, a, xdot, udot, adot)``.
    Missing gradients are replaced by central differences with relative step
    ``fd_step``.
    """

    phi: Callable
    ell: Callable
    grad_phi: Callable | None = None
    grad_ell: Callable | None = None
    fd_step: float = 1e-6

    def phi_grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grad_phi is not None:
            return np.asarray(self.grad_phi(x), dtype=float).reshape(x.shape)
        return _central_diff(lambda v: self.phi(v), x, self.fd_step)

    def ell_value(self, t, z, dz, n, d) -> float:
        return float(self.ell(t, z[:n], z[n:2 * n], z[2 * n:], dz[:n], dz[n:2 * n], dz[2 * n:]))

    def ell_grad(self, t, z, dz, n, d):
        """Return ``(w, v)``: gradients in ``z = (x, u, a)`` and ``zdot``."""
        N = 2 * n + d
        if self.grad_ell is not None:
            g = np.asarray(self.grad_ell(t, z[:n], z[n:2 * n], z[2 * n:], dz[:n], dz[n:2 * n], dz[2 * n:]),
                           dtype=float).reshape(2 * N)
            return g[:N], g[N:]
        both = np.concatenate([z, dz])
        g = _central_diff(lambda v: self.ell_value(t, v[:N], v[N:], n, d), both, self.fd_step)
        return g[:N], g[N:]


def _central_diff(fun, x, rel):
    g = np.zeros_like(x)
    for i in range(x.size):
        s = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = s
        g[i] = (fun(x + e) - fun(x - e)) / (2 * s)
    return g


def mu_tilde(mu: float, lipschitz_k: float, horizon: float) -> float:
    """Bound ``max{3 mu (1 + 4KT) e^K, 4 mu (e^K + 1)}`` on the discrete control variation."""
    if mu <= 0:
        raise InvalidArgument("mu must be positive")
    eK = math.exp(lipschitz_k)
    return max(3 * mu * (1 + 4 * lipschitz_k * horizon) * eK, 4 * mu * (eK + 1))


@dataclass
class _Reference:
    nodes: np.ndarray       # (k+1, 2n+d)
    slopes: np.ndarray      # (k, 2n+d) mean reference velocity per interval
    spread: np.ndarray      # (k,) int |zbar' - slope|^2 over each interval


def _reference_on_grid(ref, spec: ProcessSpec, k: int) -> _Reference:
    T = spec.horizon
    t = np.linspace(0.0, T, k + 1)
    h = T / k
    if isinstance(ref, DiscreteTrajectory):
        if ref.k != k or abs(ref.horizon - T) > 1e-12 * T:
            raise InvalidArgument("reference trajectory lives on a different grid")
        nodes = np.hstack([ref.x, ref.u, ref.a])
        return _Reference(nodes, np.diff(nodes, axis=0) / h, np.zeros(k))
    if not (hasattr(ref, "state") and hasattr(ref, "velocity")):
        raise InvalidArgument("reference must be a trajectory or expose state/velocity")

    def flat(vals):
        return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in vals])

    nodes = np.array([flat(ref.state(s)) for s in t])
    slopes = np.diff(nodes, axis=0) / h
    q, w = np.polynomial.legendre.leggauss(4)
    spread = np.zeros(k)
    mids = 0.5 * (t[:-1] + t[1:])
    for qi, wi in zip(q, w):
        vel = np.array([flat(ref.velocity(s)) for s in mids + 0.5 * h * qi])
        spread += 0.5 * h * wi * np.sum((vel - slopes) ** 2, axis=1)
    return _Reference(nodes, slopes, spread)


@dataclass
class DiscreteProblem:
    """The discrete problem on ``k`` steps, optionally tied to a reference.

    Without a reference (plain mode) the proximal terms, the localization
    constraints and the variation bounds are dropped, and the initial
    controls are free apart from ``x0 - u_0 in C``.  With a reference the
    initial controls are fixed to the reference values.
    """

    spec: ProcessSpec
    cost: CostSpec
    k: int
    reference: object | None = None
    epsilon_k: float = 0.0
    mu: float = 1.0
    epsilon_loc: float = 0.5
    no_contact: bool = False
    _ref: _Reference | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.k < 2:
            raise InvalidArgument("k must be at least 2")
        if self.epsilon_k < 0 or self.epsilon_loc <= 0:
            raise InvalidArgument("epsilon_k must be nonnegative and epsilon_loc positive")

    @property
    def h(self) -> float:
        return self.spec.horizon / self.k

    @property
    def plain(self) -> bool:
        return self.reference is None

    @property
    def mu_tilde(self) -> float:
        return mu_tilde(self.mu, self.spec.lipschitz_k, self.spec.horizon)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.spec.horizon, self.k + 1)

    def constraint_counts(self) -> dict:
        return {
            "dynamics_steps": self.k,
            "state": self.spec.m * (self.k + 1),
            "norm": 2 * (self.k + 1),
            "localization": 0 if self.plain else self.k + 1,
            "variation": 0 if self.plain else 2,
        }

    def theta(self, traj: DiscreteTrajectory) -> np.ndarray:
        """Averaged deviations ``2 (dz_j - dzbar_j)`` (zero in plain mode)."""
        n, d = self.spec.n, self.spec.d
        if self.plain:
            return np.zeros((self.k, 2 * n + d))
        z = np.hstack([traj.x, traj.u, traj.a])
        return 2.0 * (np.diff(z, axis=0) - self.h * self._ref.slopes)


def build_pk(spec: ProcessSpec, cost: CostSpec, k: int, reference=None, *, epsilon_k: float = 0.0,
             mu: float = 1.0, epsilon_loc: float = 0.5, no_contact: bool = False,
             tol: float = 1e-8) -> DiscreteProblem:
    """Assemble the discrete problem; a reference must be feasible on the grid."""
    prob = DiscreteProblem(spec, cost, k, reference, epsilon_k, mu, epsilon_loc, no_contact)
    if reference is not None:
        ref = _reference_on_grid(reference, spec, k)
        n = spec.n
        for zj in ref.nodes:
            x, u = zj[:n], zj[n:2 * n]
            if np.any(spec.set.values(x - u) < -tol):
                raise PreconditionViolation("reference violates the state constraint")
            nu = np.linalg.norm(u)
            if nu < spec.r1 - epsilon_k - tol or nu > spec.r2 + epsilon_k + tol:
                raise PreconditionViolation("reference violates the control norm bounds")
        if np.linalg.norm(ref.nodes[0, :n] - spec.x0) > tol * (1 + np.linalg.norm(spec.x0)):
            raise PreconditionViolation("reference does not start at x0")
        prob._ref = ref
    return prob


@dataclass
class SolverOptions:
    """Augmented-Lagrangian shooting parameters.

    ``gradient`` is ``"adjoint"`` (default) or ``"fd"`` (central differences
    with relative step ``fd_step``).  A run is ``converged`` when the
    constraint violation is below ``tol_feas`` and the largest scaled
    Lagrangian gradient entry is below ``tol_kkt (1 + |scaled merit|)``.
    """

    max_outer: int = 30
    max_inner: int = 3000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    penalty_max: float = 1e10
    tol_kkt: float = 1e-8
    tol_feas: float = 1e-9
    fd_step: float = 1e-6
    gradient: str = "adjoint"
    optimize_u: bool = True

    def __post_init__(self):
        if self.gradient not in ("adjoint", "fd"):
            raise InvalidArgument("gradient must be 'adjoint' or 'fd'")
        if self.max_outer < 1 or self.max_inner < 1 or self.penalty_growth <= 1 or self.penalty_init <= 0:
            raise InvalidArgument("invalid solver limits")


@dataclass
class SolveResult:
    trajectory: DiscreteTrajectory
    objective: float
    iterations: int
    kkt_residual: float
    status: str
    constraint_violation: float = 0.0
    multipliers: dict = field(default_factory=dict)
    merit_history: list = field(default_factory=list)
    message: str = ""


# ---------------------------------------------------------------------------
# cost and constraint evaluation with derivatives


def _safe_unit(v):
    r = float(np.linalg.norm(v))
    return (v / r if r > 0 else np.zeros_like(v)), r


class _Evaluator:
    """Cost, constraints and their partial derivatives in ``(x, u, a, eta)``."""

    def __init__(self, prob: DiscreteProblem):
        self.p = prob
        s = prob.spec
        self.n, self.d, self.m = s.n, s.d, s.m
        self.h = prob.h
        self.t = prob.grid

    def cost_parts(self, x, u, a, want_grad=False):
        p, n, d, h, k = self.p, self.n, self.d, self.h, self.p.k
        z = np.hstack([x, u, a])
        dz = np.diff(z, axis=0) / h
        J = float(p.cost.phi(x[k]))
        gz = np.zeros_like(z) if want_grad else None
        if want_grad:
            gz[k, :n] += p.cost.phi_grad(x[k])
        for j in range(k):
            J += h * p.cost.ell_value(self.t[j], z[j], dz[j], n, d)
            if want_grad:
                w, v = p.cost.ell_grad(self.t[j], z[j], dz[j], n, d)
                gz[j] += h * w - v
                gz[j + 1] += v
        if not p.plain:
            ref = p._ref
            dev = dz - ref.slopes
            J += float(h * np.sum(dev ** 2) + np.sum(ref.spread))
            if want_grad:
                gz[1:] += 2 * dev
                gz[:-1] -= 2 * dev
            mt = p.mu_tilde
            e1, s1 = _safe_unit((u[1] - u[0]) / h)
            over = max(0.0, s1 - mt)
            J += over ** 2
            if want_grad and over > 0:
                gz[1, n:2 * n] += 2 * over * e1 / h
                gz[0, n:2 * n] -= 2 * over * e1 / h
            sec = (u[2:] - 2 * u[1:-1] + u[:-2]) / h
            s2 = float(np.sum(np.linalg.norm(sec, axis=1)))
            over2 = max(0.0, s2 - mt)
            J += over2 ** 2
            if want_grad and over2 > 0:
                for j in range(k - 1):
                    e, _ = _safe_unit(sec[j])
                    gz[j + 2, n:2 * n] += 2 * over2 * e / h
                    gz[j + 1, n:2 * n] -= 4 * over2 * e / h
                    gz[j, n:2 * n] += 2 * over2 * e / h
        return J, gz

    def constraints(self, x, u, a, eta):
        """Return lists of (kind, value, grad dict) with ``kind`` 'ineq' or 'eq'."""
        p, n, h, k = self.p, self.n, self.h, self.p.k
        s = p.spec
        out = []
        lo, hi = s.r1 - p.epsilon_k, s.r2 + p.epsilon_k
        for j in range(k + 1):
            e, r = _safe_unit(u[j])
            out.append(("ineq", r - hi, {("u", j): e}))
            out.append(("ineq", lo - r, {("u", j): -e}))
        if p.plain:
            gv = s.set.values(x[0] - u[0])
            G = s.set.gradients(x[0] - u[0])
            for i in range(self.m):
                out.append(("ineq", -float(gv[i]), {("u", 0): G[i]}))
        if p.no_contact:
            # eta_j = 0 iff the drift point is already feasible
            for j in range(k):
                zj = x[j] - h * s.fval(x[j], a[j]) - u[j + 1]
                gv = s.set.values(zj)
                G = s.set.gradients(zj)
                for i in range(self.m):
                    out.append(("ineq", -float(gv[i]), {("drift", j): -G[i]}))
        if not p.plain:
            ref = p._ref
            z = np.hstack([x, u, a])
            rad2 = (p.epsilon_loc / 2) ** 2
            for j in range(1, k):
                dev = z[j] - ref.nodes[j]
                out.append(("ineq", float(dev @ dev) - rad2, {("z", j): 2 * dev}))
            dz = np.diff(z, axis=0) / h
            dev = dz - ref.slopes
            val = float(h * np.sum(dev ** 2) + np.sum(ref.spread)) - p.epsilon_loc / 2
            grads = {}
            for j in range(k):
                grads[("z", j + 1)] = grads.get(("z", j + 1), 0) + 2 * dev[j]
                grads[("z", j)] = grads.get(("z", j), 0) - 2 * dev[j]
            out.append(("ineq", val, grads))
            bound = p.mu_tilde + 1
            d1 = (u[1] - u[0]) / h
            out.append(("ineq", float(d1 @ d1) - bound ** 2,
                        {("u", 1): 2 * d1 / h, ("u", 0): -2 * d1 / h}))
            sec = (u[2:] - 2 * u[1:-1] + u[:-2]) / h
            grads = {}
            total = 0.0
            for j in range(k - 1):
                e, r = _safe_unit(sec[j])
                total += r
                for off, c in ((2, 1.0), (1, -2.0), (0, 1.0)):
                    key = ("u", j + off)
                    grads[key] = grads.get(key, 0) + c * e / h
            out.append(("ineq", total - bound, grads))
        return out


class _Shooting:
    """Reduced augmented-Lagrangian function of the free control variables."""

    def __init__(self, prob: DiscreteProblem, opts: SolverOptions, u_init, a_init):
        self.p = prob
        self.o = opts
        self.ev = _Evaluator(prob)
        s = prob.spec
        self.n, self.d, self.m, self.k = s.n, s.d, s.m, prob.k
        self.u_base = u_init.copy()
        self.a_base = a_init.copy()
        first = 0 if prob.plain else 1
        self.u_nodes = list(range(first, self.k + 1)) if opts.optimize_u else []
        self.a_nodes = list(range(first, self.k + 1))
        self.scale = 1.0 / prob.h
        self.basis = _coupling_basis(s)
        self.mult = None
        self.rho = opts.penalty_init

    # packing -------------------------------------------------------------
    def pack(self, u, a):
        w = u[self.u_nodes] @ self.basis
        return np.concatenate([w.ravel(), a[self.a_nodes].ravel()])

    def unpack(self, v):
        u = self.u_base.copy()
        a = self.a_base.copy()
        r = self.basis.shape[1]
        nu = len(self.u_nodes) * r
        if self.u_nodes:
            u[self.u_nodes] = v[:nu].reshape(-1, r) @ self.basis.T
        a[self.a_nodes] = v[nu:].reshape(-1, self.d)
        return u, a

    def grad_pack(self, gu, ga):
        return np.concatenate([(gu[self.u_nodes] @ self.basis).ravel(), ga[self.a_nodes].ravel()])

    # evaluation ----------------------------------------------------------
    def _al_terms(self, cons):
        """Augmented-Lagrangian value and per-constraint weights d(AL)/dc."""
        val = 0.0
        weights = np.zeros(len(cons))
        rho = self.rho
        for i, (kind, c, _) in enumerate(cons):
            mu = self.mult[i]
            if kind == "eq":
                val += mu * c + 0.5 * rho * c * c
                weights[i] = mu + rho * c
            else:
                t = max(0.0, mu + rho * c)
                val += (t * t - mu * mu) / (2 * rho)
                weights[i] = t
        return val, weights

    def evaluate(self, u, a, want_grad=True):
        k, n, d, m = self.k, self.n, self.d, self.m
        spec = self.p.spec
        x, eta, jac = _forward(spec, u, a, k, want_jac=want_grad, free=self.p.no_contact)
        J, gz = self.ev.cost_parts(x, u, a, want_grad)
        cons = self.ev.constraints(x, u, a, eta)
        if self.mult is None:
            self.mult = np.zeros(len(cons))
        al, weights = self._al_terms(cons)
        total = J + al
        if not want_grad:
            return total, None, (x, eta, J, cons)
        gx = gz[:, :n].copy()
        gu = gz[:, n:2 * n].copy()
        ga = gz[:, 2 * n:].copy()
        geta = np.zeros((k + 1, m))
        h = self.p.h
        for wgt, (_, _, grads) in zip(weights, cons):
            if wgt == 0.0:
                continue
            for key, g in grads.items():
                if key[0] == "u":
                    gu[key[1]] += wgt * g
                elif key[0] == "eta":
                    geta[key[1], key[2]] += wgt * g
                elif key[0] == "drift":
                    j = key[1]
                    gx[j] += wgt * (g - h * spec.fx(x[j], a[j]).T @ g)
                    ga[j] -= wgt * h * spec.fa(x[j], a[j]).T @ g
                    gu[j + 1] -= wgt * g
                else:
                    j = key[1]
                    gx[j] += wgt * g[:n]
                    gu[j] += wgt * g[n:2 * n]
                    ga[j] += wgt * g[2 * n:]
        h = self.p.h
        lam_x = gx[k].copy()
        eye = np.eye(n)
        for j in range(k - 1, -1, -1):
            P, L = jac[j]
            if P is None:
                zbar = lam_x.copy()
            else:
                zbar = P.T @ lam_x + L.T @ geta[j] / h
            gu[j + 1] += lam_x - zbar
            ga[j] -= h * spec.fa(x[j], a[j]).T @ zbar
            lam_x = gx[j] + (eye - h * spec.fx(x[j], a[j])).T @ zbar
        return total, (gu, ga), (x, eta, J, cons)

    def fun(self, v):
        u, a = self.unpack(v)
        if self.o.gradient == "fd":
            val, _, _ = self.evaluate(u, a, want_grad=False)
            g = np.zeros_like(v)
            for i in range(v.size):
                s = self.o.fd_step * max(1.0, abs(v[i]))
                e = np.zeros_like(v)
                e[i] = s
                up, _, _ = self.evaluate(*self.unpack(v + e), want_grad=False)
                dn, _, _ = self.evaluate(*self.unpack(v - e), want_grad=False)
                g[i] = (up - dn) / (2 * s)
            return val * self.scale, g * self.scale
        val, (gu, ga), _ = self.evaluate(u, a)
        return val * self.scale, self.grad_pack(gu, ga) * self.scale


def _coupling_basis(spec: ProcessSpec) -> np.ndarray:
    """Orthonormal basis of ``{u : E u = 0}`` (the identity without coupling)."""
    if spec.control_coupling is None:
        return np.eye(spec.n)
    _, sv, vt = np.linalg.svd(spec.control_coupling)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max())))
    return vt[rank:].T.copy()


def repair_controls(spec: ProcessSpec, u_path, epsilon_k: float = 0.0) -> np.ndarray:
    """Project each ``u_j`` onto ``E u = 0`` and then radially onto the annulus."""
    u = np.array(u_path, dtype=float, copy=True)
    B = _coupling_basis(spec)
    u = u @ B @ B.T
    lo, hi = spec.r1 - epsilon_k, spec.r2 + epsilon_k
    for j in range(u.shape[0]):
        r = np.linalg.norm(u[j])
        if r == 0:
            u[j] = lo * B[:, 0]
        elif r < lo:
            u[j] *= lo / r
        elif r > hi:
            u[j] *= hi / r
    return u


def evaluate_cost(problem: DiscreteProblem, traj: DiscreteTrajectory) -> float:
    """Discrete cost including proximal and variation penalty terms."""
    k = problem.k
    s = problem.spec
    shapes = [(traj.x, s.n), (traj.u, s.n), (traj.a, s.d)]
    if traj.k != k or any(arr.shape != (k + 1, dim) for arr, dim in shapes):
        raise InvalidArgument("trajectory dimensions do not match the problem")
    J, _ = _Evaluator(problem).cost_parts(traj.x, traj.u, traj.a)
    return J


def _violation(cons):
    worst = 0.0
    for kind, c, _ in cons:
        worst = max(worst, abs(c) if kind == "eq" else max(0.0, c))
    return worst


def solve(problem: DiscreteProblem, init=None, options: SolverOptions | None = None) -> SolveResult:
    """Minimize the discrete cost by augmented-Lagrangian single shooting.

    ``init`` is ``(u_path, a_path)``; by default ``u_j = spec.u0`` and
    ``a_j = 0``, or the reference controls in reference mode.  In reference
    mode ``u_0`` and ``a_0`` are always taken from the reference.  The result carries the best point found, the scaled
    Lagrangian gradient norm and a status among ``converged``, ``max-iter``
    and ``infeasible``.
    """
    opts = options or SolverOptions()
    spec, k = problem.spec, problem.k
    if init is None and not problem.plain:
        nodes = problem._ref.nodes
        u_init = nodes[:, spec.n:2 * spec.n].copy()
        a_init = nodes[:, 2 * spec.n:].copy()
    elif init is None:
        u0 = spec.u0 if spec.u0 is not None else np.eye(spec.n)[0] * spec.r1
        u_init = np.tile(u0, (k + 1, 1))
        a_init = np.zeros((k + 1, spec.d))
    else:
        u_init = _as_path(init[0], k, spec.n, "u_path")
        a_init = _as_path(init[1], k, spec.d, "a_path")
    if not problem.plain:
        ref0 = problem._ref.nodes[0]
        u_init = u_init.copy()
        a_init = a_init.copy()
        u_init[0] = ref0[spec.n:2 * spec.n]
        a_init[0] = ref0[2 * spec.n:]
    u_init = repair_controls(spec, u_init, problem.epsilon_k)
    t = problem.grid
    if np.any(spec.set.values(spec.x0 - u_init[0]) < -TOL_ACT):
        traj = DiscreteTrajectory(t, np.tile(spec.x0, (k + 1, 1)), u_init, a_init,
                                  np.zeros((k + 1, spec.m)))
        return SolveResult(traj, math.nan, 0, math.inf, "infeasible",
                           message="no initial control with x0 - u0 in C after repair")

    sh = _Shooting(problem, opts, u_init, a_init)
    v = sh.pack(u_init, a_init)
    sh.evaluate(u_init, a_init, want_grad=False)
    iters = 0
    history = []
    prev_viol = math.inf
    status = "max-iter"
    kkt = math.inf
    viol = math.inf
    for outer in range(opts.max_outer):
        f0, _ = sh.fun(v)
        res = minimize(sh.fun, v, jac=True, method="L-BFGS-B",
                       options={"maxiter": opts.max_inner, "maxcor": 30, "ftol": 1e-16,
                                "gtol": opts.tol_kkt * 0.1, "maxls": 50})
        iters += int(res.nit)
        if res.fun <= f0:
            v = res.x
            history.append((outer, f0, float(res.fun)))
        else:
            history.append((outer, f0, f0))
        u, a = sh.unpack(v)
        _, grads, (x, eta, J, cons) = sh.evaluate(u, a)
        kkt = float(np.max(np.abs(sh.grad_pack(*grads) * sh.scale))) if v.size else 0.0
        viol = _violation(cons)
        history[-1] = history[-1] + (kkt, viol)
        merit = history[-1][2]
        if viol <= opts.tol_feas and kkt <= opts.tol_kkt * (1.0 + abs(merit)):
            status = "converged"
            break
        if viol <= opts.tol_feas and outer >= 2 and all(
                abs(hh[1] - hh[2]) <= 1e-15 * (1.0 + abs(hh[2])) for hh in history[-3:]):
            break
        # multiplier update
        for i, (kind, c, _) in enumerate(cons):
            if kind == "eq":
                sh.mult[i] += sh.rho * c
            else:
                sh.mult[i] = max(0.0, sh.mult[i] + sh.rho * c)
        if viol > max(0.25 * prev_viol, opts.tol_feas):
            sh.rho = min(sh.rho * opts.penalty_growth, opts.penalty_max)
        prev_viol = viol
    u, a = sh.unpack(v)
    traj = integrate(spec, u, a, k, check_controls=False)
    J = evaluate_cost(problem, traj)
    if problem.plain and k >= 1:
        held = traj.a.copy()
        held[k] = held[k - 1]
        trial = DiscreteTrajectory(traj.t, traj.x, traj.u, held, traj.eta, traj.bound)
        if abs(evaluate_cost(problem, trial) - J) <= 1e-14 * (1 + abs(J)):
            traj = trial
    mult = {"values": sh.mult.copy(), "penalty": sh.rho}
    return SolveResult(traj, J, iters, kkt, status, viol, mult, history)


def _solve_row(spec, cost, k, reference, options, init_fn, problem_kwargs, components):
    row = {"k": k}
    try:
        prob = build_pk(spec, cost, k, reference, **problem_kwargs)
        init = init_fn(k) if init_fn is not None else None
        res = solve(prob, init, options)
        row.update(status=res.status, objective=res.objective,
                   distance=w12_distance(res.trajectory, reference, components),
                   iterations=res.iterations, kkt=res.kkt_residual, error="")
        ref_obj = getattr(reference, "objective", None)
        if ref_obj is not None:
            row["objective_gap"] = abs(res.objective - ref_obj) / max(1.0, abs(ref_obj))
    except Exception as exc:  # recorded per row, not fatal
        row.update(status="error", objective=math.nan, distance=math.nan, iterations=0,
                   kkt=math.nan, error=f"{type(exc).__name__}: {exc}")
    return row


def convergence_study(spec: ProcessSpec, cost: CostSpec, k_list, reference, *, options=None,
                      init_fn=None, problem_kwargs=None, components: str = "xua",
                      workers: int = 1) -> list[dict]:
    """Solve the reference-tied problem for each ``k`` and tabulate distances.

    Rows contain ``k``, ``status``, ``objective``, ``distance`` (the W^{1,2}
    style distance to the reference), ``objective_gap`` when the reference
    has an ``objective`` attribute, and an ``error`` string for failed rows.
    """
    ks = list(k_list)
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidArgument("k_list must be increasing")
    kwargs = dict(problem_kwargs or {})
    job = lambda k: _solve_row(spec, cost, k, reference, options, init_fn, kwargs, components)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(job, ks))
    return [job(k) for k in ks]
