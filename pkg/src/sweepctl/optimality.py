"""Dual reconstruction and residual checks of necessary optimality conditions.

Sign and indexing conventions:

* ``p_j = (p^x_j, p^u_j, p^a_j)`` for ``j = 0..k``; ``Y_j = p^x_{j+1} - lam (v^x_j + theta^x_j / h)``.
* The discrete adjoint reads ``(p_{j+1} - p_j)/h - lam w_j - (0, (2/h)(xi1_j + xi2_j) u_j + E^T zeta_j / h, 0)``
  ``= (fx^T Y - H Y - G^T gamma, H Y + G^T gamma, fa^T Y)`` with
  ``H = sum eta_ji hess g_i`` and ``G`` the constraint Jacobian at ``x_j - u_j``.
* ``zeta_j`` multiplies the linear control coupling ``E u_j = 0`` (empty when absent).
* Continuous measures are node atoms: ``Gamma_j = h (H_j Y_j + G_j^T gamma_j)`` and ``xi_j``,
  plus a possible atom of ``Gamma`` at ``T``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.optimize import lsq_linear
from scipy.sparse.linalg import splu

from .dynamics import DiscreteTrajectory, ProcessSpec, recover_eta
from .errors import InvalidArgument, NotInCone, ReconstructionFailed
from .geometry import TOL_ACT
from .second_order import FREE, NONNEG, ZERO, licq_holds, orthant_tags
from .transcription import CostSpec, DiscreteProblem

__all__ = [
    "DualSystem",
    "ConditionEntry",
    "ConditionReport",
    "NONTRIVIALITY_MODES",
    "subgradients",
    "reconstruct_duals",
    "check_discrete",
    "lift_to_continuous",
    "check_continuous",
    "nontriviality",
]

NONTRIVIALITY_MODES = ("general", "enhanced-initial", "enhanced-terminal", "discrete", "discrete-enhanced")


@dataclass
class DualSystem:
    """Dual elements on a ``k``-grid.

    ``p`` has shape ``(k+1, 2n+d)``; ``eta`` ``(k+1, m)``; ``gamma`` ``(k, m)``;
    ``xi1``/``xi2`` ``(k+1,)``; ``zeta`` ``(k+1, c)``; ``w``, ``v``, ``theta``
    ``(k, 2n+d)``.  ``q`` and ``gamma_atoms`` (``(k+1, n)``) are set by
    :func:`lift_to_continuous`.
    """

    lam: float
    p: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    zeta: np.ndarray
    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    n: int
    d: int
    q: np.ndarray | None = None
    gamma_atoms: np.ndarray | None = None
    report: "ConditionReport | None" = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.p.shape[0] - 1

    @property
    def px(self):
        return self.p[:, :self.n]

    @property
    def pu(self):
        return self.p[:, self.n:2 * self.n]

    @property
    def pa(self):
        return self.p[:, 2 * self.n:]

    @classmethod
    def zeros(cls, k: int, n: int, d: int, m: int, c: int = 0, lam: float = 0.0) -> "DualSystem":
        N = 2 * n + d
        return cls(lam, np.zeros((k + 1, N)), np.zeros((k + 1, m)), np.zeros((k, m)),
                   np.zeros(k + 1), np.zeros(k + 1), np.zeros((k + 1, c)),
                   np.zeros((k, N)), np.zeros((k, N)), np.zeros((k, N)), n, d)


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    residual: float
    tolerance: float

    @property
    def verdict(self) -> str:
        return "pass" if self.residual <= self.tolerance else "fail"


@dataclass
class ConditionReport:
    """Per-condition residuals; ``overall`` also needs nontriviality above ``tol_nontriv``."""

    entries: list
    nontriviality_value: float
    tol_nontriv: float
    enhanced_value: float | None = None
    notes: list = field(default_factory=list)

    @property
    def overall(self) -> str:
        ok = all(e.verdict == "pass" for e in self.entries) and self.nontriviality_value > self.tol_nontriv
        if self.enhanced_value is not None:
            ok = ok and self.enhanced_value > self.tol_nontriv
        return "pass" if ok else "fail"

    def __getitem__(self, name: str) -> ConditionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries), default=0.0)

    def to_text(self) -> str:
        lines = [f"{e.name:<24} {e.residual:.6e} {e.tolerance:.1e} {e.verdict}" for e in self.entries]
        lines.append(f"{'nontriviality':<24} {self.nontriviality_value:.6e} {self.tol_nontriv:.1e} "
                     f"{'pass' if self.nontriviality_value > self.tol_nontriv else 'fail'}")
        if self.enhanced_value is not None:
            lines.append(f"{'enhanced_nontriviality':<24} {self.enhanced_value:.6e} {self.tol_nontriv:.1e} "
                         f"{'pass' if self.enhanced_value > self.tol_nontriv else 'fail'}")
        lines.extend(f"note: {s}" for s in self.notes)
        lines.append(f"overall {self.overall}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["name", "residual", "tolerance", "verdict"])
        for e in self.entries:
            wr.writerow([e.name, f"{e.residual:.12g}", f"{e.tolerance:.12g}", e.verdict])
        wr.writerow(["nontriviality", f"{self.nontriviality_value:.12g}", f"{self.tol_nontriv:.12g}",
                     "pass" if self.nontriviality_value > self.tol_nontriv else "fail"])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# shared node data


def subgradients(cost: CostSpec, traj: DiscreteTrajectory, n: int, d: int):
    """Running-cost gradients ``(w_j, v_j)`` at ``(z_j, (z_{j+1} - z_j)/h)``."""
    z = np.hstack([traj.x, traj.u, traj.a])
    dz = np.diff(z, axis=0) / traj.h
    k = traj.k
    W = np.zeros((k, 2 * n + d))
    V = np.zeros((k, 2 * n + d))
    for j in range(k):
        W[j], V[j] = cost.ell_grad(traj.t[j], z[j], dz[j], n, d)
    return W, V


class _Nodes:
    """Constraint data at ``x_j - u_j`` for every node."""

    def __init__(self, spec: ProcessSpec, traj: DiscreteTrajectory, eta):
        self.spec = spec
        k = traj.k
        self.vals = np.array([spec.set.values(traj.x[j] - traj.u[j]) for j in range(k + 1)])
        self.G = np.array([spec.set.gradients(traj.x[j] - traj.u[j]) for j in range(k + 1)])
        self._hess = [spec.set.hessians(traj.x[j] - traj.u[j]) for j in range(k + 1)]
        self.fx = np.array([spec.fx(traj.x[j], traj.a[j]) for j in range(k + 1)])
        self.fa = np.array([spec.fa(traj.x[j], traj.a[j]) for j in range(k + 1)])
        self.fv = np.array([spec.fval(traj.x[j], traj.a[j]) for j in range(k + 1)])
        self.set_eta(eta)

    def set_eta(self, eta):
        self.eta = eta
        self.H = np.array([np.einsum("i,ijk->jk", eta[j], self._hess[j]) for j in range(len(self._hess))])


def _coupling(spec: ProcessSpec):
    E = spec.control_coupling
    return np.zeros((0, spec.n)) if E is None else np.asarray(E, dtype=float)


def _rel(diff, ref) -> float:
    return float(np.max(np.abs(diff))) / (1.0 + float(np.max(np.abs(ref)))) if np.size(diff) else 0.0


def _annulus_flags(spec: ProcessSpec, u, eps, tol):
    nu = np.linalg.norm(u, axis=1)
    hi = nu >= spec.r2 + eps - tol * max(1.0, spec.r2)
    lo = nu <= spec.r1 - eps + tol * max(1.0, spec.r1)
    return nu, hi, lo


# ---------------------------------------------------------------------------
# sparse least squares


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def block(self, row0, col0, M, scale=1.0):
        M = np.atleast_2d(M)
        rr, cc = np.nonzero(M)
        self.r.extend((row0 + rr).tolist())
        self.c.extend((col0 + cc).tolist())
        self.v.extend((scale * M[rr, cc]).tolist())


def _min_norm_solve(A, b, sweeps: int = 6):
    """Near minimum-norm least squares by proximal iterations on the augmented system."""
    nr, nc = A.shape
    if nc == 0:
        return np.zeros(0)
    amax = float(abs(A).max()) if A.nnz else 1.0
    delta = 1e-10 * max(1.0, amax) ** 2
    K = sp.bmat([[sp.identity(nr), A], [A.T, -delta * sp.identity(nc)]], format="csc")
    lu = splu(K)
    x = np.zeros(nc)
    for _ in range(sweeps):
        rhs = np.concatenate([b - A @ x, np.zeros(nc)])
        sol = lu.solve(rhs)
        dx = sol[nr:]
        x = x + dx
        if np.linalg.norm(dx) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
    return x


def _signed_solve(A, b, signs):
    """Least squares with ``signs[c] * x_c >= 0`` via column removal, falling back to bounded LS."""
    nc = A.shape[1]
    keep = np.ones(nc, dtype=bool)
    A = A.tocsc()
    for _ in range(nc + 1):
        cols = np.flatnonzero(keep)
        x = np.zeros(nc)
        x[cols] = _min_norm_solve(A[:, cols], b)
        bad = [c for c, s in signs.items() if keep[c] and s * x[c] < -1e-12 * (1.0 + abs(x[c]))]
        if not bad:
            return x
        worst = min(bad, key=lambda c: signs[c] * x[c])
        keep[worst] = False
    lb = np.full(nc, -np.inf)
    ub = np.full(nc, np.inf)
    for c, s in signs.items():
        if s > 0:
            lb[c] = 0.0
        else:
            ub[c] = 0.0
    return lsq_linear(A, b, bounds=(lb, ub), lsmr_tol="auto", tol=1e-14, max_iter=5000).x


# ---------------------------------------------------------------------------
# reconstruction


def _recover_all_eta(spec, traj, tol_act):
    k, h = traj.k, traj.h
    eta = np.zeros((k + 1, spec.m))
    profile = np.zeros(k)
    for j in range(k):
        xdot = (traj.x[j + 1] - traj.x[j]) / h
        try:
            eta[j] = recover_eta(spec, traj.x[j], traj.u[j], xdot, traj.a[j], tol_act=tol_act)
        except NotInCone as exc:
            profile[j] = exc.residual if exc.residual is not None else np.inf
    return eta, profile


def reconstruct_duals(traj: DiscreteTrajectory, problem: DiscreteProblem, lam: float = 1.0, *,
                      tol: float = 1e-4, tol_act: float = TOL_ACT, max_tag_rounds: int = 20,
                      check_tol: float = 1e-6) -> DualSystem:
    """Complete the discrete dual system along ``traj`` by one global sign-constrained fit.

    ``eta_j`` (``j < k``) come from the primal dynamics.  The unknowns
    ``p^x``, ``p^u_0``, ``p^a_0``, ``eta_k``, ``gamma``, the active ``xi`` and
    ``zeta`` are fitted jointly to the adjoint equations, the implications for
    positive ``eta`` and the transversality conditions, near minimum-norm.
    Tags on ``gamma`` that depend on ``Y_j`` are refined until stable.  The
    returned system carries its :func:`check_discrete` report.

    Raises
    ------
    ReconstructionFailed
        If the primal dynamics are not realizable or the fitted system leaves a
        relative residual above ``tol``; ``residual_profile`` holds per-node values.
    """
    spec = problem.spec
    if traj.k != problem.k:
        raise InvalidArgument("trajectory and problem grids differ")
    if lam < 0:
        raise InvalidArgument("lam must be nonnegative")
    n, d, m, k, h = spec.n, spec.d, spec.m, traj.k, traj.h
    N = 2 * n + d
    E = _coupling(spec)
    c = E.shape[0]

    eta, prof = _recover_all_eta(spec, traj, tol_act)
    if np.any(prof > 0):
        raise ReconstructionFailed("primal dynamics are not realizable by the normal cone",
                                   residual_profile=prof)
    nodes = _Nodes(spec, traj, eta)
    W, V = subgradients(problem.cost, traj, n, d)
    theta = problem.theta(traj)
    cvec = lam * (V + theta / h)            # lam (v_j + theta_j / h)
    p_next = cvec                            # known p^u_{j+1}, p^a_{j+1} in columns n..N
    _, hi, lo = _annulus_flags(spec, traj.u, problem.epsilon_k, tol_act)
    eta_tol = 1e-9 * (1.0 + float(np.max(np.abs(eta))) if eta.size else 1.0)

    def inactive(j, i):
        return nodes.vals[j, i] > tol_act

    # tags on gamma_{j,i}: fixed ZERO for inactive, FREE where eta > 0, else refined from Y
    tags = {}
    for j in range(k):
        for i in range(m):
            tags[(j, i)] = ZERO if inactive(j, i) else FREE

    for _round in range(max_tag_rounds):
        # column layout
        col = 0
        c_px = col
        col += (k + 1) * n
        c_pu0 = col
        col += n
        c_pa0 = col
        col += d
        c_etak = col
        col += m
        c_gam = {}
        for j in range(k):
            for i in range(m):
                if tags[(j, i)] != ZERO:
                    c_gam[(j, i)] = col
                    col += 1
        c_xi1, c_xi2 = {}, {}
        for j in range(k + 1):
            if hi[j]:
                c_xi1[j] = col
                col += 1
            if lo[j]:
                c_xi2[j] = col
                col += 1
        c_zeta = col
        col += (k + 1) * c
        ncol = col

        T = _Triplets()
        rhs = []
        row_node = []
        row_scale = []
        row = 0
        In = np.eye(n)
        for j in range(k):
            G, H, fx, fa = nodes.G[j], nodes.H[j], nodes.fx[j], nodes.fa[j]
            cx = cvec[j, :n]
            # (x) rows, multiplied by h
            T.block(row, c_px + (j + 1) * n, In - h * fx.T + h * H)
            T.block(row, c_px + j * n, -In)
            for i in range(m):
                if (j, i) in c_gam:
                    T.block(row, c_gam[(j, i)], (h * G[i]).reshape(n, 1))
            rhs.extend(h * lam * W[j, :n] - h * fx.T @ cx + h * H @ cx)
            row_node.extend([j] * n)
            row_scale.extend([1.0 / h] * n)
            row += n
            # (u) rows
            T.block(row, c_px + (j + 1) * n, -h * H)
            for i in range(m):
                if (j, i) in c_gam:
                    T.block(row, c_gam[(j, i)], (-h * G[i]).reshape(n, 1))
            if j in c_xi1:
                T.block(row, c_xi1[j], (-2.0 * traj.u[j]).reshape(n, 1))
            if j in c_xi2:
                T.block(row, c_xi2[j], (-2.0 * traj.u[j]).reshape(n, 1))
            if c:
                T.block(row, c_zeta + j * c, -E.T)
            r_u = -p_next[j, n:2 * n] + h * lam * W[j, n:2 * n] - h * H @ cx
            if j == 0:
                T.block(row, c_pu0, -In)
            else:
                r_u = r_u + p_next[j - 1, n:2 * n]
            rhs.extend(r_u)
            row_node.extend([j] * n)
            row_scale.extend([1.0 / h] * n)
            row += n
            # (a) rows
            T.block(row, c_px + (j + 1) * n, -h * fa.T)
            r_a = -p_next[j, 2 * n:] + h * lam * W[j, 2 * n:] - h * fa.T @ cx
            if j == 0:
                T.block(row, c_pa0, -np.eye(d))
            else:
                r_a = r_a + p_next[j - 1, 2 * n:]
            rhs.extend(r_a)
            row_node.extend([j] * d)
            row_scale.extend([1.0 / h] * d)
            row += d
            # implications for positive eta
            for i in range(m):
                if eta[j, i] > eta_tol:
                    T.block(row, c_px + (j + 1) * n, G[i].reshape(1, n))
                    rhs.append(float(G[i] @ cx))
                    row_node.append(j)
                    row_scale.append(1.0)
                    row += 1
        # terminal rows
        Gk = nodes.G[k]
        T.block(row, c_px + k * n, In)
        act_k = [i for i in range(m) if not inactive(k, i)]
        for i in act_k:
            T.block(row, c_etak + i, (-Gk[i]).reshape(n, 1))
        rhs.extend(-lam * problem.cost.phi_grad(traj.x[k]))
        row_node.extend([k] * n)
        row_scale.extend([1.0] * n)
        row += n
        for i in act_k:
            T.block(row, c_etak + i, Gk[i].reshape(n, 1))
        if k in c_xi1:
            T.block(row, c_xi1[k], (2.0 * traj.u[k]).reshape(n, 1))
        if k in c_xi2:
            T.block(row, c_xi2[k], (2.0 * traj.u[k]).reshape(n, 1))
        if c:
            T.block(row, c_zeta + k * c, E.T)
        rhs.extend(-p_next[k - 1, n:2 * n])
        row_node.extend([k] * n)
        row_scale.extend([1.0] * n)
        row += n

        A = sp.csr_matrix((T.v, (T.r, T.c)), shape=(row, ncol))
        b = np.asarray(rhs, dtype=float)
        signs = {c_etak + i: 1 for i in act_k}
        for (j, i), cc in c_gam.items():
            if tags[(j, i)] == NONNEG:
                signs[cc] = 1
        signs.update({cc: 1 for cc in c_xi1.values()})
        signs.update({cc: -1 for cc in c_xi2.values()})
        sol = _signed_solve(A, b, signs)

        px = sol[c_px:c_px + (k + 1) * n].reshape(k + 1, n)
        new_tags = dict(tags)
        for j in range(k):
            Y = px[j + 1] - cvec[j, :n]
            scale = 1e-9 * (1.0 + float(np.linalg.norm(Y)))
            for i in range(m):
                if inactive(j, i) or eta[j, i] > eta_tol:
                    continue
                s = float(nodes.G[j, i] @ Y)
                new_tags[(j, i)] = ZERO if s > scale else (NONNEG if s < -scale else FREE)
        if new_tags == tags:
            break
        tags = new_tags

    res = (A @ sol - b) * np.asarray(row_scale)
    profile = np.zeros(k + 1)
    np.maximum.at(profile, np.asarray(row_node), np.abs(res))
    bscale = 1.0 + float(np.max(np.abs(b * np.asarray(row_scale))))
    p = np.zeros((k + 1, N))
    p[:, :n] = px
    p[0, n:2 * n] = sol[c_pu0:c_pu0 + n]
    p[0, 2 * n:] = sol[c_pa0:c_pa0 + d]
    p[1:, n:] = p_next[:, n:]
    eta_full = eta.copy()
    eta_full[k] = 0.0
    for i in act_k:
        eta_full[k, i] = max(0.0, sol[c_etak + i])
    gamma = np.zeros((k, m))
    for (j, i), cc in c_gam.items():
        gamma[j, i] = sol[cc]
    xi1 = np.zeros(k + 1)
    xi2 = np.zeros(k + 1)
    for j, cc in c_xi1.items():
        xi1[j] = max(0.0, sol[cc])
    for j, cc in c_xi2.items():
        xi2[j] = min(0.0, sol[cc])
    zeta = sol[c_zeta:c_zeta + (k + 1) * c].reshape(k + 1, c) if c else np.zeros((k + 1, 0))
    duals = DualSystem(lam, p, eta_full, gamma, xi1, xi2, zeta, W, V, theta, n, d)
    if float(np.max(profile)) > tol * bscale:
        raise ReconstructionFailed(
            f"dual system inconsistent (max residual {float(np.max(profile)):.3e})",
            residual_profile=profile, partial=duals)
    duals.report = check_discrete(traj, duals, problem, tol=check_tol, tol_act=tol_act)
    return duals


# ---------------------------------------------------------------------------
# discrete check


def _validate(duals: DualSystem, traj: DiscreteTrajectory, spec: ProcessSpec):
    if duals is None:
        raise InvalidArgument("duals are missing")
    k, n, d, m = traj.k, spec.n, spec.d, spec.m
    N = 2 * n + d
    c = _coupling(spec).shape[0]
    shapes = {
        "p": (k + 1, N), "eta": (k + 1, m), "gamma": (k, m), "xi1": (k + 1,), "xi2": (k + 1,),
        "zeta": (k + 1, c), "w": (k, N), "v": (k, N), "theta": (k, N),
    }
    for name, shape in shapes.items():
        val = getattr(duals, name, None)
        if val is None:
            raise InvalidArgument(f"dual field {name!r} is missing")
        if np.shape(val) != shape:
            raise InvalidArgument(f"dual field {name!r} has shape {np.shape(val)}, expected {shape}")
    if duals.lam is None or not math.isfinite(duals.lam):
        raise InvalidArgument("dual field 'lam' is missing")
    if duals.n != n or duals.d != d:
        raise InvalidArgument("dual dimensions do not match the process")


def _surjective_everywhere(nodes: _Nodes) -> bool:
    return all(licq_holds(G) for G in nodes.G)


def _gamma_tag_violation(nodes, duals, Ys, tol_act, eta_tol):
    worst = 0.0
    for j in range(duals.gamma.shape[0]):
        tags = orthant_tags(-np.where(nodes.vals[j] <= tol_act, 0.0, nodes.vals[j]),
                            np.where(duals.eta[j] > eta_tol, duals.eta[j], 0.0),
                            -nodes.G[j] @ Ys[j], 1e-9 * (1.0 + float(np.linalg.norm(Ys[j]))))
        if tags is None:
            continue
        for gi, t in zip(duals.gamma[j], tags):
            if t == ZERO:
                worst = max(worst, abs(gi))
            elif t == NONNEG:
                worst = max(worst, -gi)
    return worst


def check_discrete(traj: DiscreteTrajectory, duals: DualSystem, problem: DiscreteProblem, *,
                   tol: float = 1e-6, tol_act: float = TOL_ACT, tol_nontriv: float = 1e-8) -> ConditionReport:
    """Residuals of the discrete optimality system, each a max over nodes.

    Equation residuals are relative, ``|lhs - rhs| / (1 + |lhs|, |rhs| max)``;
    sign, complementarity and tag residuals are absolute.
    """
    spec = problem.spec
    if traj.k != problem.k:
        raise InvalidArgument("trajectory and problem grids differ")
    _validate(duals, traj, spec)
    n, d, m, k, h = spec.n, spec.d, spec.m, traj.k, traj.h
    lam = duals.lam
    E = _coupling(spec)
    nodes = _Nodes(spec, traj, duals.eta)
    p, eta = duals.p, duals.eta
    cv = lam * (duals.v + duals.theta / h)
    Ys = p[1:, :n] - cv[:, :n]
    eps = problem.epsilon_k
    nu, _, _ = _annulus_flags(spec, traj.u, eps, tol_act)
    eta_tol = 1e-9 * (1.0 + float(np.max(np.abs(eta))) if eta.size else 1.0)

    def both(l, r):
        return max(_rel(l[j] - r[j], np.concatenate([l[j], r[j]])) for j in range(len(l)))

    dyn_l = (traj.x[1:] - traj.x[:-1]) / h + nodes.fv[:k]
    dyn_r = np.einsum("jm,jmn->jn", eta[:k], nodes.G[:k])
    dp = np.diff(p, axis=0) / h
    HY = np.einsum("jab,jb->ja", nodes.H[:k], Ys)
    Gg = np.einsum("jm,jmn->jn", duals.gamma, nodes.G[:k])
    xi = duals.xi1 + duals.xi2
    Ez = duals.zeta @ E if E.size else np.zeros((k + 1, n))
    ax_l = dp[:, :n] - lam * duals.w[:, :n]
    ax_r = np.einsum("jba,jb->ja", nodes.fx[:k], Ys) - HY - Gg
    au_l = dp[:, n:2 * n] - lam * duals.w[:, n:2 * n] - (2.0 / h) * xi[:k, None] * traj.u[:k] - Ez[:k] / h
    au_r = HY + Gg
    aa_l = dp[:, 2 * n:] - lam * duals.w[:, 2 * n:]
    aa_r = np.einsum("jba,jb->ja", nodes.fa[:k], Ys)
    Gk = nodes.G[k]
    tx_l = p[k, :n] + lam * problem.cost.phi_grad(traj.x[k])
    tx_r = Gk.T @ eta[k]
    tu_l = p[k, n:2 * n]
    tu_r = -(Gk.T @ eta[k]) - 2.0 * xi[k] * traj.u[k] - Ez[k]
    inact = nodes.vals > tol_act
    pos = eta[:k] > eta_tol
    impl = np.abs(np.einsum("jmn,jn->jm", nodes.G[:k], Ys)) / (1.0 + np.linalg.norm(Ys, axis=1))[:, None]
    lo_gap = nu - (spec.r1 - eps)
    hi_gap = spec.r2 + eps - nu

    entries = [
        ConditionEntry("primal_dynamics", both(dyn_l, dyn_r), tol),
        ConditionEntry("state_constraint", float(max(0.0, -np.min(nodes.vals))), tol),
        ConditionEntry("adjoint_x", both(ax_l, ax_r), tol),
        ConditionEntry("adjoint_u", both(au_l, au_r), tol),
        ConditionEntry("adjoint_a", both(aa_l, aa_r), tol),
        ConditionEntry("dual_coupling", both(p[1:, n:], cv[:, n:]), tol),
        ConditionEntry("transversality_x", _rel(tx_l - tx_r, np.concatenate([tx_l, tx_r])), tol),
        ConditionEntry("transversality_u", _rel(tu_l - tu_r, np.concatenate([tu_l, tu_r])), tol),
        ConditionEntry("transversality_a", _rel(p[k, 2 * n:], np.zeros(1)), tol),
        ConditionEntry("eta_sign", float(max(0.0, -np.min(eta))) if eta.size else 0.0, tol),
        ConditionEntry("complementarity_eta", float(np.max(np.abs(eta[inact]), initial=0.0)), tol),
        ConditionEntry("gamma_inactive", float(np.max(np.abs(duals.gamma[inact[:k]]), initial=0.0)), tol),
        ConditionEntry("gamma_tags", _gamma_tag_violation(nodes, duals, Ys, tol_act, eta_tol), tol),
        ConditionEntry("eta_implication", float(np.max(impl[pos], initial=0.0)), tol),
        ConditionEntry("xi_sign", float(max(0.0, -np.min(duals.xi1), np.max(duals.xi2))), tol),
        ConditionEntry("xi_complementarity",
                       float(max(np.max(np.abs(duals.xi1 * hi_gap)), np.max(np.abs(duals.xi2 * lo_gap)))), tol),
        ConditionEntry("control_bounds", float(max(0.0, -np.min(lo_gap), -np.min(hi_gap))), tol),
        ConditionEntry("control_coupling",
                       float(np.max(np.abs(traj.u @ E.T))) if E.size else 0.0, tol),
    ]
    notes = []
    if spec.r1 == spec.r2:
        notes.append("r1 equals r2: both annulus multipliers may be active at once")
    enhanced = nontriviality(duals, "discrete-enhanced") if _surjective_everywhere(nodes) else None
    return ConditionReport(entries, nontriviality(duals, "discrete"), tol_nontriv, enhanced, notes)


# ---------------------------------------------------------------------------
# continuous check


def lift_to_continuous(duals: DualSystem, traj: DiscreteTrajectory, spec: ProcessSpec, *,
                       terminal: str = "dynamics") -> DualSystem:
    """Continuous-time duals on the grid: ``q`` is the discrete ``p``, ``p`` adds the measure tails.

    ``gamma_atoms`` has shape ``(k+1, n)``; row ``j < k`` is the atom at
    ``t_j``, row ``k`` the atom at ``T``.  With ``terminal="dynamics"`` the
    terminal multiplier is the left value ``eta_{k-1}`` of the primal
    representation and the atom at ``T`` absorbs the difference to the
    discrete terminal multiplier; ``terminal="transversality"`` keeps the
    discrete one, so ``q_k = p_k``.
    """
    if terminal not in ("dynamics", "transversality"):
        raise InvalidArgument("terminal must be 'dynamics' or 'transversality'")
    _validate(duals, traj, spec)
    n, k, h = spec.n, traj.k, traj.h
    E = _coupling(spec)
    nodes = _Nodes(spec, traj, duals.eta)
    q = duals.p.copy()
    Ys = q[1:, :n] - duals.lam * (duals.v[:, :n] + duals.theta[:, :n] / h)
    atoms = np.zeros((k + 1, n))
    atoms[:k] = h * (np.einsum("jab,jb->ja", nodes.H[:k], Ys)
                     + np.einsum("jm,jmn->jn", duals.gamma, nodes.G[:k]))
    eta = duals.eta.copy()
    if terminal == "dynamics":
        eta[k] = duals.eta[k - 1]
        atoms[k] = -nodes.G[k].T @ (eta[k] - duals.eta[k])
    xi = duals.xi1 + duals.xi2
    u_atoms = atoms.copy()
    u_atoms[:k] += 2.0 * xi[:k, None] * traj.u[:k]
    if E.size:
        u_atoms[:k] += duals.zeta[:k] @ E
    p = q.copy()
    p[:, :n] = q[:, :n] - np.cumsum(atoms[::-1], axis=0)[::-1]
    p[:, n:2 * n] = q[:, n:2 * n] + np.cumsum(u_atoms[::-1], axis=0)[::-1]
    return replace(duals, p=p, q=q, eta=eta, gamma_atoms=atoms, report=None)


def check_continuous(traj: DiscreteTrajectory, duals: DualSystem, spec: ProcessSpec, cost: CostSpec, *,
                     tol: float = 1e-6, tol_act: float = TOL_ACT, tol_nontriv: float = 1e-8,
                     tol_u: float = 1e-9) -> ConditionReport:
    """Grid residuals of the continuous-time optimality system for lifted duals."""
    _validate(duals, traj, spec)
    if duals.q is None or duals.gamma_atoms is None:
        raise InvalidArgument("continuous check needs lifted duals (q and gamma_atoms)")
    n, d, k, h = spec.n, spec.d, traj.k, traj.h
    lam = duals.lam
    E = _coupling(spec)
    nodes = _Nodes(spec, traj, duals.eta)
    W, V = subgradients(cost, traj, n, d)
    p, q, eta = duals.p, duals.q, duals.eta
    Yq = q[1:, :n] - lam * V[:, :n]
    xi = duals.xi1 + duals.xi2

    def both(l, r):
        return max(_rel(l[j] - r[j], np.concatenate([l[j], r[j]])) for j in range(len(l)))

    dyn_l = (traj.x[1:] - traj.x[:-1]) / h + nodes.fv[:k]
    dyn_r = np.einsum("jm,jmn->jn", eta[:k], nodes.G[:k])
    dp = np.diff(p, axis=0) / h
    adj_r = lam * W.copy()
    adj_r[:, :n] += np.einsum("jba,jb->ja", nodes.fx[:k], Yq)
    adj_r[:, 2 * n:] += np.einsum("jba,jb->ja", nodes.fa[:k], Yq)
    atoms = duals.gamma_atoms
    if np.shape(atoms) != (k + 1, n):
        raise InvalidArgument(f"gamma_atoms has shape {np.shape(atoms)}, expected {(k + 1, n)}")
    u_atoms = atoms.copy()
    u_atoms[:k] += 2.0 * xi[:k, None] * traj.u[:k]
    if E.size:
        u_atoms[:k] += duals.zeta[:k] @ E
    tail_x = np.cumsum(atoms[::-1], axis=0)[::-1]
    tail_u = np.cumsum(u_atoms[::-1], axis=0)[::-1]
    rel_l = np.hstack([p[:, :n], p[:, n:2 * n], p[:, 2 * n:]])
    rel_r = np.hstack([q[:, :n] - tail_x, q[:, n:2 * n] + tail_u, q[:, 2 * n:]])
    inact = nodes.vals > tol_act
    eta_tol = 1e-9 * (1.0 + float(np.max(np.abs(eta))) if eta.size else 1.0)
    Yall = np.vstack([Yq, (q[k, :n] - lam * V[k - 1, :n])[None]])
    impl = np.abs(np.einsum("jmn,jn->jm", nodes.G, Yall)) / (1.0 + np.linalg.norm(Yall, axis=1))[:, None]
    Gk = nodes.G[k]
    tx_l = p[k, :n] + lam * cost.phi_grad(traj.x[k])
    tx_r = Gk.T @ eta[k]
    Ez_k = duals.zeta[k] @ E if E.size else np.zeros(n)
    tu_l = p[k, n:2 * n]
    tu_r = -(Gk.T @ eta[k]) - 2.0 * xi[k] * traj.u[k] - Ez_k
    nu = np.linalg.norm(traj.u, axis=1)
    all_inactive = np.all(inact, axis=1)
    interior = (nu > spec.r1 + tol_u) & (nu < spec.r2 - tol_u)

    entries = [
        ConditionEntry("primal_representation", both(dyn_l, dyn_r), tol),
        ConditionEntry("adjoint_x", both(dp[:, :n], adj_r[:, :n]), tol),
        ConditionEntry("adjoint_u", both(dp[:, n:2 * n], adj_r[:, n:2 * n]), tol),
        ConditionEntry("adjoint_a", both(dp[:, 2 * n:], adj_r[:, 2 * n:]), tol),
        ConditionEntry("q_controls", both(q[1:, n:], lam * V[:, n:]), tol),
        ConditionEntry("p_q_relation", both(rel_l, rel_r), tol),
        ConditionEntry("complementarity_eta", float(np.max(np.abs(eta[inact]), initial=0.0)), tol),
        ConditionEntry("eta_implication", float(np.max(impl[eta > eta_tol], initial=0.0)), tol),
        ConditionEntry("transversality_x", _rel(tx_l - tx_r, np.concatenate([tx_l, tx_r])), tol),
        ConditionEntry("transversality_u", _rel(tu_l - tu_r, np.concatenate([tu_l, tu_r])), tol),
        ConditionEntry("transversality_a", _rel(p[k, 2 * n:], np.zeros(1)), tol),
        ConditionEntry("terminal_normal_cone",
                       float(max(0.0, -np.min(eta[k]), np.max(np.abs(eta[k][inact[k]]), initial=0.0))), tol),
        ConditionEntry("nonatomicity_gamma",
                       float(np.max(np.abs(atoms[all_inactive]), initial=0.0)), tol),
        ConditionEntry("nonatomicity_xi",
                       float(max(np.max(np.abs(duals.xi1[interior]), initial=0.0),
                                 np.max(np.abs(duals.xi2[interior]), initial=0.0))), tol),
        ConditionEntry("xi_sign", float(max(0.0, -np.min(duals.xi1), np.max(duals.xi2))), tol),
    ]
    notes = []
    if spec.r1 == spec.r2:
        notes.append("r1 equals r2: both annulus multipliers may be active at once")
    return ConditionReport(entries, nontriviality(duals, "general"), tol_nontriv, None, notes)


# ---------------------------------------------------------------------------


def nontriviality(duals: DualSystem, mode: str = "general") -> float:
    """Nontriviality sum for ``mode``.

    ``general``: ``lam + |q^u(0)| + |p(T)| + TV(xi1) + TV(xi2)``;
    ``enhanced-initial`` drops ``|q^u(0)|``; ``enhanced-terminal`` drops
    ``|p(T)|``.  Total variation of the atomic ``xi`` is the sum of atom
    magnitudes.  ``discrete``: ``lam + |eta_k| + |xi1 + xi2| + sum_{j<k} |p^x_j|
    + |p^u_0| + |p^a_0|``; ``discrete-enhanced``: ``lam + |xi1 + xi2| + |p^u_0|``.
    When ``q`` is unset the discrete ``p`` stands in for it.
    """
    if mode not in NONTRIVIALITY_MODES:
        raise InvalidArgument(f"unknown nontriviality mode {mode!r}")
    n = duals.n
    lam = float(duals.lam)
    q = duals.q if duals.q is not None else duals.p
    tv = float(np.sum(np.abs(duals.xi1)) + np.sum(np.abs(duals.xi2)))
    qu0 = float(np.linalg.norm(q[0, n:2 * n]))
    pT = float(np.linalg.norm(duals.p[-1]))
    xisum = float(np.linalg.norm(duals.xi1 + duals.xi2))
    if mode == "general":
        return lam + qu0 + pT + tv
    if mode == "enhanced-initial":
        return lam + pT + tv
    if mode == "enhanced-terminal":
        return lam + qu0 + tv
    p = duals.p
    if mode == "discrete":
        return (lam + float(np.linalg.norm(duals.eta[-1])) + xisum
                + float(np.sum(np.linalg.norm(p[:-1, :n], axis=1)))
                + float(np.linalg.norm(p[0, n:2 * n])) + float(np.linalg.norm(p[0, 2 * n:])))
    return lam + xisum + float(np.linalg.norm(p[0, n:2 * n]))
