"""Command-line driver: ``sweepctl {simulate,solve,check,converge,coderiv}``.

Artifacts go to ``<out>/<model>-<command>-<timestamp>/``.  CSV bodies are
deterministic; timestamps appear only in directory names.  Exit status is
0 on success, 1 when a check or solve does not pass, 2 on configuration
errors and 3 on other failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np

from .config import ModelConfig, default_config, dump_config, parse_config
from .dynamics import ProcessSpec, csv_text, integrate
from .errors import ConfigError, DomainViolation, ReconstructionFailed, SweepError
from .geometry import affine_set, disk_set, separation_set
from .models import builtin_car, builtin_crowd, structured_init
from .optimality import check_continuous, lift_to_continuous, reconstruct_duals
from .second_order import coderivative_F
from .transcription import CostSpec, SolverOptions, build_pk, convergence_study, solve

__all__ = ["COMMANDS", "build_model", "run", "main"]

COMMANDS = ("simulate", "solve", "check", "converge", "coderiv")


# ---------------------------------------------------------------------------
# model construction


def _custom_cost(cfg: ModelConfig, n: int, d: int) -> CostSpec:
    term, run = cfg.cost["terminal"], cfg.cost["running"]
    w, target = float(term["weight"]), np.asarray(term["target"], dtype=float)
    sw, cw, rw = (float(run[s]) for s in ("state_weight", "control_weight", "rate_weight"))
    N = 2 * n + d

    def ell(t, x, u, a, xd, ud, ad):
        return 0.5 * (sw * float(x @ x) + cw * float(a @ a) + rw * float(ud @ ud))

    def grad_ell(t, x, u, a, xd, ud, ad):
        g = np.zeros(2 * N)
        g[:n] = sw * x
        g[2 * n:N] = cw * a
        g[N + n:N + 2 * n] = rw * ud
        return g

    return CostSpec(
        phi=lambda x: 0.5 * w * float((x - target) @ (x - target)),
        ell=ell,
        grad_phi=lambda x: w * (np.asarray(x, dtype=float) - target),
        grad_ell=grad_ell,
    )


def _default_u0(cset, x0, r1, r2, E):
    n = x0.size
    for r in (r1, 0.5 * (r1 + r2), r2):
        for i in range(n):
            for sgn in (1.0, -1.0):
                u = np.zeros(n)
                u[i] = sgn * r
                if E is not None and np.max(np.abs(E @ u)) > 1e-12:
                    continue
                if np.all(cset.values(x0 - u) >= 0):
                    return u
    raise ConfigError("no admissible default u0; give one explicitly", field="u0")


def _custom_model(cfg: ModelConfig):
    dims = cfg.dimensions
    n, d = dims["n"], dims["d"]
    con = cfg.constraints
    rho = con.get("rho", 1.0)
    if con["form"] == "affine":
        cset = affine_set(np.array(con["A"]), np.array(con["b"]), rho=rho)
    elif con["form"] == "separation":
        cset = separation_set(con["distance"], block=con["block"], rho=rho)
    else:
        kw = {"rho": rho} if "rho" in con else {}
        cset = disk_set(con["radius"], con["center"], **kw)
    A = np.asarray(cfg.dynamics["A"], dtype=float)
    B = np.asarray(cfg.dynamics["B"], dtype=float)
    c = np.asarray(cfg.dynamics["c"], dtype=float)
    x0 = np.asarray(cfg.x0, dtype=float)
    E = None if cfg.coupling is None else np.asarray(cfg.coupling, dtype=float)
    u0 = np.asarray(cfg.u0, dtype=float) if cfg.u0 is not None else _default_u0(cset, x0, cfg.r1, cfg.r2, E)
    growth = cfg.growth_m if cfg.growth_m is not None else 1.0 + float(
        np.linalg.norm(A, 2) + np.linalg.norm(B, 2) + np.linalg.norm(c))
    spec = ProcessSpec(
        set=cset,
        f=lambda x, a: A @ np.asarray(x, dtype=float) + B @ np.atleast_1d(np.asarray(a, dtype=float)) + c,
        grad_f_x=lambda x, a: A,
        grad_f_a=lambda x, a: B,
        control_dim=d,
        horizon=cfg.horizon,
        x0=x0,
        r1=cfg.r1,
        r2=cfg.r2,
        lipschitz_k=cfg.lipschitz_k or 0.0,
        growth_m=growth,
        control_coupling=E,
        u0=u0,
    )
    return spec, _custom_cost(cfg, n, d), None


def build_model(cfg: ModelConfig):
    """``(spec, cost, analytic solution or None)`` for a config."""
    if cfg.model == "builtin-car":
        return builtin_car(cfg.variant)
    if cfg.model == "builtin-crowd":
        return builtin_crowd(cfg.case)
    return _custom_model(cfg)


def _model_tag(cfg: ModelConfig) -> str:
    if cfg.model == "builtin-car":
        return f"car-{cfg.variant}"
    if cfg.model == "builtin-crowd":
        return f"crowd-{cfg.case}"
    return "custom"


def _no_contact(cfg: ModelConfig) -> bool:
    if cfg.solver.no_contact is not None:
        return cfg.solver.no_contact
    return cfg.model == "builtin-crowd" and cfg.case == "free"


def _options(cfg: ModelConfig) -> SolverOptions:
    s = cfg.solver
    return SolverOptions(max_outer=s.max_outer, max_inner=s.max_inner, penalty_init=s.penalty_init,
                         penalty_growth=s.penalty_growth, penalty_max=s.penalty_max, tol_kkt=s.tol_kkt,
                         tol_feas=s.tol_feas, fd_step=s.fd_step, gradient=s.gradient, optimize_u=s.optimize_u)


def _solve(cfg, spec, cost, sol, k):
    prob = build_pk(spec, cost, k, no_contact=_no_contact(cfg))
    init = structured_init(spec, sol, k) if sol is not None else None
    return prob, solve(prob, init, _options(cfg))


def _candidate(cfg, spec, cost, sol, k):
    """Trajectory to certify: the closed form on the grid or a fresh solve."""
    if cfg.check.source == "analytic" and sol is not None:
        return build_pk(spec, cost, k), sol.sample(k), None
    prob, res = _solve(cfg, spec, cost, sol, k)
    return prob, res.trajectory, res


# ---------------------------------------------------------------------------
# artifacts


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _table(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _duals_csv(duals) -> str:
    k, n, d = duals.k, duals.n, duals.d
    m = duals.eta.shape[1]
    c = duals.zeta.shape[1]
    header = (["j"] + [f"px{i}" for i in range(n)] + [f"pu{i}" for i in range(n)]
              + [f"pa{i}" for i in range(d)] + [f"eta{i}" for i in range(m)] + [f"gamma{i}" for i in range(m)]
              + ["xi1", "xi2"] + [f"zeta{i}" for i in range(c)])
    rows = []
    for j in range(k + 1):
        gam = duals.gamma[j] if j < k else np.full(m, np.nan)
        rows.append([j, *duals.p[j], *duals.eta[j], *gam, duals.xi1[j], duals.xi2[j], *duals.zeta[j]])
    return _table(header, rows)


def _out_dir(out, cfg, command, stamp=None) -> Path:
    stamp = stamp or datetime.now().strftime("%Y%m%dT%H%M%S%f")
    base = Path(out) / f"{_model_tag(cfg)}-{command}-{stamp}"
    path, i = base, 1
    while path.exists():
        path = Path(f"{base}-{i}")
        i += 1
    path.mkdir(parents=True)
    return path


def _workers(count: int) -> int:
    raw = os.environ.get("SWEEP_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError("SWEEP_THREADS must be a positive integer", field="SWEEP_THREADS") from None
        if cap < 1:
            raise ConfigError("SWEEP_THREADS must be a positive integer", field="SWEEP_THREADS")
    return max(1, min(cap, count))


# ---------------------------------------------------------------------------
# commands


def _cmd_simulate(cfg, spec, cost, sol, k, out, tol, log):
    if cfg.controls == "analytic" and sol is not None:
        u, a = sol.controls(k)
    else:
        u = np.tile(spec.u0, (k + 1, 1))
        a = np.zeros((k + 1, spec.d))
    traj = integrate(spec, u, a, k)
    (out / "trajectory.csv").write_text(csv_text(traj))
    log(f"x(T) = {np.array2string(traj.x[-1], precision=6)}")
    return 0


def _cmd_solve(cfg, spec, cost, sol, k, out, tol, log):
    _, res = _solve(cfg, spec, cost, sol, k)
    lines = [
        f"status: {res.status}",
        f"objective: {res.objective:.12g}",
        f"iterations: {res.iterations}",
        f"kkt_residual: {res.kkt_residual:.6e}",
        f"constraint_violation: {res.constraint_violation:.6e}",
        f"a_mean: {' '.join(f'{v:.12g}' for v in res.trajectory.a[:-1].mean(axis=0))}",
        f"x_T: {' '.join(f'{v:.12g}' for v in res.trajectory.x[-1])}",
    ]
    if sol is not None:
        gap = abs(res.objective - sol.objective) / max(1.0, abs(sol.objective))
        lines += [f"analytic_objective: {sol.objective:.12g}", f"objective_gap: {gap:.6e}"]
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    (out / "trajectory.csv").write_text(csv_text(res.trajectory))
    log(text.rstrip())
    return 0 if res.status == "converged" else 1


def _cmd_check(cfg, spec, cost, sol, k, out, tol, log):
    prob, traj, _ = _candidate(cfg, spec, cost, sol, k)
    (out / "trajectory.csv").write_text(csv_text(traj))
    try:
        duals = reconstruct_duals(traj, prob, cfg.check.lam, check_tol=tol)
    except ReconstructionFailed as exc:
        prof = exc.residual_profile if exc.residual_profile is not None else []
        (out / "reconstruction_failure.csv").write_text(_table(["j", "residual"], enumerate(prof)))
        log(f"reconstruction failed: {exc}")
        return 1
    rep = duals.report
    (out / "duals.csv").write_text(_duals_csv(duals))
    (out / "check_discrete.txt").write_text(rep.to_text())
    (out / "check_discrete.csv").write_text(rep.to_csv())
    log("discrete conditions\n" + rep.to_text().rstrip())
    ok = rep.overall == "pass"
    if k >= 100:
        lifted = lift_to_continuous(duals, traj, spec)
        crep = check_continuous(traj, lifted, spec, cost, tol=cfg.check.tol_continuous)
        (out / "check_continuous.txt").write_text(crep.to_text())
        (out / "check_continuous.csv").write_text(crep.to_csv())
        log("continuous conditions\n" + crep.to_text().rstrip())
        ok = ok and crep.overall == "pass"
    return 0 if ok else 1


def _cmd_converge(cfg, spec, cost, sol, k, out, tol, log):
    if sol is None:
        raise ConfigError("converge needs a model with an analytic solution", field="model")
    ks = cfg.converge.k_list
    rows = convergence_study(spec, cost, ks, sol, options=_options(cfg), components=cfg.converge.components,
                             workers=_workers(len(ks)))
    cols = ["k", "status", "objective", "objective_gap", "distance", "iterations", "kkt", "error"]
    text = _table(cols, [[r.get(c, math.nan) for c in cols] for r in rows])
    (out / "convergence.csv").write_text(text)
    log(text.rstrip())
    return 0 if all(r["status"] != "error" for r in rows) else 1


def _cmd_coderiv(cfg, spec, cost, sol, k, out, tol, log):
    prob, traj, _ = _candidate(cfg, spec, cost, sol, k)
    duals = reconstruct_duals(traj, prob, cfg.coderiv.lam, check_tol=tol)
    n, d, m, h = spec.n, spec.d, spec.m, traj.h
    lam = duals.lam
    header = (["j", "tags"] + [f"xs{i}" for i in range(n)] + [f"us{i}" for i in range(n)]
              + [f"as{i}" for i in range(d)] + ["identity_residual"])
    rows = []
    worst = 0.0
    for j in range(k):
        w = -(traj.x[j + 1] - traj.x[j]) / h
        y = duals.p[j + 1, :n] - lam * (duals.v[j, :n] + duals.theta[j, :n] / h)
        try:
            cod = coderivative_F(spec, traj.x[j], traj.u[j], traj.a[j], w, y)
        except DomainViolation:
            rows.append([j, "domain-violation", *([math.nan] * (2 * n + d + 1))])
            continue
        xs, us, as_ = cod.element(np.where(np.array(cod.tags) == "zero", 0.0, duals.gamma[j]))
        ident = float(np.max(np.abs(xs + us - spec.fx(traj.x[j], traj.a[j]).T @ y)))
        worst = max(worst, ident)
        rows.append([j, ";".join(cod.tags), *xs, *us, *as_, ident])
    (out / "coderiv.csv").write_text(_table(header, rows))
    log(f"nodes: {k}, max row-sum identity residual: {worst:.3e}")
    return 0


_HANDLERS = {
    "simulate": _cmd_simulate,
    "solve": _cmd_solve,
    "check": _cmd_check,
    "converge": _cmd_converge,
    "coderiv": _cmd_coderiv,
}


def run(config: ModelConfig, command: str, out="runs", *, tol: float | None = None, stamp: str | None = None,
        log=None):
    """Execute ``command`` and write artifacts; returns ``(exit status, artifact directory)``."""
    if command not in _HANDLERS:
        raise ConfigError(f"unknown command {command!r}", field="command")
    log = log or (lambda s: print(s))
    spec, cost, sol = build_model(config)
    path = _out_dir(out, config, command, stamp)
    (path / "config.json").write_text(dump_config(config))
    status = _HANDLERS[command](config, spec, cost, sol, config.k, path,
                               config.check.tol if tol is None else tol, log)
    log(f"artifacts: {path}")
    return status, path


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sweepctl", description="Controlled sweeping process toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON model config")
        p.add_argument("--out", default="runs", help="parent directory for artifacts")
        p.add_argument("--k", type=int, help="grid size override")
        p.add_argument("--variant", help="car variant: standard or heavy-energy")
        p.add_argument("--case", help="crowd case: contact or free")
        p.add_argument("--tol", type=float, help="discrete residual tolerance override")
    return ap


def _resolve(args) -> ModelConfig:
    if args.config is not None:
        cfg = parse_config(args.config)
    elif args.case is not None:
        cfg = default_config("builtin-crowd")
    else:
        cfg = default_config("builtin-car")
    if args.variant is not None:
        if cfg.model != "builtin-car" or args.variant not in ("standard", "heavy-energy"):
            raise ConfigError("--variant needs builtin-car and standard or heavy-energy", field="variant")
        cfg = replace(cfg, variant=args.variant)
    if args.case is not None:
        if cfg.model != "builtin-crowd" or args.case not in ("contact", "free"):
            raise ConfigError("--case needs builtin-crowd and contact or free", field="case")
        cfg = replace(cfg, case=args.case)
    if args.k is not None:
        if args.k < 2:
            raise ConfigError("k must be at least 2", field="k")
        cfg = replace(cfg, k=args.k)
    if args.tol is not None and not args.tol > 0:
        raise ConfigError("tol must be positive", field="tol")
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        status, _ = run(cfg, args.command, args.out, tol=args.tol)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SweepError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return status


if __name__ == "__main__":
    sys.exit(main())
