"""Built-in models with closed-form optimal solutions.

``builtin_car`` drives a car along a line towards the origin, which it may
not pass; ``builtin_crowd`` moves two disks of radius 3 towards the origin
along the 135 degree direction without overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import DiscreteTrajectory, ProcessSpec, integrate
from .errors import InvalidArgument
from .geometry import affine_set, separation_set
from .transcription import CostSpec

__all__ = ["AnalyticSolution", "builtin_car", "builtin_crowd", "CAR_VARIANTS", "CROWD_CASES"]

CAR_VARIANTS = ("standard", "heavy-energy")
CROWD_CASES = ("contact", "free")


@dataclass(frozen=True)
class AnalyticSolution:
    """Closed-form candidate ``(x, u, a)`` with multipliers and cost.

    ``state(t)`` and ``velocity(t)`` return ``(x, u, a)`` tuples of arrays.
    ``eta(t)`` returns the normal-cone multipliers.
    """

    horizon: float
    x_path: Callable[[float], np.ndarray]
    u_path: Callable[[float], np.ndarray]
    a_path: Callable[[float], np.ndarray]
    x_dot: Callable[[float], np.ndarray]
    u_dot: Callable[[float], np.ndarray]
    a_dot: Callable[[float], np.ndarray]
    objective: float
    multipliers: Callable[[float], np.ndarray]
    params: dict

    def state(self, t):
        return self.x_path(t), self.u_path(t), self.a_path(t)

    def velocity(self, t):
        return self.x_dot(t), self.u_dot(t), self.a_dot(t)

    def eta(self, t):
        return self.multipliers(t)

    def controls(self, k: int):
        t = np.linspace(0.0, self.horizon, k + 1)
        return np.array([self.u_path(s) for s in t]), np.array([self.a_path(s) for s in t])

    def sample(self, k: int) -> DiscreteTrajectory:
        """The closed form evaluated on the ``k``-grid."""
        t = np.linspace(0.0, self.horizon, k + 1)
        return DiscreteTrajectory(
            t,
            np.array([self.x_path(s) for s in t]),
            np.array([self.u_path(s) for s in t]),
            np.array([self.a_path(s) for s in t]),
            np.array([self.multipliers(s) for s in t]),
        )

    def simulate(self, spec: ProcessSpec, k: int) -> DiscreteTrajectory:
        """Integrate the process with the closed-form controls sampled on the grid."""
        u, a = self.controls(k)
        return integrate(spec, u, a, k)


def _const(v):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return lambda t: v.copy()


def _quadratic_cost(n, d, weight):
    def ell(t, x, u, a, xd, ud, ad):
        return 0.5 * weight * float(np.dot(a, a))

    def grad_ell(t, x, u, a, xd, ud, ad):
        g = np.zeros(2 * (2 * n + d))
        g[2 * n:2 * n + d] = weight * np.asarray(a, dtype=float)
        return g

    return CostSpec(
        phi=lambda x: 0.5 * float(np.dot(x, x)),
        ell=ell,
        grad_phi=lambda x: np.asarray(x, dtype=float).copy(),
        grad_ell=grad_ell,
    )


def builtin_car(variant: str = "standard"):
    """Car on a line: ``f = 9a``, ``C = (-inf, 0]``, ``T = 20``, ``x0 = -250``.

    Returns ``(spec, cost, solution)``.  The optimal control is the constant
    ``a = -45000 / (32400 + 20 c)`` with energy weight ``c`` (1 or 100).
    The set-control is the constant ``u = x(T)``.
    """
    if variant not in CAR_VARIANTS:
        raise InvalidArgument(f"unknown car variant {variant!r}")
    weight = 1.0 if variant == "standard" else 100.0
    T, x0, speed = 20.0, -250.0, 9.0
    theta = -45000.0 / (32400.0 + 20.0 * weight)
    xT = x0 - speed * theta * T
    cset = affine_set([[-1.0]], [0.0], rho=1.0, name="half-line")
    spec = ProcessSpec(
        set=cset,
        f=lambda x, a: speed * np.asarray(a, dtype=float).reshape(1),
        grad_f_x=lambda x, a: np.zeros((1, 1)),
        grad_f_a=lambda x, a: np.full((1, 1), speed),
        control_dim=1,
        horizon=T,
        x0=[x0],
        r1=1e-3,
        r2=50.0,
        lipschitz_k=0.0,
        growth_m=speed * 5.0,
        u0=[xT],
    )
    cost = _quadratic_cost(1, 1, weight)
    J = 0.5 * xT ** 2 + T * 0.5 * weight * theta ** 2
    sol = AnalyticSolution(
        horizon=T,
        x_path=lambda t: np.array([x0 - speed * theta * t]),
        u_path=_const([xT]),
        a_path=_const([theta]),
        x_dot=_const([-speed * theta]),
        u_dot=_const([0.0]),
        a_dot=_const([0.0]),
        objective=J,
        multipliers=_const([0.0]),
        params={"variant": variant, "theta": theta, "x_T": xT, "energy_weight": weight},
    )
    return spec, cost, sol


def builtin_crowd(case: str = "contact"):
    """Two disks of radius 3 heading along 135 degrees with speeds ``6 a1`` and ``3 a2``.

    ``x = (x1, x2)`` in R^4, ``g(x) = |x1 - x2| - 6``, ``T = 6``,
    ``1 <= |u| <= 10`` with the coupling ``u1 = u2``.  The ``contact`` case
    keeps the disks touching with ``a1 = 2 a2``; the ``free`` case moves
    them at equal speed with ``a2 = 2 a1``.  Returns ``(spec, cost, solution)``.
    """
    if case not in CROWD_CASES:
        raise InvalidArgument(f"unknown crowd case {case!r}")
    T, s1, s2 = 6.0, 6.0, 3.0
    c = np.array([-math.sqrt(0.5), math.sqrt(0.5)])
    off = 6.0 / math.sqrt(2.0)
    x0 = np.array([-48.0 - off, 48.0 + off, -48.0, 48.0])
    cset = separation_set(6.0, block=2, rho=1.0, name="two-disks")
    u0 = np.array([0.5, -0.5, 0.5, -0.5])
    amax = 10.0

    def f(x, a):
        a = np.asarray(a, dtype=float)
        return np.concatenate([s1 * a[0] * c, s2 * a[1] * c])

    fa = np.zeros((4, 2))
    fa[:2, 0] = s1 * c
    fa[2:, 1] = s2 * c
    spec = ProcessSpec(
        set=cset,
        f=f,
        grad_f_x=lambda x, a: np.zeros((4, 4)),
        grad_f_a=lambda x, a: fa,
        control_dim=2,
        horizon=T,
        x0=x0,
        r1=1.0,
        r2=10.0,
        lipschitz_k=0.0,
        growth_m=math.hypot(s1, s2) * amax,
        control_coupling=np.hstack([np.eye(2), -np.eye(2)]),
        u0=u0,
    )
    cost = _quadratic_cost(4, 2, 1.0)
    root = 96.0 * math.sqrt(2.0) + 6.0
    if case == "contact":
        a2 = 45.0 * root / 4080.0
        a = np.array([2.0 * a2, a2])
        eta = 4.5 * a2
        speed = 3.75 * math.sqrt(2.0) * a2
    else:
        a1 = 18.0 * root / 1311.0
        a = np.array([a1, 2.0 * a1])
        eta = 0.0
        speed = 3.0 * math.sqrt(2.0) * a1
    vel = speed * np.array([1.0, -1.0, 1.0, -1.0])
    xT = x0 + T * vel
    J = 0.5 * float(xT @ xT) + T * 0.5 * float(a @ a)
    sol = AnalyticSolution(
        horizon=T,
        x_path=lambda t: x0 + t * vel,
        u_path=_const(u0),
        a_path=_const(a),
        x_dot=_const(vel),
        u_dot=_const(np.zeros(4)),
        a_dot=_const(np.zeros(2)),
        objective=J,
        multipliers=_const([eta]),
        params={"case": case, "a": a.copy(), "eta": eta, "speed": speed,
                "init_a": np.array([2.0, 1.0]) if case == "contact" else np.array([1.0, 2.0])},
    )
    return spec, cost, sol


def structured_init(spec: ProcessSpec, sol: AnalyticSolution, k: int):
    """Deterministic solver start: ``u = u0`` and ``a`` from the case's ratio pattern."""
    u = np.tile(spec.u0, (k + 1, 1))
    init_a = sol.params.get("init_a")
    if init_a is None:
        a = np.zeros((k + 1, spec.d))
    else:
        a = np.tile(init_a, (k + 1, 1))
    return u, a
