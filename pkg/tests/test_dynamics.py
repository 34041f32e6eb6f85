"""Catching-up integration, multiplier recovery and trajectory distances."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sweepctl import (
    DiscreteTrajectory,
    InvalidArgument,
    NotInCone,
    NumericalFailure,
    PreconditionViolation,
    ProcessSpec,
    affine_set,
    builtin_car,
    builtin_crowd,
    disk_set,
    integrate,
    recover_eta,
    step_catching_up,
    step_explicit,
    w12_distance,
)
from sweepctl.dynamics import csv_text, epsilon_k, trajectory_bound


def still_spec(**kw):
    base = dict(set=disk_set(2.0), f=lambda x, a: np.zeros(2), grad_f_x=lambda x, a: np.zeros((2, 2)),
                grad_f_a=lambda x, a: np.zeros((2, 1)), control_dim=1, horizon=1.0, x0=[0.5, 0.0],
                r1=0.1, r2=1.0, u0=[0.2, 0.0])
    base.update(kw)
    return ProcessSpec(**base)


@pytest.mark.parametrize("kw,exc", [
    ({"r1": 0.0}, InvalidArgument),
    ({"r1": 2.0, "r2": 1.0}, InvalidArgument),
    ({"horizon": 0.0}, InvalidArgument),
    ({"control_dim": 0}, InvalidArgument),
    ({"growth_m": -1.0}, InvalidArgument),
    ({"u0": [5.0, 0.0]}, PreconditionViolation),
    ({"control_coupling": np.ones((1, 3))}, InvalidArgument),
])
def test_spec_validation(kw, exc):
    with pytest.raises(exc):
        still_spec(**kw)


def test_zero_drift_interior_start_is_constant():
    spec = still_spec()
    traj = integrate(spec, np.tile(spec.u0, (11, 1)), np.zeros((11, 1)), 10)
    np.testing.assert_array_equal(traj.x, np.tile(spec.x0, (11, 1)))
    assert not traj.eta.any()


def test_car_integration_matches_closed_form():
    spec, _, sol = builtin_car()
    traj = sol.simulate(spec, 50)
    expected = np.array([sol.x_path(t) for t in traj.t])
    np.testing.assert_allclose(traj.x, expected, rtol=0, atol=1e-10)


def test_crowd_contact_multiplier_is_constant():
    spec, _, sol = builtin_crowd("contact")
    traj = sol.simulate(spec, 120)
    np.testing.assert_allclose(traj.eta[:-1, 0], sol.params["eta"], rtol=1e-9)


def test_boundary_push():
    spec = ProcessSpec(affine_set([[-1.0]], [0.0]), lambda x, a: np.asarray(a, float), lambda x, a: np.zeros((1, 1)),
                       lambda x, a: np.ones((1, 1)), 1, 1.0, [0.0], 0.5, 2.0, u0=[1.0])
    x1, eta = step_catching_up(spec, [0.0], [1.0], [-2.0], 0.1)
    # drift pushes right, the moving half-line (-inf, 1] stops it
    assert x1[0] == pytest.approx(0.2)
    x_next, eta = step_catching_up(spec, [1.0], [1.0], [-2.0], 0.1)
    assert x_next[0] == pytest.approx(1.0)
    assert eta[0] == pytest.approx(2.0)
    np.testing.assert_allclose(step_explicit(spec, [1.0], [1.0], [-2.0], eta, 0.1), x_next)


@pytest.mark.filterwarnings("ignore::sweepctl.ProxRadiusWarning")
@given(st.floats(0, 2 * math.pi), st.floats(0.0, 3.0), st.floats(0.01, 0.5))
@settings(max_examples=60, deadline=None)
def test_catching_up_agrees_with_explicit_step(phi, lam, h):
    spec = still_spec(f=lambda x, a: -lam * x, grad_f_x=lambda x, a: -lam * np.eye(2))
    x = 2.0 * np.array([math.cos(phi), math.sin(phi)])
    u = np.zeros(2)
    x1, eta = step_catching_up(spec, x, u, [0.0], h)
    assert np.linalg.norm(x1) <= 2.0 + 1e-12
    if eta[0] > 0:
        # the explicit step with the recovered multiplier, evaluated at the new point, closes the loop
        y = x1 - u
        np.testing.assert_allclose(x - h * (spec.fval(x, [0.0]) - spec.set.gradients(y).T @ eta), x1, atol=1e-10)


def test_explicit_step_rejects_bad_multipliers():
    spec = still_spec()
    with pytest.raises(InvalidArgument):
        step_explicit(spec, [0.5, 0.0], [0.2, 0.0], [0.0], [-1.0], 0.1)
    with pytest.raises(InvalidArgument, match="active"):
        step_explicit(spec, [0.5, 0.0], [0.2, 0.0], [0.0], [1.0], 0.1)


@pytest.mark.parametrize("h", [0.0, -0.1, math.nan])
def test_step_size_validated(h):
    with pytest.raises(InvalidArgument):
        step_catching_up(still_spec(), [0.5, 0.0], [0.2, 0.0], [0.0], h)


def test_integrate_checks_controls():
    spec = still_spec()
    with pytest.raises(PreconditionViolation):
        integrate(spec, np.tile([5.0, 0.0], (3, 1)), np.zeros((3, 1)), 2)
    with pytest.raises(PreconditionViolation, match="norm"):
        integrate(spec, np.tile([0.01, 0.0], (3, 1)), np.zeros((3, 1)), 2)
    with pytest.raises(InvalidArgument):
        integrate(spec, np.zeros((2, 2)), np.zeros((3, 1)), 2)
    with pytest.raises(InvalidArgument):
        integrate(spec, np.zeros((1, 2)), np.zeros((1, 1)), 0)


def test_bound_violation_detected():
    spec = still_spec(set=affine_set([[-1.0, 0.0]], [100.0]), f=lambda x, a: np.array([-1e6, 0.0]),
                      growth_m=0.0)
    with pytest.raises(NumericalFailure):
        integrate(spec, np.tile(spec.u0, (3, 1)), np.zeros((3, 1)), 2)


def test_trajectory_bound_grows_with_m():
    u = np.tile([0.2, 0.0], (5, 1))
    assert trajectory_bound(still_spec(growth_m=2.0), u) > trajectory_bound(still_spec(growth_m=1.0), u)


class TestRecoverEta:
    def test_free_motion_has_zero_multiplier(self):
        spec, _, sol = builtin_crowd("free")
        x, u, a = sol.state(1.0)
        np.testing.assert_array_equal(recover_eta(spec, x, u, sol.x_dot(1.0), a), [0.0])

    def test_contact_multiplier(self):
        spec, _, sol = builtin_crowd("contact")
        x, u, a = sol.state(2.0)
        eta = recover_eta(spec, x, u, sol.x_dot(2.0), a)
        assert eta[0] == pytest.approx(4.5 * a[1], rel=1e-12)

    def test_unrealizable_velocity(self):
        spec, _, sol = builtin_crowd("contact")
        x, u, a = sol.state(2.0)
        with pytest.raises(NotInCone) as info:
            recover_eta(spec, x, u, sol.x_dot(2.0) + [1.0, 0.0, 0.0, 0.0], a)
        assert info.value.residual > 0


class TestDistance:
    def test_zero_for_identical(self):
        spec, _, sol = builtin_car()
        traj = sol.sample(40)
        assert w12_distance(traj, traj) == 0.0
        assert w12_distance(traj, sol) < 1e-12

    def test_constant_shift(self):
        spec, _, sol = builtin_car()
        a = sol.sample(20)
        b = DiscreteTrajectory(a.t, a.x + 0.5, a.u, a.a, a.eta)
        assert w12_distance(a, b, "x") == pytest.approx(0.5)

    def test_slope_change_contributes_l2(self):
        t = np.linspace(0, 1, 11)
        z = np.zeros((11, 1))
        a = DiscreteTrajectory(t, z, z, z, z)
        b = DiscreteTrajectory(t, t[:, None], z, z, z)
        assert w12_distance(a, b, "x") == pytest.approx(1.0 + 1.0)

    @pytest.mark.parametrize("components", ["", "xq"])
    def test_bad_components(self, components):
        traj = builtin_car()[2].sample(4)
        with pytest.raises(InvalidArgument):
            w12_distance(traj, traj, components)

    def test_grid_mismatch(self):
        sol = builtin_car()[2]
        with pytest.raises(InvalidArgument):
            w12_distance(sol.sample(4), sol.sample(5))

    def test_epsilon_k(self):
        spec, _, sol = builtin_car()
        assert epsilon_k(sol.sample(10), sol) == 0.0


def test_csv_text_layout_and_precision():
    traj = builtin_car()[2].sample(2)
    lines = csv_text(traj).splitlines()
    assert lines[0] == "t,x0,u0,a0,eta0"
    assert lines[1].split(",")[1] == "-250"
    assert len(lines) == 4
