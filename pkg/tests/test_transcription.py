import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sweepctl import (
    CostSpec,
    InvalidArgument,
    PreconditionViolation,
    ProcessSpec,
    SolverOptions,
    build_pk,
    builtin_car,
    builtin_crowd,
    convergence_study,
    disk_set,
    solve,
    w12_distance,
)
from sweepctl.models import structured_init
from sweepctl.transcription import _Shooting, evaluate_cost, mu_tilde, repair_controls


@pytest.fixture(scope="module")
def car():
    return builtin_car("standard")


class TestMuTilde:
    def test_zero_lipschitz(self):
        assert mu_tilde(1.0, 0.0, 20.0) == pytest.approx(8.0)

    @given(st.floats(0.01, 5), st.floats(0, 3), st.floats(0.1, 30))
    def test_dominates_both_terms(self, mu, K, T):
        v = mu_tilde(mu, K, T)
        assert v >= 3 * mu * (1 + 4 * K * T) * math.exp(K) * (1 - 1e-12)
        assert v >= 4 * mu * (math.exp(K) + 1) * (1 - 1e-12)

    def test_rejects_nonpositive_mu(self):
        with pytest.raises(InvalidArgument):
            mu_tilde(0.0, 1.0, 1.0)


class TestBuild:
    def test_plain_counts(self, car):
        spec, cost, _ = car
        prob = build_pk(spec, cost, 10)
        assert prob.plain and prob.h == pytest.approx(2.0)
        assert prob.constraint_counts() == {"dynamics_steps": 10, "state": 11, "norm": 22,
                                            "localization": 0, "variation": 0}
        assert not prob.theta(builtin_car()[2].sample(10)).any()

    def test_reference_counts(self, car):
        spec, cost, sol = car
        prob = build_pk(spec, cost, 10, sol)
        assert not prob.plain
        assert prob.constraint_counts()["localization"] == 11

    @pytest.mark.parametrize("k", [0, 1])
    def test_small_k(self, car, k):
        spec, cost, _ = car
        with pytest.raises(InvalidArgument):
            build_pk(spec, cost, k)

    def test_negative_epsilon(self, car):
        spec, cost, _ = car
        with pytest.raises(InvalidArgument):
            build_pk(spec, cost, 10, epsilon_k=-1.0)

    def test_reference_must_start_at_x0(self, car):
        spec, cost, sol = car
        shifted = sol.sample(10)
        shifted.x[:] -= 1.0
        with pytest.raises(PreconditionViolation):
            build_pk(spec, cost, 10, shifted)

    def test_reference_on_other_grid(self, car):
        spec, cost, sol = car
        with pytest.raises(InvalidArgument):
            build_pk(spec, cost, 10, sol.sample(12))

    def test_options_validation(self):
        with pytest.raises(InvalidArgument):
            SolverOptions(gradient="newton")
        with pytest.raises(InvalidArgument):
            SolverOptions(penalty_growth=1.0)


class TestCost:
    def test_analytic_objective_on_grid(self, car):
        spec, cost, sol = car
        prob = build_pk(spec, cost, 40)
        J = evaluate_cost(prob, sol.sample(40))
        assert J == pytest.approx(oracles.car_objective(1.0), rel=1e-12)

    def test_reference_terms_vanish_on_reference(self, car):
        spec, cost, sol = car
        traj = sol.sample(40)
        plain = evaluate_cost(build_pk(spec, cost, 40), traj)
        assert evaluate_cost(build_pk(spec, cost, 40, sol), traj) == pytest.approx(plain, rel=1e-14)

    def test_dimension_mismatch(self, car):
        spec, cost, sol = car
        with pytest.raises(InvalidArgument):
            evaluate_cost(build_pk(spec, cost, 40), sol.sample(41))

    def test_finite_difference_fallback(self):
        spec, cost, sol = builtin_crowd("contact")
        fd = CostSpec(cost.phi, cost.ell)
        traj = sol.sample(6)
        for t, z, dz in [(0.0, np.r_[traj.x[1], traj.u[1], traj.a[1]], np.ones(10))]:
            w1, v1 = cost.ell_grad(t, z, dz, 4, 2)
            w2, v2 = fd.ell_grad(t, z, dz, 4, 2)
            np.testing.assert_allclose(w2, w1, atol=1e-6)
            np.testing.assert_allclose(v2, v1, atol=1e-6)
        np.testing.assert_allclose(fd.phi_grad(traj.x[-1]), traj.x[-1], rtol=1e-8)


def test_repair_controls_projects_onto_coupling_and_annulus():
    spec, _, _ = builtin_crowd()
    u = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [20.0, 0.0, 20.0, 0.0]])
    fixed = repair_controls(spec, u)
    np.testing.assert_allclose(fixed[:, :2], fixed[:, 2:])
    norms = np.linalg.norm(fixed, axis=1)
    assert np.all(norms >= spec.r1 - 1e-12) and np.all(norms <= spec.r2 + 1e-12)


def test_adjoint_gradient_matches_finite_differences():
    spec, cost, sol = builtin_crowd("contact")
    k = 8
    prob = build_pk(spec, cost, k)
    u, a = structured_init(spec, sol, k)
    rng = np.random.default_rng(2)
    a = a + 0.3 * rng.standard_normal(a.shape)
    sh = _Shooting(prob, SolverOptions(), repair_controls(spec, u), a)
    v = sh.pack(repair_controls(spec, u), a)
    sh.evaluate(*sh.unpack(v), want_grad=False)
    sh.mult = rng.uniform(0, 1, sh.mult.size)
    _, g_adj = sh.fun(v)
    sh.o = SolverOptions(gradient="fd", fd_step=1e-7)
    _, g_fd = sh.fun(v)
    np.testing.assert_allclose(g_adj, g_fd, rtol=1e-5, atol=1e-5 * np.abs(g_fd).max())


class TestSolve:
    @pytest.mark.parametrize("variant,weight", [("standard", 1.0), ("heavy-energy", 100.0)])
    def test_car_plain(self, variant, weight):
        spec, cost, sol = builtin_car(variant)
        res = solve(build_pk(spec, cost, 50))
        assert res.status == "converged"
        np.testing.assert_allclose(res.trajectory.a[:-1, 0], oracles.car_theta(weight), rtol=1e-6)
        assert res.objective == pytest.approx(oracles.car_objective(weight), rel=1e-8)

    def test_reference_mode_returns_reference(self, car):
        spec, cost, sol = car
        res = solve(build_pk(spec, cost, 30, sol))
        assert res.status == "converged"
        assert w12_distance(res.trajectory, sol) < 1e-6

    def test_infeasible_start(self):
        # |u| >= 2 keeps x0 - u outside the unit disk
        spec = ProcessSpec(disk_set(1.0), lambda x, a: np.zeros(2), lambda x, a: np.zeros((2, 2)),
                           lambda x, a: np.zeros((2, 1)), 1, 1.0, [0.0, 0.0], 2.0, 3.0)
        cost = CostSpec(lambda x: 0.0, lambda *args: 0.0)
        res = solve(build_pk(spec, cost, 4))
        assert res.status == "infeasible" and math.isnan(res.objective)

    def test_fd_gradient_mode_agrees(self, car):
        spec, cost, _ = car
        res = solve(build_pk(spec, cost, 10), options=SolverOptions(gradient="fd"))
        assert res.objective == pytest.approx(oracles.car_objective(1.0), rel=1e-6)


class TestConvergenceStudy:
    def test_rows(self, car):
        spec, cost, sol = car
        rows = convergence_study(spec, cost, [10, 20], sol)
        assert [r["k"] for r in rows] == [10, 20]
        assert all(r["status"] == "converged" and r["error"] == "" for r in rows)
        assert all(r["distance"] < 1e-6 and r["objective_gap"] < 1e-8 for r in rows)

    def test_threaded_rows_equal_serial(self, car):
        spec, cost, sol = car
        serial = convergence_study(spec, cost, [10, 12, 14], sol)
        threaded = convergence_study(spec, cost, [10, 12, 14], sol, workers=3)
        assert [r["objective"] for r in serial] == [r["objective"] for r in threaded]

    def test_errors_are_recorded(self, car):
        spec, cost, sol = car
        rows = convergence_study(spec, cost, [1, 10], sol)
        assert rows[0]["status"] == "error" and "InvalidArgument" in rows[0]["error"]

    def test_k_list_increasing(self, car):
        spec, cost, sol = car
        with pytest.raises(InvalidArgument):
            convergence_study(spec, cost, [20, 10], sol)
