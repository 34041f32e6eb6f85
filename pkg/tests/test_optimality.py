"""Dual reconstruction, discrete and continuous residual checks, nontriviality."""

from dataclasses import replace

import numpy as np
import pytest

import oracles
from sweepctl import (
    DualSystem,
    InvalidArgument,
    ReconstructionFailed,
    build_pk,
    builtin_car,
    builtin_crowd,
    check_continuous,
    check_discrete,
    integrate,
    lift_to_continuous,
    nontriviality,
    reconstruct_duals,
)
from sweepctl.optimality import NONTRIVIALITY_MODES, subgradients


def certify(model, k):
    spec, cost, sol = model
    traj = sol.sample(k)
    prob = build_pk(spec, cost, k)
    return spec, cost, sol, traj, prob, reconstruct_duals(traj, prob)


@pytest.fixture(scope="module")
def car():
    return certify(builtin_car("standard"), 100)


@pytest.fixture(scope="module")
def contact():
    return certify(builtin_crowd("contact"), 120)


@pytest.fixture(scope="module")
def free():
    return certify(builtin_crowd("free"), 120)


class TestCarDuals:
    def test_adjoint_is_constant_and_fixed_by_the_terminal_state(self, car):
        _, _, sol, traj, _, duals = car
        np.testing.assert_allclose(duals.px[:, 0], -sol.params["x_T"], rtol=1e-10)
        assert not duals.eta.any() and not duals.gamma.any()

    def test_control_relation(self, car):
        _, _, sol, traj, _, duals = car
        np.testing.assert_allclose(duals.lam * traj.a[:-1, 0], -9.0 * duals.px[1:, 0], rtol=1e-10)
        np.testing.assert_allclose(duals.lam * sol.params["theta"], 9.0 * sol.params["x_T"], rtol=1e-12)

    def test_report_passes(self, car):
        assert car[-1].report.overall == "pass"

    def test_hand_computed_nontriviality(self, car):
        spec, _, _, traj, _, duals = car
        lifted = lift_to_continuous(duals, traj, spec)
        n = spec.n
        expected = (lifted.lam + np.linalg.norm(lifted.q[0, n:2 * n]) + np.linalg.norm(lifted.p[-1])
                    + np.abs(lifted.xi1).sum() + np.abs(lifted.xi2).sum())
        assert nontriviality(lifted, "general") == pytest.approx(expected)
        assert nontriviality(lifted, "general") == pytest.approx(1.0 + abs(traj.x[-1, 0]), rel=1e-9)

    def test_scaling_with_lambda(self, car):
        _, _, _, traj, prob, duals = car
        half = reconstruct_duals(traj, prob, 0.5)
        np.testing.assert_allclose(half.p, 0.5 * duals.p, atol=1e-12)


class TestCrowdDuals:
    def test_contact_terminal_values(self, contact):
        spec, _, sol, traj, _, duals = contact
        ref = oracles.crowd_contact()
        assert duals.eta[-1, 0] == pytest.approx(3.0, rel=1e-9)
        mid = 0.5 * (traj.x[-1, :2] + traj.x[-1, 2:])
        np.testing.assert_allclose(duals.px[-1, :2], -mid, rtol=1e-9)
        np.testing.assert_allclose(duals.eta[:-1, 0], ref["eta"], rtol=1e-9)

    def test_contact_implication(self, contact):
        # eta > 0 forces the two adjoint blocks to agree along the contact normal
        _, _, _, traj, _, duals = contact
        for j in range(traj.k):
            q1, q2 = duals.px[j + 1, :2], duals.px[j + 1, 2:]
            diff = traj.x[j, 2:] - traj.x[j, :2]
            assert abs((q2 - q1) @ diff) <= 1e-9 * (1 + np.linalg.norm(q1))

    def test_contact_continuous_terminal_multiplier(self, contact):
        spec, cost, sol, traj, _, duals = contact
        lifted = lift_to_continuous(duals, traj, spec)
        assert lifted.eta[-1, 0] == pytest.approx(4.5 * sol.params["a"][1], rel=1e-9)
        rep = check_continuous(traj, lifted, spec, cost)
        assert rep["transversality_x"].verdict == "pass"
        assert rep["transversality_u"].verdict == "pass"

    def test_free_phase_has_no_gamma_atoms(self, free):
        spec, cost, _, traj, _, duals = free
        lifted = lift_to_continuous(duals, traj, spec)
        assert not lifted.gamma_atoms[:-1].any()
        assert check_continuous(traj, lifted, spec, cost)["nonatomicity_gamma"].verdict == "pass"

    def test_free_case_needs_a_terminal_atom(self, free):
        spec, cost, _, traj, _, duals = free
        rep = check_continuous(traj, lift_to_continuous(duals, traj, spec), spec, cost)
        assert rep.overall == "pass"
        strict = lift_to_continuous(duals, traj, spec, terminal="transversality")
        rep = check_continuous(traj, strict, spec, cost)
        assert rep["eta_implication"].verdict == "fail"
        assert rep["eta_implication"].residual == pytest.approx(0.4163, abs=1e-3)


class TestResiduals:
    def test_inactive_eta_perturbation(self, car):
        _, _, _, traj, prob, duals = car
        bumped = replace(duals, eta=duals.eta.copy())
        bumped.eta[10, 0] += 0.1
        rep = check_discrete(traj, bumped, prob)
        assert rep["complementarity_eta"].residual == pytest.approx(0.1)
        assert rep["complementarity_eta"].verdict == "fail"
        assert rep.overall == "fail"

    def test_negative_eta_is_a_sign_failure(self, contact):
        _, _, _, traj, prob, duals = contact
        bad = replace(duals, eta=-duals.eta)
        assert check_discrete(traj, bad, prob)["eta_sign"].residual == pytest.approx(oracles.crowd_contact()["eta"])

    def test_adjoint_perturbation_is_detected(self, car):
        _, _, _, traj, prob, duals = car
        bad = replace(duals, p=duals.p.copy())
        bad.p[40, 0] += 1.0
        rep = check_discrete(traj, bad, prob)
        assert rep["adjoint_x"].verdict == "fail"

    def test_report_formats(self, car):
        rep = car[-1].report
        lines = rep.to_text().splitlines()
        assert lines[-1] == "overall pass"
        name, res, tol, verdict = lines[0].split()
        assert verdict == "pass" and float(res) <= float(tol)
        assert rep.to_csv().splitlines()[0] == "name,residual,tolerance,verdict"
        assert rep.to_csv().splitlines()[-1].startswith("nontriviality,")

    def test_reports_are_deterministic(self, car):
        _, _, _, traj, prob, _ = car
        a = reconstruct_duals(traj, prob).report
        b = reconstruct_duals(traj, prob).report
        assert a.to_text() == b.to_text() and a.to_csv() == b.to_csv()

    def test_missing_condition(self, car):
        with pytest.raises(KeyError):
            car[-1].report["nope"]

    def test_unlifted_duals_rejected(self, car):
        spec, cost, _, traj, _, duals = car
        with pytest.raises(InvalidArgument):
            check_continuous(traj, duals, spec, cost)

    def test_bad_terminal_convention(self, car):
        spec, _, _, traj, _, duals = car
        with pytest.raises(InvalidArgument):
            lift_to_continuous(duals, traj, spec, terminal="left")

    def test_non_optimal_candidate(self):
        spec, cost, sol = builtin_car()
        k = 40
        u, a = sol.controls(k)
        traj = integrate(spec, u, a * 0.9, k)
        prob = build_pk(spec, cost, k)
        with pytest.raises(ReconstructionFailed) as info:
            reconstruct_duals(traj, prob)
        assert info.value.residual_profile is not None


class TestSignDiscipline:
    @pytest.mark.parametrize("name", ["car", "contact", "free"])
    def test_signs(self, name, request):
        duals = request.getfixturevalue(name)[-1]
        assert np.all(duals.eta >= -1e-10)
        assert np.all(duals.xi1 >= -1e-10) and np.all(duals.xi2 <= 1e-10)

    @pytest.mark.parametrize("name", ["car", "contact", "free"])
    def test_discrete_row_sum_identity(self, name, request):
        spec, cost, _, traj, prob, duals = request.getfixturevalue(name)
        n, h, k = spec.n, traj.h, traj.k
        E = spec.control_coupling if spec.control_coupling is not None else np.zeros((0, n))
        W, V = subgradients(cost, traj, n, spec.d)
        dp = np.diff(duals.p, axis=0) / h
        xi = duals.xi1 + duals.xi2
        for j in range(k):
            Y = duals.px[j + 1] - duals.lam * (V[j, :n] + duals.theta[j, :n] / h)
            lhs = dp[j, :n] + dp[j, n:2 * n]
            rhs = (duals.lam * (W[j, :n] + W[j, n:2 * n]) + spec.fx(traj.x[j], traj.a[j]).T @ Y
                   + 2.0 / h * xi[j] * traj.u[j] + E.T @ duals.zeta[j] / h)
            assert np.max(np.abs(lhs - rhs)) <= 1e-8 * (1 + np.abs(rhs).max())


class TestNontriviality:
    def test_zero_duals(self):
        duals = DualSystem.zeros(5, 2, 1, 1)
        assert all(nontriviality(duals, mode) == 0.0 for mode in NONTRIVIALITY_MODES)

    def test_lambda_alone(self):
        duals = DualSystem.zeros(5, 2, 1, 1, lam=1.0)
        assert all(nontriviality(duals, mode) == 1.0 for mode in NONTRIVIALITY_MODES)

    def test_enhanced_variants_drop_terms(self):
        duals = DualSystem.zeros(3, 1, 1, 1)
        duals.p[0, 1] = 2.0
        duals.p[-1, 0] = 5.0
        assert nontriviality(duals) == 7.0
        assert nontriviality(duals, "enhanced-initial") == 5.0
        assert nontriviality(duals, "enhanced-terminal") == 2.0

    def test_unknown_mode(self):
        with pytest.raises(InvalidArgument):
            nontriviality(DualSystem.zeros(2, 1, 1, 1), "strong")

    def test_zero_report_fails_nontriviality(self, car):
        _, _, _, traj, prob, duals = car
        zero = DualSystem.zeros(traj.k, 1, 1, 1)
        rep = check_discrete(traj, zero, prob)
        assert rep.nontriviality_value == 0.0 and rep.overall == "fail"
