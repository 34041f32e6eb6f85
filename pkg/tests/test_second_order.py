import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from sweepctl import (
    DomainViolation,
    InvalidArgument,
    NotInCone,
    OrthantCoderivativeQuery,
    PreconditionViolation,
    affine_set,
    builtin_crowd,
    coderivative_F,
    coderivative_normal_cone,
    coderivative_orthant,
    disk_set,
    separation_set,
)
from sweepctl.second_order import FREE, NONNEG, ZERO, AffinePiece, licq_holds, mfcq_holds, orthant_tags

kinds = st.sampled_from(["inactive", "degenerate", "strict"])
signs = st.sampled_from([-1.0, 0.0, 1.0])


class TestOrthant:
    @given(st.lists(st.tuples(kinds, signs, st.floats(0.1, 5.0), st.floats(0.1, 5.0)), min_size=1, max_size=5))
    @settings(max_examples=300)
    def test_matches_case_analysis(self, rows):
        x = np.array([-mag if k == "inactive" else 0.0 for k, _, mag, _ in rows])
        v = np.array([mag if k == "strict" else 0.0 for k, _, mag, _ in rows])
        y = np.array([s * my for _, s, _, my in rows])
        want = oracles.orthant_oracle(x, v, y)
        got = coderivative_orthant(OrthantCoderivativeQuery(x, v, y))
        if want is None:
            assert got.empty
        else:
            assert got.gamma_constraints == want

    def test_partition_indices(self):
        q = OrthantCoderivativeQuery([-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0], [3.0, 1.0, -1.0, 0.0])
        val = coderivative_orthant(q)
        assert val.partition.i1 == (0, 2)
        assert val.partition.i2 == (1,)
        assert val.partition.free == (3,)

    @pytest.mark.parametrize("gamma,inside", [
        ([0.0, 1.0, 0.0, -7.0], True),
        ([0.0, -1.0, 0.0, 0.0], False),
        ([0.1, 1.0, 0.0, 0.0], False),
    ])
    def test_membership(self, gamma, inside):
        q = OrthantCoderivativeQuery([-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0], [3.0, 1.0, -1.0, 0.0])
        assert coderivative_orthant(q).contains(gamma) is inside

    def test_empty_contains_nothing(self):
        val = coderivative_orthant(OrthantCoderivativeQuery([0.0], [1.0], [1.0]))
        assert val.empty and not val.contains([0.0])

    @pytest.mark.parametrize("x,v,y", [
        ([1.0], [0.0], [0.0]),
        ([0.0], [-1.0], [0.0]),
        ([-1.0], [1.0], [0.0]),
        ([0.0, 0.0], [0.0], [0.0]),
        ([math.nan], [0.0], [0.0]),
    ])
    def test_query_validation(self, x, v, y):
        with pytest.raises(InvalidArgument):
            OrthantCoderivativeQuery(x, v, y)

    def test_tolerance_treats_tiny_values_as_zero(self):
        assert orthant_tags([-1e-14], [0.0], [1.0], tol=1e-12) == (NONNEG,)
        assert orthant_tags([-1e-14], [0.0], [1.0]) == (ZERO,)


class TestQualifications:
    @pytest.mark.parametrize("G,mfcq,licq", [
        (np.zeros((0, 2)), True, True),
        (np.array([[1.0, 0.0], [0.0, 1.0]]), True, True),
        (np.array([[1.0, 0.0], [2.0, 0.0]]), True, False),
        (np.array([[1.0, 0.0], [-1.0, 0.0]]), False, False),
        (np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]), False, False),
    ])
    def test_cases(self, G, mfcq, licq):
        assert mfcq_holds(G) is mfcq
        assert licq_holds(G) is licq


class TestNormalConeCoderivative:
    def test_interior_point_gives_zero(self):
        val = coderivative_normal_cone(disk_set(1.0), [0.1, 0.2], [0.0, 0.0], [3.0, -1.0])
        assert val.exact and len(val.pieces) == 1
        assert val.contains([0.0, 0.0]) and not val.contains([1e-3, 0.0])

    def test_boundary_tangent_direction(self):
        # v = t e with t = 2 lam; the value is the line -lam hess g u + R grad g
        val = coderivative_normal_cone(disk_set(1.0), [1.0, 0.0], [2.0, 0.0], [0.0, 1.0])
        assert val.contains([0.0, 2.0]) and val.contains([5.0, 2.0])
        assert val.distance([0.0, 1.0]) == pytest.approx(1.0)

    def test_boundary_normal_direction_is_empty(self):
        val = coderivative_normal_cone(disk_set(1.0), [1.0, 0.0], [2.0, 0.0], [1.0, 0.0])
        assert val.empty and val.domain_violation

    def test_degenerate_boundary_has_sign_tag(self):
        val = coderivative_normal_cone(disk_set(1.0), [1.0, 0.0], [0.0, 0.0], [1.0, 0.0])
        assert val.pieces[0].tags == (NONNEG,)
        val = coderivative_normal_cone(disk_set(1.0), [1.0, 0.0], [0.0, 0.0], [-1.0, 0.0])
        assert val.pieces[0].tags == (ZERO,)

    def test_polyhedral_corner_upper_estimate(self):
        s = affine_set([[-1.0, 0.0], [0.0, -1.0], [-1.0, -1.0]], [0.0, 0.0, 0.0])
        val = coderivative_normal_cone(s, [0.0, 0.0], [1.0, 1.0], [0.0, 0.0])
        assert not val.exact
        assert len(val.pieces) >= 2

    def test_outside_point(self):
        with pytest.raises(PreconditionViolation):
            coderivative_normal_cone(disk_set(1.0), [2.0, 0.0], [0.0, 0.0], [0.0, 0.0])

    def test_non_normal_vector(self):
        with pytest.raises(InvalidArgument):
            coderivative_normal_cone(disk_set(1.0), [1.0, 0.0], [0.0, 1.0], [0.0, 0.0])

    def test_mfcq_failure(self):
        s = affine_set([[-1.0], [1.0]], [0.0, 0.0])
        with pytest.raises(PreconditionViolation, match="MFCQ"):
            coderivative_normal_cone(s, [0.0], [0.0], [1.0])

    def test_agrees_with_graph_sampling(self):
        rng = np.random.default_rng(11)
        center = np.array([0.0, 1.0])
        for _ in range(5):
            phi, t = rng.uniform(0, 2 * math.pi), rng.uniform(0.2, 2.0)
            e = np.array([math.cos(phi), math.sin(phi)])
            u = rng.normal() * np.array([-e[1], e[0]])
            T = oracles.disk_graph_tangent(center, 1.5, phi, t, rng)
            w0, _ = oracles.coderivative_from_tangent(T, u)
            val = coderivative_normal_cone(disk_set(1.5, center), center + 1.5 * e, t * e, u)
            assert val.distance(w0) < 1e-6


class TestAffinePiece:
    def test_fit_respects_tags(self):
        piece = AffinePiece(np.zeros(2), np.eye(2), (NONNEG, ZERO), np.zeros(2))
        gamma, res = piece.fit([-1.0, 0.0])
        assert gamma[0] == 0.0 and res == pytest.approx(1.0)
        assert piece.contains([2.0, 0.0])

    def test_element_rejects_bad_coefficients(self):
        piece = AffinePiece(np.zeros(2), np.eye(2), (NONNEG, FREE), np.zeros(2))
        with pytest.raises(InvalidArgument):
            piece.element([-1.0, 0.0])
        np.testing.assert_array_equal(piece.element([1.0, -3.0]), [1.0, -3.0])


def _contact_point():
    spec, _, sol = builtin_crowd("contact")
    x, u, a = sol.state(1.0)
    return spec, x, u, a, -sol.x_dot(1.0)


class TestFCoderivative:
    @pytest.fixture
    def contact(self):
        return _contact_point()

    def test_tangent_direction(self, contact):
        spec, x, u, a, w = contact
        y = np.array([1.0, 1.0, 1.0, 1.0])
        cod = coderivative_F(spec, x, u, a, w, y)
        assert cod.tags == (FREE,)
        assert cod.multipliers[0] > 0
        xs, us, as_ = cod.element([0.7])
        np.testing.assert_allclose(xs + us, spec.fx(x, a).T @ y, atol=1e-14)
        np.testing.assert_allclose(as_, spec.fa(x, a).T @ y)
        assert cod.contains(xs, us, as_)
        assert not cod.contains(xs + 1.0, us, as_)

    def test_normal_direction_is_a_domain_violation(self, contact):
        spec, x, u, a, w = contact
        G = spec.set.gradients(x - u)[0]
        with pytest.raises(DomainViolation):
            coderivative_F(spec, x, u, a, w, G)

    def test_velocity_outside_F(self, contact):
        spec, x, u, a, w = contact
        with pytest.raises(NotInCone):
            coderivative_F(spec, x, u, a, w + np.array([0.0, 1.0, 0.0, 0.0]), np.ones(4))

    def test_infeasible_base_point(self, contact):
        spec, x, u, a, w = contact
        with pytest.raises(PreconditionViolation):
            coderivative_F(spec, np.zeros(4), np.zeros(4), a, w, np.ones(4))

    @given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-5, 5))
    @settings(max_examples=100, deadline=None)
    def test_row_sum_identity(self, yv, g):
        spec, x, u, a, w = _contact_point()
        y = np.array(yv)
        G = spec.set.gradients(x - u)[0]
        y -= (G @ y) / (G @ G) * G
        cod = coderivative_F(spec, x, u, a, w, y)
        xs, us, _ = cod.element([g])
        assert np.max(np.abs(xs + us - spec.fx(x, a).T @ y)) <= 1e-12 * (1 + np.abs(xs).max())
