import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_histogram
from invariot.core import InvalidInputError
from invariot.gromov import (
    GwInstance,
    cosine_similarity,
    equivalence_suite,
    frobenius_objective,
    frobenius_objective_naive,
    gw_constant_terms,
    gw_cross_term,
    gw_cross_term_naive,
    gw_frobenius_equivalence,
    gw_objective,
    gw_objective_naive,
)
from invariot.sinkhorn import SinkhornSettings, sinkhorn_solve


def unit(rng, d, n):
    Z = rng.standard_normal((d, n))
    return Z / np.linalg.norm(Z, axis=0)


def sinkhorn_coupling(rng, n, m, lam=0.2):
    p, q = random_histogram(rng, n), random_histogram(rng, m)
    return sinkhorn_solve(rng.random((n, m)), p, q, SinkhornSettings(lam=lam))


class TestGwInstance:
    def test_from_points(self, rng):
        X, Y = unit(rng, 3, 4), unit(rng, 3, 5)
        inst = GwInstance.from_points(X, Y)
        np.testing.assert_allclose(np.diag(inst.Cx), 1.0)
        np.testing.assert_allclose(inst.Cy, Y.T @ Y)

    def test_cosine_similarity_requires_unit(self):
        with pytest.raises(InvalidInputError):
            cosine_similarity(np.array([[2.0, 0.0], [0.0, 1.0]]))

    @pytest.mark.parametrize("C", [np.array([[1.0, 0.5], [0.4, 1.0]]), np.array([[1.0, 1.5], [1.5, 1.0]]),
                                   np.array([[0.9, 0.0], [0.0, 1.0]])])
    def test_invalid_similarity(self, C):
        with pytest.raises(InvalidInputError):
            GwInstance(C, np.eye(1), np.full(2, 0.5), [1.0])

    def test_histogram_length(self):
        with pytest.raises(InvalidInputError):
            GwInstance(np.eye(2), np.eye(2), np.full(3, 1 / 3), np.full(2, 0.5))

    def test_shape_mismatch(self, rng):
        inst = GwInstance.from_points(unit(rng, 2, 3), unit(rng, 2, 3))
        with pytest.raises(InvalidInputError):
            gw_objective(inst, np.ones((3, 4)) / 12)


class TestGwObjective:
    def test_matching_similarities(self, rng):
        X = unit(rng, 3, 5)
        inst = GwInstance.from_points(X, X)
        G = np.eye(5) / 5
        assert gw_objective(inst, G) == pytest.approx(0.0, abs=1e-14)
        assert gw_objective_naive(inst, G) == pytest.approx(0.0, abs=1e-14)
        # the cross term then cancels the constants exactly
        assert gw_cross_term(inst, G) == pytest.approx(gw_constant_terms(inst, G), abs=1e-14)

    def test_single_point(self):
        inst = GwInstance(np.ones((1, 1)), np.ones((1, 1)), [1.0], [1.0])
        assert gw_objective(inst, np.ones((1, 1))) == 0.0

    def test_factored_vs_quadruple(self, rng):
        inst = GwInstance.from_points(unit(rng, 3, 4), unit(rng, 3, 5))
        G = sinkhorn_coupling(rng, 4, 5)
        inst = GwInstance(inst.Cx, inst.Cy, G.p, G.q)
        assert gw_objective(inst, G) == pytest.approx(gw_objective_naive(inst, G), abs=1e-10)

    def test_naive_guard(self, rng):
        inst = GwInstance.from_points(unit(rng, 2, 21), unit(rng, 2, 20))
        with pytest.raises(InvalidInputError):
            gw_objective_naive(inst, np.full((21, 20), 1 / 420))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5), n=st.integers(1, 8), m=st.integers(1, 8))
    def test_nonnegative_and_constant_identity(self, seed, d, n, m):
        rng = np.random.default_rng(seed)
        X, Y = unit(rng, d, n), unit(rng, d, m)
        G = sinkhorn_coupling(rng, n, m)
        inst = GwInstance.from_points(X, Y, G.p, G.q)
        obj = gw_objective(inst, G)
        assert obj >= 0
        cross = gw_cross_term(inst, G)
        naive_half = gw_objective_naive(inst, G)
        assert naive_half == pytest.approx(gw_constant_terms(inst, G, half=True) - cross, abs=1e-10)
        # loss |a - b|^2 without the 1/2: constants double and the cross term counts twice
        assert 2 * naive_half == pytest.approx(gw_constant_terms(inst, G, half=False) - 2 * cross, abs=1e-10)
        assert gw_cross_term_naive(inst, G) == pytest.approx(cross, abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6))
    def test_argmax_transfer(self, seed, n):
        rng = np.random.default_rng(seed)
        X, Y = unit(rng, 3, n), unit(rng, 3, n)
        inst = GwInstance.from_points(X, Y)
        cands = [np.eye(n)[rng.permutation(n)] / n for _ in range(6)]
        # convex mixtures of permutations keep the marginals exactly uniform
        for _ in range(6):
            w = rng.dirichlet(np.ones(3))
            cands.append(sum(wi * np.eye(n)[rng.permutation(n)] / n for wi in w))
        gw = [gw_objective(inst, G) for G in cands]
        fr = [frobenius_objective(X, Y, G) for G in cands]
        # the two objectives differ by a shared constant and a sign
        np.testing.assert_allclose(np.array(gw) + np.array(fr), gw[0] + fr[0], atol=1e-10)
        assert np.argmin(gw) == np.argmax(fr) or np.isclose(fr[np.argmin(gw)], max(fr), atol=1e-12)


class TestFrobenius:
    def test_identity_columns(self):
        d = 4
        assert frobenius_objective(np.eye(d), np.eye(d), np.eye(d) / d) == pytest.approx(1 / d)

    def test_product_coupling(self, rng):
        X, Y = unit(rng, 3, 4), unit(rng, 3, 5)
        p, q = random_histogram(rng, 4), random_histogram(rng, 5)
        expected = np.linalg.norm(X @ p) ** 2 * np.linalg.norm(Y @ q) ** 2
        assert frobenius_objective(X, Y, np.outer(p, q)) == pytest.approx(expected, rel=1e-12)

    def test_naive(self, rng):
        X, Y = unit(rng, 3, 6), unit(rng, 3, 7)
        G = sinkhorn_coupling(rng, 6, 7)
        assert frobenius_objective(X, Y, G) == pytest.approx(frobenius_objective_naive(X, Y, G), abs=1e-10)

    def test_non_unit_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            frobenius_objective(2 * unit(rng, 3, 2), unit(rng, 3, 2), np.eye(2) / 2)


class TestEquivalence:
    def test_product_coupling(self, rng):
        X, Y = unit(rng, 3, 6), unit(rng, 3, 8)
        p, q = np.full(6, 1 / 6), np.full(8, 1 / 8)
        rep = gw_frobenius_equivalence(X, Y, np.outer(p, q))
        assert rep.abs_diff <= 1e-10
        assert rep.oracle_cross_term == pytest.approx(rep.gw_cross_term, abs=1e-10)
        assert rep.holds(1e-10)

    def test_permutation_self(self, rng):
        X = unit(rng, 3, 5)
        G = np.eye(5)[rng.permutation(5)] / 5
        rep = gw_frobenius_equivalence(X, X, G)
        assert rep.abs_diff <= 1e-12
        assert rep.frobenius_value == pytest.approx(np.linalg.norm(X @ G @ X.T) ** 2)

    def test_report_fields(self, rng):
        X, Y = unit(rng, 2, 25), unit(rng, 2, 20)
        rep = gw_frobenius_equivalence(X, Y, np.full((25, 20), 1 / 500))
        assert rep.oracle_cross_term is None
        assert set(rep.as_dict()) >= {"gw_cross_term", "frobenius_value", "abs_diff"}
        assert rep.constant_full == pytest.approx(2 * rep.constant_half)

    def test_suite(self):
        rep = equivalence_suite(trials=20, seed=1)
        assert rep.passed and rep.oracle_checked > 0
        assert rep.max_abs_diff <= 1e-9
