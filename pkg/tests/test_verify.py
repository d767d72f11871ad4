"""Enumeration oracle checks: identities, bounds, path probabilities."""

import numpy as np
import pytest

from recgrad.problems import make_logistic, make_quadratic, make_sigmoid_nonconvex
from recgrad.sampling import RngStream
from recgrad.verify import (
    check_batch_variance_identity,
    check_lemma2_identity,
    check_lemma3_bound,
    enumerate_inner_paths,
    lemma2_step_residuals,
    run_suite,
)


def tiny(kind, n, d, seed=7):
    X = RngStream(seed, "design", kind).normal_array(n * d).reshape(n, d)
    y = np.where(RngStream(seed, "signs", kind).double_array(n) < 0.5, -1.0, 1.0)
    return make_logistic(X, y, lam=0.1) if kind == "logistic" else make_sigmoid_nonconvex(X, y)


def point(d, seed, tag):
    return RngStream(seed, "pt", tag).normal_array(d)


class TestBatchVarianceIdentity:
    def test_identical_differences_give_zero(self):
        # a quadratic without perturbation has identical gradient differences
        q = make_quadratic(np.linspace(1, 2, 3), np.zeros(3), 4, perturb_scale=0.0)
        rep = check_batch_variance_identity(q, point(3, 0, "a"), point(3, 0, "b"), b=2)
        assert rep.lhs == pytest.approx(0.0, abs=1e-13)
        assert rep.rhs == pytest.approx(0.0, abs=1e-13)

    def test_full_batch_gives_zero(self):
        p = tiny("sigmoid", 4, 3)
        rep = check_batch_variance_identity(p, point(3, 1, "a"), point(3, 1, "b"), b=4)
        assert rep.lhs == pytest.approx(0.0, abs=1e-16)
        assert rep.rhs == 0.0

    @pytest.mark.parametrize("kind", ["logistic", "sigmoid"])
    @pytest.mark.parametrize("n,b", [(4, 1), (4, 2), (4, 3), (6, 2), (6, 3)])
    def test_closed_form_matches_enumeration(self, kind, n, b):
        p = tiny(kind, n, 3)
        rep = check_batch_variance_identity(p, point(3, n, "a"), point(3, n, "b"), b)
        assert rep.abs_err < 1e-13

    def test_refuses_combinatorial_blowup(self):
        p = tiny("sigmoid", 50, 2)
        with pytest.raises(ValueError, match="enumerate"):
            check_batch_variance_identity(p, point(2, 0, "a"), point(2, 0, "b"), b=25)

    def test_requires_two_components(self):
        q = make_quadratic([1.0], [0.0], 1)
        with pytest.raises(ValueError):
            check_batch_variance_identity(q, np.zeros(1), np.ones(1), b=1)


class TestLemma2Identity:
    def test_m1_both_sides_zero(self):
        p = tiny("sigmoid", 3, 3)
        rep = check_lemma2_identity(p, point(3, 2, "w0"), eta=0.2, b=1, m=1)
        assert rep.lhs == 0.0 and rep.rhs == 0.0

    @pytest.mark.parametrize("kind", ["logistic", "sigmoid"])
    @pytest.mark.parametrize("m", [2, 3])
    def test_exact_identity_small_paths(self, kind, m):
        p = tiny(kind, 3, 3)
        rep = check_lemma2_identity(p, point(3, 3, "w0"), eta=0.2, b=1, m=m)
        assert rep.abs_err < 1e-12

    def test_path_probabilities_sum_to_one(self):
        p = tiny("sigmoid", 3, 3)
        for m in (2, 3, 4):
            exp = enumerate_inner_paths(p, point(3, 4, "w0"), eta=0.1, b=1, m=m)
            assert abs(exp.prob_total - 1.0) < 1e-14

    def test_per_step_decomposition_averages_to_zero(self):
        for kind in ("logistic", "sigmoid"):
            p = tiny(kind, 3, 3)
            residuals = lemma2_step_residuals(p, point(3, 5, "w0"), eta=0.2, b=1, m=3)
            assert all(abs(r) < 1e-12 for r in residuals)

    def test_refuses_path_blowup(self):
        p = tiny("sigmoid", 10, 2)
        with pytest.raises(ValueError, match="enumerate"):
            check_lemma2_identity(p, point(2, 0, "w0"), eta=0.1, b=2, m=6)


class TestLemma3Bound:
    def quad(self):
        return make_quadratic(np.array([1.0, 2.0, 4.0]), np.zeros(3), 3, perturb_scale=1.0, seed=5)

    def test_full_batch_zero_vs_zero(self):
        rep = check_lemma3_bound(self.quad(), point(3, 6, "w0"), eta=0.1, b=3, m=3)
        assert rep.lhs == 0.0 and rep.rhs == 0.0

    def test_m1_trivial(self):
        rep = check_lemma3_bound(self.quad(), point(3, 6, "w0"), eta=0.1, b=1, m=1)
        assert rep.lhs == 0.0 and rep.rhs == 0.0

    def test_bound_holds_with_exact_constant(self):
        rep = check_lemma3_bound(self.quad(), point(3, 7, "w0"), eta=0.1, b=1, m=3)
        assert rep.lhs <= rep.rhs * (1.0 + 1e-10)

    def test_bound_holds_on_stochastic_problems(self):
        for kind in ("logistic", "sigmoid"):
            p = tiny(kind, 3, 3)
            rep = check_lemma3_bound(p, point(3, 8, "w0"), eta=0.1, b=1, m=3)
            assert rep.lhs <= rep.rhs * (1.0 + 1e-10)
            assert rep.lhs > 0.0  # these problems genuinely have estimator variance

    def test_requires_known_L(self):
        X = np.ones((3, 2))
        y = np.array([1.0, -1.0, 1.0])
        p = make_sigmoid_nonconvex(X, y)
        object.__setattr__(p, "known_L", None)
        with pytest.raises(ValueError, match="smoothness"):
            check_lemma3_bound(p, np.zeros(2), eta=0.1, b=1, m=2)


class TestSuites:
    @pytest.mark.parametrize("name", ["unbiasedness", "variance-identity", "lemma2", "lemma3"])
    def test_fast_suites_all_pass(self, name):
        results = run_suite(name)
        assert results
        assert all(r.passed for r in results), [r.name for r in results if not r.passed]

    def test_unknown_suite_rejected(self):
        with pytest.raises(ValueError):
            run_suite("nonsense")

    def test_results_serialize_to_json(self):
        import json

        for r in run_suite("lemma2"):
            parsed = json.loads(r.to_json())
            assert parsed["suite"] == "lemma2"
            assert isinstance(parsed["pass"], bool)
