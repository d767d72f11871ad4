"""Built-in problems: closed forms, certificates, gradient checks."""

import numpy as np
import pytest

from recgrad.problems import (
    full_gradient,
    make_logistic,
    make_quadratic,
    make_sigmoid_nonconvex,
    mean_gradient,
)
from recgrad.sampling import RngStream


def seeded_matrix(n, d, seed, tag="X"):
    return RngStream(seed, "test-design", tag).normal_array(n * d).reshape(n, d)


def seeded_signs(n, seed):
    return np.where(RngStream(seed, "test-signs").double_array(n) < 0.5, -1.0, 1.0)


def central_difference(loss, w, h=1e-6):
    fd = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        fd[j] = (loss(w + e) - loss(w - e)) / (2.0 * h)
    return fd


class TestQuadratic:
    def test_identity_quadratic(self):
        q = make_quadratic([1.0, 1.0], [0.0, 0.0], 4, perturb_scale=0.0)
        assert q.known_tau == 0.5
        assert q.known_opt_value == 0.0
        w = np.array([3.0, -1.0])
        assert np.array_equal(full_gradient(q, w), w)
        assert q.loss(w) == pytest.approx(0.5 * 10.0)

    def test_constants_from_spectrum(self):
        q = make_quadratic([2.0, 8.0], [0.0, 0.0], 3)
        assert q.known_L == 8.0
        assert q.known_tau == 0.25

    def test_closed_form_minimizer_against_newton_oracle(self):
        q = make_quadratic([1.0, 4.0], [1.0, 0.0], 2)
        assert q.known_opt_value == -0.5
        # independent oracle: one Newton step from zero with a finite-difference Hessian
        w = np.zeros(2)
        g = full_gradient(q, w)
        h = 1e-5
        hess = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            hess[:, j] = (full_gradient(q, w + e) - full_gradient(q, w - e)) / (2.0 * h)
        w_star = w - np.linalg.solve(hess, g)
        assert w_star == pytest.approx([1.0, 0.0], abs=1e-8)
        assert q.loss(w_star) == pytest.approx(q.known_opt_value, abs=1e-9)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            make_quadratic([1.0, -1.0], [0.0, 0.0], 2)
        with pytest.raises(ValueError):
            make_quadratic([1.0], [0.0], 0)
        with pytest.raises(ValueError):
            make_quadratic([1.0, 2.0], [0.0], 2)

    def test_perturbation_is_zero_mean(self):
        q = make_quadratic(np.linspace(1, 2, 5), np.zeros(5), 7, perturb_scale=1.0, seed=3)
        w = RngStream(0, "pt").normal_array(5)
        base = np.linspace(1, 2, 5) * w
        assert full_gradient(q, w) == pytest.approx(base, abs=1e-14)
        # individual components actually differ
        g0 = q.component_gradient(0, w)
        g1 = q.component_gradient(1, w)
        assert np.max(np.abs(g0 - g1)) > 1e-3

    def test_smoothness_certificate(self):
        q = make_quadratic(np.linspace(0.5, 3.0, 6), np.zeros(6), 10, perturb_scale=1.0, seed=1)
        rng = RngStream(5, "lip")
        for _ in range(100):
            w = rng.normal_array(6)
            w2 = rng.normal_array(6)
            for i in range(q.n):
                num = np.linalg.norm(q.component_gradient(i, w) - q.component_gradient(i, w2))
                den = np.linalg.norm(w - w2)
                assert num <= q.known_L * den * (1.0 + 1e-12)

    def test_gradient_domination_certificate(self):
        q = make_quadratic(np.linspace(1.0, 2.0, 4), np.array([0.3, 0.0, -0.2, 1.0]), 8, seed=2)
        rng = RngStream(6, "gd-cert")
        for _ in range(100):
            w = 3.0 * rng.normal_array(4)
            g = full_gradient(q, w)
            gap = q.loss(w) - q.known_opt_value
            assert gap <= q.known_tau * float(np.dot(g, g)) * (1.0 + 1e-12)


class TestLogistic:
    def test_loss_at_zero_is_log2(self):
        p = make_logistic(seeded_matrix(6, 3, 0), seeded_signs(6, 0))
        assert p.loss(np.zeros(3)) == pytest.approx(np.log(2.0), abs=1e-15)

    def test_single_sample_gradient_at_zero(self):
        p = make_logistic(np.array([[1.0]]), np.array([1.0]))
        assert p.component_gradient(0, np.zeros(1)) == pytest.approx([-0.5])

    def test_full_gradient_matches_component_mean(self):
        p = make_logistic(seeded_matrix(4, 3, 1), seeded_signs(4, 1), lam=0.05)
        w = RngStream(1, "pt").normal_array(3)
        acc = np.zeros(3)
        for i in range(4):
            acc += p.component_gradient(i, w)
        assert np.max(np.abs(full_gradient(p, w) - acc / 4)) < 1e-15

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            make_logistic(np.ones((2, 2)), np.array([1.0, 0.0]))
        with pytest.raises(ValueError):
            make_logistic(np.ones((2, 2)), np.array([1.0, -1.0]), lam=-0.1)

    def test_known_L_bounds_sampled_curvature(self):
        p = make_logistic(seeded_matrix(5, 3, 2), seeded_signs(5, 2), lam=0.1)
        rng = RngStream(2, "lip")
        for _ in range(50):
            w, w2 = rng.normal_array(3), rng.normal_array(3)
            for i in range(p.n):
                num = np.linalg.norm(p.component_gradient(i, w) - p.component_gradient(i, w2))
                assert num <= p.known_L * np.linalg.norm(w - w2) * (1.0 + 1e-12)


class TestSigmoidNonconvex:
    def test_loss_at_zero_is_half(self):
        p = make_sigmoid_nonconvex(seeded_matrix(5, 3, 3), seeded_signs(5, 3))
        assert p.loss(np.zeros(3)) == pytest.approx(0.5, abs=1e-15)

    def test_bounded_in_unit_interval(self):
        p = make_sigmoid_nonconvex(seeded_matrix(5, 3, 4), seeded_signs(5, 4))
        rng = RngStream(4, "pts")
        for _ in range(50):
            w = 2.0 * rng.normal_array(3)
            for i in range(p.n):
                assert 0.0 < p.component_loss(i, w) < 1.0
        # at extreme points the value may saturate but never leaves [0, 1]
        for i in range(p.n):
            assert 0.0 <= p.component_loss(i, np.full(3, 1e6)) <= 1.0

    def test_finite_difference_gradient(self):
        p = make_sigmoid_nonconvex(seeded_matrix(5, 3, 5), seeded_signs(5, 5))
        w = RngStream(5, "pt").normal_array(3)
        for i in range(p.n):
            fd = central_difference(lambda v, i=i: p.component_loss(i, v), w)
            g = p.component_gradient(i, w)
            assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


@pytest.mark.parametrize(
    "factory",
    [
        lambda: make_quadratic(np.linspace(1, 3, 4), np.array([0.1, 0.0, -0.5, 0.2]), 6, seed=9),
        lambda: make_logistic(seeded_matrix(6, 4, 10), seeded_signs(6, 10), lam=0.02),
        lambda: make_sigmoid_nonconvex(seeded_matrix(6, 4, 11), seeded_signs(6, 11)),
    ],
    ids=["quadratic", "logistic", "sigmoid"],
)
class TestSharedInvariants:
    def test_mean_consistency_100_points(self, factory):
        p = factory()
        rng = RngStream(12, "mc")
        for _ in range(100):
            w = rng.normal_array(p.d)
            acc = np.zeros(p.d)
            for i in range(p.n):
                acc += p.component_gradient(i, w)
            g = full_gradient(p, w)
            assert np.linalg.norm(g - acc / p.n) <= 1e-13 * (1.0 + np.linalg.norm(g))

    def test_finite_difference_agreement_10_points(self, factory):
        p = factory()
        rng = RngStream(13, "fd")
        for _ in range(10):
            w = rng.normal_array(p.d)
            i = rng.randbelow(p.n)
            fd = central_difference(lambda v: p.component_loss(i, v), w)
            g = p.component_gradient(i, w)
            assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-9) < 1e-6

    def test_single_component_problem_gradient(self, factory):
        p = factory()
        w = RngStream(14, "pt").normal_array(p.d)
        sub = mean_gradient(p, np.array([2]), w)
        assert np.array_equal(sub, p.component_gradient(2, w))


def test_full_gradient_reports_offending_index():
    def bad_grad(i, w):
        if i == 3:
            return np.array([np.nan, 1.0])
        return np.zeros(2)

    from recgrad.problems import FiniteSumProblem

    p = FiniteSumProblem(
        name="broken", n=5, d=2,
        component_loss=lambda i, w: 0.0,
        component_gradient=bad_grad,
    )
    with pytest.raises(FloatingPointError, match="index 3"):
        full_gradient(p, np.zeros(2))
