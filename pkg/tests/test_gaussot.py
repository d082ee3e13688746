"""Gaussian transport distances: closed forms, orderings, step matrices."""

import numpy as np
from numpy.testing import assert_allclose

from cotfilter import (
    CandidateParams,
    GaussianMoments,
    ModelStep,
    QuadCost,
    bicausal_distance,
    build_step_matrices,
    joint_noncausal_distance,
    quadratic_ot_value,
    w2_gaussian,
)
from helpers import random_candidate, random_spd, random_step


def scalar_all_ones() -> ModelStep:
    return ModelStep([[1.0]], [[1.0]], [[1.0]], [[1.0]])


def test_quadratic_ot_scalar_example():
    p1 = GaussianMoments([0.0], [[1.0]])
    p2 = GaussianMoments([0.0], [[4.0]])
    cost = QuadCost([[1.0]], [[1.0]], [[-2.0]])
    assert_allclose(quadratic_ot_value(p1, p2, cost), 1.0, atol=1e-12)


def test_w2_point_masses():
    p1 = GaussianMoments([1.0, 0.0], np.zeros((2, 2)))
    p2 = GaussianMoments([3.0, 0.0], np.zeros((2, 2)))
    assert_allclose(w2_gaussian(p1, p2), 4.0, atol=1e-12)


def test_w2_equal_covariances_leave_mean_gap():
    cov = random_spd(np.random.default_rng(3), 2)
    p1 = GaussianMoments([0.0, 0.0], cov)
    p2 = GaussianMoments([3.0, 4.0], cov)
    assert_allclose(w2_gaussian(p1, p2), 25.0, rtol=1e-9, atol=1e-9)


def test_w2_one_dimensional_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(200):
        m1, m2 = 3.0 * rng.standard_normal(2)
        s1, s2 = rng.uniform(0.1, 4.0, size=2)
        got = w2_gaussian(GaussianMoments([m1], [[s1 * s1]]),
                          GaussianMoments([m2], [[s2 * s2]]))
        want = (m1 - m2) ** 2 + (s1 - s2) ** 2
        assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_quadratic_ot_matches_w2_for_squared_distance_cost():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        p1 = GaussianMoments(rng.standard_normal(n), random_spd(rng, n))
        p2 = GaussianMoments(rng.standard_normal(n), random_spd(rng, n))
        cost = QuadCost(np.eye(n), np.eye(n), -2.0 * np.eye(n))
        a = quadratic_ot_value(p1, p2, cost)
        b = w2_gaussian(p1, p2)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(b))


def test_build_step_matrices_scalar_all_ones():
    sm = build_step_matrices(scalar_all_ones(),
                             CandidateParams([[1.0]], [[1.0]], [[1.0]]),
                             [[1.0]])
    assert_allclose(sm.sigma2_nom, [[1.0, 1.0], [1.0, 2.0]], atol=0.0)
    assert_allclose(sm.H, [[3.0]], atol=0.0)
    assert_allclose(sm.V, [[2.0, 2.0], [2.0, 3.0]], atol=0.0)
    assert_allclose(sm.mu, [0.0, 0.0], atol=0.0)
    assert sm.V_joint.shape == (3, 3)


def test_step_matrices_decoupled_shapes():
    rng = np.random.default_rng(9)
    n, m = 3, 2
    B, D = random_spd(rng, n), random_spd(rng, m)
    # C = 0: the joint noise covariance is block diagonal
    step = ModelStep(rng.standard_normal((n, n)), np.zeros((m, n)), B, D)
    sm = build_step_matrices(step, CandidateParams(B, D, np.eye(n)), np.eye(n))
    want = np.zeros((n + m, n + m))
    want[:n, :n] = B
    want[n:, n:] = D
    assert_allclose(sm.sigma2_nom, want, atol=0.0)
    # A = 0: the previous-state weight collapses to the identity
    step0 = ModelStep(np.zeros((n, n)), rng.standard_normal((m, n)), B, D)
    sm0 = build_step_matrices(step0, CandidateParams(B, D, np.eye(n)),
                              np.eye(n))
    assert_allclose(sm0.H, np.eye(n), atol=0.0)


def test_bicausal_scalar_sigma_only():
    # only the previous-state block moves: w = H (sqrt(s) - sqrt(s_bar))^2
    step = scalar_all_ones()
    for sb in (0.25, 1.0, 2.0, 4.0):
        cand = CandidateParams([[1.0]], [[1.0]], [[sb]])
        want = 3.0 * (np.sqrt(sb) - 1.0) ** 2
        assert_allclose(bicausal_distance(step, cand, [[1.0]]), want,
                        atol=1e-12)


def test_joint_distance_decouples_at_zero_maps():
    step = ModelStep([[0.0]], [[0.0]], [[2.0]], [[3.0]])
    cand = CandidateParams([[0.5]], [[1.5]], [[2.5]])
    want = ((1.0 - np.sqrt(2.5)) ** 2
            + (np.sqrt(2.0) - np.sqrt(0.5)) ** 2
            + (np.sqrt(3.0) - np.sqrt(1.5)) ** 2)
    assert_allclose(joint_noncausal_distance(step, cand, [[1.0]]), want,
                    rtol=1e-10)


def test_distances_vanish_at_the_nominal_triple():
    rng = np.random.default_rng(11)
    for _ in range(10):
        step = random_step(rng, 2, 2)
        Sigma = random_spd(rng, 2)
        cand = CandidateParams(step.B, step.D, Sigma)
        assert abs(bicausal_distance(step, cand, Sigma)) <= 1e-8
        assert abs(joint_noncausal_distance(step, cand, Sigma)) <= 1e-8


def test_bicausal_dominates_joint_distance():
    rng = np.random.default_rng(13)
    for _ in range(100):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        step = random_step(rng, n, m)
        cand = random_candidate(rng, n, m)
        Sigma = random_spd(rng, n)
        wc = bicausal_distance(step, cand, Sigma)
        wj = joint_noncausal_distance(step, cand, Sigma)
        assert wj >= -1e-8
        assert wc >= wj - 1e-8
