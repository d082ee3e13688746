"""Worst-case step objective, its differentials, and the constraint set."""

import numpy as np
from numpy.testing import assert_allclose

from cotfilter import (
    CandidateParams,
    GaussianBelief,
    ModelStep,
    RobustConfig,
    StateSpaceModel,
    bicausal_distance,
    constraints,
    grad_F,
    grad_w,
    grad_w_joint,
    hessian_identity_check,
    joint_noncausal_distance,
    kalman_update,
    objective_F,
    posterior_cov_robust,
    predict_joint,
    robust_gain,
)
from helpers import fd_grad_triple, random_candidate, random_spd, random_step, rel_err


def scalar_all_ones():
    step = ModelStep([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    cand = CandidateParams([[1.0]], [[1.0]], [[1.0]])
    return step, cand


def test_objective_scalar_all_ones():
    step, cand = scalar_all_ones()
    assert_allclose(objective_F(step, cand), 2.0 / 3.0, rtol=1e-14)


def test_objective_at_nominal_is_the_kalman_posterior_trace():
    rng = np.random.default_rng(3)
    for _ in range(10):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        step = random_step(rng, n, m)
        Sigma = random_spd(rng, n)
        model = StateSpaceModel.constant(step.A, step.C, step.B, step.D)
        joint = predict_joint(model, 1, GaussianBelief(np.zeros(n), Sigma))
        post = kalman_update(joint, n, np.zeros(m))
        cand = CandidateParams(step.B, step.D, Sigma)
        assert_allclose(objective_F(step, cand), np.trace(post.cov),
                        rtol=1e-10)


def test_objective_and_gradient_with_zero_observation_map():
    rng = np.random.default_rng(5)
    n, m = 3, 2
    A = rng.standard_normal((n, n))
    step = ModelStep(A, np.zeros((m, n)), random_spd(rng, n),
                     random_spd(rng, m))
    cand = random_candidate(rng, n, m)
    want = float(np.trace(A @ cand.Sigma_bar @ A.T + cand.B_bar))
    assert_allclose(objective_F(step, cand), want, rtol=1e-12)
    gB, gD, gS = grad_F(step, cand)
    assert_allclose(gB, np.eye(n), atol=1e-12)
    assert_allclose(gD, np.zeros((m, m)), atol=1e-12)
    assert_allclose(gS, A.T @ A, atol=1e-12)


def test_gradient_scalar_entries():
    step, cand = scalar_all_ones()
    gB, gD, gS = grad_F(step, cand)
    # F = Phi - Phi^2 / (Phi + D) at Phi = Sigma + B: dF/dD = (Phi/K)^2
    assert_allclose(gD[0, 0], 4.0 / 9.0, rtol=1e-14)
    assert_allclose(gB[0, 0], 1.0 / 9.0, rtol=1e-14)
    assert_allclose(gS[0, 0], 1.0 / 9.0, rtol=1e-14)


def test_grad_F_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(20):
        step = random_step(rng, 3, 2)
        cand = random_candidate(rng, 3, 2)
        got = grad_F(step, cand)
        want = fd_grad_triple(
            lambda B, D, S: objective_F(step, CandidateParams(B, D, S)),
            [cand.B_bar, cand.D_bar, cand.Sigma_bar])
        for g, w in zip(got, want):
            assert rel_err(g, w) <= 1e-4


def test_grad_w_scalar_state_block():
    step, _ = scalar_all_ones()
    # only Sigma_bar varies; w_state = 3 (sqrt(s_bar) - 1)^2
    for sb, want in ((4.0, 1.5), (1.0, 0.0)):
        cand = CandidateParams([[1.0]], [[1.0]], [[sb]])
        _, _, gS = grad_w(step, cand, [[1.0]])
        assert_allclose(gS[0, 0], want, atol=1e-9)


def test_grad_w_matches_finite_differences():
    rng = np.random.default_rng(9)
    for _ in range(15):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        step = random_step(rng, n, m)
        cand = random_candidate(rng, n, m)
        Sigma = random_spd(rng, n)
        got = grad_w(step, cand, Sigma)
        want = fd_grad_triple(
            lambda B, D, S: bicausal_distance(
                step, CandidateParams(B, D, S), Sigma),
            [cand.B_bar, cand.D_bar, cand.Sigma_bar], h=1e-6)
        for g, w in zip(got, want):
            assert rel_err(g, w) <= 1e-4


def test_grad_w_joint_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(15):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        step = random_step(rng, n, m)
        cand = random_candidate(rng, n, m)
        Sigma = random_spd(rng, n)
        got = grad_w_joint(step, cand, Sigma)
        want = fd_grad_triple(
            lambda B, D, S: joint_noncausal_distance(
                step, CandidateParams(B, D, S), Sigma),
            [cand.B_bar, cand.D_bar, cand.Sigma_bar], h=1e-6)
        for g, w in zip(got, want):
            assert rel_err(g, w) <= 1e-4


def test_constraint_slacks():
    rng = np.random.default_rng(13)
    step = random_step(rng, 2, 2)
    Sigma = random_spd(rng, 2)
    cand = random_candidate(rng, 2, 2)
    cfg = RobustConfig(radius=1.5, mode="cot")
    vals = constraints(step, cand, Sigma, cfg)
    want_ball = 1.5 - bicausal_distance(step, cand, Sigma)
    assert_allclose(vals.ball, want_ball, rtol=1e-12)
    vals_ot = constraints(step, cand, Sigma, RobustConfig(1.5, mode="ot"))
    assert_allclose(vals_ot.ball,
                    1.5 - joint_noncausal_distance(step, cand, Sigma),
                    rtol=1e-12)
    assert vals.min_slack() <= vals.ball


def test_constraints_flag_floor_violations():
    step, _ = scalar_all_ones()
    cfg = RobustConfig(radius=10.0)
    low = CandidateParams([[1e-8]], [[1.0]], [[1.0]])
    vals = constraints(step, low, [[1.0]], cfg)
    assert vals.piv_B[0] < 0.0
    assert vals.min_slack() < 0.0


def test_robust_gain_scalar_all_ones():
    step, cand = scalar_all_ones()
    G, g = robust_gain(step, cand, [1.5])
    assert_allclose(G, [[2.0 / 3.0]], rtol=1e-14)
    assert_allclose(g, [0.5], rtol=1e-14)


def test_posterior_cov_trace_equals_objective():
    rng = np.random.default_rng(17)
    for _ in range(10):
        step = random_step(rng, 3, 2)
        cand = random_candidate(rng, 3, 2)
        cov = posterior_cov_robust(step, cand)
        assert_allclose(np.trace(cov), objective_F(step, cand), rtol=1e-12)
        assert float(np.min(np.linalg.eigvalsh(cov))) >= -1e-10


def test_hessian_identity_zero_direction():
    step, cand = scalar_all_ones()
    zero = (np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))
    lhs, rhs = hessian_identity_check(step, cand, zero)
    assert lhs == 0.0
    assert rhs == 0.0


def test_hessian_identity_random_directions():
    rng = np.random.default_rng(19)
    for _ in range(10):
        step = random_step(rng, 3, 2)
        cand = random_candidate(rng, 3, 2)
        direction = (rng.standard_normal((3, 3)),
                     rng.standard_normal((2, 2)),
                     rng.standard_normal((3, 3)))
        lhs, rhs = hessian_identity_check(step, cand, direction)
        assert rhs >= 0.0
        assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(rhs))


def test_objective_midpoint_concave_distance_midpoint_convex():
    rng = np.random.default_rng(23)
    for _ in range(50):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        step = random_step(rng, n, m)
        Sigma = random_spd(rng, n)
        c1 = random_candidate(rng, n, m)
        c2 = random_candidate(rng, n, m)
        mid = CandidateParams((c1.B_bar + c2.B_bar) / 2.0,
                              (c1.D_bar + c2.D_bar) / 2.0,
                              (c1.Sigma_bar + c2.Sigma_bar) / 2.0)
        f_gap = objective_F(step, mid) - 0.5 * (objective_F(step, c1)
                                                + objective_F(step, c2))
        assert f_gap >= -1e-9
        for dist in (bicausal_distance, joint_noncausal_distance):
            w_gap = 0.5 * (dist(step, c1, Sigma)
                           + dist(step, c2, Sigma)) - dist(step, mid, Sigma)
            assert w_gap >= -1e-9
