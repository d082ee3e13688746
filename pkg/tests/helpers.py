"""Shared builders and independent oracles for the test suite.

The oracles deliberately avoid the package's computational paths: matrix
square roots go through a plain eigendecomposition, smoothed moments come
from conditioning one explicitly assembled joint Gaussian, and the scalar
step problem is maximized by brute-force grid search with closed-form
2x2 Bures terms.
"""

from __future__ import annotations

import numpy as np

from cotfilter import CandidateParams, GaussianBelief, ModelStep, StateSpaceModel


# ---------------------------------------------------------------------------
# random builders
# ---------------------------------------------------------------------------


def random_psd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return scale * (G @ G.T) / n


def random_spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    """Random positive definite matrix bounded away from singularity."""
    return random_psd(rng, n, scale) + 0.2 * scale * np.eye(n)


def random_step(rng: np.random.Generator, n: int, m: int,
                scale: float = 1.0) -> ModelStep:
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    C = rng.standard_normal((m, n)) / np.sqrt(n)
    return ModelStep(A, C, random_spd(rng, n, scale), random_spd(rng, m, scale))


def random_model(rng: np.random.Generator, n: int, m: int,
                 scale: float = 1.0) -> StateSpaceModel:
    step = random_step(rng, n, m, scale)
    return StateSpaceModel.constant(step.A, step.C, step.B, step.D)


def random_candidate(rng: np.random.Generator, n: int, m: int,
                     scale: float = 1.0) -> CandidateParams:
    return CandidateParams(
        random_spd(rng, n, scale),
        random_spd(rng, m, scale),
        random_spd(rng, n, scale),
    )


def random_belief(rng: np.random.Generator, n: int,
                  scale: float = 1.0) -> GaussianBelief:
    return GaussianBelief(rng.standard_normal(n), random_spd(rng, n, scale))


# ---------------------------------------------------------------------------
# small numerical oracles
# ---------------------------------------------------------------------------


def eig_sqrt(X) -> np.ndarray:
    """Matrix square root via eigendecomposition, clipping tiny negatives."""
    lam, Q = np.linalg.eigh(np.asarray(X, dtype=float))
    lam = np.clip(lam, 0.0, None)
    return (Q * np.sqrt(lam)) @ Q.T


def rel_err(got, want) -> float:
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    denom = max(float(np.linalg.norm(want)), 1e-8)
    return float(np.linalg.norm(got - want)) / denom


def fd_grad_triple(fn, mats, h: float = 1e-5):
    """Central finite-difference gradients of ``fn(B, D, S)`` in its three
    symmetric matrix arguments.

    Convention: the returned ``G`` satisfies ``d fn = tr[G dM]`` for a
    symmetric perturbation ``dM``, so off-diagonal entries carry half the
    directional derivative along the two-sided basis matrix.
    """
    grads = []
    for k, M in enumerate(mats):
        n = M.shape[0]
        G = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1):
                E = np.zeros((n, n))
                E[i, j] = 1.0
                E[j, i] = 1.0
                plus = [np.array(m, dtype=float) for m in mats]
                minus = [np.array(m, dtype=float) for m in mats]
                plus[k] = plus[k] + h * E
                minus[k] = minus[k] - h * E
                d = (fn(*plus) - fn(*minus)) / (2.0 * h)
                if i == j:
                    G[i, i] = d
                else:
                    G[i, j] = G[j, i] = d / 2.0
        grads.append(G)
    return tuple(grads)


# ---------------------------------------------------------------------------
# scalar step-problem grid oracle
# ---------------------------------------------------------------------------


def scalar_grid_value(step: ModelStep, belief_cov, radius: float,
                      lo: float = 0.01, hi: float = 5.0,
                      res: float = 0.01) -> float:
    """Brute-force maximum of the scalar worst-case objective over the grid
    ``(B_bar, D_bar, Sigma_bar) in [lo, hi]^3`` inside the bi-causal ball.

    The 2x2 noise Bures cross term uses the closed form
    ``tr sqrt(M) = sqrt(tr M + 2 sqrt(det M))`` so the whole
    ``(B_bar, D_bar)`` slab vectorizes; the outer loop runs over
    ``Sigma_bar``.
    """
    A = float(step.A[0, 0])
    C = float(step.C[0, 0])
    B = float(step.B[0, 0])
    D = float(step.D[0, 0])
    S = float(np.atleast_2d(np.asarray(belief_cov, dtype=float))[0, 0])

    axis = np.arange(round(lo / res), round(hi / res) + 1) * res
    Bv = axis[:, None]
    Dv = axis[None, :]

    c2 = C * C
    tr_nom = B + c2 * B + D
    det_nom = B * D
    tr_alt = Bv + c2 * Bv + Dv
    det_alt = Bv * Dv
    tr_prod = B * Bv + 2.0 * c2 * B * Bv + (c2 * B + D) * (c2 * Bv + Dv)
    cross = np.sqrt(tr_prod + 2.0 * np.sqrt(det_nom * det_alt))
    noise_term = tr_nom + tr_alt - 2.0 * cross

    H = 1.0 + A * A + c2 * A * A
    a2 = A * A
    best = -np.inf
    for Sb in axis:
        w = noise_term + H * (np.sqrt(Sb) - np.sqrt(S)) ** 2
        Phi = a2 * Sb + Bv
        K = c2 * Phi + Dv
        F = Phi - c2 * Phi * Phi / K
        cell = np.max(np.where(w <= radius, F, -np.inf))
        if cell > best:
            best = float(cell)
    return best


# ---------------------------------------------------------------------------
# dense joint-Gaussian smoother oracle
# ---------------------------------------------------------------------------


def dense_joint_gaussian(model: StateSpaceModel, T: int,
                         init: GaussianBelief):
    """Mean and covariance of the stacked vector ``(x_0..x_T, y_1..y_T)``.

    Built from the linear map of the independent source vector
    ``(x_0, w_1..w_T, v_1..v_T)``; quadratic in ``T`` and only meant for
    small models.
    """
    n, m = model.n, model.m
    dim_z = n * (T + 1) + m * T
    cov_z = np.zeros((dim_z, dim_z))
    cov_z[:n, :n] = init.cov
    for t in range(1, T + 1):
        i = n + (t - 1) * n
        cov_z[i:i + n, i:i + n] = model.B(t)
        j = n * (T + 1) + (t - 1) * m
        cov_z[j:j + m, j:j + m] = model.D(t)
    mean_z = np.zeros(dim_z)
    mean_z[:n] = init.mean

    L = np.zeros((dim_z, dim_z))
    L[:n, :n] = np.eye(n)
    for t in range(1, T + 1):
        r = t * n
        L[r:r + n] = model.A(t) @ L[(t - 1) * n:t * n]
        L[r:r + n, n * t:n * (t + 1)] += np.eye(n)
        q = n * (T + 1) + (t - 1) * m
        L[q:q + m] = model.C(t) @ L[r:r + n]
        L[q:q + m, n * (T + 1) + (t - 1) * m:n * (T + 1) + t * m] += np.eye(m)
    return L @ mean_z, L @ cov_z @ L.T


def smoother_oracle(model: StateSpaceModel, T: int, init: GaussianBelief,
                    observations):
    """Smoothed moments and data log likelihood by direct conditioning.

    Returns ``(means, covs, lag_one, init_mean, init_cov, loglik)`` in the
    layout of the package's smoother result.
    """
    from scipy.stats import multivariate_normal

    n = model.n
    mean, cov = dense_joint_gaussian(model, T, init)
    ns = n * (T + 1)
    y = np.asarray(observations, dtype=float).reshape(-1)
    Sxx = cov[:ns, :ns]
    Sxy = cov[:ns, ns:]
    Syy = cov[ns:, ns:]
    K = Sxy @ np.linalg.inv(Syy)
    cmean = mean[:ns] + K @ (y - mean[ns:])
    ccov = Sxx - K @ Sxy.T

    means = np.stack([cmean[t * n:(t + 1) * n] for t in range(1, T + 1)])
    covs = np.stack([ccov[t * n:(t + 1) * n, t * n:(t + 1) * n]
                     for t in range(1, T + 1)])
    lag_one = np.stack([ccov[t * n:(t + 1) * n, (t - 1) * n:t * n]
                        for t in range(1, T + 1)])
    loglik = float(multivariate_normal(mean[ns:], Syy).logpdf(y))
    return means, covs, lag_one, cmean[:n], ccov[:n, :n], loglik
