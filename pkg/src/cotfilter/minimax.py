"""Objective, constraints, and derivatives of the worst-case step problem.

At each update the adversary picks ``(B_bar, D_bar, Sigma_bar)`` inside a
transport ball of radius ``epsilon`` around the nominal step to maximize the
mean squared error of the best affine estimator, which reduces to::

    F = tr[A Sigma_bar A' + B_bar] - tr[M M' K^{-1}]

with ``M = C (A Sigma_bar A' + B_bar)`` and ``K = M C' + D_bar``. ``F`` is
concave in the candidate triple, the ball distance is convex, and the
positivity floors on LDL pivots are concave, so the step problem is a
well-posed concave maximization. This module provides ``F``, analytic
gradients of ``F`` and of both ball distances, constraint values, the
robust estimator built from a candidate, and the curvature identity used to
cross-check second derivatives.

Derivative convention: gradients are symmetric matrices ``G`` such that the
directional derivative along a symmetric ``Delta`` is ``tr[G Delta]``
(finite-difference checks must therefore use symmetric perturbations).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    ConfigError,
    DimMismatchError,
    NearSingularBuresError,
    SingularKError,
    SingularSubmatrixError,
)
from .gaussot import (
    CandidateParams,
    ModelStep,
    bicausal_distance,
    joint_covariance,
    joint_noncausal_distance,
    noise_joint_cov,
    state_weight,
)
from .matalg import ldl_diagonals, sqrt_psd, symmetrize

__all__ = [
    "RobustConfig",
    "ConstraintValues",
    "objective_F",
    "grad_F",
    "grad_w",
    "grad_w_joint",
    "constraints",
    "robust_gain",
    "posterior_cov_robust",
    "hessian_identity_check",
]

MODES = ("nonrobust", "ot", "cot")

#: Relative eigenvalue threshold below which the analytic Bures gradient is
#: considered unreliable.
NEAR_SINGULAR_RTOL = 1e-10


@dataclass
class RobustConfig:
    """Configuration of the robust step problem.

    Parameters
    ----------
    radius : float
        Transport ball radius ``epsilon``; ``0`` reproduces the classic
        filter.
    mode : str
        ``"cot"`` uses the bi-causal ball, ``"ot"`` the non-causal joint
        ball, ``"nonrobust"`` skips the worst-case problem entirely.
    delta : float
        Pivot floor applied to ``D_bar`` (keeps the innovation covariance
        invertible).
    d_floor : float
        Pivot floor applied to ``B_bar`` and ``Sigma_bar``.
    max_iters : int
        Default iteration budget handed to the solver.
    propagate : str
        ``"worst_case"`` carries the worst-case posterior covariance to the
        next step; ``"nominal"`` carries the nominal-update covariance.
    """

    radius: float
    mode: str = "cot"
    delta: float = 1e-4
    d_floor: float = 1e-6
    max_iters: int = 20
    propagate: str = "worst_case"

    def validate(self) -> None:
        if not np.isfinite(self.radius) or self.radius < 0.0:
            raise ConfigError(f"radius must be >= 0, got {self.radius}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be > 0, got {self.delta}")
        if self.d_floor <= 0.0:
            raise ConfigError(f"d_floor must be > 0, got {self.d_floor}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.propagate not in ("worst_case", "nominal"):
            raise ConfigError(
                f"propagate must be 'worst_case' or 'nominal', got "
                f"{self.propagate!r}"
            )


def innovation_parts(step: ModelStep, cand: CandidateParams):
    """Predicted state covariance ``Phi``, cross map ``M`` and innovation
    covariance ``K`` under a candidate triple."""
    cand.check_step(step)
    Phi = symmetrize(step.A @ cand.Sigma_bar @ step.A.T + cand.B_bar)
    M = step.C @ Phi
    K = symmetrize(M @ step.C.T + cand.D_bar)
    return Phi, M, K


def _solve_K(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cho = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularKError(
            "candidate innovation covariance is not positive definite"
        ) from exc
    return cho_solve(cho, rhs)


def objective_F(step: ModelStep, cand: CandidateParams) -> float:
    """Worst-case mean squared error of the best affine estimator under the
    candidate triple.

    Examples
    --------
    Scalar model with every matrix equal to 1 gives ``2 - 4/3 = 2/3``:

    >>> step = ModelStep(1.0, 1.0, 1.0, 1.0)
    >>> cand = CandidateParams(1.0, 1.0, 1.0)
    >>> round(objective_F(step, cand), 12)
    0.666666666667
    """
    Phi, M, K = innovation_parts(step, cand)
    N = _solve_K(K, M)
    return float(np.trace(Phi) - np.sum(M * N))


def grad_F(step: ModelStep, cand: CandidateParams):
    """Gradient of :func:`objective_F` as symmetric matrices
    ``(dF/dB_bar, dF/dD_bar, dF/dSigma_bar)``."""
    _, M, K = innovation_parts(step, cand)
    N = _solve_K(K, M)              # K^{-1} M, shape (m, n)
    C = step.C
    A = step.A
    CN = C.T @ N                    # (n, n)
    core = np.eye(step.n) - CN - CN.T + C.T @ (N @ N.T) @ C
    gB = symmetrize(core)
    gD = symmetrize(N @ N.T)
    gS = symmetrize(A.T @ core @ A)
    return gB, gD, gS


def posterior_cov_robust(step: ModelStep, cand: CandidateParams) -> np.ndarray:
    """Posterior state covariance of the robust update,
    ``Phi - M' K^{-1} M``; its trace equals :func:`objective_F`."""
    Phi, M, K = innovation_parts(step, cand)
    N = _solve_K(K, M)
    return symmetrize(Phi - M.T @ N)


def robust_gain(step: ModelStep, cand: CandidateParams, x_hat_prev):
    """Affine estimator ``x_hat = G y + g`` of the robust update.

    ``G = M' K^{-1}`` and ``g = A x_hat_prev - G C A x_hat_prev``.
    """
    _, M, K = innovation_parts(step, cand)
    G = _solve_K(K, M).T            # (n, m)
    x_hat_prev = np.atleast_1d(np.asarray(x_hat_prev, dtype=float))
    if x_hat_prev.size != step.n:
        raise DimMismatchError(
            f"x_hat_prev has dim {x_hat_prev.size}, model n={step.n}"
        )
    mx = step.A @ x_hat_prev
    g = mx - G @ (step.C @ mx)
    return G, g


# ---------------------------------------------------------------------------
# Bures-term differentials
# ---------------------------------------------------------------------------


def _bures_factors(U: np.ndarray, X: np.ndarray):
    """Eigendecomposition of ``G = U X U'`` plus ``tr sqrt(G)``."""
    G = symmetrize(U @ X @ U.T)
    lam, Q = np.linalg.eigh(G)
    value = float(np.sum(np.sqrt(np.maximum(lam, 0.0))))
    return value, lam, Q


def _bures_grad(U: np.ndarray, lam: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Gradient of ``tr sqrt(U X U')`` in ``X``: ``(1/2) U' G^{-1/2} U``.

    Raises
    ------
    NearSingularBuresError
        If the smallest eigenvalue of ``G`` is below the relative threshold.
    """
    lam_max = max(1.0, float(lam[-1]))
    if lam[0] < NEAR_SINGULAR_RTOL * lam_max:
        raise NearSingularBuresError(
            f"inner eigenvalue {lam[0]:.3e} too small for analytic gradient"
        )
    QU = Q.T @ U
    return symmetrize(0.5 * QU.T @ (QU / np.sqrt(lam)[:, None]))


def _dd_invsqrt(lam: np.ndarray) -> np.ndarray:
    """Divided differences of ``f(x) = x^{-1/2}`` on the eigenvalues, the
    kernel of the second derivative of ``tr sqrt``."""
    lam = np.maximum(lam, 1e-14 * max(1.0, float(lam[-1])))
    inv_sqrt = 1.0 / np.sqrt(lam)
    li = lam[:, None]
    lj = lam[None, :]
    diff = li - lj
    num = inv_sqrt[:, None] - inv_sqrt[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = np.where(np.abs(diff) > 1e-13 * np.maximum(li, lj),
                      num / diff, -0.5 * lam ** (-1.5))
    return dd


def _sym_basis(k: int):
    """Lower-triangle index pairs enumerating the symmetric unit basis."""
    il, jl = np.tril_indices(k)
    return il, jl


def _fd_grads(fn, mats: list[np.ndarray], h: float = 1e-6):
    """Central finite-difference gradients of ``fn(*mats)`` with respect to
    each symmetric matrix argument, in the symmetric-direction convention."""
    grads = []
    for which, X in enumerate(mats):
        k = X.shape[0]
        il, jl = _sym_basis(k)
        G = np.zeros((k, k))
        for i, j in zip(il, jl):
            E = np.zeros((k, k))
            E[i, j] = 1.0
            E[j, i] = 1.0
            plus = [m.copy() for m in mats]
            minus = [m.copy() for m in mats]
            plus[which] = X + h * E
            minus[which] = X - h * E
            d = (fn(*plus) - fn(*minus)) / (2.0 * h)
            # tr[G E] = 2 G_ij off-diagonal, G_ii on the diagonal
            if i == j:
                G[i, i] = d
            else:
                G[i, j] = d / 2.0
                G[j, i] = d / 2.0
        grads.append(G)
    return grads


def grad_w(step: ModelStep, cand: CandidateParams, belief_cov,
           fd_fallback: bool = True):
    """Gradient of :func:`cotfilter.gaussot.bicausal_distance` in the
    candidate triple, as symmetric matrices ``(dw/dB_bar, dw/dD_bar,
    dw/dSigma_bar)``.

    The noise block differentiates ``tr[S_alt] - 2 tr sqrt(R S_alt R)``
    with ``R = sqrt(S_nom)`` and pulls the result back through
    ``S_alt = [[B, BC'], [CB, CBC' + D]]``; the state block does the same
    with the weighted previous-state term. When an inner eigenvalue is too
    small for the analytic formula, a finite-difference fallback is used if
    ``fd_fallback`` is true, otherwise :class:`NearSingularBuresError` is
    raised.
    """
    cand.check_step(step)
    Sigma = symmetrize(belief_cov)
    n, m = step.n, step.m
    C = step.C
    Hw = state_weight(step.A, C)
    try:
        # noise block
        R1 = sqrt_psd(noise_joint_cov(C, step.B, step.D))
        S_alt = noise_joint_cov(C, cand.B_bar, cand.D_bar)
        _, lam1, Q1 = _bures_factors(R1, S_alt)
        W = np.eye(n + m) - 2.0 * _bures_grad(R1, lam1, Q1)
        gB = W[:n, :n] + W[:n, n:] @ C + C.T @ W[n:, :n] + C.T @ W[n:, n:] @ C
        gD = W[n:, n:].copy()
        # previous-state block
        U2 = sqrt_psd(Sigma) @ Hw
        _, lam2, Q2 = _bures_factors(U2, cand.Sigma_bar)
        gS = Hw - 2.0 * _bures_grad(U2, lam2, Q2)
    except NearSingularBuresError:
        if not fd_fallback:
            raise
        fn = lambda Bb, Db, Sb: bicausal_distance(
            step, CandidateParams(Bb, Db, Sb), Sigma
        )
        gB, gD, gS = _fd_grads(fn, [cand.B_bar, cand.D_bar, cand.Sigma_bar])
    return symmetrize(gB), symmetrize(gD), symmetrize(gS)


def grad_w_joint(step: ModelStep, cand: CandidateParams, belief_cov,
                 fd_fallback: bool = True):
    """Gradient of :func:`cotfilter.gaussot.joint_noncausal_distance` in the
    candidate triple, same convention as :func:`grad_w`."""
    cand.check_step(step)
    Sigma = symmetrize(belief_cov)
    n, m = step.n, step.m
    A, C = step.A, step.C
    try:
        V1 = joint_covariance(A, C, step.B, step.D, Sigma)
        R1 = sqrt_psd(V1)
        Va = joint_covariance(A, C, cand.B_bar, cand.D_bar, cand.Sigma_bar)
        _, lam, Q = _bures_factors(R1, Va)
        W = np.eye(2 * n + m) - 2.0 * _bures_grad(R1, lam, Q)
        JS = np.vstack([np.eye(n), A, C @ A])
        JB = np.vstack([np.zeros((n, n)), np.eye(n), C])
        gS = JS.T @ W @ JS
        gB = JB.T @ W @ JB
        gD = W[2 * n:, 2 * n:].copy()
    except NearSingularBuresError:
        if not fd_fallback:
            raise
        fn = lambda Bb, Db, Sb: joint_noncausal_distance(
            step, CandidateParams(Bb, Db, Sb), Sigma
        )
        gB, gD, gS = _fd_grads(fn, [cand.B_bar, cand.D_bar, cand.Sigma_bar])
    return symmetrize(gB), symmetrize(gD), symmetrize(gS)


# ---------------------------------------------------------------------------
# Constraints
# ---------------------------------------------------------------------------


@dataclass
class ConstraintValues:
    """Slack values of the step problem: nonnegative means feasible.

    ``ball`` is ``radius - distance``; the pivot entries are LDL pivots
    minus their floors. Pivots whose leading submatrix is singular are
    reported as ``-inf``.
    """

    ball: float
    piv_B: np.ndarray
    piv_D: np.ndarray
    piv_Sigma: np.ndarray

    def min_slack(self) -> float:
        return float(
            min(
                self.ball,
                np.min(self.piv_B),
                np.min(self.piv_D),
                np.min(self.piv_Sigma),
            )
        )


def _pivot_slacks(X: np.ndarray, floor: float) -> np.ndarray:
    try:
        return ldl_diagonals(X) - floor
    except SingularSubmatrixError:
        return np.full(X.shape[0], -np.inf)


def constraints(step: ModelStep, cand: CandidateParams, belief_cov,
                cfg: RobustConfig) -> ConstraintValues:
    """Evaluate all constraint slacks of the step problem under ``cfg``."""
    cfg.validate()
    if cfg.mode == "ot":
        dist = joint_noncausal_distance(step, cand, belief_cov)
    else:
        dist = bicausal_distance(step, cand, belief_cov)
    return ConstraintValues(
        ball=cfg.radius - dist,
        piv_B=_pivot_slacks(cand.B_bar, cfg.d_floor),
        piv_D=_pivot_slacks(cand.D_bar, cfg.delta),
        piv_Sigma=_pivot_slacks(cand.Sigma_bar, cfg.d_floor),
    )


# ---------------------------------------------------------------------------
# Curvature identity
# ---------------------------------------------------------------------------


def hessian_identity_check(step: ModelStep, cand: CandidateParams,
                           direction, h: float = 1e-4):
    """Second directional derivative of ``tr[M' K^{-1} M]`` two ways.

    The left side is a central finite difference along the symmetric
    direction triple ``(dB, dD, dSigma)``; the right side is the closed
    form ``2 tr[K^{-1} L L']`` with::

        L = dD K^{-1}M + C dPhi (C'K^{-1}M - I),   dPhi = A dSigma A' + dB

    Returns
    -------
    (lhs, rhs) : tuple of float
        Both sides; ``rhs`` is nonnegative whenever ``K`` is positive
        definite, which certifies concavity of the objective.
    """
    dB, dD, dS = (symmetrize(d) for d in direction)
    _, M, K = innovation_parts(step, cand)
    try:
        cho = cho_factor(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularKError(
            "candidate innovation covariance is not positive definite"
        ) from exc
    N = cho_solve(cho, M)
    C, A = step.C, step.A
    dPhi = A @ dS @ A.T + dB
    L = dD @ N + C @ dPhi @ (C.T @ N - np.eye(step.n))
    rhs = 2.0 * float(np.sum(cho_solve(cho, L) * L))

    def tr_term(c: CandidateParams) -> float:
        _, Mc, Kc = innovation_parts(step, c)
        return float(np.sum(Mc * _solve_K(Kc, Mc)))

    plus = CandidateParams(cand.B_bar + h * dB, cand.D_bar + h * dD,
                           cand.Sigma_bar + h * dS)
    minus = CandidateParams(cand.B_bar - h * dB, cand.D_bar - h * dD,
                            cand.Sigma_bar - h * dS)
    lhs = (tr_term(plus) - 2.0 * tr_term(cand) + tr_term(minus)) / h ** 2
    return lhs, rhs
