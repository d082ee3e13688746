"""EM estimation of static noise covariances with known dynamics.

Fits constant state and observation noise covariances ``B`` and ``D`` to
one or more observed trajectories while the transition map ``A``, the
observation map ``C``, and the initial belief stay fixed. The E-step runs
a Kalman filter followed by a Rauch-Tung-Striebel smoother per trajectory
(with lag-one covariances); the M-step is the closed-form update of the
two covariances from pooled smoothed second moments. The data log
likelihood is nondecreasing across iterations, which the result records
so callers can assert it.

Estimating ``A`` and ``C`` as well is deliberately out of scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DegenerateDataError
from .matalg import symmetrize
from .statespace import GaussianBelief, StateSpaceModel

__all__ = [
    "ModelSkeleton",
    "EmOptions",
    "EmResult",
    "SmootherResult",
    "smoother",
    "em_fit",
]


@dataclass
class ModelSkeleton:
    """The fixed part of the model EM works around: ``A``, ``C`` and the
    initial belief. Noise covariances are what gets estimated."""

    A: np.ndarray
    C: np.ndarray
    init: GaussianBelief

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass
class EmOptions:
    """Iteration budget, stopping tolerance and initial covariances.

    ``init_B``/``init_D`` of ``None`` mean identity. The tolerance is on
    the relative change of the data log likelihood between iterations.
    """

    max_em_iters: int = 50
    loglik_rel_tol: float = 1e-6
    init_B: np.ndarray | None = None
    init_D: np.ndarray | None = None


@dataclass
class EmResult:
    """Fitted covariances with the log-likelihood path that led to them.

    ``loglik_path[k]`` is the data log likelihood of the parameters at the
    start of iteration ``k``; the last entry evaluates the final
    estimates, so the path has ``iters + 1`` entries and is nondecreasing
    up to roundoff.
    """

    B_hat: np.ndarray
    D_hat: np.ndarray
    loglik_path: list[float] = field(default_factory=list)
    iters: int = 0


@dataclass
class SmootherResult:
    """Smoothed moments of one trajectory.

    ``means[t-1]``/``covs[t-1]`` are the smoothed moments of the state at
    time ``t``; ``lag_one[t-1]`` is the smoothed covariance between the
    states at ``t`` and ``t-1``. ``init_mean``/``init_cov`` are the
    smoothed moments of the time-zero state.
    """

    means: np.ndarray
    covs: np.ndarray
    lag_one: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray


def _repair_psd(X: np.ndarray, what: str) -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues; genuinely
    indefinite matrices are a data problem, not a roundoff one."""
    X = symmetrize(X)
    try:
        np.linalg.cholesky(X)
        return X
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(X)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -1e-8 * scale:
        raise DegenerateDataError(
            f"{what} lost positive semidefiniteness (min eig {w[0]:.3e})"
        )
    w = np.maximum(w, 1e-14 * scale)
    return symmetrize((V * w) @ V.T)


def _forward_pass(model: StateSpaceModel, ys: np.ndarray,
                  init: GaussianBelief):
    """Array-based filter pass returning predicted and filtered moments
    plus the data log likelihood."""
    T = ys.shape[0]
    n = model.n
    m_pred = np.empty((T, n))
    P_pred = np.empty((T, n, n))
    m_filt = np.empty((T, n))
    P_filt = np.empty((T, n, n))
    mean = np.asarray(init.mean, dtype=float)
    cov = symmetrize(np.asarray(init.cov, dtype=float))
    loglik = 0.0
    m = model.m
    for t in range(1, T + 1):
        step = model.step(t)
        mp = step.A @ mean
        Pp = symmetrize(step.A @ cov @ step.A.T + step.B)
        S = symmetrize(step.C @ Pp @ step.C.T + step.D)
        try:
            cho = cho_factor(S, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(
                f"innovation covariance not positive definite at t={t}"
            ) from exc
        innov = ys[t - 1] - step.C @ mp
        si = cho_solve(cho, innov)
        logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
        loglik -= 0.5 * (m * math.log(2.0 * math.pi) + logdet
                         + float(innov @ si))
        gain = cho_solve(cho, step.C @ Pp).T
        mean = mp + gain @ innov
        cov = symmetrize(Pp - gain @ (step.C @ Pp))
        m_pred[t - 1] = mp
        P_pred[t - 1] = Pp
        m_filt[t - 1] = mean
        P_filt[t - 1] = cov
    return m_pred, P_pred, m_filt, P_filt, loglik


def smoother(model: StateSpaceModel, observations,
             init: GaussianBelief) -> SmootherResult:
    """Fixed-interval smoothed moments of the state path.

    Runs the forward filter then the backward recursion; at the final time
    the smoothed and filtered moments coincide. The lag-one covariance
    between consecutive states comes from the smoothing gain:
    ``Cov(x_t, x_{t-1} | all data) = covs[t-1] @ J_{t-1}'``.
    """
    ys = np.atleast_2d(np.asarray(observations, dtype=float))
    fwd = _forward_pass(model, ys, init)
    return _backward_pass(model, ys, init, fwd)


def _backward_pass(model: StateSpaceModel, ys: np.ndarray,
                   init: GaussianBelief, fwd) -> SmootherResult:
    T = ys.shape[0]
    n = model.n
    m_pred, P_pred, m_filt, P_filt, _ = fwd
    means = np.empty((T, n))
    covs = np.empty((T, n, n))
    lag_one = np.empty((T, n, n))
    means[T - 1] = m_filt[T - 1]
    covs[T - 1] = _repair_psd(P_filt[T - 1], "smoothed covariance")
    # backward pass down to the initial belief
    for t in range(T - 1, -1, -1):
        A_next = model.step(t + 1).A
        if t == 0:
            mf = np.asarray(init.mean, dtype=float)
            Pf = symmetrize(np.asarray(init.cov, dtype=float))
        else:
            mf = m_filt[t - 1]
            Pf = P_filt[t - 1]
        try:
            cho = cho_factor(P_pred[t], lower=True)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(
                f"predicted covariance not positive definite at t={t + 1}"
            ) from exc
        J = cho_solve(cho, A_next @ Pf).T
        m_sm = mf + J @ (means[t] - m_pred[t])
        P_sm = _repair_psd(Pf + J @ (covs[t] - P_pred[t]) @ J.T,
                           "smoothed covariance")
        lag_one[t] = covs[t] @ J.T
        if t == 0:
            init_mean, init_cov = m_sm, P_sm
        else:
            means[t - 1] = m_sm
            covs[t - 1] = P_sm
    return SmootherResult(means, covs, lag_one, init_mean, init_cov)


def _em_pass_batched(model: StateSpaceModel, ys3: np.ndarray,
                     init: GaussianBelief, A: np.ndarray, C: np.ndarray):
    """One E-step over equal-length trajectories, exploiting that the
    covariance recursions do not depend on the data: they run once while
    the mean recursions run batched across trajectories.

    Returns the total log likelihood and the pooled M-step sums.
    """
    R, T, m = ys3.shape
    n = model.n
    mean0 = np.asarray(init.mean, dtype=float)
    cov = symmetrize(np.asarray(init.cov, dtype=float))
    Ms = np.broadcast_to(mean0, (R, n)).copy()
    m_pred = np.empty((T, R, n))
    m_filt = np.empty((T, R, n))
    P_pred = np.empty((T, n, n))
    P_filt = np.empty((T, n, n))
    loglik = -0.5 * R * T * m * math.log(2.0 * math.pi)
    for t in range(1, T + 1):
        step = model.step(t)
        Pp = symmetrize(step.A @ cov @ step.A.T + step.B)
        S = symmetrize(step.C @ Pp @ step.C.T + step.D)
        try:
            cho = cho_factor(S, lower=True)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(
                f"innovation covariance not positive definite at t={t}"
            ) from exc
        gain = cho_solve(cho, step.C @ Pp).T
        mp = Ms @ step.A.T
        innov = ys3[:, t - 1, :] - mp @ step.C.T
        si = cho_solve(cho, innov.T).T
        loglik -= 0.5 * (2.0 * R * float(np.sum(np.log(np.diag(cho[0]))))
                         + float(np.sum(innov * si)))
        Ms = mp + innov @ gain.T
        cov = symmetrize(Pp - gain @ (step.C @ Pp))
        m_pred[t - 1] = mp
        P_pred[t - 1] = Pp
        m_filt[t - 1] = Ms
        P_filt[t - 1] = cov
    # backward pass, covariances once, means batched
    sm_means = np.empty((T, R, n))
    sm_covs = np.empty((T, n, n))
    lag_one = np.empty((T, n, n))
    sm_means[T - 1] = m_filt[T - 1]
    sm_covs[T - 1] = _repair_psd(P_filt[T - 1], "smoothed covariance")
    for t in range(T - 1, -1, -1):
        A_next = model.step(t + 1).A
        if t == 0:
            mf = np.broadcast_to(mean0, (R, n))
            Pf = symmetrize(np.asarray(init.cov, dtype=float))
        else:
            mf = m_filt[t - 1]
            Pf = P_filt[t - 1]
        try:
            cho = cho_factor(P_pred[t], lower=True)
        except np.linalg.LinAlgError as exc:
            raise DegenerateDataError(
                f"predicted covariance not positive definite at t={t + 1}"
            ) from exc
        J = cho_solve(cho, A_next @ Pf).T
        m_sm = mf + (sm_means[t] - m_pred[t]) @ J.T
        P_sm = _repair_psd(Pf + J @ (sm_covs[t] - P_pred[t]) @ J.T,
                           "smoothed covariance")
        lag_one[t] = sm_covs[t] @ J.T
        if t == 0:
            init_means, init_cov = m_sm, P_sm
        else:
            sm_means[t - 1] = m_sm
            sm_covs[t - 1] = P_sm
    # pooled M-step sums
    cov_sum = sm_covs.sum(axis=0)
    m_prev = np.concatenate([init_means[None], sm_means[:-1]], axis=0)
    P_prev_sum = R * (init_cov + sm_covs[:-1].sum(axis=0))
    Ex2 = R * cov_sum + np.einsum("tri,trj->ij", sm_means, sm_means)
    L = R * lag_one.sum(axis=0) + np.einsum("tri,trj->ij", sm_means, m_prev)
    Ep2 = P_prev_sum + np.einsum("tri,trj->ij", m_prev, m_prev)
    SB = Ex2 - L @ A.T - A @ L.T + A @ Ep2 @ A.T
    resid = ys3 - sm_means.transpose(1, 0, 2) @ C.T
    SD = np.einsum("rti,rtj->ij", resid, resid) + R * (C @ cov_sum @ C.T)
    return loglik, SB, SD, R * T


def em_fit(skeleton: ModelSkeleton, trajectories, opts: EmOptions | None = None
           ) -> EmResult:
    """Fit static noise covariances by EM.

    Parameters
    ----------
    skeleton : ModelSkeleton
        Known ``A``, ``C`` and initial belief.
    trajectories : sequence of arrays
        Observation sequences, each of shape ``(T_i, m)`` with ``T_i >= 2``;
        sufficient statistics are pooled across them.
    opts : EmOptions, optional
        Budget, tolerance, and initial covariances (identity by default).

    Returns
    -------
    EmResult
        Symmetric positive definite estimates and the log-likelihood path.
    """
    if opts is None:
        opts = EmOptions()
    n, m = skeleton.n, skeleton.m
    ys_list = [np.atleast_2d(np.asarray(ys, dtype=float))
               for ys in trajectories]
    if not ys_list:
        raise DegenerateDataError("no trajectories given")
    for i, ys in enumerate(ys_list):
        if ys.shape[0] < 2:
            raise DegenerateDataError(
                f"trajectory {i} has length {ys.shape[0]}, need at least 2"
            )
        if ys.shape[1] != m:
            raise DegenerateDataError(
                f"trajectory {i} has observation dim {ys.shape[1]}, "
                f"model has m={m}"
            )
    B = np.eye(n) if opts.init_B is None else symmetrize(opts.init_B)
    D = np.eye(m) if opts.init_D is None else symmetrize(opts.init_D)
    A, C = skeleton.A, skeleton.C
    init = skeleton.init
    # equal-length trajectories share their covariance recursions, so the
    # E-step can batch them; mixed lengths fall back to one pass each
    uniform = len({ys.shape[0] for ys in ys_list}) == 1
    ys3 = np.stack(ys_list) if uniform else None

    def e_step(model):
        if uniform:
            return _em_pass_batched(model, ys3, init, A, C)
        SB = np.zeros((n, n))
        SD = np.zeros((m, m))
        count = 0
        loglik = 0.0
        for ys in ys_list:
            fwd = _forward_pass(model, ys, init)
            loglik += fwd[4]
            sm = _backward_pass(model, ys, init, fwd)
            m_prev = np.vstack([sm.init_mean, sm.means[:-1]])
            P_prev_sum = sm.init_cov + sm.covs[:-1].sum(axis=0)
            Ex2 = sm.covs.sum(axis=0) + sm.means.T @ sm.means
            L = sm.lag_one.sum(axis=0) + sm.means.T @ m_prev
            Ep2 = P_prev_sum + m_prev.T @ m_prev
            SB += Ex2 - L @ A.T - A @ L.T + A @ Ep2 @ A.T
            resid = ys - sm.means @ C.T
            SD += resid.T @ resid + C @ sm.covs.sum(axis=0) @ C.T
            count += ys.shape[0]
        return loglik, SB, SD, count

    loglik_path: list[float] = []
    iters = 0
    for _ in range(opts.max_em_iters):
        model = StateSpaceModel.constant(A, C, B, D)
        loglik, SB, SD, count = e_step(model)
        loglik_path.append(loglik)
        if len(loglik_path) >= 2:
            prev = loglik_path[-2]
            if abs(loglik - prev) <= opts.loglik_rel_tol * (1.0 + abs(loglik)):
                break
        B = _repair_psd(SB / count, "state noise estimate")
        D = _repair_psd(SD / count, "observation noise estimate")
        iters += 1
    # value of the final estimates, so the path ends where the fit ends
    final_ll = e_step(StateSpaceModel.constant(A, C, B, D))[0]
    loglik_path.append(final_ll)
    return EmResult(B_hat=B, D_hat=D, loglik_path=loglik_path, iters=iters)
