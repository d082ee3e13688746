"""Gaussian transport distances for a single prediction step.

A prediction step carries the state map ``A``, observation map ``C`` and
noise covariances ``B`` (state) and ``D`` (observation). An adversary may
replace ``(B, D)`` and the previous posterior covariance ``Sigma`` with a
candidate triple ``(B_bar, D_bar, Sigma_bar)``. Two squared 2-Wasserstein
type distances between the implied one-step Gaussian laws are provided:

* :func:`joint_noncausal_distance` compares the joint law of
  ``(x_{t-1}, x_t, y_t)`` without any causality restriction;
* :func:`bicausal_distance` restricts couplings to adapted (bi-causal)
  ones, which decouples the step into a noise block and a weighted
  previous-state block and never falls below the non-causal value.

Both distances depend only on covariances: the candidate laws share the
conditional means of the nominal model, so mean terms cancel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatchError
from .matalg import bures_cross, symmetrize

__all__ = [
    "ModelStep",
    "CandidateParams",
    "GaussianMoments",
    "QuadCost",
    "StepMatrices",
    "quadratic_ot_value",
    "w2_gaussian",
    "noise_joint_cov",
    "state_weight",
    "joint_covariance",
    "build_step_matrices",
    "bicausal_distance",
    "joint_noncausal_distance",
]


def _as_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim != 2:
        raise DimMismatchError(f"{name} must be 2-dimensional, got {x.ndim}")
    return x


@dataclass
class ModelStep:
    """System matrices of one step: ``x_t = A x_{t-1} + w_t`` with
    ``w_t ~ N(0, B)`` and ``y_t = C x_t + v_t`` with ``v_t ~ N(0, D)``.

    ``B`` and ``D`` are symmetrized on construction.
    """

    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        self.A = _as_matrix(self.A, "A")
        self.C = _as_matrix(self.C, "C")
        self.B = symmetrize(_as_matrix(self.B, "B"))
        self.D = symmetrize(_as_matrix(self.D, "D"))
        n = self.A.shape[0]
        m = self.C.shape[0]
        if self.A.shape != (n, n):
            raise DimMismatchError(f"A must be square, got {self.A.shape}")
        if self.C.shape != (m, n):
            raise DimMismatchError(
                f"C must be ({m}, {n}) to match A, got {self.C.shape}"
            )
        if self.B.shape != (n, n):
            raise DimMismatchError(f"B must be ({n}, {n}), got {self.B.shape}")
        if self.D.shape != (m, m):
            raise DimMismatchError(f"D must be ({m}, {m}), got {self.D.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass
class CandidateParams:
    """Adversarial replacement ``(B_bar, D_bar, Sigma_bar)`` for the noise
    covariances and previous posterior covariance of one step."""

    B_bar: np.ndarray
    D_bar: np.ndarray
    Sigma_bar: np.ndarray

    def __post_init__(self) -> None:
        self.B_bar = symmetrize(_as_matrix(self.B_bar, "B_bar"))
        self.D_bar = symmetrize(_as_matrix(self.D_bar, "D_bar"))
        self.Sigma_bar = symmetrize(_as_matrix(self.Sigma_bar, "Sigma_bar"))
        n = self.B_bar.shape[0]
        if self.Sigma_bar.shape != (n, n):
            raise DimMismatchError(
                "B_bar and Sigma_bar must share shape, got "
                f"{self.B_bar.shape} and {self.Sigma_bar.shape}"
            )

    def check_step(self, step: ModelStep) -> None:
        """Validate dimensions against a model step."""
        if self.B_bar.shape != (step.n, step.n):
            raise DimMismatchError(
                f"B_bar must be ({step.n}, {step.n}), got {self.B_bar.shape}"
            )
        if self.D_bar.shape != (step.m, step.m):
            raise DimMismatchError(
                f"D_bar must be ({step.m}, {step.m}), got {self.D_bar.shape}"
            )


@dataclass
class GaussianMoments:
    """Mean vector and covariance matrix of a Gaussian law."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = symmetrize(self.cov)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size,) * 2:
            raise DimMismatchError(
                f"mean {self.mean.shape} and cov {self.cov.shape} disagree"
            )

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass
class QuadCost:
    """Coefficients of the quadratic cost
    ``xi1' P xi1 + xi2' Q xi2 + xi1' R xi2`` on a pair of equal-dimension
    marginals."""

    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        self.P = symmetrize(self.P)
        self.Q = symmetrize(self.Q)
        self.R = symmetrize(self.R)
        if not (self.P.shape == self.Q.shape == self.R.shape):
            raise DimMismatchError(
                "P, Q, R must share one square shape, got "
                f"{self.P.shape}, {self.Q.shape}, {self.R.shape}"
            )


@dataclass
class StepMatrices:
    """Derived matrices of one step used by distances and the filter.

    ``sigma2_nom``/``sigma2_alt`` are the joint noise covariances of
    ``(w_t, v_t)`` pushed through the observation map, ``H`` weights the
    previous-state block of the bi-causal distance, ``mu``/``V`` are the
    predicted joint moments of ``(x_t, y_t)`` under the nominal model, and
    ``V_joint`` is the nominal covariance of ``(x_{t-1}, x_t, y_t)``.
    """

    sigma2_nom: np.ndarray
    sigma2_alt: np.ndarray
    H: np.ndarray
    mu: np.ndarray
    V: np.ndarray
    V_joint: np.ndarray


def quadratic_ot_value(p1: GaussianMoments, p2: GaussianMoments,
                       cost: QuadCost) -> float:
    """Optimal value of the quadratic-cost transport problem between two
    Gaussians.

    For marginals ``N(m1, M1)`` and ``N(m2, M2)`` and the cost of
    :class:`QuadCost` the value is::

        m1'P m1 + m2'Q m2 + m1'R m2 + tr[P M1] + tr[Q M2]
            - tr[sqrt(sqrt(M1) R M2 R sqrt(M1))]

    Examples
    --------
    >>> p1 = GaussianMoments([0.0], [[1.0]])
    >>> p2 = GaussianMoments([0.0], [[4.0]])
    >>> cost = QuadCost([[1.0]], [[1.0]], [[-2.0]])
    >>> round(quadratic_ot_value(p1, p2, cost), 12)
    1.0
    """
    if p1.dim != p2.dim:
        raise DimMismatchError(
            f"marginal dims disagree: {p1.dim} vs {p2.dim}"
        )
    if cost.P.shape[0] != p1.dim:
        raise DimMismatchError(
            f"cost dim {cost.P.shape[0]} does not match marginals {p1.dim}"
        )
    m1, m2 = p1.mean, p2.mean
    value = (
        m1 @ cost.P @ m1
        + m2 @ cost.Q @ m2
        + m1 @ cost.R @ m2
        + np.trace(cost.P @ p1.cov)
        + np.trace(cost.Q @ p2.cov)
    )
    value -= bures_cross(p1.cov, cost.R @ p2.cov @ cost.R)
    return float(value)


def w2_gaussian(p1: GaussianMoments, p2: GaussianMoments) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    Equals :func:`quadratic_ot_value` with ``P = Q = I`` and ``R = -2 I``.
    """
    if p1.dim != p2.dim:
        raise DimMismatchError(
            f"marginal dims disagree: {p1.dim} vs {p2.dim}"
        )
    dm = p1.mean - p2.mean
    return float(
        dm @ dm
        + np.trace(p1.cov)
        + np.trace(p2.cov)
        - 2.0 * bures_cross(p1.cov, p2.cov)
    )


def noise_joint_cov(C: np.ndarray, B: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Covariance of ``(w_t, C w_t + v_t)`` for independent noises:
    ``[[B, B C'], [C B, C B C' + D]]``."""
    BCt = B @ C.T
    top = np.hstack([B, BCt])
    bottom = np.hstack([BCt.T, C @ BCt + D])
    return np.vstack([top, bottom])


def state_weight(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Weight ``I + A'A + (CA)'(CA)`` applied to the previous-state block of
    the bi-causal distance."""
    n = A.shape[0]
    CA = C @ A
    return np.eye(n) + A.T @ A + CA.T @ CA


def joint_covariance(A: np.ndarray, C: np.ndarray, B: np.ndarray,
                     D: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    """Covariance of ``(x_{t-1}, x_t, y_t)`` when ``x_{t-1} ~ N(., Sigma)``.

    With ``P = A Sigma A' + B`` the blocks are::

        [[Sigma,    Sigma A',    Sigma (CA)'],
         [A Sigma,  P,           P C'       ],
         [CA Sigma, C P,         C P C' + D ]]
    """
    n = A.shape[0]
    m = C.shape[0]
    ASig = A @ Sigma
    P = ASig @ A.T + B
    PCt = P @ C.T
    out = np.empty((2 * n + m, 2 * n + m))
    out[:n, :n] = Sigma
    out[:n, n:2 * n] = ASig.T
    out[:n, 2 * n:] = (C @ ASig).T
    out[n:2 * n, :n] = ASig
    out[n:2 * n, n:2 * n] = P
    out[n:2 * n, 2 * n:] = PCt
    out[2 * n:, :n] = C @ ASig
    out[2 * n:, n:2 * n] = PCt.T
    out[2 * n:, 2 * n:] = C @ PCt + D
    return symmetrize(out)


def build_step_matrices(step: ModelStep, alt: CandidateParams,
                        belief_cov, x_hat=None) -> StepMatrices:
    """Assemble the derived matrices of one step.

    Parameters
    ----------
    step : ModelStep
        Nominal system matrices.
    alt : CandidateParams
        Candidate ``(B_bar, D_bar, Sigma_bar)``.
    belief_cov : array_like
        Previous nominal posterior covariance ``Sigma``.
    x_hat : array_like, optional
        Previous posterior mean; defaults to zero. Only affects ``mu``.
    """
    alt.check_step(step)
    Sigma = symmetrize(belief_cov)
    if Sigma.shape != (step.n, step.n):
        raise DimMismatchError(
            f"belief_cov must be ({step.n}, {step.n}), got {Sigma.shape}"
        )
    if x_hat is None:
        x_hat = np.zeros(step.n)
    x_hat = np.atleast_1d(np.asarray(x_hat, dtype=float))
    A, C, B, D = step.A, step.C, step.B, step.D
    ASig = A @ Sigma
    P = ASig @ A.T + B
    PCt = P @ C.T
    V = np.block([[P, PCt], [PCt.T, C @ PCt + D]])
    mx = A @ x_hat
    mu = np.concatenate([mx, C @ mx])
    return StepMatrices(
        sigma2_nom=noise_joint_cov(C, B, D),
        sigma2_alt=noise_joint_cov(C, alt.B_bar, alt.D_bar),
        H=state_weight(A, C),
        mu=mu,
        V=symmetrize(V),
        V_joint=joint_covariance(A, C, B, D, Sigma),
    )


def bicausal_distance(step: ModelStep, alt: CandidateParams,
                      belief_cov) -> float:
    """Squared bi-causal transport distance between the nominal and
    candidate one-step laws.

    Decouples into a noise block and a weighted previous-state block::

        tr[S + S_bar - 2 sqrt(sqrt(S) S_bar sqrt(S))]
        + tr[H Sigma + H Sigma_bar
             - 2 sqrt(sqrt(Sigma) H Sigma_bar H sqrt(Sigma))]

    where ``S``/``S_bar`` are the nominal/candidate joint noise covariances
    and ``H`` is :func:`state_weight`.
    """
    alt.check_step(step)
    Sigma = symmetrize(belief_cov)
    S_nom = noise_joint_cov(step.C, step.B, step.D)
    S_alt = noise_joint_cov(step.C, alt.B_bar, alt.D_bar)
    H = state_weight(step.A, step.C)
    noise_term = (
        float(np.trace(S_nom) + np.trace(S_alt))
        - 2.0 * bures_cross(S_nom, S_alt)
    )
    state_term = (
        float(np.trace(H @ Sigma) + np.trace(H @ alt.Sigma_bar))
        - 2.0 * bures_cross(Sigma, H @ alt.Sigma_bar @ H)
    )
    return noise_term + state_term


def joint_noncausal_distance(step: ModelStep, alt: CandidateParams,
                             belief_cov) -> float:
    """Squared 2-Wasserstein distance between the nominal and candidate
    joint laws of ``(x_{t-1}, x_t, y_t)``, without causality restrictions.

    Never exceeds :func:`bicausal_distance` on the same arguments.
    """
    alt.check_step(step)
    Sigma = symmetrize(belief_cov)
    V_nom = joint_covariance(step.A, step.C, step.B, step.D, Sigma)
    V_alt = joint_covariance(step.A, step.C, alt.B_bar, alt.D_bar,
                             alt.Sigma_bar)
    return float(
        np.trace(V_nom) + np.trace(V_alt) - 2.0 * bures_cross(V_nom, V_alt)
    )
