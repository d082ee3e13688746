"""Linear-Gaussian state space model, classic filter, and simulation.

The model is ``x_t = A_t x_{t-1} + w_t``, ``y_t = C_t x_t + v_t`` with
independent Gaussian noises ``w_t ~ N(0, B_t)``, ``v_t ~ N(0, D_t)``.
Steps are indexed ``t = 1..T``; system matrices are supplied as callables
of ``t`` so time-varying models cost nothing extra.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DegenerateVError,
    DimMismatchError,
    NotPDError,
    SingularVyyError,
)
from .gaussot import GaussianMoments, ModelStep
from .matalg import min_eigenvalue, psd_tolerance, symmetrize

__all__ = [
    "GaussianBelief",
    "Trajectory",
    "StateSpaceModel",
    "predict_joint",
    "kalman_update",
    "kalman_filter",
    "simulate",
    "trajectory_to_csv",
    "trajectory_from_csv",
]

#: Numeric text format used by every CSV writer in the package; 17
#: significant digits round-trip ieee754 doubles exactly.
FLOAT_FMT = "%.17g"


@dataclass
class GaussianBelief:
    """Posterior ``N(mean, cov)`` over the current state."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = symmetrize(self.cov)
        if self.cov.shape != (self.mean.size,) * 2:
            raise DimMismatchError(
                f"mean {self.mean.shape} and cov {self.cov.shape} disagree"
            )


@dataclass
class Trajectory:
    """Simulated states and observations for steps ``1..T``."""

    states: np.ndarray
    observations: np.ndarray
    init_state: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.observations = np.atleast_2d(
            np.asarray(self.observations, dtype=float)
        )
        if self.states.shape[0] != self.observations.shape[0]:
            raise DimMismatchError(
                "states and observations must have equal length, got "
                f"{self.states.shape[0]} and {self.observations.shape[0]}"
            )
        if self.init_state is not None:
            self.init_state = np.atleast_1d(
                np.asarray(self.init_state, dtype=float)
            )

    def __len__(self) -> int:
        return self.states.shape[0]


MatrixFn = Callable[[int], np.ndarray]


def _constant(x: np.ndarray) -> MatrixFn:
    return lambda t: x


@dataclass
class StateSpaceModel:
    """System matrices as step-indexed callables plus dimensions."""

    n: int
    m: int
    A: MatrixFn
    C: MatrixFn
    B: MatrixFn
    D: MatrixFn

    @classmethod
    def constant(cls, A, C, B, D) -> "StateSpaceModel":
        """Build a time-invariant model from constant matrices."""
        step = ModelStep(A, C, B, D)  # validates shapes once
        return cls(
            n=step.n,
            m=step.m,
            A=_constant(step.A),
            C=_constant(step.C),
            B=_constant(step.B),
            D=_constant(step.D),
        )

    def step(self, t: int) -> ModelStep:
        """System matrices of step ``t`` as a :class:`ModelStep`."""
        return ModelStep(self.A(t), self.C(t), self.B(t), self.D(t))


def predict_joint(model: StateSpaceModel, t: int,
                  belief: GaussianBelief) -> GaussianMoments:
    """Predicted joint law of ``(x_t, y_t)`` given the step ``t-1``
    posterior.

    With ``P = A Sigma A' + B`` the covariance blocks are
    ``[[P, P C'], [C P, C P C' + D]]`` and the mean is
    ``(A x_hat, C A x_hat)``.

    Raises
    ------
    DegenerateVError
        If the predicted covariance fails the PSD check.
    """
    if belief.mean.size != model.n:
        raise DimMismatchError(
            f"belief dim {belief.mean.size} does not match model n={model.n}"
        )
    A = model.A(t)
    C = model.C(t)
    B = model.B(t)
    D = model.D(t)
    mx = A @ belief.mean
    P = A @ belief.cov @ A.T + B
    PCt = P @ C.T
    V = np.block([[P, PCt], [PCt.T, C @ PCt + D]])
    V = symmetrize(V)
    if min_eigenvalue(V) < -psd_tolerance(V):
        raise DegenerateVError(
            "predicted joint covariance is not positive semidefinite"
        )
    return GaussianMoments(np.concatenate([mx, C @ mx]), V)


def kalman_update(joint: GaussianMoments, n: int, y) -> GaussianBelief:
    """Condition a joint Gaussian over ``(x, y)`` on an observed ``y``.

    Parameters
    ----------
    joint : GaussianMoments
        Joint law with the first ``n`` coordinates the state.
    n : int
        State dimension.
    y : array_like
        Observed value of the remaining coordinates.

    Raises
    ------
    SingularVyyError
        If the observation block of the covariance is singular.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = joint.dim - n
    if y.size != m:
        raise DimMismatchError(
            f"observation dim {y.size} does not match joint ({m})"
        )
    V = joint.cov
    Vxx = V[:n, :n]
    Vxy = V[:n, n:]
    Vyy = V[n:, n:]
    try:
        cho = cho_factor(Vyy, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularVyyError(
            "observation block of predicted covariance is singular"
        ) from exc
    gain = cho_solve(cho, Vxy.T).T
    mean = joint.mean[:n] + gain @ (y - joint.mean[n:])
    cov = symmetrize(Vxx - gain @ Vxy.T)
    return GaussianBelief(mean, cov)


def kalman_filter(model: StateSpaceModel, observations,
                  init: GaussianBelief) -> list[GaussianBelief]:
    """Run the classic filter over observations for steps ``1..T``.

    Returns the posterior beliefs after each update; ``init`` is the step-0
    belief and is not included in the output.
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    if observations.shape[1] != model.m:
        raise DimMismatchError(
            f"observations have dim {observations.shape[1]}, model m={model.m}"
        )
    belief = init
    out: list[GaussianBelief] = []
    for t in range(1, observations.shape[0] + 1):
        joint = predict_joint(model, t, belief)
        belief = kalman_update(joint, model.n, observations[t - 1])
        out.append(belief)
    return out


def _sample_factor(cov: np.ndarray, name: str) -> np.ndarray:
    """Left factor ``L`` with ``L L' = cov`` for Gaussian sampling.

    Cholesky first; on failure retry with ``1e-12 * trace`` jitter, then
    fall back to an eigenvalue factor with negatives clamped at the PSD
    tolerance (rejecting genuinely indefinite input).
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    tr = float(np.trace(cov))
    if tr > 0.0:
        try:
            return np.linalg.cholesky(cov + 1e-12 * tr * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            pass
    w, v = np.linalg.eigh(cov)
    if w[0] < -psd_tolerance(cov):
        raise NotPDError(f"{name} is not a valid noise covariance")
    return v * np.sqrt(np.maximum(w, 0.0))


def simulate(model: StateSpaceModel, T: int, seed: int,
             init_state) -> Trajectory:
    """Draw one trajectory of length ``T`` from the model.

    Noise draw order is fixed (state noise then observation noise at each
    step), so a seed pins the trajectory bit-for-bit.
    """
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(init_state, dtype=float)).copy()
    if x.size != model.n:
        raise DimMismatchError(
            f"init_state dim {x.size} does not match model n={model.n}"
        )
    states = np.empty((T, model.n))
    obs = np.empty((T, model.m))
    for t in range(1, T + 1):
        A = model.A(t)
        C = model.C(t)
        Lb = _sample_factor(symmetrize(model.B(t)), "B")
        Ld = _sample_factor(symmetrize(model.D(t)), "D")
        x = A @ x + Lb @ rng.standard_normal(model.n)
        states[t - 1] = x
        obs[t - 1] = C @ x + Ld @ rng.standard_normal(model.m)
    return Trajectory(states, obs, init_state=np.asarray(init_state, float))


def trajectory_to_csv(traj: Trajectory, path) -> None:
    """Write a trajectory as ``t, x_1..x_n, y_1..y_m`` rows."""
    n = traj.states.shape[1]
    m = traj.observations.shape[1]
    header = (
        ["t"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"y_{j + 1}" for j in range(m)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(len(traj)):
            row = [str(t + 1)]
            row += [FLOAT_FMT % v for v in traj.states[t]]
            row += [FLOAT_FMT % v for v in traj.observations[t]]
            writer.writerow(row)


def trajectory_from_csv(path) -> Trajectory:
    """Read a trajectory written by :func:`trajectory_to_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: expected header starting with 't'")
        n = sum(1 for h in header if h.startswith("x_"))
        m = sum(1 for h in header if h.startswith("y_"))
        if 1 + n + m != len(header):
            raise ValueError(f"{path}: unexpected columns in {header}")
        states = []
        obs = []
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row[1:]]
            states.append(vals[:n])
            obs.append(vals[n:])
    return Trajectory(np.array(states), np.array(obs))
