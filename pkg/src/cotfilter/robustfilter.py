"""Filtering recursion with per-step worst-case noise models.

Each step solves the worst-case problem over the transport ball around
the nominal step model, applies the resulting affine estimator to the new
observation, and carries a posterior forward. Three modes: ``nonrobust``
(the classic Kalman recursion, shared code path, identical bits), ``ot``
(ball in the non-causal joint transport distance) and ``cot`` (ball in
the bi-causal distance).

Which covariance is carried to the next step is configurable: the
worst-case posterior (default; its trace equals the optimal objective
value) or the nominal-model posterior. A zero radius collapses both
robust modes onto the exact Kalman path.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatchError,
    InfeasibleStartError,
    NearSingularBuresError,
    NumericalBreakdownError,
    SingularKError,
)
from .gaussot import CandidateParams
from .minimax import RobustConfig, posterior_cov_robust
from .solver import RobustSolution, SolveTrace, SolverOptions, solve_step
from .statespace import (
    FLOAT_FMT,
    GaussianBelief,
    StateSpaceModel,
    kalman_update,
    predict_joint,
)

__all__ = ["FilterRun", "robust_step", "run_filter"]

logger = logging.getLogger(__name__)

# solver failures that downgrade one step to the nominal update rather
# than aborting a whole run
_FALLBACK_ERRORS = (
    InfeasibleStartError,
    NumericalBreakdownError,
    SingularKError,
    NearSingularBuresError,
    np.linalg.LinAlgError,
)


@dataclass
class FilterRun:
    """Output of one filtering run.

    ``beliefs[t-1]`` is the posterior after observation ``t``;
    ``solutions`` parallels it in the robust modes and stays empty in
    ``nonrobust`` mode. ``warnings`` records any step that fell back to
    the nominal update after a solver failure.
    """

    beliefs: list[GaussianBelief]
    solutions: list[RobustSolution]
    mode: str
    radius: float
    warnings: list[str] = field(default_factory=list)

    def to_csv(self, path) -> None:
        """Write ``t, xhat_1..xhat_n, tr_Sigma, worst_value, solver_iters``
        rows, one per observation."""
        n = self.beliefs[0].mean.size if self.beliefs else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t"] + [f"xhat_{i + 1}" for i in range(n)]
                + ["tr_Sigma", "worst_value", "solver_iters"]
            )
            for i, belief in enumerate(self.beliefs):
                tr = float(np.trace(belief.cov))
                if self.solutions:
                    sol = self.solutions[i]
                    worst = sol.value
                    iters = len(sol.trace.rows)
                else:
                    worst = tr
                    iters = 0
                writer.writerow(
                    [str(i + 1)]
                    + [FLOAT_FMT % v for v in belief.mean]
                    + [FLOAT_FMT % tr, FLOAT_FMT % worst, str(iters)]
                )


def _kalman_step(model: StateSpaceModel, t: int, belief: GaussianBelief,
                 y) -> GaussianBelief:
    """One exact nominal step, the same call sequence as the classic
    filter so the bits match."""
    joint = predict_joint(model, t, belief)
    return kalman_update(joint, model.n, y)


def _nominal_as_solution(model: StateSpaceModel, t: int,
                         belief: GaussianBelief,
                         posterior: GaussianBelief) -> RobustSolution:
    """Diagnostics record for a step that used the nominal model."""
    step = model.step(t)
    params = CandidateParams(step.B, step.D, belief.cov)
    return RobustSolution(
        params=params,
        gain=np.zeros((model.n, model.m)),
        value=float(np.trace(posterior.cov)),
        distance=0.0,
        trace=SolveTrace(),
        converged=True,
    )


def robust_step(model: StateSpaceModel, t: int, belief: GaussianBelief,
                y_t, cfg: RobustConfig, opts: SolverOptions | None = None
                ) -> tuple[GaussianBelief, RobustSolution]:
    """One robust filter step.

    Solves the worst-case problem at the current belief, then estimates
    the new state as ``G* y_t + g*`` with the affine rule of the optimal
    estimator, and returns the new belief plus the solver record. With a
    zero radius or ``mode="nonrobust"`` the step is the exact nominal
    Kalman update.

    Errors raised by the solver propagate to the caller; see
    :func:`run_filter` for the per-step fallback policy.
    """
    cfg.validate()
    y = np.atleast_1d(np.asarray(y_t, dtype=float))
    if y.size != model.m:
        raise DimMismatchError(
            f"observation dim {y.size} does not match model m={model.m}"
        )
    if cfg.mode == "nonrobust" or cfg.radius == 0.0:
        posterior = _kalman_step(model, t, belief, y)
        return posterior, _nominal_as_solution(model, t, belief, posterior)
    step = model.step(t)
    sol = solve_step(step, belief.cov, cfg, opts)
    ax = step.A @ belief.mean
    offset = ax - sol.gain @ (step.C @ ax)
    mean = sol.gain @ y + offset
    if cfg.propagate == "worst_case":
        cov = posterior_cov_robust(step, sol.params)
    else:
        cov = _kalman_step(model, t, belief, y).cov
    return GaussianBelief(mean, cov), sol


def run_filter(model: StateSpaceModel, observations, init: GaussianBelief,
               cfg: RobustConfig, opts: SolverOptions | None = None
               ) -> FilterRun:
    """Run the filter over an observation sequence.

    Deterministic and sequential. A solver failure at some step downgrades
    that step to the nominal Kalman update and records a warning; other
    errors abort the run.

    Returns
    -------
    FilterRun
        Posteriors for every observation, per-step solver records in the
        robust modes, and any fallback warnings.
    """
    cfg.validate()
    ys = np.atleast_2d(np.asarray(observations, dtype=float))
    if ys.shape[1] != model.m:
        raise DimMismatchError(
            f"observation dim {ys.shape[1]} does not match model m={model.m}"
        )
    robust_mode = cfg.mode != "nonrobust"
    beliefs: list[GaussianBelief] = []
    solutions: list[RobustSolution] = []
    warnings: list[str] = []
    belief = init
    for t in range(1, ys.shape[0] + 1):
        try:
            belief, sol = robust_step(model, t, belief, ys[t - 1], cfg, opts)
        except _FALLBACK_ERRORS as exc:
            msg = (f"step {t}: solver failed ({exc.__class__.__name__}: "
                   f"{exc}); used the nominal update")
            logger.warning(msg)
            warnings.append(msg)
            belief = _kalman_step(model, t, belief, ys[t - 1])
            sol = _nominal_as_solution(model, t, beliefs[-1] if beliefs
                                       else init, belief)
        beliefs.append(belief)
        if robust_mode:
            solutions.append(sol)
    return FilterRun(beliefs=beliefs, solutions=solutions, mode=cfg.mode,
                     radius=cfg.radius, warnings=warnings)
