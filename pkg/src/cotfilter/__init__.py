"""Distributionally robust Kalman filtering under volatility uncertainty.

The package implements a linear-Gaussian filter whose update step guards
against misspecified noise covariances: an adversary may perturb the state
noise, observation noise, and prior covariance inside a transport ball
(bi-causal or non-causal), and the filter plays the best affine estimator
against the worst case. Supporting pieces: Gaussian transport distances,
a small interior-point solver for the concave step problem, EM calibration
of static noise covariances, and two reference experiments (target
tracking, pairs trading) with CSV and figure reports.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataGapError,
    DegenerateDataError,
    DegenerateVError,
    DimMismatchError,
    InfeasibleStartError,
    InsufficientHistoryError,
    NearSingularBuresError,
    NotPDError,
    NotPSDError,
    NumericalBreakdownError,
    NumericsError,
    SingularKError,
    SingularSubmatrixError,
    SingularVyyError,
)
from .gaussot import (
    CandidateParams,
    GaussianMoments,
    ModelStep,
    QuadCost,
    StepMatrices,
    bicausal_distance,
    build_step_matrices,
    joint_noncausal_distance,
    quadratic_ot_value,
    w2_gaussian,
)
from .matalg import (
    bures_cross,
    ldl_diagonals,
    min_eigenvalue,
    sqrt_psd,
    symmetrize,
)
from .minimax import (
    ConstraintValues,
    RobustConfig,
    constraints,
    grad_F,
    grad_w,
    grad_w_joint,
    hessian_identity_check,
    objective_F,
    posterior_cov_robust,
    robust_gain,
)
from .statespace import (
    GaussianBelief,
    StateSpaceModel,
    Trajectory,
    kalman_filter,
    kalman_update,
    predict_joint,
    simulate,
    trajectory_from_csv,
    trajectory_to_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
