"""Interior-point solver for the worst-case step problem.

The problem solved here, for one filter step, is

    maximize    F(B_bar, D_bar, Sigma_bar)
    subject to  distance(candidate, nominal) <= radius,
                LDL pivots of B_bar, Sigma_bar >= d_floor,
                LDL pivots of D_bar >= delta,

where ``F`` is the concave worst-case estimation error of
:mod:`cotfilter.minimax` and the distance is the bi-causal (``cot``) or
non-causal joint (``ot``) transport distance. Pivot floors stand in for the
positive (semi)definiteness constraints: a symmetric matrix is positive
definite exactly when all its pivots are positive, and each pivot is a
concave function of the matrix, so the feasible set is convex.

Method: a log-barrier path followed with damped Newton steps inside a
dogleg trust region. The variables are the stacked lower triangles of the
three candidate matrices. All curvature is analytic:

* the objective Hessian comes from the bilinear form
  ``2 tr[K^{-1} L(d1) L(d2)']`` of the curvature identity
  (:func:`cotfilter.minimax.hessian_identity_check` cross-checks it);
* the ball Hessian uses divided differences of ``x -> x**-0.5`` on the
  eigenvalues of the inner Bures matrices;
* pivot constraints contribute their exact gradients and Gauss-Newton
  barrier curvature ``mu * g g' / s**2`` (their own second derivative is
  omitted; the trust region absorbs the difference).

The barrier weight starts at ``0.1 * max(1, |F(nominal)|)`` and shrinks by
matching the duality-gap estimate ``sum(lambda_i s_i)`` of nonnegative
least-squares multipliers (with a Newton-decrement cascade as a fallback),
so the weight tracks wherever the iterate currently sits instead of
forcing it to re-center after every reduction. Iterates stay strictly feasible throughout (trial points outside
the feasible set are rejected during backtracking), every recorded trace
row is feasible, and the whole procedure is deterministic: same inputs,
same iterates, bit for bit.

A zero radius (or ``mode="nonrobust"``) short-circuits to the nominal
parameters, whose estimator is the classic Kalman update.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import nnls

from .errors import InfeasibleStartError, SingularSubmatrixError
from .gaussot import (
    CandidateParams,
    ModelStep,
    joint_covariance,
    noise_joint_cov,
    state_weight,
)
from .matalg import ldl_pivot_data, sqrt_psd, symmetrize
from .minimax import RobustConfig, _dd_invsqrt, innovation_parts

__all__ = [
    "SolverOptions",
    "SolveTrace",
    "RobustSolution",
    "KktReport",
    "solve_step",
    "verify_kkt",
]

_TRACE_FMT = "%.17g"


@dataclass
class SolverOptions:
    """Tuning knobs of the barrier solver.

    ``max_iters`` of ``None`` defers to :attr:`RobustConfig.max_iters`.
    ``gradient_tolerance`` is relative to the objective gradient scale;
    ``feasibility_tolerance`` is the strictness margin used when declaring
    convergence; ``initial_tr_radius`` scales the first trust region.
    """

    max_iters: int | None = None
    gradient_tolerance: float = 1e-7
    feasibility_tolerance: float = 1e-12
    initial_tr_radius: float = 1.0
    verbose: bool = False


@dataclass
class SolveTrace:
    """Per-iteration record of a solve plus convergence metadata."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    mu_final: float = 0.0
    kkt_residual: float = 0.0

    def to_csv(self, path) -> None:
        """Write rows as ``iter, F, min_slack, step_norm``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "F", "min_slack", "step_norm"])
            for it, f_val, slack, step in self.rows:
                writer.writerow(
                    [str(it)] + [_TRACE_FMT % v for v in (f_val, slack, step)]
                )


@dataclass
class RobustSolution:
    """Worst-case parameters and the estimator they induce.

    ``gain`` is ``G = M' K^{-1}`` evaluated at ``params``; ``value`` is the
    worst-case objective; ``distance`` the transport distance spent.
    """

    params: CandidateParams
    gain: np.ndarray
    value: float
    distance: float
    trace: SolveTrace
    converged: bool


@dataclass
class KktReport:
    """First-order optimality diagnostics at a solution."""

    stationarity: float
    multipliers: np.ndarray
    complementarity: float
    ball_active: bool


# ---------------------------------------------------------------------------
# variable packing
# ---------------------------------------------------------------------------


class _VechBlocks:
    """Stacks the lower triangles of (B_bar, D_bar, Sigma_bar) into one
    vector and maps symmetric-matrix gradients into that space."""

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self.idx = []
        offset = 0
        for k in (n, m, n):
            il, jl = np.tril_indices(k)
            wt = np.where(il == jl, 1.0, 2.0)
            self.idx.append((k, il, jl, wt, offset))
            offset += il.size
        self.size = offset

    def pack(self, B: np.ndarray, D: np.ndarray, S: np.ndarray) -> np.ndarray:
        out = np.empty(self.size)
        for X, (k, il, jl, _, off) in zip((B, D, S), self.idx):
            out[off:off + il.size] = X[il, jl]
        return out

    def unpack(self, x: np.ndarray):
        mats = []
        for k, il, jl, _, off in self.idx:
            X = np.zeros((k, k))
            v = x[off:off + il.size]
            X[il, jl] = v
            X[jl, il] = v
            mats.append(X)
        return mats

    def grad(self, gB: np.ndarray, gD: np.ndarray, gS: np.ndarray) -> np.ndarray:
        out = np.empty(self.size)
        for G, (k, il, jl, wt, off) in zip((gB, gD, gS), self.idx):
            out[off:off + il.size] = G[il, jl] * wt
        return out

    def block_grad(self, which: int, G: np.ndarray) -> np.ndarray:
        """Gradient living in a single block, zero elsewhere."""
        out = np.zeros(self.size)
        k, il, jl, wt, off = self.idx[which]
        out[off:off + il.size] = G[il, jl] * wt
        return out


def _basis_tensor(left: np.ndarray, right: np.ndarray, il, jl) -> np.ndarray:
    """Stack ``left @ E_pq @ right`` over the symmetric basis ``E_pq``
    enumerated by ``(il, jl)``; both triangle entries of ``E`` are 1."""
    full = np.einsum("ip,qj->pqij", left, right)
    full = full + full.transpose(1, 0, 2, 3)
    out = full[il, jl]
    same = il == jl
    out[same] *= 0.5
    return out


# ---------------------------------------------------------------------------
# per-solve geometry
# ---------------------------------------------------------------------------


class _Point:
    """Cached evaluation of one candidate point."""

    __slots__ = (
        "x", "B", "D", "S", "F", "dist", "slacks",
        "cho_K", "N", "chols", "pivots", "eigs",
    )


class _Geometry:
    """Constant data of one solve plus value/derivative evaluation."""

    def __init__(self, step: ModelStep, Sigma: np.ndarray, cfg: RobustConfig):
        self.step = step
        self.Sigma = Sigma
        self.cfg = cfg
        self.n, self.m = step.n, step.m
        self.vech = _VechBlocks(self.n, self.m)
        n, m = self.n, self.m
        A, C = step.A, step.C
        self.eye_n = np.eye(n)
        self.eye_m = np.eye(m)
        if cfg.mode == "cot":
            S_nom = noise_joint_cov(C, step.B, step.D)
            self.R1 = sqrt_psd(S_nom)
            self.tr_noise_nom = float(np.trace(S_nom))
            self.Hw = state_weight(A, C)
            self.U2 = sqrt_psd(Sigma) @ self.Hw
            self.tr_state_nom = float(np.trace(self.Hw @ Sigma))
            # R1 @ [I; C] and R1 @ [0; I] for pullbacks onto B and D
            self.R1J = self.R1[:, :n] + self.R1[:, n:] @ C
            self.R1E = self.R1[:, n:]
        else:
            V1 = joint_covariance(A, C, step.B, step.D, Sigma)
            self.R1 = sqrt_psd(V1)
            self.tr_joint_nom = float(np.trace(V1))
            JS = np.vstack([np.eye(n), A, C @ A])
            JB = np.vstack([np.zeros((n, n)), np.eye(n), C])
            self.JS = JS
            self.JB = JB
            self.R1JS = self.R1 @ JS
            self.R1JB = self.R1 @ JB
            self.R1JD = self.R1[:, 2 * n:]
        # floors, possibly relaxed by starting_point()
        self.floors = [cfg.d_floor, cfg.delta, cfg.d_floor]

    # -- feasible start ----------------------------------------------------

    def relax_floors(self):
        """Pivot-floor relaxation so the nominal triple is admissible.

        Returns the (possibly jittered) start matrices and any warnings;
        mutates ``self.floors`` when the nominal sits below a floor.
        """
        warnings: list[str] = []
        mats = [self.step.B.copy(), self.step.D.copy(), self.Sigma.copy()]
        names = ("B_bar", "D_bar", "Sigma_bar")
        for i, X in enumerate(mats):
            jit = max(1e-12, 1e-12 * abs(float(np.trace(X))))
            for _ in range(8):
                try:
                    piv, _ = ldl_pivot_data(X)
                    min_piv = float(np.min(piv))
                except SingularSubmatrixError:
                    min_piv = 0.0
                if min_piv > 0.0:
                    break
                X = X + jit * np.eye(X.shape[0])
                mats[i] = X
                jit *= 10.0
                warnings.append(
                    f"nominal {names[i]} is singular; start jittered"
                )
            else:
                raise InfeasibleStartError(
                    f"could not build a positive definite start for {names[i]}"
                )
            if min_piv <= self.floors[i]:
                self.floors[i] = 0.5 * min_piv
                warnings.append(
                    f"pivot floor on {names[i]} relaxed to "
                    f"{self.floors[i]:.3e} to admit the nominal point"
                )
        return mats, warnings

    def starting_point(self):
        """Strictly feasible start at (or, if necessary, jittered from) the
        nominal triple, relaxing pivot floors the nominal violates."""
        mats, warnings = self.relax_floors()
        x0 = self.vech.pack(*mats)
        pt = self.eval(x0)
        if pt is None or np.min(pt.slacks) <= 0.0:
            # jittered start may have consumed ball slack; it cannot for the
            # exact nominal, so fall back to zero jitter if possible
            x0 = self.vech.pack(self.step.B, self.step.D, self.Sigma)
            pt = self.eval(x0)
            if pt is None or np.min(pt.slacks) <= 0.0:
                raise InfeasibleStartError(
                    "no strictly feasible starting point"
                )
        return pt, warnings

    # -- evaluation ---------------------------------------------------------

    def eval(self, x: np.ndarray):
        """Evaluate objective, distance and slacks; ``None`` if the point is
        outside the domain (indefinite blocks, singular K, non-finite)."""
        B, D, S = self.vech.unpack(x)
        pt = _Point()
        pt.x = x
        pt.B, pt.D, pt.S = B, D, S
        # pivots are the squared Cholesky diagonal; a factorization failure
        # means the point is outside the positive definite domain
        try:
            chols = [np.linalg.cholesky(X) for X in (B, D, S)]
        except np.linalg.LinAlgError:
            return None
        pivots = [np.diag(L) ** 2 for L in chols]
        slack_list = [piv - floor for piv, floor in zip(pivots, self.floors)]
        step = self.step
        Phi = symmetrize(step.A @ S @ step.A.T + B)
        M = step.C @ Phi
        K = symmetrize(M @ step.C.T + D)
        try:
            cho = cho_factor(K, lower=True)
        except np.linalg.LinAlgError:
            return None
        N = cho_solve(cho, M)
        F = float(np.trace(Phi) - np.sum(M * N))
        eigs = {}
        if self.cfg.mode == "cot":
            S_alt = noise_joint_cov(step.C, B, D)
            G1 = symmetrize(self.R1 @ S_alt @ self.R1)
            lam1, Q1 = np.linalg.eigh(G1)
            G2 = symmetrize(self.U2 @ S @ self.U2.T)
            lam2, Q2 = np.linalg.eigh(G2)
            dist = (
                self.tr_noise_nom + float(np.trace(S_alt))
                - 2.0 * float(np.sum(np.sqrt(np.maximum(lam1, 0.0))))
                + self.tr_state_nom + float(np.trace(self.Hw @ S))
                - 2.0 * float(np.sum(np.sqrt(np.maximum(lam2, 0.0))))
            )
            eigs["noise"] = (lam1, Q1)
            eigs["state"] = (lam2, Q2)
        else:
            Va = joint_covariance(step.A, step.C, B, D, S)
            Gj = symmetrize(self.R1 @ Va @ self.R1)
            lamj, Qj = np.linalg.eigh(Gj)
            dist = (
                self.tr_joint_nom + float(np.trace(Va))
                - 2.0 * float(np.sum(np.sqrt(np.maximum(lamj, 0.0))))
            )
            eigs["joint"] = (lamj, Qj)
        slacks = np.concatenate(
            [[self.cfg.radius - dist]] + slack_list
        )
        if not (np.isfinite(F) and np.all(np.isfinite(slacks))):
            return None
        pt.F = F
        pt.dist = dist
        pt.slacks = slacks
        pt.cho_K = cho
        pt.N = N
        pt.chols = chols
        pt.pivots = pivots
        pt.eigs = eigs
        return pt

    # -- derivatives ---------------------------------------------------------

    def _invsqrt_weight(self, lam: np.ndarray, Q: np.ndarray, U: np.ndarray):
        """``U' G^{-1/2} U`` with small eigenvalues treated by
        pseudo-inverse (structurally null directions contribute nothing)."""
        lam_max = max(1.0, float(lam[-1]))
        w = np.where(lam > 1e-13 * lam_max, 1.0 / np.sqrt(np.maximum(lam, 1e-300)), 0.0)
        QU = Q.T @ U
        return QU.T @ (QU * w[:, None])

    def gradients(self, pt: _Point):
        """Objective gradient and constraint-slack gradients (rows) in the
        packed variable space. Row 0 is the ball slack."""
        step = self.step
        n, m = self.n, self.m
        C, A = step.C, step.A
        N = pt.N
        CN = C.T @ N
        core = self.eye_n - CN - CN.T + C.T @ (N @ N.T) @ C
        gF = self.vech.grad(
            symmetrize(core), N @ N.T, symmetrize(A.T @ core @ A)
        )
        # ball gradient (of the distance, negated to get the slack gradient)
        if self.cfg.mode == "cot":
            lam1, Q1 = pt.eigs["noise"]
            W = np.eye(n + m) - self._invsqrt_weight(lam1, Q1, self.R1)
            gwB = W[:n, :n] + W[:n, n:] @ C + C.T @ W[n:, :n] \
                + C.T @ W[n:, n:] @ C
            gwD = W[n:, n:]
            lam2, Q2 = pt.eigs["state"]
            gwS = self.Hw - self._invsqrt_weight(lam2, Q2, self.U2)
        else:
            lamj, Qj = pt.eigs["joint"]
            W = np.eye(2 * n + m) - self._invsqrt_weight(lamj, Qj, self.R1)
            gwS = self.JS.T @ W @ self.JS
            gwB = self.JB.T @ W @ self.JB
            gwD = W[2 * n:, 2 * n:]
        gw = self.vech.grad(symmetrize(gwB), symmetrize(gwD), symmetrize(gwS))
        rows = [-gw]
        for which, (L, piv) in enumerate(zip(pt.chols, pt.pivots)):
            k = piv.size
            for j in range(k):
                G = np.zeros((k, k))
                G[j, j] = 1.0
                if j:
                    # u = Z^{-1} c recovered from the Cholesky factor
                    u = solve_triangular(L[:j, :j], L[j, :j],
                                         lower=True, trans=1)
                    G[:j, j] = -u
                    G[j, :j] = -u
                    G[:j, :j] = np.outer(u, u)
                rows.append(self.vech.block_grad(which, G))
        return gF, np.array(rows)

    def hessians(self, pt: _Point):
        """Hessians in the packed space: of ``-F`` (PSD) and of the ball
        distance (PSD)."""
        step = self.step
        n, m = self.n, self.m
        C, A = step.C, step.A
        vech = self.vech
        ilB, jlB = vech.idx[0][1], vech.idx[0][2]
        ilD, jlD = vech.idx[1][1], vech.idx[1][2]
        ilS, jlS = vech.idx[2][1], vech.idx[2][2]
        # objective curvature via L(d) = dD N + C dPhi (C'N - I)
        N = pt.N
        RB = C.T @ N - self.eye_n
        L_B = _basis_tensor(C, RB, ilB, jlB)
        L_D = _basis_tensor(self.eye_m, N, ilD, jlD)
        L_S = _basis_tensor(C @ A, A.T @ RB, ilS, jlS)
        Ltens = np.concatenate([L_B, L_D, L_S], axis=0)
        flat = Ltens.transpose(1, 0, 2).reshape(m, -1)
        KiL = cho_solve(pt.cho_K, flat).reshape(m, -1, n).transpose(1, 0, 2)
        H_obj = 2.0 * np.einsum("aij,bij->ab", KiL, Ltens)
        # ball curvature via divided differences of x**-0.5
        H_ball = np.zeros((vech.size, vech.size))
        if self.cfg.mode == "cot":
            lam1, Q1 = pt.eigs["noise"]
            dd1 = _dd_invsqrt(lam1)
            OmB = Q1.T @ self.R1J
            OmD = Q1.T @ self.R1E
            T_B = _basis_tensor(OmB, OmB.T, ilB, jlB)
            T_D = _basis_tensor(OmD, OmD.T, ilD, jlD)
            T1 = np.concatenate([T_B, T_D], axis=0)
            Hbd = -np.einsum("aij,ij,bij->ab", T1, dd1, T1)
            nbd = T1.shape[0]
            H_ball[:nbd, :nbd] = Hbd
            lam2, Q2 = pt.eigs["state"]
            dd2 = _dd_invsqrt(lam2)
            OmS = Q2.T @ self.U2
            T_S = _basis_tensor(OmS, OmS.T, ilS, jlS)
            H_ball[nbd:, nbd:] = -np.einsum("aij,ij,bij->ab", T_S, dd2, T_S)
        else:
            lamj, Qj = pt.eigs["joint"]
            ddj = _dd_invsqrt(lamj)
            OmB = Qj.T @ self.R1JB
            OmD = Qj.T @ self.R1JD
            OmS = Qj.T @ self.R1JS
            T_B = _basis_tensor(OmB, OmB.T, ilB, jlB)
            T_D = _basis_tensor(OmD, OmD.T, ilD, jlD)
            T_S = _basis_tensor(OmS, OmS.T, ilS, jlS)
            Tj = np.concatenate([T_B, T_D, T_S], axis=0)
            H_ball = -np.einsum("aij,ij,bij->ab", Tj, ddj, Tj)
        return symmetrize(H_obj), symmetrize(H_ball)


# ---------------------------------------------------------------------------
# trust-region machinery
# ---------------------------------------------------------------------------


def _dogleg(H: np.ndarray, g: np.ndarray, radius: float):
    """Dogleg step for ``min g'p + p'Hp/2`` with ``|p| <= radius`` and
    positive definite ``H``. Returns the step and the Newton decrement
    squared ``-g' p_newton``."""
    ridge = 1e-12 * max(1.0, float(np.max(np.abs(np.diag(H)))))
    for _ in range(6):
        try:
            cho = cho_factor(H + ridge * np.eye(H.shape[0]), lower=True)
            break
        except np.linalg.LinAlgError:
            ridge *= 100.0
    else:
        raise np.linalg.LinAlgError("barrier Hessian is not factorizable")
    p_newton = -cho_solve(cho, g)
    dec2 = float(-g @ p_newton)
    norm_n = float(np.linalg.norm(p_newton))
    if norm_n <= radius:
        return p_newton, dec2
    gHg = float(g @ H @ g)
    gg = float(g @ g)
    if gHg <= 0.0:
        return -(radius / math.sqrt(gg)) * g, dec2
    p_cauchy = -(gg / gHg) * g
    norm_c = float(np.linalg.norm(p_cauchy))
    if norm_c >= radius:
        return -(radius / math.sqrt(gg)) * g, dec2
    d = p_newton - p_cauchy
    a = float(d @ d)
    b = 2.0 * float(p_cauchy @ d)
    c = float(p_cauchy @ p_cauchy) - radius ** 2
    tau = (-b + math.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
    return p_cauchy + tau * d, dec2


def _barrier_value(pt: _Point, mu: float) -> float:
    return -pt.F - mu * float(np.sum(np.log(pt.slacks)))


# ---------------------------------------------------------------------------
# main entry points
# ---------------------------------------------------------------------------


def _nominal_solution(step: ModelStep, Sigma: np.ndarray,
                      warnings: list[str]) -> RobustSolution:
    nominal = CandidateParams(step.B, step.D, Sigma)
    _, M, K = innovation_parts(step, nominal)
    cho = cho_factor(K, lower=True)
    gain = cho_solve(cho, M).T
    value = float(np.trace(step.A @ Sigma @ step.A.T + step.B)
                  - np.sum(M * cho_solve(cho, M)))
    trace = SolveTrace(warnings=warnings, mu_final=0.0, kkt_residual=0.0)
    return RobustSolution(nominal, gain, value, 0.0, trace, True)


def solve_step(step: ModelStep, belief_cov, cfg: RobustConfig,
               opts: SolverOptions | None = None) -> RobustSolution:
    """Solve the worst-case step problem for one prediction step.

    Parameters
    ----------
    step : ModelStep
        Nominal system matrices of the step.
    belief_cov : array_like
        Previous posterior covariance (the ball center's ``Sigma``).
    cfg : RobustConfig
        Ball radius, mode, and pivot floors.
    opts : SolverOptions, optional
        Iteration budget and tolerances; defaults defer ``max_iters`` to
        ``cfg``.

    Returns
    -------
    RobustSolution
        Feasible worst-case parameters (exactly the nominal triple when
        ``radius == 0`` or mode is nonrobust), the robust gain, and a
        per-iteration trace.
    """
    cfg.validate()
    if opts is None:
        opts = SolverOptions()
    Sigma = symmetrize(belief_cov)
    if cfg.mode == "nonrobust" or cfg.radius == 0.0:
        return _nominal_solution(step, Sigma, [])
    max_iters = cfg.max_iters if opts.max_iters is None else opts.max_iters

    geom = _Geometry(step, Sigma, cfg)
    pt, warnings = geom.starting_point()
    f_scale = max(1.0, abs(pt.F))
    mu = 0.1 * f_scale
    mu_min = 1e-8 * f_scale
    radius = opts.initial_tr_radius * max(1.0, 0.5 * float(np.linalg.norm(pt.x)))
    trace = SolveTrace(warnings=warnings)
    converged = False

    gF, cons = geom.gradients(pt)
    H_obj, H_ball = geom.hessians(pt)
    kkt = math.inf
    for it in range(1, max_iters + 1):
        # assemble barrier derivatives at the current point / weight,
        # shrinking mu while the Newton decrement says it is solved
        step_norm = 0.0
        accepted = False
        for _ in range(16):
            lam = mu / pt.slacks
            g_phi = -gF - cons.T @ lam
            H_phi = (
                H_obj
                + (mu / pt.slacks[0]) * H_ball
                + (cons * (lam / pt.slacks)[:, None]).T @ cons
            )
            p, dec2 = _dogleg(H_phi, g_phi, radius)
            kkt = float(np.max(np.abs(g_phi)))
            if dec2 <= 0.3 * mu and mu > mu_min:
                mu = max(0.1 * mu, mu_min)
                continue
            break
        if mu <= mu_min and dec2 <= 0.3 * mu:
            converged = True
            trace.rows.append((it, pt.F, float(np.min(pt.slacks)), 0.0))
            break
        # cap the step so linearized slacks keep 10% of their value; the
        # quadratic model degrades near the log walls, and the slack
        # functions are concave, so backtracking below remains the safety
        # net for strict feasibility
        dirs = cons @ p
        shrinking = dirs < 0.0
        alpha = 1.0
        if np.any(shrinking):
            alpha = min(1.0, float(np.min(
                0.9 * pt.slacks[shrinking] / -dirs[shrinking]
            )))
        trial = None
        for _ in range(50):
            cand = geom.eval(pt.x + alpha * p)
            if cand is not None and np.min(cand.slacks) > 0.0:
                trial = cand
                break
            alpha *= 0.5
        if trial is None:
            radius = max(0.25 * radius, 1e-14)
            trace.rows.append((it, pt.F, float(np.min(pt.slacks)), 0.0))
            continue
        sp = alpha * p
        pred = float(-(g_phi @ sp) - 0.5 * (sp @ H_phi @ sp))
        ared = _barrier_value(pt, mu) - _barrier_value(trial, mu)
        rho = ared / pred if pred > 0.0 else -math.inf
        step_norm = float(np.linalg.norm(sp))
        # the barrier function is convex, so any real decrease is progress;
        # the ratio only steers the trust region
        if ared > 0.0:
            pt = trial
            accepted = True
            gF, cons = geom.gradients(pt)
            H_obj, H_ball = geom.hessians(pt)
            # retune the barrier weight to the duality-gap estimate so the
            # next Newton target is near the current iterate
            lam_hat, _ = nnls(cons.T, -gF)
            gap = float(lam_hat @ pt.slacks)
            mu = max(mu_min, 0.01 * mu,
                     min(mu, 0.1 * gap / pt.slacks.size))
            if rho > 0.75 and step_norm > 0.8 * radius:
                radius *= 2.0
            elif rho < 0.25:
                radius = max(0.5 * step_norm, 1e-14)
        else:
            radius = max(0.5 * step_norm, 1e-14)
        trace.rows.append(
            (it, pt.F, float(np.min(pt.slacks)), step_norm if accepted else 0.0)
        )

    trace.mu_final = mu
    trace.kkt_residual = kkt
    params = CandidateParams(pt.B, pt.D, pt.S)
    _, M, K = innovation_parts(step, params)
    cho = cho_factor(K, lower=True)
    gain = cho_solve(cho, M).T
    return RobustSolution(params, gain, pt.F, pt.dist, trace, converged)


def verify_kkt(solution: RobustSolution, step: ModelStep, belief_cov,
               cfg: RobustConfig, active_tol: float = 1e-6) -> KktReport:
    """First-order optimality check of a solution.

    Finds nonnegative multipliers minimizing the stationarity residual
    ``|grad F + sum_i lambda_i grad c_i|`` (the constraints are slack
    functions, nonnegative when feasible) and reports the residual, the
    multipliers, and the worst complementarity product.
    """
    cfg.validate()
    Sigma = symmetrize(belief_cov)
    geom = _Geometry(step, Sigma, cfg)
    geom.relax_floors()
    # boundary points are fine here: only the pivot blocks must be definite
    pt = geom.eval(geom.vech.pack(solution.params.B_bar,
                                  solution.params.D_bar,
                                  solution.params.Sigma_bar))
    if pt is None:
        raise InfeasibleStartError("solution is outside the solver domain")
    gF, cons = geom.gradients(pt)
    lam, res = nnls(cons.T, -gF)
    comp = float(np.max(np.abs(lam * pt.slacks))) if lam.size else 0.0
    scale = max(1.0, float(np.max(np.abs(gF))))
    return KktReport(
        stationarity=float(res) / scale,
        multipliers=lam,
        complementarity=comp,
        ball_active=bool(pt.slacks[0] <= active_tol * max(1.0, cfg.radius)),
    )
