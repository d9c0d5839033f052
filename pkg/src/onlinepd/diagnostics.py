"""Computable theory checks: static saddle points, duality gaps, penalties.

The regret bounds themselves involve suprema over comparison sequences and
are not computable; what is computable, and implemented here, are per-frame
Lagrangian duality gaps against static saddle points, preservation
residuals for the dual predictors, and the per-frame prediction-penalty
bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import inner, norm_21, norm_2inf
from .engine import FrameProblem, PdState, StepParams, make_unaccelerated_params, popd2_step
from .operators import Displacement, WarpOp, op_norm_estimate
from .predictors import NoPrediction
from .proxops import DataTermL2, DataTermPoisson, poisson_objective

__all__ = [
    "StaticSaddle",
    "PenaltyInputs",
    "solve_static",
    "duality_gap",
    "tv_preservation_residual",
    "prediction_penalty",
    "estimate_predictor_gap_norms",
]

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class StaticSaddle:
    x_opt: np.ndarray
    y_opt: np.ndarray
    gap_achieved: float
    iterations: int
    converged: bool


def _data_value(data_term, x: np.ndarray) -> float:
    """[F + E](x) for the supported data terms; +inf outside dom F."""
    if isinstance(data_term, DataTermL2):
        return 0.5 * float(np.sum((x - data_term.z) ** 2))
    if isinstance(data_term, DataTermPoisson):
        if np.min(x) < -_FEAS_TOL:
            return np.inf
        return poisson_objective(data_term, np.maximum(x, 0.0))
    raise TypeError(f"unsupported data term {type(data_term).__name__}")


def _static_params(problem: FrameProblem, alpha: float) -> StepParams:
    """Well-conditioned constant steps for solving a single static frame."""
    Kb = np.sqrt(8.0) / problem.K.h
    if isinstance(problem.data_term, DataTermPoisson):
        L = problem.data_term.L
        tau = 0.5 * 1.0 / max(L, 1.0)
        return make_unaccelerated_params(tau=tau, L=L, kappa=1.0, K_norm_bound=Kb,
                                         alpha=alpha)
    return make_unaccelerated_params(tau=1.0 / Kb, L=0.0, kappa=1.0, K_norm_bound=Kb,
                                     alpha=alpha, gamma_F=1.0)


def _l2_gap(problem: FrameProblem, x: np.ndarray, y: np.ndarray) -> float:
    """Exact primal-dual gap for the quadratic/TV frame with feasible y."""
    z = problem.data_term.z
    alpha = problem.regulariser.alpha
    primal = 0.5 * float(np.sum((x - z) ** 2)) + alpha * norm_21(problem.K.apply(x))
    kty = problem.K.adjoint(y)
    dual = inner(z, kty) - 0.5 * float(np.sum(kty ** 2))
    return primal - dual


def solve_static(problem: FrameProblem, max_iters: int = 10000,
                 gap_tol: float = 1e-8, params: StepParams | None = None) -> StaticSaddle:
    """Approximate the static saddle point by non-predictive splitting.

    For quadratic data terms the stopping gap is the exact primal-dual gap;
    for the Poisson family it is a scaled fixed-point residual.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if params is None:
        params = _static_params(problem, problem.regulariser.alpha)
    predictor = NoPrediction()
    state = PdState.zeros(problem.shape)
    quadratic = isinstance(problem.data_term, DataTermL2)
    gap = np.inf
    it = 0
    check_every = 25
    for it in range(1, max_iters + 1):
        prev = state
        state = popd2_step(problem, predictor, state, params)
        if it % check_every == 0 or it == max_iters:
            if quadratic:
                gap = _l2_gap(problem, state.x, state.y)
            else:
                gap = (np.sqrt(np.sum((state.x - prev.x) ** 2)
                               + np.sum((state.y - prev.y) ** 2)) / params.tau)
            if gap <= gap_tol:
                break
    return StaticSaddle(x_opt=state.x, y_opt=state.y, gap_achieved=float(gap),
                        iterations=it, converged=gap <= gap_tol)


def duality_gap(problem: FrameProblem, u, u_ref, eta: float) -> float:
    """Per-frame Lagrangian duality gap of u against the reference pair u_ref.

    Nonnegative whenever u_ref is a saddle point of the frame's static
    problem.  Infeasible duals (outside the alpha-ball) yield +inf through
    the conjugate indicator.
    """
    x, y = u
    x_ref, y_ref = u_ref
    alpha = problem.regulariser.alpha
    if norm_2inf(y_ref) > alpha * (1.0 + _FEAS_TOL):
        raise ValueError("reference dual is infeasible")
    if norm_2inf(y) > alpha * (1.0 + _FEAS_TOL):
        return np.inf
    dt = problem.data_term
    val = (_data_value(dt, x) + inner(problem.K.apply(x), y_ref)
           - _data_value(dt, x_ref) - inner(problem.K.adjoint(y), x_ref))
    return eta * float(val)


def tv_preservation_residual(D, alpha: float, x: np.ndarray, y: np.ndarray):
    """(alpha ||Dx||_{2,1} - <Dx, y>, max(0, ||y||_{2,inf} - alpha))."""
    dx = D.apply(x)
    attain = alpha * norm_21(dx) - inner(dx, y)
    feas = max(0.0, norm_2inf(y) - alpha)
    return float(attain), float(feas)


@dataclass(frozen=True)
class PenaltyInputs:
    """Operator-level inputs to the per-frame prediction-penalty bound.

    Lambda and Theta strictly dominate the squared norms of the primal and
    dual predictors; C bounds the coupling mismatch
    ||(eta_k/eta_{k+1}) K - T* K W||^2.  W_diff/T_diff/a_diff/b_diff are
    squared distances between predictors and true temporal couplings.
    pi and pi_tilde may be zero only when the matching affine difference
    (a_diff resp. b_diff) vanishes, where the penalty has a finite limit.
    """

    Lambda: float
    Theta: float
    C: float
    M_x: float
    M_y: float
    W_diff: float
    T_diff: float
    a_diff: float = 0.0
    b_diff: float = 0.0
    W_norm_sq: float = 1.0
    T_norm_sq: float = 1.0
    pi: float = 1.0
    pi_tilde: float = 1.0
    beta: float = 1.0
    kappa: float = 0.5
    dual_dist: float = 0.0

    def __post_init__(self):
        if self.Lambda <= self.W_norm_sq:
            raise ValueError("Lambda must exceed ||W||^2")
        if self.Theta <= self.T_norm_sq:
            raise ValueError("Theta must exceed ||T||^2")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must be in (0, 1)")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.pi < 0 or (self.pi == 0 and self.a_diff != 0):
            raise ValueError("pi must be positive (zero only when a_diff = 0)")
        if self.pi_tilde < 0 or (self.pi_tilde == 0 and self.b_diff != 0):
            raise ValueError("pi_tilde must be positive (zero only when b_diff = 0)")
        for name in ("C", "M_x", "M_y", "W_diff", "T_diff", "a_diff", "b_diff",
                     "dual_dist"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def prediction_penalty(p: PenaltyInputs, params: StepParams,
                       params_next: StepParams) -> float:
    """Per-frame penalty bound on the prediction error.

    Requires phi_k (1 + gamma_k tau_k) > phi_{k+1} Lambda_k.
    """
    slack = params.phi * (1.0 + params.gamma * params.tau) - params_next.phi * p.Lambda
    if slack <= 0:
        raise ValueError("precondition violated: phi (1 + gamma tau) must exceed phi' Lambda")
    K2 = params_next.K_norm_bound ** 2
    eta_n = params_next.eta
    dual_metric = params.psi * (1.0 + params.rho * params.sigma)

    coef_dual = (0.5 * (params_next.psi * p.Theta - p.kappa * dual_metric)
                 + eta_n ** 2 * (p.C * p.beta + K2 * p.W_norm_sq) / (2.0 * p.beta * slack))

    coef_primal_pred = (eta_n ** 2 * K2 * p.T_norm_sq / (2.0 * (1.0 - p.kappa) * dual_metric)
                        + 0.5 * eta_n * K2
                        + params_next.phi * p.Lambda / (p.Lambda - p.W_norm_sq))
    primal_bracket = p.M_x * (1.0 + p.pi) * p.W_diff
    if p.a_diff > 0:
        primal_bracket += (1.0 + 1.0 / p.pi) * p.a_diff

    coef_dual_pred = (eta_n ** 2 * (p.C * p.beta + K2 * p.W_norm_sq) / (2.0 * slack)
                      + 0.5 * eta_n
                      + params_next.psi * p.Theta / (p.Theta - p.T_norm_sq))
    dual_bracket = p.M_y * (1.0 + p.pi_tilde) * p.T_diff
    if p.b_diff > 0:
        dual_bracket += (1.0 + 1.0 / p.pi_tilde) * p.b_diff

    return float(coef_dual * p.dual_dist + coef_primal_pred * primal_bracket
                 + coef_dual_pred * dual_bracket)


def estimate_predictor_gap_norms(measured: Displacement, true: Displacement,
                                 shape, iters: int = 60) -> float:
    """Power-iteration estimate of ||W_measured - W_true||^2 for warp operators."""
    Wm = WarpOp(measured, tuple(shape))
    Wt = WarpOp(true, tuple(shape))

    def diff_apply(x):
        return Wm.apply(x) - Wt.apply(x)

    def diff_adjoint(z):
        return Wm.adjoint(z) - Wt.adjoint(z)

    return op_norm_estimate(diff_apply, diff_adjoint, tuple(shape), iters=iters) ** 2
