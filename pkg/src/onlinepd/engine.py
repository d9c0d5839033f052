"""Online primal-dual proximal splitting: one predicted step per data frame.

Each step runs prediction, a forward step on the smooth data term, a
proximal primal step, and an over-relaxed proximal dual step:

    (x', y') = P(x, y)
    x+ = prox_{tau F}(x' - tau grad E(x') - tau K* y')
    y+ = prox_{sigma G*}(y' + sigma K (2 x+ - x'))
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .operators import Displacement, GradOp
from .predictors import PredictContext
from .proxops import (
    DataTermL2,
    DataTermPoisson,
    TVRegulariser,
    grad_poisson,
    prox_l2_data,
    prox_nonneg,
    prox_tv_conjugate,
)

__all__ = [
    "StepParams",
    "FrameProblem",
    "PdState",
    "make_unaccelerated_params",
    "popd2_step",
    "run_online",
]


@dataclass(frozen=True)
class StepParams:
    """Step lengths and testing parameters with their validity conditions.

    Must satisfy eta = phi * tau = psi * sigma and
    1 >= tau * L / kappa + tau * sigma * K_norm_bound^2.
    """

    tau: float
    sigma: float
    eta: float
    phi: float
    psi: float
    gamma: float
    rho: float
    kappa: float
    L: float
    alpha: float
    K_norm_bound: float

    def __post_init__(self):
        for name in ("tau", "sigma", "eta", "phi", "psi", "alpha", "K_norm_bound"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("gamma", "rho", "L"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must be in (0, 1]")
        if abs(self.eta - self.phi * self.tau) > 1e-12 * max(1.0, self.eta):
            raise ValueError("coupling violated: eta != phi * tau")
        if abs(self.eta - self.psi * self.sigma) > 1e-12 * max(1.0, self.eta):
            raise ValueError("coupling violated: eta != psi * sigma")
        metric = self.tau * self.L / self.kappa + self.tau * self.sigma * self.K_norm_bound ** 2
        if metric > 1.0 + 1e-12:
            raise ValueError(
                f"metric positivity violated: tau*L/kappa + tau*sigma*||K||^2 = {metric:.6g} > 1")


def make_unaccelerated_params(tau: float, L: float, kappa: float, K_norm_bound: float,
                              alpha: float, gamma_F: float = 0.0, gamma_E: float = 0.0,
                              rho: float = 0.0) -> StepParams:
    """Constant step rule with the largest sigma allowed by metric positivity.

    sigma = (1 - tau L / kappa) / (tau ||K||^2); eta = tau, phi = 1,
    psi = tau / sigma.  gamma follows the strong-convexity bookkeeping:
    gamma_F + gamma_E - kappa L when gamma_E > 0, else gamma_F.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    slack = 1.0 - tau * L / kappa
    if slack <= 0:
        raise ValueError(
            f"infeasible tau: tau*L/kappa = {tau * L / kappa:.6g} >= 1")
    sigma = slack / (tau * K_norm_bound ** 2)
    gamma = gamma_F + gamma_E - kappa * L if gamma_E > 0 else gamma_F
    if gamma < 0:
        raise ValueError("negative effective strong-convexity factor")
    return StepParams(tau=tau, sigma=sigma, eta=tau, phi=1.0, psi=tau / sigma,
                      gamma=gamma, rho=rho, kappa=kappa, L=L, alpha=alpha,
                      K_norm_bound=K_norm_bound)


@dataclass(frozen=True)
class FrameProblem:
    """Everything defining one frame: data term, regulariser, operators, motion.

    `displacement_*` describe the transition from the previous frame into
    this one (identity for the first frame).
    """

    data_term: object  # DataTermL2 | DataTermPoisson
    regulariser: TVRegulariser
    K: GradOp
    displacement_true: Displacement
    displacement_measured: Displacement
    index: int = 0

    @property
    def shape(self):
        if isinstance(self.data_term, DataTermL2):
            return self.data_term.z.shape
        return self.data_term.A.image_shape


@dataclass(frozen=True)
class PdState:
    x: np.ndarray
    y: np.ndarray
    x_pred: np.ndarray
    y_pred: np.ndarray
    k: int

    @staticmethod
    def zeros(shape, k: int = -1) -> "PdState":
        x = np.zeros(shape)
        y = np.zeros(shape + (2,))
        return PdState(x=x, y=y, x_pred=x, y_pred=y, k=k)


def popd2_step(problem: FrameProblem, predictor, state: PdState,
               params: StepParams, steps: int = 1) -> PdState:
    """Advance the iterate to the next frame: predict, then optimise."""
    ctx = PredictContext(x=state.x, y=state.y,
                         displacement=problem.displacement_measured,
                         D=problem.K, alpha=problem.regulariser.alpha,
                         sigma=params.sigma)
    x_pred, y_pred = predictor(ctx)
    x, y = x_pred, y_pred
    for _ in range(steps):
        x, y = _pdps_inner(problem, x, y, params)
    return PdState(x=x, y=y, x_pred=x_pred, y_pred=y_pred, k=problem.index)


def _pdps_inner(problem: FrameProblem, x_pred, y_pred, params: StepParams):
    tau, sigma = params.tau, params.sigma
    dt = problem.data_term
    if isinstance(dt, DataTermPoisson):
        arg = x_pred - tau * grad_poisson(dt, x_pred) - tau * problem.K.adjoint(y_pred)
        x_new = prox_nonneg(tau, arg)
    elif isinstance(dt, DataTermL2):
        # E = 0 for this family: skip the forward step entirely
        arg = x_pred - tau * problem.K.adjoint(y_pred)
        x_new = prox_l2_data(dt, tau, arg)
    else:
        raise TypeError(f"unsupported data term {type(dt).__name__}")
    y_new = prox_tv_conjugate(problem.regulariser, sigma,
                              y_pred + sigma * problem.K.apply(2.0 * x_new - x_pred))
    return x_new, y_new


def run_online(problems, predictor, params: StepParams, sinks=(),
               steps_per_frame: int = 1, initial: PdState | None = None):
    """Run one predicted optimisation step per frame, in frame order.

    `sinks` are callables (frame_index, state, problem, wall_time) invoked
    after every step.  Returns the final state.
    """
    problems = list(problems) if not hasattr(problems, "__len__") else problems
    if len(problems) == 0:
        raise ValueError("empty frame sequence")
    state = initial if initial is not None else PdState.zeros(problems[0].shape)
    for problem in problems:
        t0 = time.perf_counter()
        state = popd2_step(problem, predictor, state, params, steps=steps_per_frame)
        wall = time.perf_counter() - t0
        for sink in sinks:
            sink(problem.index, state, problem, wall)
    return state
