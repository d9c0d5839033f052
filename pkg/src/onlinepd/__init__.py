"""Online predictive primal-dual proximal splitting for dynamic imaging."""

from .core import SeededRng, gaussian_noise, inner, norm_21, norm_2inf, poisson_sample
from .engine import (
    FrameProblem,
    PdState,
    StepParams,
    make_unaccelerated_params,
    popd2_step,
    run_online,
)
from .operators import Displacement, GradOp, RadonOp, WarpOp, op_norm_estimate
from .predictors import PREDICTOR_NAMES, make_predictor
from .proxops import DataTermL2, DataTermPoisson, TVRegulariser

__version__ = "0.1.0"
