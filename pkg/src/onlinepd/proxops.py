"""Proximal maps and smooth-term gradients for the two problem families.

Covers quadratic data fidelity (denoising), the nonnegativity constraint
plus Poisson log-likelihood (tomography), and the conjugate of the
isotropic total variation term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import pixel_norms
from .operators import RadonOp

__all__ = [
    "DataTermL2",
    "DataTermPoisson",
    "TVRegulariser",
    "prox_l2_data",
    "prox_nonneg",
    "grad_poisson",
    "poisson_objective",
    "prox_tv_conjugate",
    "prox_tv_conjugate_strong",
    "lipschitz_running_estimate",
]


@dataclass(frozen=True)
class DataTermL2:
    """F(x) = 1/2 ||x - z||^2; strongly convex with factor 1."""

    z: np.ndarray

    gamma_F: float = 1.0


@dataclass(frozen=True)
class DataTermPoisson:
    """E(x) = sum_i [Ax]_i - z_i log([Ax + c]_i) over active sinogram entries.

    L is an externally supplied Lipschitz bound for grad E, used for step
    sizing; `lipschitz_running_estimate` provides the diagnostic update.
    """

    A: RadonOp
    z: np.ndarray
    c: np.ndarray
    L: float


@dataclass(frozen=True)
class TVRegulariser:
    """G(y) = alpha ||y||_{2,1}; conjugate is the indicator of the alpha-ball."""

    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("regularisation weight must be positive")


def prox_l2_data(t: DataTermL2, tau: float, x: np.ndarray) -> np.ndarray:
    """prox of tau/2 ||. - z||^2: (x + tau z) / (1 + tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return (x + tau * t.z) / (1.0 + tau)


def prox_nonneg(tau: float, x: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant; independent of tau."""
    return np.maximum(x, 0.0)


def poisson_objective(t: DataTermPoisson, x: np.ndarray) -> float:
    """E(x); z_i = 0 entries contribute [Ax]_i only."""
    ax = t.A.apply(x)
    mask = t.A.active_mask
    den = ax + t.c
    val = np.sum(ax[mask])
    zm = np.where(mask, t.z, 0.0)
    pos = zm > 0
    if np.any(pos):
        if np.any(den[pos] <= 0):
            raise ValueError("A x + c must be positive on active entries with data")
        val -= np.sum(zm[pos] * np.log(den[pos]))
    return float(val)


def grad_poisson(t: DataTermPoisson, x: np.ndarray) -> np.ndarray:
    """grad E(x) = A*(1 - z / (Ax + c)) restricted to active entries."""
    ax = t.A.apply(x)
    mask = t.A.active_mask
    den = ax + t.c
    if np.any(den[mask] <= 0):
        raise ValueError("A x + c must be positive on active entries")
    ratio = np.zeros_like(ax)
    ratio[mask] = np.where(mask, t.z, 0.0)[mask] / den[mask]
    resid = np.where(mask, 1.0 - ratio, 0.0)
    return t.A.adjoint(resid)


def prox_tv_conjugate(r: TVRegulariser, sigma: float, y: np.ndarray) -> np.ndarray:
    """Pointwise radial projection onto the alpha-ball.

    G* is an indicator, so the result does not depend on sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    norms = pixel_norms(y)
    scale = np.where(norms > r.alpha, r.alpha / np.maximum(norms, 1e-300), 1.0)
    return y * scale[..., None]


def prox_tv_conjugate_strong(r: TVRegulariser, rho_tilde: float, sigma: float,
                             y: np.ndarray) -> np.ndarray:
    """prox of sigma (G* + rho_tilde/2 ||.||^2): shrink then project radially."""
    if sigma < 0 or rho_tilde < 0:
        raise ValueError("sigma and rho_tilde must be nonnegative")
    return prox_tv_conjugate(r, max(sigma, 1e-300), y / (1.0 + sigma * rho_tilde))


def lipschitz_running_estimate(L_prev: float, t: DataTermPoisson,
                               x: np.ndarray, x_pred: np.ndarray) -> float:
    """Diagnostic update L <- max(L, 0.9 ||grad E(x) - grad E(x_pred)|| / ||x - x_pred||."""
    dx = np.sqrt(np.sum((x - x_pred) ** 2))
    if dx == 0:
        return L_prev
    dg = np.sqrt(np.sum((grad_poisson(t, x) - grad_poisson(t, x_pred)) ** 2))
    return max(L_prev, 0.9 * dg / dx)
