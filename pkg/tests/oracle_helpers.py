"""Shared numerical oracles for the test suite.

The 1-D minimizer works purely from objective evaluations: it bisects the
central-difference slope, which is exact for the piecewise-quadratic
objectives the proximal maps minimize, so the oracle localises minima far
below the sqrt(machine-eps) limit of value-only searches.
"""

import numpy as np


def minimize_1d(f, lo: float, hi: float, fd_step: float = 1e-4,
                iters: int = 200) -> float:
    """Minimize a convex scalar function on [lo, hi] by slope bisection."""

    def slope(u):
        return (f(u + fd_step) - f(u - fd_step)) / (2.0 * fd_step)

    a, b = float(lo), float(hi)
    if slope(a) >= 0.0:
        return a
    if slope(b) <= 0.0:
        return b
    for _ in range(iters):
        m = 0.5 * (a + b)
        if m == a or m == b:
            break
        if slope(m) > 0.0:
            b = m
        else:
            a = m
    return 0.5 * (a + b)


def radial_ball_prox_oracle(norm_y: float, alpha: float, weight: float = 0.0) -> float:
    """Radius of the prox of an indicator-plus-quadratic at a point of norm norm_y.

    Minimizes 0.5 (r - norm_y)^2 + weight/2 r^2 over r in [0, alpha] by the
    generic 1-D oracle; the vector solution is this radius times the unit
    direction of y.
    """
    return minimize_1d(lambda r: 0.5 * (r - norm_y) ** 2 + 0.5 * weight * r * r,
                       0.0, alpha)


def adjoint_max_rel_err(apply, adjoint, shape_x, shape_y, rng, n_pairs=100):
    """Worst relative adjoint-identity error over random input pairs."""
    from onlinepd.core import inner

    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(shape_x)
        y = rng.standard_normal(shape_y)
        lhs = inner(apply(x), y)
        rhs = inner(x, adjoint(y))
        scale = max(1.0, abs(lhs), abs(rhs))
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst
