"""Predictors transferring the primal-dual iterate between frames.

Every predictor maps (x, y) at frame k, together with the measured
displacement for the k -> k+1 transition, to a predicted pair
(x_pred, y_pred).  Primal predictions warp x along the measured
displacement; the dual predictors differ in what relationship between
D x and y they try to preserve across the transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .core import norm_21, pixel_norms
from .operators import Displacement, GradOp, warp_apply
from .proxops import TVRegulariser, prox_tv_conjugate_strong

__all__ = [
    "PredictContext",
    "NoPrediction",
    "PrimalOnly",
    "ZeroDual",
    "ProximalOld",
    "PointwiseL2",
    "Rotation",
    "Greedy",
    "StrictGreedy",
    "GlobalTV",
    "DualScaling",
    "make_predictor",
    "PREDICTOR_NAMES",
]


@dataclass
class PredictContext:
    """Frame-transition inputs shared by the dual predictors.

    Gradient caches are computed lazily, once per step, and shared by any
    predictor internals that need them.
    """

    x: np.ndarray
    y: np.ndarray
    displacement: Displacement
    D: GradOp
    alpha: float
    sigma: float = 1.0

    @cached_property
    def x_warp(self) -> np.ndarray:
        return warp_apply(self.x, self.displacement)

    @cached_property
    def dx(self) -> np.ndarray:
        return self.D.apply(self.x)

    @cached_property
    def dx_warp(self) -> np.ndarray:
        return self.D.apply(self.x_warp)

    @cached_property
    def positions(self) -> np.ndarray:
        return self.displacement.target_positions(self.x.shape)

    def transport(self, f: np.ndarray) -> np.ndarray:
        """Nearest-pixel transport f(v(xi)) of a vector field along v."""
        h, w = self.x.shape
        pos = self.positions
        ii = np.clip(np.rint(pos[..., 0]).astype(int), 0, h - 1)
        jj = np.clip(np.rint(pos[..., 1]).astype(int), 0, w - 1)
        return f[ii, jj]


class NoPrediction:
    """Identity on both variables."""

    def __call__(self, ctx: PredictContext):
        return ctx.x, ctx.y


class PrimalOnly:
    """Warp the primal, keep the dual."""

    def __call__(self, ctx: PredictContext):
        return ctx.x_warp, ctx.y


class ZeroDual:
    """Warp the primal, reset the dual to zero."""

    def __call__(self, ctx: PredictContext):
        return ctx.x_warp, np.zeros_like(ctx.y)


@dataclass
class ProximalOld:
    """Proximal re-fit of the dual against the predicted primal.

    The dual prediction runs one strongly damped dual proximal step on the
    transported gradient mismatch, with a quadratic term of weight
    rho_tilde added to the conjugate regulariser.
    """

    rho_tilde: float = 100.0

    def __call__(self, ctx: PredictContext):
        x_pred = ctx.x_warp
        reg = TVRegulariser(ctx.alpha)
        arg = ctx.y + ctx.sigma * (ctx.dx_warp - ctx.dx)
        y_pred = prox_tv_conjugate_strong(reg, self.rho_tilde, ctx.sigma, arg)
        return x_pred, y_pred


@dataclass
class PointwiseL2:
    """Transport the dual along the displacement with a pointwise 2x2 factor.

    mode "tv": factor t = (|J* Dx(v)| / |Dx(v)|) J^{-1} where Dx(v) != 0,
    identity otherwise; preserves pointwise total-variation attainment.
    mode "inner_product": t = |det J| J^{-1}; preserves <Dx, y>.
    J is the (constant) Jacobian of the displacement.
    """

    mode: str = "tv"

    def __call__(self, ctx: PredictContext):
        if self.mode not in ("tv", "inner_product"):
            raise ValueError(f"unknown mode {self.mode!r}")
        x_pred = ctx.x_warp
        J = ctx.displacement.jacobian()
        Jinv = np.linalg.inv(J)
        dx_v = ctx.transport(ctx.dx)  # Dx(v(xi))
        y_v = ctx.transport(ctx.y)
        if self.mode == "inner_product":
            t = abs(np.linalg.det(J)) * Jinv
            y_pred = y_v @ t.T
        else:
            norms = pixel_norms(dx_v)
            jtd = dx_v @ J  # J* Dx(v), row-vector convention
            scale = np.where(norms > 0, pixel_norms(jtd) / np.maximum(norms, 1e-300), np.nan)
            transported = y_v @ Jinv.T
            y_pred = np.where((norms > 0)[..., None], scale[..., None] * transported, y_v)
        return x_pred, y_pred


@dataclass
class Rotation:
    """Rotate the dual in place by the oriented angle from Dx to D x_pred.

    Where Dx vanishes but D x_pred does not, the dual is re-seeded at the
    boundary of the feasible ball in the new gradient direction; where both
    vanish it is zeroed.  mode "inner_product" additionally rescales by
    |Dx| / |D x_pred|.
    """

    mode: str = "tv"

    def __call__(self, ctx: PredictContext):
        if self.mode not in ("tv", "inner_product"):
            raise ValueError(f"unknown mode {self.mode!r}")
        x_pred = ctx.x_warp
        dx, dxp = ctx.dx, ctx.dx_warp
        n_old = pixel_norms(dx)
        n_new = pixel_norms(dxp)
        old_active = n_old > 0
        # oriented angle theta with D x_pred = c R_theta Dx, c >= 0
        cross = dx[..., 0] * dxp[..., 1] - dx[..., 1] * dxp[..., 0]
        dot = dx[..., 0] * dxp[..., 0] + dx[..., 1] * dxp[..., 1]
        theta = np.where(old_active & (n_new > 0), np.arctan2(cross, dot), 0.0)
        c, s = np.cos(theta), np.sin(theta)
        ry0 = c * ctx.y[..., 0] - s * ctx.y[..., 1]
        ry1 = s * ctx.y[..., 0] + c * ctx.y[..., 1]
        y_pred = np.stack([ry0, ry1], axis=-1)
        if self.mode == "inner_product":
            ratio = np.where(old_active & (n_new > 0), n_old / np.maximum(n_new, 1e-300), 1.0)
            y_pred = y_pred * ratio[..., None]
        y_pred[~old_active] = 0.0
        seed = (~old_active) & (n_new > 0)
        if np.any(seed):
            unit = dxp[seed] / n_new[seed][:, None]
            y_pred[seed] = ctx.alpha * unit
        return x_pred, y_pred


@dataclass
class Greedy:
    """Componentwise dual rescaling enforcing (D x_pred)_i y_i' = (Dx)_i y_i.

    The scale factor is applied verbatim, without clamping; components where
    |(D x_pred)_i| <= eps_tol keep their old dual value.
    """

    eps_tol: float = 1e-12

    def __post_init__(self):
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be positive")

    def __call__(self, ctx: PredictContext):
        x_pred = ctx.x_warp
        dx, dxp = ctx.dx, ctx.dx_warp
        active = np.abs(dxp) > self.eps_tol
        y_pred = np.where(active, dx / np.where(active, dxp, 1.0) * ctx.y, ctx.y)
        return x_pred, y_pred


class StrictGreedy:
    """Align the dual with D x_pred, scaled by the transported attainment.

    y'(xi) = <Dx(v(xi)), y(v(xi))> / |Dx(v(xi))| * D x_pred(xi)/|D x_pred(xi)|,
    with scale 0 where Dx(v(xi)) vanishes and the fixed unit direction (1,0)
    where D x_pred(xi) vanishes.
    """

    def __call__(self, ctx: PredictContext):
        x_pred = ctx.x_warp
        dx_v = ctx.transport(ctx.dx)
        y_v = ctx.transport(ctx.y)
        n_v = pixel_norms(dx_v)
        scale = np.where(n_v > 0,
                         np.sum(dx_v * y_v, axis=-1) / np.maximum(n_v, 1e-300), 0.0)
        dxp = ctx.dx_warp
        n_new = pixel_norms(dxp)
        direction = np.zeros_like(dxp)
        direction[..., 0] = 1.0
        nz = n_new > 0
        direction[nz] = dxp[nz] / n_new[nz][:, None]
        return x_pred, scale[..., None] * direction


@dataclass
class GlobalTV:
    """Global preservation via a linear solve against a left-invertible gradient.

    Solves W* Db* Db z = D* Q y for z by conjugate gradients (Db the
    Dirichlet-boundary gradient) and returns y' = Db z.  mode "tv" uses
    Q = ||Db x_pred||_{2,1} / ||D x||_{2,1} Id; mode "inner_product" uses
    Q = Id.  Only identity and exact integer-translation displacements are
    supported (W is then orthogonal on the periodic grid).
    """

    mode: str = "tv"
    tol: float = 1e-12
    max_iter: int = 2000

    def __call__(self, ctx: PredictContext):
        if self.mode not in ("tv", "inner_product"):
            raise ValueError(f"unknown mode {self.mode!r}")
        shift = _integer_shift(ctx.displacement)
        # primal prediction consistent with the linear operator W
        x_pred = np.roll(ctx.x, (-shift[0], -shift[1]), axis=(0, 1))
        Db = GradOp(boundary="dirichlet", h=ctx.D.h)
        if self.mode == "tv":
            denom = norm_21(ctx.dx)
            if denom == 0:
                raise ValueError("||D x||_{2,1} = 0: total-variation scale is degenerate")
            q = norm_21(Db.apply(x_pred)) / denom
        else:
            q = 1.0
        rhs = ctx.D.adjoint(q * ctx.y)
        # W is a circular shift, so W^{-*} = W: shift the right-hand side
        rhs = np.roll(rhs, (-shift[0], -shift[1]), axis=(0, 1))
        h, w = ctx.x.shape
        op = LinearOperator((h * w, h * w),
                            matvec=lambda v: Db.adjoint(Db.apply(v.reshape(h, w))).ravel())
        z, info = cg(op, rhs.ravel(), rtol=self.tol, atol=0.0, maxiter=self.max_iter)
        if info != 0:
            raise RuntimeError(f"conjugate gradients did not converge (info={info})")
        return x_pred, Db.apply(z.reshape(h, w))


def _integer_shift(d: Displacement):
    if d.kind != "translation":
        raise ValueError("global predictor supports only identity/integer translations")
    di, dj = d.d
    if abs(di - round(di)) > 1e-9 or abs(dj - round(dj)) > 1e-9:
        raise ValueError("global predictor requires an exact integer translation")
    return int(round(di)), int(round(dj))


@dataclass
class DualScaling:
    """Scale the dual down where the primal prediction changed the image.

    c(xi) = 1 - chi * nu(x_delta(xi)) with x_delta the per-frame normalised
    primal change; nu(0) = 0 and nu(1) = 1 for both activations.
    """

    chi: float = 1.0
    activation: str = "sigmoid"

    def __post_init__(self):
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must be in [0, 1]")
        if self.activation not in ("sigmoid", "power"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def __call__(self, ctx: PredictContext):
        x_pred = ctx.x_warp
        change = np.abs(x_pred - ctx.x)
        x_delta = change / max(1e-12, float(np.max(change)))
        if self.activation == "sigmoid":
            nu = 1.0 / (1.0 + np.exp(-1000.0 * (x_delta - 0.05)))
        else:
            nu = 1.0 - np.abs(x_delta - 1.0) ** 0.2
        c = 1.0 - self.chi * nu
        return x_pred, c[..., None] * ctx.y


PREDICTOR_NAMES = (
    "no_prediction",
    "primal_only",
    "zero_dual",
    "proximal_old",
    "pointwise_l2",
    "rotation",
    "greedy",
    "strict_greedy",
    "global_tv",
    "dual_scaling",
)


def make_predictor(name: str, **kwargs):
    """Predictor factory keyed by config name."""
    table = {
        "no_prediction": NoPrediction,
        "primal_only": PrimalOnly,
        "zero_dual": ZeroDual,
        "proximal_old": ProximalOld,
        "pointwise_l2": PointwiseL2,
        "rotation": Rotation,
        "greedy": Greedy,
        "strict_greedy": StrictGreedy,
        "global_tv": GlobalTV,
        "dual_scaling": DualScaling,
    }
    if name not in table:
        raise ValueError(f"unknown predictor {name!r}; expected one of {sorted(table)}")
    return table[name](**kwargs)
