"""Linear operators with matched adjoints: discrete gradients, warps, Radon.

All operators are immutable after construction and their apply/adjoint
methods are pure.  Adjoints are exact transposes of the discretised forward
maps, so <A x, y> == <x, A* y> up to floating-point roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import SeededRng, inner

__all__ = [
    "GradOp",
    "Displacement",
    "WarpOp",
    "RadonOp",
    "op_norm_estimate",
]


@dataclass(frozen=True)
class GradOp:
    """Forward-difference gradient on a pixel grid.

    boundary:
        "neumann"   last row/column difference is zero
        "dirichlet" last row/column differences run against an implicit
                    zero exterior
    h: cell width.

    The operator norm is bounded by sqrt(8)/h in 2-D.
    """

    boundary: str = "neumann"
    h: float = 1.0

    def __post_init__(self):
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary rule {self.boundary!r}")
        if self.h <= 0:
            raise ValueError("cell width must be positive")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(Dx)(i,j) = ((x(i+1,j)-x(i,j))/h, (x(i,j+1)-x(i,j))/h)."""
        g = np.zeros(x.shape + (2,))
        g[:-1, :, 0] = x[1:, :] - x[:-1, :]
        g[:, :-1, 1] = x[:, 1:] - x[:, :-1]
        if self.boundary == "dirichlet":
            g[-1, :, 0] = -x[-1, :]
            g[:, -1, 1] = -x[:, -1]
        return g / self.h

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Negative divergence matched exactly to apply()."""
        y0, y1 = y[..., 0], y[..., 1]
        out = np.zeros(y.shape[:2])
        if self.boundary == "neumann":
            # transpose of the zero-padded forward difference; the last
            # row/column of y never enters (the forward map leaves it zero)
            out[:-1, :] -= y0[:-1, :]
            out[1:, :] += y0[:-1, :]
            out[:, :-1] -= y1[:, :-1]
            out[:, 1:] += y1[:, :-1]
        else:
            out[0, :] -= y0[0, :]
            out[1:, :] += y0[:-1, :] - y0[1:, :]
            out[:, 0] -= y1[:, 0]
            out[:, 1:] += y1[:, :-1] - y1[:, 1:]
        return out / self.h


@dataclass(frozen=True)
class Displacement:
    """Rigid per-frame motion: a translation or a rotation about a center.

    For translations, v(xi) = xi + d.  For rotations by `angle` about
    `center`, v(xi) = center + R_angle (xi - center), where R_angle is the
    standard 2x2 rotation matrix in (row, col) coordinates.
    """

    kind: str  # "translation" | "rotation"
    d: tuple = (0.0, 0.0)
    angle: float = 0.0
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("translation", "rotation"):
            raise ValueError(f"unsupported displacement kind {self.kind!r}")

    @staticmethod
    def translation(d) -> "Displacement":
        return Displacement(kind="translation", d=(float(d[0]), float(d[1])))

    @staticmethod
    def rotation(angle, center) -> "Displacement":
        return Displacement(kind="rotation", angle=float(angle),
                            center=(float(center[0]), float(center[1])))

    def jacobian(self) -> np.ndarray:
        """Spatial Jacobian of v; constant in xi for the supported kinds."""
        if self.kind == "translation":
            return np.eye(2)
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def target_positions(self, shape) -> np.ndarray:
        """v(xi) for every pixel xi, shape (h, w, 2)."""
        h, w = shape
        ii, jj = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
        if self.kind == "translation":
            return np.stack([ii + self.d[0], jj + self.d[1]], axis=-1)
        ci, cj = self.center
        c, s = np.cos(self.angle), np.sin(self.angle)
        ri = ci + c * (ii - ci) - s * (jj - cj)
        rj = cj + s * (ii - ci) + c * (jj - cj)
        return np.stack([ri, rj], axis=-1)

    def compose_affine(self, prev: np.ndarray) -> np.ndarray:
        """Compose this displacement's affine map v with a previous 2x3 map.

        Returns the 2x3 map xi -> J @ (prev(xi)) form equivalent to
        prev followed by this map's coordinate lookup, i.e. v_self(prev(xi))
        expressed again as a single 2x3 affine [A | b].
        """
        A_prev, b_prev = prev[:, :2], prev[:, 2]
        J = self.jacobian()
        if self.kind == "translation":
            t = np.asarray(self.d)
            return np.hstack([A_prev, (b_prev + t)[:, None]])
        c = np.asarray(self.center)
        # v(xi) = c + J (xi - c); apply after prev: c + J (prev(xi) - c)
        A = J @ A_prev
        b = c + J @ (b_prev - c)
        return np.hstack([A, b[:, None]])


def identity_affine() -> np.ndarray:
    return np.hstack([np.eye(2), np.zeros((2, 1))])


def bilinear_sample(x: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Sample image x at real-valued positions, clamping to the grid."""
    h, w = x.shape
    pi = np.clip(pos[..., 0], 0.0, h - 1.0)
    pj = np.clip(pos[..., 1], 0.0, w - 1.0)
    i0 = np.clip(np.floor(pi).astype(int), 0, h - 2) if h > 1 else np.zeros_like(pi, dtype=int)
    j0 = np.clip(np.floor(pj).astype(int), 0, w - 2) if w > 1 else np.zeros_like(pj, dtype=int)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = pi - i0
    fj = pj - j0
    return ((1 - fi) * (1 - fj) * x[i0, j0] + (1 - fi) * fj * x[i0, j1]
            + fi * (1 - fj) * x[i1, j0] + fi * fj * x[i1, j1])


@dataclass(frozen=True)
class WarpOp:
    """(W x)(xi) = x(v(xi)) via clamped bilinear interpolation."""

    displacement: Displacement
    shape: tuple

    def positions(self) -> np.ndarray:
        return self.displacement.target_positions(self.shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return bilinear_sample(x, self.positions())

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        """Exact transpose of the bilinear sampling (splat of weights)."""
        h, w = self.shape
        pos = self.positions()
        pi = np.clip(pos[..., 0], 0.0, h - 1.0)
        pj = np.clip(pos[..., 1], 0.0, w - 1.0)
        i0 = np.clip(np.floor(pi).astype(int), 0, max(h - 2, 0))
        j0 = np.clip(np.floor(pj).astype(int), 0, max(w - 2, 0))
        i1 = np.minimum(i0 + 1, h - 1)
        j1 = np.minimum(j0 + 1, w - 1)
        fi = pi - i0
        fj = pj - j0
        out = np.zeros((h, w))
        np.add.at(out, (i0, j0), (1 - fi) * (1 - fj) * z)
        np.add.at(out, (i0, j1), (1 - fi) * fj * z)
        np.add.at(out, (i1, j0), fi * (1 - fj) * z)
        np.add.at(out, (i1, j1), fi * fj * z)
        return out


def warp_apply(x: np.ndarray, displacement: Displacement) -> np.ndarray:
    return WarpOp(displacement, x.shape).apply(x)


class RadonOp:
    """Parallel-beam ray-driven Radon transform with an exact transpose.

    Angles are uniform on [0, pi); each (angle, bin) ray is sampled at unit
    steps with bilinear interpolation, and the sampled weights are assembled
    into a sparse matrix so the adjoint is literally the transpose.
    Sinograms have shape (n_angles, n_bins).  Entries where `active_mask`
    is False are zeroed in both directions.  `scale` multiplies the rays in
    both directions and models the emission intensity (expected counts per
    unit density) without touching the shared geometry matrix.
    """

    def __init__(self, image_shape, n_angles: int, n_bins: int, active_mask=None,
                 scale: float = 1.0):
        self.image_shape = tuple(image_shape)
        self.n_angles = int(n_angles)
        self.n_bins = int(n_bins)
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        if active_mask is None:
            active_mask = np.ones((self.n_angles, self.n_bins), dtype=bool)
        self.active_mask = np.asarray(active_mask, dtype=bool).reshape(self.n_angles, self.n_bins)
        self._matrix = _radon_matrix(self.image_shape, self.n_angles, self.n_bins)

    def with_mask(self, active_mask) -> "RadonOp":
        """Same geometry, different subsampling mask (matrix is shared)."""
        other = object.__new__(RadonOp)
        other.image_shape = self.image_shape
        other.n_angles = self.n_angles
        other.n_bins = self.n_bins
        other.scale = self.scale
        other.active_mask = np.asarray(active_mask, dtype=bool).reshape(self.n_angles, self.n_bins)
        other._matrix = self._matrix
        return other

    def apply(self, x: np.ndarray) -> np.ndarray:
        s = (self._matrix @ x.ravel()).reshape(self.n_angles, self.n_bins)
        s[~self.active_mask] = 0.0
        return self.scale * s

    def adjoint(self, s: np.ndarray) -> np.ndarray:
        sm = np.where(self.active_mask, s, 0.0)
        return self.scale * (self._matrix.T @ sm.ravel()).reshape(self.image_shape)


_RADON_CACHE: dict = {}


def _radon_matrix(image_shape, n_angles, n_bins):
    key = (image_shape, n_angles, n_bins)
    if key in _RADON_CACHE:
        return _RADON_CACHE[key]
    h, w = image_shape
    ci, cj = (h - 1) / 2.0, (w - 1) / 2.0
    radius = max(h, w) / 2.0
    bin_centers = (np.arange(n_bins) - (n_bins - 1) / 2.0) * (2.0 * radius / n_bins)
    half_len = int(np.ceil(np.hypot(h, w) / 2.0))
    s_steps = np.arange(-half_len, half_len + 1, dtype=np.float64)

    rows, cols, vals = [], [], []
    angles = np.arange(n_angles) * np.pi / n_angles
    for a, theta in enumerate(angles):
        dir_i, dir_j = np.cos(theta), np.sin(theta)
        perp_i, perp_j = -np.sin(theta), np.cos(theta)
        for b, t in enumerate(bin_centers):
            pi = ci + t * perp_i + s_steps * dir_i
            pj = cj + t * perp_j + s_steps * dir_j
            inside = (pi >= 0) & (pi <= h - 1) & (pj >= 0) & (pj <= w - 1)
            if not np.any(inside):
                continue
            pi, pj = pi[inside], pj[inside]
            i0 = np.clip(np.floor(pi).astype(int), 0, max(h - 2, 0))
            j0 = np.clip(np.floor(pj).astype(int), 0, max(w - 2, 0))
            fi = pi - i0
            fj = pj - j0
            row = a * n_bins + b
            for di, dj, wgt in (
                (0, 0, (1 - fi) * (1 - fj)),
                (0, 1, (1 - fi) * fj),
                (1, 0, fi * (1 - fj)),
                (1, 1, fi * fj),
            ):
                rows.append(np.full(pi.shape, row))
                cols.append((i0 + di) * w + (j0 + dj))
                vals.append(wgt)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_angles * n_bins, h * w))
    _RADON_CACHE[key] = mat
    return mat


def op_norm_estimate(apply, adjoint, shape, iters: int = 50, seed: int = 0) -> float:
    """Power iteration on A*A; lower-bound estimate of ||A||, monotone in iters."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = SeededRng(seed)
    x = rng.standard_normal(shape)
    x /= np.sqrt(inner(x, x))
    est = 0.0
    for _ in range(iters):
        y = adjoint(apply(x))
        n = np.sqrt(inner(y, y))
        if n == 0:
            return 0.0
        est = np.sqrt(max(inner(x, y), 0.0))  # Rayleigh quotient = ||A x||
        x = y / n
    return float(est)
