"""Bar components and their geometry projection onto density fields.

A bar is the offset region (stadium) of a straight medial segment. Each bar
is described by six numbers ``[x0, y0, x1, y1, w, alpha]`` and a design is an
``(n, 6)`` array of them. All functions below are vectorized over evaluation
points and bars, and can return exact derivatives with respect to the six bar
variables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BAR_VARS = 6
BAR_VAR_NAMES = ("x0", "y0", "x1", "y1", "w", "alpha")


class EmptyUnionError(ValueError):
    """Raised when a union/aggregate is requested over zero components."""


@dataclass(frozen=True)
class BarComponent:
    p0: tuple[float, float]
    p1: tuple[float, float]
    width: float
    alpha: float = 1.0

    def __post_init__(self):
        p0 = tuple(float(v) for v in self.p0)
        p1 = tuple(float(v) for v in self.p1)
        if len(p0) != 2 or len(p1) != 2:
            raise ValueError("bar endpoints must be 2D points")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        if not self.width > 0:
            raise ValueError(f"bar width must be positive, got {self.width}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"size variable must lie in [0, 1], got {self.alpha}")
        if p0 == p1:
            raise ValueError("degenerate bar: p0 == p1")

    def as_array(self) -> np.ndarray:
        return np.array([*self.p0, *self.p1, self.width, self.alpha], dtype=float)

    @classmethod
    def from_array(cls, row) -> "BarComponent":
        row = np.asarray(row, dtype=float)
        return cls((row[0], row[1]), (row[2], row[3]), row[4], row[5])


def bars_to_array(bars) -> np.ndarray:
    """Stack bars (or an existing array) into an ``(n, 6)`` design array."""
    if isinstance(bars, np.ndarray):
        z = np.atleast_2d(np.asarray(bars, dtype=float))
    else:
        z = np.array([b.as_array() for b in bars], dtype=float).reshape(-1, N_BAR_VARS)
    if z.shape[1] != N_BAR_VARS:
        raise ValueError(f"design array must have {N_BAR_VARS} columns, got {z.shape}")
    return z


def array_to_bars(z) -> list[BarComponent]:
    return [BarComponent.from_array(row) for row in bars_to_array(z)]


@dataclass(frozen=True)
class ProjectionParams:
    """Parameters of the geometry projection.

    ``radius`` is only a fallback; mesh-driven callers pass a per-point
    sampling radius tied to the cell size.
    """

    radius: float = 1.0
    penalty: float = 3.0
    ks: float = 10.0
    rho_min: float = 1e-4

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sampling radius must be positive")
        if self.penalty < 1:
            raise ValueError("SIMP power must be >= 1")
        if not self.ks > 0:
            raise ValueError("KS aggregation coefficient must be positive")
        if not 0 < self.rho_min < 1:
            raise ValueError("rho_min must lie in (0, 1)")


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, 2)


def _segment_closest(points, z):
    p0 = z[:, 0:2]
    e = z[:, 2:4] - p0
    len2 = np.maximum(np.einsum("ij,ij->i", e, e), np.finfo(float).tiny)
    r = points[:, None, :] - p0[None, :, :]
    t = np.clip(np.einsum("mnk,nk->mn", r, e) / len2, 0.0, 1.0)
    diff = r - t[..., None] * e[None, :, :]
    dist = np.sqrt(np.einsum("mnk,mnk->mn", diff, diff))
    return dist, t, diff


def signed_distance(points, bars, return_gradient=False):
    """Signed distance from points to the boundary of each bar.

    Negative inside the stadium, positive outside. Returns an ``(M, n)``
    array; with ``return_gradient`` also the ``(M, n, 5)`` derivative with
    respect to ``[x0, y0, x1, y1, w]``.

    The distance to a segment is C1 everywhere except on the segment itself,
    where the outward normal is undefined; there the endpoint derivatives
    are set to zero.
    """
    pts = _as_points(points)
    z = bars_to_array(bars)
    dist, t, diff = _segment_closest(pts, z)
    d = dist - 0.5 * z[None, :, 4]
    if not return_gradient:
        return d
    with np.errstate(invalid="ignore", divide="ignore"):
        normal = np.where(dist[..., None] > 0, diff / dist[..., None], 0.0)
    grad = np.empty(d.shape + (5,))
    grad[..., 0:2] = -(1.0 - t)[..., None] * normal
    grad[..., 2:4] = -t[..., None] * normal
    grad[..., 4] = -0.5
    return d, grad


def projected_density_2d(d, radius, return_derivative=False):
    """Area fraction of a disc of ``radius`` lying behind a straight boundary at signed distance ``d``."""
    d = np.asarray(d, dtype=float)
    radius = np.asarray(radius, dtype=float)
    u = np.clip(d / radius, -1.0, 1.0)
    root = np.sqrt(1.0 - u * u)
    rho = (np.arccos(u) - u * root) / np.pi
    if return_derivative:
        return rho, -2.0 * root / (np.pi * radius)
    return rho


def projected_density_3d(d, radius, return_derivative=False):
    """Volume fraction of a ball behind a flat boundary (spherical cap)."""
    d = np.asarray(d, dtype=float)
    radius = np.asarray(radius, dtype=float)
    u = np.clip(d / radius, -1.0, 1.0)
    rho = 0.5 + 0.25 * u**3 - 0.75 * u
    if return_derivative:
        return rho, 0.75 * (u * u - 1.0) / radius
    return rho


def effective_density(rho, alpha, penalty):
    return np.asarray(alpha, dtype=float) ** penalty * np.asarray(rho, dtype=float)


def ks_max(values, k, axis=-1, return_weights=False):
    """Lower-bound KS approximation of the maximum, ``(1/k) ln(mean(exp(k x)))``.

    The result satisfies ``max(x) - ln(n)/k <= ks_max(x) <= max(x)``. With
    ``return_weights`` the softmax weights (the partial derivatives) are
    returned as well.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[axis] if x.ndim else 0
    if n == 0:
        raise EmptyUnionError("KS aggregation over zero components")
    xmax = np.max(x, axis=axis, keepdims=True)
    ex = np.exp(k * (x - xmax))
    total = np.sum(ex, axis=axis, keepdims=True)
    value = np.squeeze(xmax + np.log(total / n) / k, axis=axis)
    if return_weights:
        return value, ex / total
    return value


def ks_upper(values, k, return_weights=False):
    """Upper-bound KS aggregate ``(1/k) ln(sum(exp(k x)))`` over a 1D vector."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise EmptyUnionError("KS aggregation over zero entries")
    xmax = x.max()
    ex = np.exp(k * (x - xmax))
    total = ex.sum()
    value = xmax + np.log(total) / k
    if return_weights:
        return value, ex / total
    return value


def ersatz_scale(rho, rho_min):
    return rho_min + np.asarray(rho, dtype=float) * (1.0 - rho_min)


def composite_density(points, bars, params: ProjectionParams, radius=None,
                      penalty=None, return_gradient=False):
    """KS union of the bars' effective densities at each point.

    Parameters
    ----------
    points : (M, 2) array
    bars : sequence of BarComponent or (n, 6) array
    params : ProjectionParams
    radius : float or (M,) array, optional
        Sampling-window radius per point; defaults to ``params.radius``.
    penalty : float, optional
        Overrides the SIMP power (volume responses use 1).
    return_gradient : bool
        Also return ``(M, n, 6)`` derivatives w.r.t. each bar's variables.
    """
    pts = _as_points(points)
    z = bars_to_array(bars)
    if z.shape[0] == 0:
        raise EmptyUnionError("composite density needs at least one component")
    s = params.penalty if penalty is None else penalty
    R = params.radius if radius is None else np.asarray(radius, dtype=float)
    R = np.broadcast_to(R, (pts.shape[0],))[:, None]
    alpha = z[:, 5]
    alpha_s = alpha ** s

    if not return_gradient:
        d = signed_distance(pts, z)
        rho_hat = alpha_s[None, :] * projected_density_2d(d, R)
        return np.clip(ks_max(rho_hat, params.ks), 0.0, 1.0)

    d, dd = signed_distance(pts, z, return_gradient=True)
    rho, drho = projected_density_2d(d, R, return_derivative=True)
    rho_hat = alpha_s[None, :] * rho
    value, weights = ks_max(rho_hat, params.ks, return_weights=True)
    grad = np.empty(rho.shape + (N_BAR_VARS,))
    grad[..., :5] = (weights * alpha_s[None, :] * drho)[..., None] * dd
    if s == 0:
        dalpha = np.zeros_like(alpha)
    else:
        dalpha = s * alpha ** (s - 1)
    grad[..., 5] = weights * dalpha[None, :] * rho
    return np.clip(value, 0.0, 1.0), grad
