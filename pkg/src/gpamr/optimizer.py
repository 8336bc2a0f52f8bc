"""Method of Moving Asymptotes on [0, 1]-scaled design variables.

Standard MMA (convex separable approximations with moving asymptotes and the
2007 asymptote update rules). The subproblem is solved through its concave
dual; with one constraint the dual stationarity condition is a monotone 1D
equation solved by bracketing, with several constraints the dual is handed
to L-BFGS-B.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize


class SubproblemError(RuntimeError):
    pass


class DesignScaling:
    """Affine per-variable map between design bounds and [0, 1]."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float).ravel()
        self.upper = np.asarray(upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ValueError("bound arrays differ in shape")
        if not np.all(np.isfinite(self.lower) & np.isfinite(self.upper)):
            raise ValueError("design bounds must be finite")
        if np.any(self.upper <= self.lower):
            raise ValueError("each lower bound must be below its upper bound")
        self.span = self.upper - self.lower

    def scale(self, z):
        return (np.asarray(z, dtype=float).ravel() - self.lower) / self.span

    def unscale(self, zhat):
        return self.lower + np.asarray(zhat, dtype=float).ravel() * self.span

    def gradient(self, grad):
        """Chain a gradient w.r.t. unscaled variables into scaled ones (last axis)."""
        return np.asarray(grad, dtype=float) * self.span


def scale_design(z, lower, upper):
    return DesignScaling(lower, upper).scale(z)


def unscale_design(zhat, lower, upper):
    return DesignScaling(lower, upper).unscale(zhat)


def apply_move_limit(zhat, move, lower=0.0, upper=1.0):
    """Per-variable box ``[max(lower, z - m), min(upper, z + m)]``."""
    if not 0 < move <= 1:
        raise ValueError("move limit must lie in (0, 1]")
    z = np.asarray(zhat, dtype=float)
    return np.maximum(lower, z - move), np.minimum(upper, z + move)


@dataclass
class MmaParams:
    a0: float = 1.0
    c: float = 10.0  # penalty on constraint violation (the "M" coefficient)
    d: float = 1.0
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    asymin: float = 0.01  # closest asymptote distance, as a fraction of the variable range
    asymax: float = 10.0
    albefa: float = 0.1
    raa0: float = 1e-5
    conservatism: float = 0.0  # extra curvature added to every approximation
    subproblem_tol: float = 1e-10


@dataclass
class MmaState:
    n: int
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iteration: int = 0
    last_multipliers: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self):
        arr = lambda a: None if a is None else [float(v) for v in a]
        return {"n": self.n, "iteration": self.iteration, "low": arr(self.low),
                "upp": arr(self.upp), "xold1": arr(self.xold1), "xold2": arr(self.xold2)}

    @classmethod
    def from_dict(cls, data):
        arr = lambda a: None if a is None else np.asarray(a, dtype=float)
        return cls(n=int(data["n"]), low=arr(data.get("low")), upp=arr(data.get("upp")),
                   xold1=arr(data.get("xold1")), xold2=arr(data.get("xold2")),
                   iteration=int(data.get("iteration", 0)))


def _asymptotes(state: MmaState, x, params: MmaParams):
    span = 1.0
    if state.iteration < 2 or state.xold2 is None:
        return x - params.asyinit * span, x + params.asyinit * span
    zzz = (x - state.xold1) * (state.xold1 - state.xold2)
    factor = np.ones_like(x)
    factor[zzz > 0] = params.asyincr
    factor[zzz < 0] = params.asydecr
    low = x - factor * (state.xold1 - state.low)
    upp = x + factor * (state.upp - state.xold1)
    low = np.clip(low, x - params.asymax * span, x - params.asymin * span)
    upp = np.clip(upp, x + params.asymin * span, x + params.asymax * span)
    return low, upp


def _approximation(df, ux, xl, params: MmaParams, raa=0.0):
    dp = np.maximum(df, 0.0)
    dq = np.maximum(-df, 0.0)
    pq = 0.001 * (dp + dq) + params.raa0 + params.conservatism + raa
    return (dp + pq) * ux**2, (dq + pq) * xl**2


@dataclass
class Approximation:
    """Convex separable model built at ``x``; values come from :meth:`values`."""
    x: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    r0: float
    P: np.ndarray
    Q: np.ndarray
    r: np.ndarray

    def values(self, xs):
        """Model values ``[f0~, f1~, ...]`` at ``xs``."""
        a, b = 1.0 / (self.upp - xs), 1.0 / (xs - self.low)
        f0 = self.r0 + self.p0 @ a + self.q0 @ b
        return np.concatenate([[f0], self.r + self.P @ a + self.Q @ b])


def mma_subproblem(state: MmaState, x, f0, df0, fc, dfc, box, params: MmaParams = MmaParams(),
                   raa=None):
    """Build and solve one MMA subproblem without touching ``state``.

    ``raa`` (length m + 1, objective first) adds curvature per function, as in
    the globally convergent variant. Returns ``(x_new, multipliers, model)``.
    """
    x = np.asarray(x, dtype=float)
    df0 = np.asarray(df0, dtype=float)
    fc = np.atleast_1d(np.asarray(fc, dtype=float))
    dfc = np.atleast_2d(np.asarray(dfc, dtype=float))
    if df0.shape != x.shape or dfc.shape != (len(fc), len(x)):
        raise ValueError("inconsistent gradient dimensions")
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dfc))):
        raise ValueError("non-finite gradients passed to MMA")
    raa = np.zeros(len(fc) + 1) if raa is None else np.asarray(raa, dtype=float)

    low, upp = _asymptotes(state, x, params)
    alpha = np.maximum.reduce([low + params.albefa * (x - low), np.asarray(box[0], float),
                               np.zeros_like(x)])
    beta = np.minimum.reduce([upp - params.albefa * (upp - x), np.asarray(box[1], float),
                              np.ones_like(x)])
    ux, xl = upp - x, x - low
    p0, q0 = _approximation(df0, ux, xl, params, raa[0])
    P, Q = _approximation(dfc, ux[None, :], xl[None, :], params, raa[1:, None])
    r = fc - (P / ux).sum(axis=1) - (Q / xl).sum(axis=1)
    r0 = float(f0) - (p0 / ux).sum() - (q0 / xl).sum()

    def primal(lam):
        pj = p0 + lam @ P
        qj = q0 + lam @ Q
        sp_, sq = np.sqrt(pj), np.sqrt(qj)
        xs = (sp_ * low + sq * upp) / (sp_ + sq)
        return np.clip(xs, alpha, beta)

    def ycap(lam):
        return np.maximum(0.0, (lam - params.c) / params.d)

    def dual_grad(lam):
        xs = primal(lam)
        g = (P / (upp - xs)).sum(axis=1) + (Q / (xs - low)).sum(axis=1) + r
        return g - ycap(lam)

    m = len(fc)
    if m == 0:
        lam = np.zeros(0)
    elif m == 1:
        lam = _solve_single(lambda t: dual_grad(np.array([t]))[0], params)
    else:
        lam = _solve_dual_lbfgsb(m, primal, ycap, dual_grad, p0, q0, P, Q, r, low, upp, params)
    model = Approximation(x.copy(), low, upp, p0, q0, r0, P, Q, r)
    return primal(lam), lam, model


def commit_step(state: MmaState, model: Approximation, multipliers):
    """Record an accepted subproblem solution in ``state``."""
    state.xold2 = None if state.xold1 is None else state.xold1.copy()
    state.xold1 = model.x.copy()
    state.low, state.upp = model.low, model.upp
    state.iteration += 1
    state.last_multipliers = multipliers


def mma_step(state: MmaState, x, f0, df0, fc, dfc, box, params: MmaParams = MmaParams()):
    """One MMA iteration on scaled variables.

    Parameters
    ----------
    state : MmaState
        Updated in place (asymptotes, history, counter).
    x : (n,) current scaled iterate
    f0, df0 : objective value and gradient
    fc, dfc : (m,) constraint values ``f_i <= 0`` and ``(m, n)`` gradients
    box : (lower, upper) move-limit box, already intersected with [0, 1]

    Returns the new iterate.
    """
    xnew, lam, model = mma_subproblem(state, x, f0, df0, fc, dfc, box, params)
    commit_step(state, model, lam)
    return xnew


def initial_conservatism(df0, dfc, floor=1e-6):
    """Starting per-function curvature: 1% of the mean absolute (scaled) gradient."""
    grads = np.vstack([np.atleast_2d(df0), np.atleast_2d(dfc)])
    return np.maximum(0.01 * np.mean(np.abs(grads), axis=1), floor)


def is_conservative(model: Approximation, xnew, values, tol=1e-10):
    """Per-function flags: true value does not exceed the model at ``xnew``."""
    return np.asarray(values, dtype=float) <= model.values(xnew) + tol


def raise_conservatism(raa, model: Approximation, xnew, values):
    """Increase curvature of non-conservative functions (globally convergent MMA update)."""
    raa = np.asarray(raa, dtype=float).copy()
    x, low, upp = model.x, model.low, model.upp
    dist = np.sum((upp - low) * (xnew - x) ** 2 / ((upp - xnew) * (xnew - low)))
    if dist <= 0:
        return raa
    gap = np.asarray(values, dtype=float) - model.values(xnew)
    bad = gap > 0
    raa[bad] = np.minimum(1.1 * (raa[bad] + gap[bad] / dist), 10.0 * raa[bad])
    return raa


def _solve_single(grad, params: MmaParams):
    """Root of the monotone decreasing dual derivative on [0, inf)."""
    g0 = grad(0.0)
    if g0 <= 0.0:
        return np.array([0.0])
    hi = max(1.0, params.c)
    for _ in range(200):
        if grad(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise SubproblemError(f"dual bracket not found (derivative {grad(hi):.3e} at {hi:.3e})")
    root, info = optimize.brentq(grad, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps,
                                 maxiter=500, full_output=True)
    if not info.converged:
        raise SubproblemError(f"MMA dual root search failed, residual {abs(grad(root)):.3e}")
    # the bracket is tight; the derivative may still jump there when variables reach
    # their box, so no residual test on its value
    return np.array([root])


def _solve_dual_lbfgsb(m, primal, ycap, dual_grad, p0, q0, P, Q, r, low, upp, params):
    def neg_dual(lam):
        xs = primal(lam)
        y = ycap(lam)
        pj = p0 + lam @ P
        qj = q0 + lam @ Q
        val = np.sum(pj / (upp - xs) + qj / (xs - low)) + lam @ r
        val += params.c * y.sum() + 0.5 * params.d * (y @ y) - lam @ y
        return -val, -dual_grad(lam)

    res = optimize.minimize(neg_dual, np.ones(m), jac=True, method="L-BFGS-B",
                            bounds=[(0.0, None)] * m,
                            options=dict(ftol=1e-15, gtol=1e-12, maxiter=2000))
    lam = res.x
    g = dual_grad(lam)
    resid = np.max(np.abs(np.where(lam > 0, g, np.maximum(g, 0.0))))
    if resid > 1e-6 * (1.0 + np.max(np.abs(r))):
        raise SubproblemError(f"MMA subproblem did not converge, KKT residual {resid:.3e}")
    return lam


def converged(history, tol=5e-3):
    """True when the last iterate moved less than ``tol`` (max-norm) from both of the two before it."""
    if len(history) < 3:
        return False
    x0, x1, x2 = (np.asarray(h, dtype=float) for h in history[-1:-4:-1])
    return bool(np.max(np.abs(x0 - x1)) < tol and np.max(np.abs(x0 - x2)) < tol)
