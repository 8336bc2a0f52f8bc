"""Compliance, volume fraction and aggregated stress, with design sensitivities.

Gradients are taken with the mesh held fixed; they are returned per bar as
``(n_bars, 6)`` arrays in unscaled variables unless stated otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .amr import analysis_density
from .fem import ElasticitySystem, FemSolution, von_mises
from .geometry import ProjectionParams, ks_upper


@dataclass
class ResponseSet:
    objective: float
    constraints: np.ndarray
    gradient: np.ndarray  # (1 + m, N): objective row first
    names: tuple[str, ...] = ()
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.constraints = np.atleast_1d(np.asarray(self.constraints, dtype=float))
        self.gradient = np.atleast_2d(np.asarray(self.gradient, dtype=float))
        if self.gradient.shape[0] != 1 + len(self.constraints):
            raise ValueError("gradient must have one row per response")
        if not (np.isfinite(self.objective) and np.all(np.isfinite(self.constraints))
                and np.all(np.isfinite(self.gradient))):
            raise FloatingPointError("non-finite response or gradient")


def volume_fraction(mesh, bars, params: ProjectionParams, return_gradient=True):
    """Area-weighted mean composite density, size variables unpenalized."""
    out = analysis_density(mesh, bars, params, penalty=1.0, return_gradient=return_gradient)
    w = mesh.cell_area / mesh.domain_area
    if not return_gradient:
        return float(w @ out)
    rho, drho = out
    return float(w @ rho), np.einsum("m,mnk->nk", w, drho)


def element_energy(solution: FemSolution, system: ElasticitySystem):
    """Unscaled element strain energy ``u_e^T K0 u_e``."""
    ue = solution.element_displacements()
    return np.einsum("ei,ij,ej->e", ue, system.K0, ue)


def compliance_sensitivity(solution: FemSolution, system: ElasticitySystem, drho, rho_min):
    """dC/dz for design-independent loads (self-adjoint)."""
    energy = element_energy(solution, system)
    return -(1.0 - rho_min) * np.einsum("e,enk->nk", energy, drho)


@dataclass(frozen=True)
class StressParams:
    limit: float
    ks: float = 30.0
    relaxation: float = 0.5


def relaxed_stress(solution: FemSolution, system: ElasticitySystem, rho, relaxation=0.5):
    """Relaxed von Mises stress ``rho**q * vm(D B u)`` per cell, plus the raw parts.

    ``rho`` is the composite density without the ``rho_min`` floor, so cells
    outside every bar carry no stress however much they strain.
    """
    stress = system.centroid_stress(solution.u)
    vm = von_mises(stress)
    relax = np.maximum(np.asarray(rho, dtype=float), 0.0) ** relaxation
    return relax * vm, vm, stress


def stress_response(solution: FemSolution, system: ElasticitySystem, rho, drho,
                    params: StressParams, rho_min, return_gradient=True):
    """Aggregated stress constraint ``g = KS_upper(sigma_rel / limit) - 1``.

    The gradient needs one adjoint solve with the factorized stiffness.
    """
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    q = params.relaxation
    sig, vm, stress = relaxed_stress(solution, system, rho, q)
    ratio = sig / params.limit
    G, w = ks_upper(ratio, params.ks, return_weights=True)
    g = float(G - 1.0)
    if not return_gradient:
        return g
    # explicit dependence through the relaxation factor (zero where rho = 0)
    with np.errstate(divide="ignore"):
        drelax = np.where(rho > 0, q * rho ** (q - 1.0), 0.0)
    dG_drho = w * drelax * vm / params.limit
    # dependence through displacements: dvm/dsigma, dsigma/du_e = D B0 / h
    sx, sy, txy = stress[:, 0], stress[:, 1], stress[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(vm > 0, 0.5 / vm, 0.0)
    dvm_ds = np.column_stack([(2 * sx - sy) * inv, (2 * sy - sx) * inv, 6 * txy * inv])
    DB = system.material.D @ system.B0
    coef = (w * rho ** q / params.limit)[:, None] * dvm_ds
    dG_due = (coef @ DB) / system.mesh.cell_h[:, None]
    rhs = np.zeros(system.n_dofs)
    np.add.at(rhs, system.edofs, dG_due)
    lam = solution.solve_adjoint(rhs)
    ue = solution.element_displacements()
    lam_e = lam[system.edofs]
    cross = np.einsum("ei,ij,ej->e", lam_e, system.K0, ue)
    dG_drho = dG_drho - (1.0 - rho_min) * cross
    grad = np.einsum("e,enk->nk", dG_drho, drho)
    return g, grad


def fd_check(fun, x, grad, steps=(1e-5, 1e-6, 1e-7), floor=1e-3, indices=None):
    """Central-difference check of ``grad`` at ``x`` for a scalar ``fun``.

    For each variable the step with the best agreement is kept. Relative
    errors are normalized by ``max(|fd|, |grad|, floor * max|grad|)`` so that
    entries that are negligible against the gradient's scale do not dominate.
    ``max_scaled_error`` is the vector measure ``max|fd - grad| / max|grad|``,
    which is insensitive to round-off in entries far below the gradient's scale.
    Steps are relative to ``max(1, |x_j|)``. The projected density has an
    unbounded second derivative at the edge of the sampling window, so the
    central difference is only first order for cells near that edge; the
    default steps are small for that reason.
    """
    x = np.asarray(x, dtype=float).ravel()
    grad = np.asarray(grad, dtype=float).ravel()
    idx = np.arange(x.size) if indices is None else np.asarray(indices)
    gscale = float(np.max(np.abs(grad))) if grad.size else 0.0
    best = np.full(len(idx), np.inf)
    best_fd = np.zeros(len(idx))
    per_step = np.zeros((len(steps), len(idx)))
    for si, step in enumerate(steps):
        for k, j in enumerate(idx):
            h = step * max(1.0, abs(x[j]))
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd = (fun(xp) - fun(xm)) / (2 * h)
            denom = max(abs(fd), abs(grad[j]), floor * gscale, np.finfo(float).tiny)
            err = abs(fd - grad[j]) / denom
            per_step[si, k] = err
            if err < best[k]:
                best[k], best_fd[k] = err, fd
    scaled = np.abs(best_fd - grad[idx]) / max(gscale, np.finfo(float).tiny)
    return {
        "indices": idx,
        "relative_error": best,
        "fd": best_fd,
        "per_step": per_step,
        "max_relative_error": float(best.max()) if len(best) else 0.0,
        "max_scaled_error": float(scaled.max()) if len(best) else 0.0,
    }
