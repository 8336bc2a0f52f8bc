"""Density-driven adaptive refinement.

Each call to :func:`adapt` starts from the coarsest mesh and refines, one
level at a time, every cell whose composite density lies in the band
``0 < rho <= rho_th``. The band test uses an enlarged sampling window; the
analysis densities on the finished mesh use the circumscribed radius.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import ProjectionParams, composite_density
from .mesh import QuadMesh, circumradius


@dataclass(frozen=True)
class AmrParams:
    n_levels: int = 0
    rho_threshold: float = 0.9
    band_factor: float = 2.0
    frozen_fine: Callable | None = None  # centroids (M, 2) -> bool mask, always refined

    def __post_init__(self):
        if not 0 < self.rho_threshold < 1:
            raise ValueError("rho_threshold must lie in (0, 1)")
        if self.n_levels < 0:
            raise ValueError("n_levels must be >= 0")
        if self.band_factor < 1:
            raise ValueError("band_factor must be >= 1")


@dataclass
class DensityField:
    """Per-cell composite density evaluated at cell centroids."""

    rho: np.ndarray
    radius: np.ndarray
    marking_evaluations: int = 0  # cell projections spent on marking

    def scale(self, rho_min):
        return rho_min + self.rho * (1.0 - rho_min)


def analysis_density(mesh: QuadMesh, bars, params: ProjectionParams, penalty=None,
                     return_gradient=False):
    """Centroid composite density with the circumscribed sampling radius."""
    R = circumradius(mesh.cell_h)
    return composite_density(mesh.centroids, bars, params, radius=R, penalty=penalty,
                             return_gradient=return_gradient)


def band_indicator(rho, rho_threshold):
    rho = np.asarray(rho)
    return (rho > 0.0) & (rho <= rho_threshold)


def mark_cells(mesh: QuadMesh, bars, params: ProjectionParams, amr: AmrParams,
               max_level=None):
    """Indices of active cells to refine; cells at ``max_level`` are never marked."""
    top = amr.n_levels if max_level is None else max_level
    R = circumradius(mesh.cell_h, amr.band_factor)
    rho = composite_density(mesh.centroids, bars, params, radius=R)
    marked = band_indicator(rho, amr.rho_threshold)
    if amr.frozen_fine is not None:
        marked |= np.asarray(amr.frozen_fine(mesh.centroids), dtype=bool)
    marked &= mesh.cell_level < top
    return np.nonzero(marked)[0]


def adapt(mesh: QuadMesh, bars, params: ProjectionParams, amr: AmrParams):
    """Rebuild the refined mesh for a design, then project analysis densities on it.

    Returns ``(mesh, DensityField)``.
    """
    if amr.n_levels > mesh.max_level:
        raise ValueError("n_levels exceeds the mesh's max_level")
    mesh = mesh.coarsest_reset()
    n_projected = 0
    for _ in range(amr.n_levels):
        n_projected += mesh.n_cells
        marked = mark_cells(mesh, bars, params, amr)
        if len(marked) == 0:
            break
        mesh = mesh.refine(marked)
    R = circumradius(mesh.cell_h)
    rho = composite_density(mesh.centroids, bars, params, radius=R)
    return mesh, DensityField(rho, R, n_projected)
