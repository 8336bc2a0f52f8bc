"""Plane linear elasticity with bilinear quads on a (possibly nonconforming) quadtree mesh.

Hanging-node constraints are eliminated with the node transform of the mesh
(``u = T u_free``), Dirichlet dofs are removed, and the reduced system is
factorized once so adjoint solves are cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import QuadMesh

_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


class FemError(RuntimeError):
    pass


class SingularSystemError(FemError):
    pass


@dataclass(frozen=True)
class Material:
    E: float = 1e5
    nu: float = 0.3
    plane_stress: bool = True

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def D(self) -> np.ndarray:
        E, nu = self.E, self.nu
        if self.plane_stress:
            return E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
        c = E / ((1 + nu) * (1 - 2 * nu))
        return c * np.array([[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, (1 - 2 * nu) / 2]])


def strain_displacement(xi, eta, h=1.0):
    """3x8 B matrix of a square bilinear element of side ``h`` at (xi, eta)."""
    dndx = 0.25 * _XI * (1 + _ETA * eta) * 2.0 / h
    dndy = 0.25 * _ETA * (1 + _XI * xi) * 2.0 / h
    B = np.zeros((3, 8))
    B[0, 0::2] = dndx
    B[1, 1::2] = dndy
    B[2, 0::2] = dndy
    B[2, 1::2] = dndx
    return B


def element_stiffness(h=1.0, scale=1.0, material: Material = Material(), n_gauss=2):
    """Gauss-integrated stiffness of a square bilinear element (unit thickness)."""
    pts, wts = np.polynomial.legendre.leggauss(n_gauss)
    D = material.D
    K = np.zeros((8, 8))
    det = h * h / 4.0
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            B = strain_displacement(xi, eta, h)
            K += wx * wy * det * B.T @ D @ B
    return scale * K


def von_mises(stress):
    """Plane-stress von Mises stress of ``(..., 3)`` [sxx, syy, sxy] arrays."""
    s = np.asarray(stress, dtype=float)
    sx, sy, txy = s[..., 0], s[..., 1], s[..., 2]
    return np.sqrt(np.maximum(sx * sx + sy * sy - sx * sy + 3.0 * txy * txy, 0.0))


# boundary conditions -------------------------------------------------------

@dataclass(frozen=True)
class Box:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, points, tol=1e-9):
        p = np.atleast_2d(points)
        return ((p[:, 0] >= self.xmin - tol) & (p[:, 0] <= self.xmax + tol)
                & (p[:, 1] >= self.ymin - tol) & (p[:, 1] <= self.ymax + tol))


@dataclass(frozen=True)
class Support:
    """Prescribed displacement components on all nodes inside ``region``.

    ``value`` is None (homogeneous), a constant per listed component, or a
    callable mapping ``(M, 2)`` node coordinates to ``(M, 2)`` displacements.
    """

    region: Box
    components: tuple[int, ...] = (0, 1)
    value: Callable | tuple | None = None


@dataclass(frozen=True)
class PointLoad:
    point: tuple[float, float]
    force: tuple[float, float]


@dataclass(frozen=True)
class EdgeLoad:
    """Uniform traction on the boundary edges inside ``region``.

    ``force`` is the resultant; it is spread over the loaded boundary length.
    """

    region: Box
    force: tuple[float, float]


@dataclass(frozen=True)
class BoundaryConditions:
    supports: Sequence[Support] = ()
    loads: Sequence = ()


def dirichlet_values(mesh: QuadMesh, bcs: BoundaryConditions):
    """Global dof ids and values of all prescribed displacements."""
    xy = mesh.node_coords
    dofs, vals = [], []
    for sup in bcs.supports:
        nodes = np.nonzero(sup.region.contains(xy))[0]
        if callable(sup.value):
            u = np.asarray(sup.value(xy[nodes]), dtype=float).reshape(-1, 2)
        else:
            u = np.zeros((len(nodes), 2))
            if sup.value is not None:
                for c, v in zip(sup.components, sup.value):
                    u[:, c] = v
        for c in sup.components:
            dofs.append(2 * nodes + c)
            vals.append(u[:, c])
    if not dofs:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    dofs, idx = np.unique(dofs, return_index=True)
    return dofs, vals[idx]


def load_vector(mesh: QuadMesh, bcs: BoundaryConditions):
    xy = mesh.node_coords
    f = np.zeros(2 * mesh.n_nodes)
    for load in bcs.loads:
        if isinstance(load, PointLoad):
            node = int(np.argmin(np.sum((xy - np.asarray(load.point)) ** 2, axis=1)))
            f[2 * node:2 * node + 2] += load.force
        elif isinstance(load, EdgeLoad):
            edges = mesh.boundary_edges
            inside = load.region.contains(xy[edges[:, 0]]) & load.region.contains(xy[edges[:, 1]])
            edges = edges[inside]
            if len(edges) == 0:
                raise ValueError(f"edge load region {load.region} touches no boundary edge")
            lengths = np.linalg.norm(xy[edges[:, 1]] - xy[edges[:, 0]], axis=1)
            traction = np.asarray(load.force, dtype=float) / lengths.sum()
            for c in range(2):
                np.add.at(f, 2 * edges[:, 0] + c, 0.5 * lengths * traction[c])
                np.add.at(f, 2 * edges[:, 1] + c, 0.5 * lengths * traction[c])
        else:
            raise TypeError(f"unknown load type {type(load).__name__}")
    return f


# assembly and solution -----------------------------------------------------

@dataclass
class FemSolution:
    u: np.ndarray
    f: np.ndarray
    compliance: float
    scale: np.ndarray
    residual: float
    n_dofs: int
    _system: "ElasticitySystem" = field(repr=False)
    _factor: object = field(repr=False)

    def element_displacements(self):
        return self.u[self._system.edofs]

    def solve_adjoint(self, rhs):
        """Solve ``K lam = rhs`` (full-dof rhs) with the same reduced operator; zero on supports."""
        return self._system.back_substitute(self._factor, rhs, homogeneous=True)


class ElasticitySystem:
    """Mesh-bound assembly data: element dofs, constraint map, supports and loads."""

    def __init__(self, mesh: QuadMesh, material: Material, bcs: BoundaryConditions,
                 solver="direct"):
        self.mesh = mesh
        self.material = material
        self.bcs = bcs
        self.solver = solver
        self.K0 = element_stiffness(1.0, 1.0, material)  # scale-free in 2D for squares
        self.B0 = strain_displacement(0.0, 0.0, 1.0)
        nodes = mesh.cell_nodes
        self.edofs = np.empty((mesh.n_cells, 8), dtype=np.int64)
        self.edofs[:, 0::2] = 2 * nodes
        self.edofs[:, 1::2] = 2 * nodes + 1
        self._rows = np.repeat(self.edofs, 8, axis=1).ravel()
        self._cols = np.tile(self.edofs, (1, 8)).ravel()
        Tn, free_nodes = mesh.node_transform
        self.T = sp.kron(Tn, sp.identity(2), format="csr")
        n_red = self.T.shape[1]
        free_dofs = np.column_stack([2 * free_nodes, 2 * free_nodes + 1]).ravel()
        red_of_full = np.full(2 * mesh.n_nodes, -1, dtype=np.int64)
        red_of_full[free_dofs] = np.arange(n_red)
        ddofs, dvals = dirichlet_values(mesh, bcs)
        keep = red_of_full[ddofs] >= 0
        self.fixed = red_of_full[ddofs[keep]]
        self.fixed_values = dvals[keep]
        mask = np.ones(n_red, dtype=bool)
        mask[self.fixed] = False
        self.unknown = np.nonzero(mask)[0]
        if len(self.fixed) == 0:
            raise FemError("no Dirichlet conditions: the system has rigid-body modes")
        self.f = load_vector(mesh, bcs)

    @property
    def n_dofs(self):
        return 2 * self.mesh.n_nodes

    def assemble(self, scale):
        scale = np.asarray(scale, dtype=float)
        data = (scale[:, None, None] * self.K0[None]).ravel()
        K = sp.coo_matrix((data, (self._rows, self._cols)), shape=(self.n_dofs, self.n_dofs)).tocsr()
        Kr = (self.T.T @ K @ self.T).tocsr()
        return Kr

    def factorize(self, Kr):
        Kuu = Kr[self.unknown][:, self.unknown].tocsc()
        if self.solver == "direct":
            try:
                lu = spla.splu(Kuu, permc_spec="MMD_AT_PLUS_A",
                               options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise SingularSystemError(f"stiffness factorization failed: {exc}") from exc
            return Kr, Kuu, lu
        return Kr, Kuu, None

    def _solve_uu(self, factor, rhs):
        Kr, Kuu, lu = factor
        if lu is not None:
            x = lu.solve(rhs)
        else:
            diag = Kuu.diagonal()
            M = sp.diags(1.0 / diag)
            x, info = spla.cg(Kuu, rhs, M=M, rtol=1e-12, maxiter=20 * len(rhs))
            if info != 0:
                raise FemError(f"CG did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SingularSystemError("non-finite solution: disconnected load path?")
        return x

    def back_substitute(self, factor, rhs_full, homogeneous=False):
        Kr = factor[0]
        rhs = self.T.T @ rhs_full
        ured = np.zeros(self.T.shape[1])
        if not homogeneous:
            ured[self.fixed] = self.fixed_values
            rhs = rhs - Kr @ ured
        ured[self.unknown] = self._solve_uu(factor, rhs[self.unknown])
        return self.T @ ured

    def solve(self, scale, Kr=None) -> FemSolution:
        """Solve for the given per-cell scale; ``Kr`` may pass a matrix from :meth:`assemble`."""
        if Kr is None:
            Kr = self.assemble(scale)
        factor = self.factorize(Kr)
        u = self.back_substitute(factor, self.f)
        rhs = (self.T.T @ self.f)[self.unknown]
        r = (Kr @ _reduced(self, u))[self.unknown] - rhs
        nrm = np.linalg.norm(rhs)
        residual = float(np.linalg.norm(r) / nrm) if nrm > 0 else float(np.linalg.norm(r))
        return FemSolution(u=u, f=self.f, compliance=float(self.f @ u), scale=np.asarray(scale),
                           residual=residual, n_dofs=len(self.unknown), _system=self,
                           _factor=factor)

    def centroid_strain(self, u):
        ue = u[self.edofs]
        return (ue @ self.B0.T) / self.mesh.cell_h[:, None]

    def centroid_stress(self, u):
        """Solid-material centroid stress ``D B u_e`` per cell, ``(n_cells, 3)``."""
        return self.centroid_strain(u) @ self.material.D.T


def _reduced(system, u):
    """Values of ``u`` on the unconstrained (reduced) dofs."""
    _, free_nodes = system.mesh.node_transform
    idx = np.column_stack([2 * free_nodes, 2 * free_nodes + 1]).ravel()
    return u[idx]


def assemble_and_solve(mesh: QuadMesh, scale, material: Material, bcs: BoundaryConditions,
                       solver="direct") -> FemSolution:
    return ElasticitySystem(mesh, material, bcs, solver).solve(scale)
