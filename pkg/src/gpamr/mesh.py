"""Balanced quadtree meshes over rectangular and L-shaped envelopes.

The mesh is stored as a leaf-level map on the finest lattice the mesh may
ever reach (``max_level``): every lattice pixel records the refinement level
of the active cell covering it, or -1 outside the domain. Cells, nodes and
hanging-node constraints are derived from that map with integer arithmetic,
so node identity is exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class UnbalancedMeshError(ValueError):
    pass


def circumradius(h, band_factor=1.0):
    """Radius of the circle circumscribing a square cell of side ``h``, times ``band_factor``."""
    return band_factor * np.sqrt(2.0) * np.asarray(h, dtype=float) / 2.0


@dataclass(frozen=True)
class HangingNodeConstraint:
    node: int
    masters: tuple[int, int]
    weights: tuple[float, float] = (0.5, 0.5)


@dataclass(frozen=True)
class ConstraintSet:
    nodes: np.ndarray
    masters: np.ndarray

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        for n, (a, b) in zip(self.nodes, self.masters):
            yield HangingNodeConstraint(int(n), (int(a), int(b)))


def _cells_from_levels(levels, max_level):
    """Lower-left pixel, level and pixel->cell map of the active cells.

    Cells are ordered by lower-left pixel, row-major (y, then x).
    """
    NX, NY = levels.shape
    I, J = np.nonzero(levels >= 0)
    lv = levels[I, J].astype(np.int64)
    size = 1 << (max_level - lv)
    corner = (I % size == 0) & (J % size == 0)
    I0, J0, lv0 = I[corner], J[corner], lv[corner]
    order = np.lexsort((I0, J0))
    I0, J0, lv0 = I0[order], J0[order], lv0[order]
    pixel_cell = np.full(levels.shape, -1, dtype=np.int64)
    ids = np.arange(len(I0))
    for level in np.unique(lv0):
        shift = max_level - level
        sel = lv0 == level
        block = np.full((NX >> shift, NY >> shift), -1, dtype=np.int64)
        block[I0[sel] >> shift, J0[sel] >> shift] = ids[sel]
        mask = levels == level
        pi, pj = np.nonzero(mask)
        pixel_cell[pi, pj] = block[pi >> shift, pj >> shift]
    if np.any(pixel_cell[levels >= 0] < 0):
        raise ValueError("leaf-level map is not a valid quadtree tiling")
    return I0, J0, lv0, pixel_cell


def _neighbor_level_max(levels):
    """Max leaf level among the four edge-adjacent pixels of each pixel."""
    padded = np.pad(levels, 1, constant_values=-1)
    return np.maximum.reduce([
        padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:],
    ])


def _unbalanced_cells(levels, max_level, cells=None):
    I0, J0, lv, pixel_cell = cells if cells is not None else _cells_from_levels(levels, max_level)
    nb = _neighbor_level_max(levels)
    cell_nb = np.full(len(lv), -1, dtype=np.int64)
    active = pixel_cell >= 0
    np.maximum.at(cell_nb, pixel_cell[active], nb[active])
    return np.nonzero(cell_nb > lv + 1)[0]


class QuadMesh:
    """Immutable quadtree mesh; ``refine`` and ``coarsest_reset`` return new meshes."""

    def __init__(self, nx, ny, h_coarse, max_level, origin=(0.0, 0.0),
                 root_active=None, levels=None):
        self.nx, self.ny = int(nx), int(ny)
        self.h_coarse = float(h_coarse)
        self.max_level = int(max_level)
        if self.max_level < 0 or self.max_level > 12:
            raise ValueError("max_level must lie in [0, 12]")
        self.origin = np.asarray(origin, dtype=float)
        if root_active is None:
            root_active = np.ones((self.nx, self.ny), dtype=bool)
        self.root_active = np.asarray(root_active, dtype=bool)
        if self.root_active.shape != (self.nx, self.ny):
            raise ValueError("root_active must have shape (nx, ny)")
        f = 1 << self.max_level
        if levels is None:
            levels = np.where(np.repeat(np.repeat(self.root_active, f, 0), f, 1), 0, -1)
        self.levels = np.asarray(levels, dtype=np.int8)
        self.levels.setflags(write=False)
        if self.levels.shape != (self.nx * f, self.ny * f):
            raise ValueError("leaf-level map has the wrong shape")
        self.cell_i0, self.cell_j0, self.cell_level, self.pixel_cell = _cells_from_levels(
            self.levels, self.max_level)

    # construction ------------------------------------------------------

    @classmethod
    def rectangle(cls, width, height, h_coarse, max_level, origin=(0.0, 0.0)):
        nx, ny = _divide(width, h_coarse), _divide(height, h_coarse)
        return cls(nx, ny, h_coarse, max_level, origin)

    @classmethod
    def l_shape(cls, outer, cut, h_coarse, max_level):
        """L-shaped envelope: ``outer`` square/rectangle minus its top-right ``cut`` corner."""
        W, H = outer
        cw, ch = cut
        nx, ny = _divide(W, h_coarse), _divide(H, h_coarse)
        cx, cy = _divide(cw, h_coarse), _divide(ch, h_coarse)
        active = np.ones((nx, ny), dtype=bool)
        active[nx - cx:, ny - cy:] = False
        return cls(nx, ny, h_coarse, max_level, root_active=active)

    def _with_levels(self, levels):
        return QuadMesh(self.nx, self.ny, self.h_coarse, self.max_level, self.origin,
                        self.root_active, levels)

    # cell geometry -------------------------------------------------------

    @property
    def n_cells(self):
        return len(self.cell_level)

    @property
    def pixel_size(self):
        return self.h_coarse / (1 << self.max_level)

    @cached_property
    def cell_size_px(self):
        return (1 << (self.max_level - self.cell_level)).astype(np.int64)

    @cached_property
    def cell_h(self):
        return self.h_coarse / (2.0 ** self.cell_level)

    @cached_property
    def cell_area(self):
        return self.cell_h ** 2

    @cached_property
    def centroids(self):
        half = 0.5 * self.cell_size_px
        xy = np.column_stack([self.cell_i0 + half, self.cell_j0 + half]) * self.pixel_size
        return xy + self.origin

    @property
    def domain_area(self):
        return float(self.root_active.sum()) * self.h_coarse ** 2

    # nodes -----------------------------------------------------------------

    def _node_key(self, I, J):
        return np.asarray(J, dtype=np.int64) * (self.levels.shape[0] + 1) + np.asarray(I, dtype=np.int64)

    @cached_property
    def _corner_lattice(self):
        s = self.cell_size_px
        I = np.column_stack([self.cell_i0, self.cell_i0 + s, self.cell_i0 + s, self.cell_i0])
        J = np.column_stack([self.cell_j0, self.cell_j0, self.cell_j0 + s, self.cell_j0 + s])
        return I, J

    @cached_property
    def _node_keys(self):
        I, J = self._corner_lattice
        return np.unique(self._node_key(I, J).ravel())

    @cached_property
    def cell_nodes(self):
        """``(n_cells, 4)`` node ids, counter-clockwise from the lower-left corner."""
        I, J = self._corner_lattice
        return np.searchsorted(self._node_keys, self._node_key(I, J))

    @cached_property
    def node_lattice(self):
        stride = self.levels.shape[0] + 1
        return np.column_stack([self._node_keys % stride, self._node_keys // stride])

    @cached_property
    def node_coords(self):
        return self.node_lattice * self.pixel_size + self.origin

    @property
    def n_nodes(self):
        return len(self._node_keys)

    def find_nodes(self, I, J):
        """Node ids at lattice positions, -1 where no node exists."""
        key = self._node_key(I, J)
        pos = np.searchsorted(self._node_keys, key)
        pos = np.clip(pos, 0, len(self._node_keys) - 1)
        return np.where(self._node_keys[pos] == key, pos, -1)

    # balance & constraints -----------------------------------------------

    def unbalanced_cells(self):
        return _unbalanced_cells(self.levels, self.max_level,
                                 (self.cell_i0, self.cell_j0, self.cell_level, self.pixel_cell))

    def is_balanced(self):
        return len(self.unbalanced_cells()) == 0

    def build_constraints(self) -> ConstraintSet:
        """Hanging nodes and their two masters (the coarse edge's endpoints)."""
        if not self.is_balanced():
            raise UnbalancedMeshError("hanging-node constraints need a 2:1 balanced mesh")
        coarse = self.cell_size_px >= 2
        i0, j0 = self.cell_i0[coarse], self.cell_j0[coarse]
        s = self.cell_size_px[coarse]
        h = s // 2
        # (midpoint, endpoint a, endpoint b) for bottom, right, top, left edges
        mid_i = np.concatenate([i0 + h, i0 + s, i0 + h, i0])
        mid_j = np.concatenate([j0, j0 + h, j0 + s, j0 + h])
        a_i = np.concatenate([i0, i0 + s, i0, i0])
        a_j = np.concatenate([j0, j0, j0 + s, j0])
        b_i = np.concatenate([i0 + s, i0 + s, i0 + s, i0])
        b_j = np.concatenate([j0, j0 + s, j0 + s, j0 + s])
        hang = self.find_nodes(mid_i, mid_j)
        found = hang >= 0
        nodes = hang[found]
        masters = np.column_stack([self.find_nodes(a_i[found], a_j[found]),
                                   self.find_nodes(b_i[found], b_j[found])])
        nodes, first = np.unique(nodes, return_index=True)
        return ConstraintSet(nodes, masters[first])

    @cached_property
    def constraints(self):
        return self.build_constraints()

    @cached_property
    def node_transform(self):
        """Sparse ``(n_nodes, n_free)`` map from unconstrained nodes to all nodes.

        Chains of hanging nodes are resolved by repeated substitution.
        """
        cons = self.constraints
        n = self.n_nodes
        hanging = np.zeros(n, dtype=bool)
        hanging[cons.nodes] = True
        free = np.nonzero(~hanging)[0]
        rows = np.concatenate([free, np.repeat(cons.nodes, 2)])
        cols = np.concatenate([free, cons.masters.ravel()])
        vals = np.concatenate([np.ones(len(free)), np.full(2 * len(cons), 0.5)])
        P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        T = P
        for _ in range(self.max_level + 2):
            if not np.any(abs(T[:, cons.nodes]).sum(axis=0)):
                break
            T = T @ P
        else:
            raise UnbalancedMeshError("hanging-node constraints do not resolve")
        T = T[:, free].tocsr()
        T.eliminate_zeros()
        return T, free

    # refinement ----------------------------------------------------------

    def refine(self, marked) -> "QuadMesh":
        """Split marked cells in four, then refine further until 2:1 balanced."""
        marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
        if len(marked) == 0 and self.is_balanced():
            return self
        if np.any((marked < 0) | (marked >= self.n_cells)):
            raise IndexError("marked cell index out of range")
        if np.any(self.cell_level[marked] >= self.max_level):
            raise ValueError(f"cannot refine beyond max_level={self.max_level}")
        levels = np.array(self.levels)
        cells = (self.cell_i0, self.cell_j0, self.cell_level, self.pixel_cell)
        while len(marked):
            is_marked = np.zeros(len(cells[2]) + 1, dtype=bool)
            is_marked[marked] = True
            levels[is_marked[cells[3]] & (cells[3] >= 0)] += 1
            cells = _cells_from_levels(levels, self.max_level)
            marked = _unbalanced_cells(levels, self.max_level, cells)
        return self._with_levels(levels)

    def refine_uniform(self, times=1) -> "QuadMesh":
        mesh = self
        for _ in range(times):
            mesh = mesh.refine(np.arange(mesh.n_cells))
        return mesh

    def coarsest_reset(self) -> "QuadMesh":
        if np.all(self.cell_level == 0):
            return self
        return QuadMesh(self.nx, self.ny, self.h_coarse, self.max_level, self.origin, self.root_active)

    # boundary --------------------------------------------------------------

    @cached_property
    def boundary_edges(self):
        """Node pairs of cell edges lying on the domain boundary."""
        nb = np.pad(self.levels, 1, constant_values=-1)
        s = self.cell_size_px
        out = []
        nodes = self.cell_nodes
        # a cell edge is on the boundary when the pixels just outside it are inactive
        for k, (a, b) in enumerate([(0, 1), (1, 2), (2, 3), (3, 0)]):
            if k == 0:
                pi, pj = self.cell_i0 + 1, self.cell_j0
            elif k == 1:
                pi, pj = self.cell_i0 + s + 1, self.cell_j0 + 1
            elif k == 2:
                pi, pj = self.cell_i0 + 1, self.cell_j0 + s + 1
            else:
                pi, pj = self.cell_i0, self.cell_j0 + 1
            outside = nb[pi, pj] < 0
            out.append(np.column_stack([nodes[outside, a], nodes[outside, b]]))
        return np.concatenate(out)

    def __repr__(self):
        return (f"QuadMesh(nx={self.nx}, ny={self.ny}, h_coarse={self.h_coarse}, "
                f"max_level={self.max_level}, n_cells={self.n_cells})")


def _divide(length, h):
    n = length / h
    if abs(n - round(n)) > 1e-9 or round(n) < 1:
        raise ValueError(f"cell size {h} does not divide length {length}")
    return int(round(n))


def edge_neighbor_pairs(mesh: QuadMesh) -> np.ndarray:
    """Unique pairs of distinct edge-adjacent active cells."""
    pc = mesh.pixel_cell
    pairs = [np.column_stack([pc[:-1, :].ravel(), pc[1:, :].ravel()]),
             np.column_stack([pc[:, :-1].ravel(), pc[:, 1:].ravel()])]
    pairs = np.concatenate(pairs)
    pairs = pairs[(pairs[:, 0] >= 0) & (pairs[:, 1] >= 0) & (pairs[:, 0] != pairs[:, 1])]
    return np.unique(np.sort(pairs, axis=1), axis=0)
