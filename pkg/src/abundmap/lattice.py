"""Cell grids, binary adjacency and separator partitions for the CAR sweep.

A separator partition splits the cells into a boundary set ``B`` and blocks
``D_1..D_L`` such that no edge joins two different blocks. Conditional on the
boundary effects, each block's spatial effects can then be Gibbs-updated
independently of every other block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.spatial import cKDTree

__all__ = [
    "CellGrid",
    "AdjacencyStructure",
    "SeparatorPartition",
    "LatticeError",
    "build_adjacency",
    "partition_stripes",
    "sequential_step_count",
    "validate_partition",
    "write_partition_csv",
]


class LatticeError(ValueError):
    """Invalid grid, adjacency or partition request."""


@dataclass(frozen=True)
class CellGrid:
    """Cells with dense integer ids ``0..I-1`` and planar coordinates."""

    coords: np.ndarray
    cell_id: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] == 0:
            raise LatticeError("coords must be a non-empty (I, 2) array")
        if not np.all(np.isfinite(coords)):
            raise LatticeError("cell coordinates must be finite")
        ids = np.arange(coords.shape[0]) if self.cell_id is None else np.asarray(self.cell_id)
        if ids.shape != (coords.shape[0],) or np.unique(ids).size != ids.size:
            raise LatticeError("cell ids must be unique, one per coordinate row")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "cell_id", ids.astype(np.int64))

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def rectangle(cls, nx: int, ny: int, spacing: float = 1.0) -> "CellGrid":
        """``nx`` columns by ``ny`` rows, ids running along x first."""
        xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing)
        return cls(np.column_stack([xs.ravel(), ys.ravel()]))

    def subset(self, index) -> "CellGrid":
        index = np.asarray(index)
        return CellGrid(self.coords[index], self.cell_id[index])


@dataclass(frozen=True)
class AdjacencyStructure:
    """Symmetric binary adjacency in CSR form.

    ``indices[indptr[i]:indptr[i+1]]`` are the (ascending) neighbours of cell
    ``i``; ``n_neighbors[i]`` is the row sum ``w_{i+}``.
    """

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indptr.size - 1

    @property
    def n_neighbors(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def n_edges(self) -> int:
        return self.indices.size // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as an ``(E, 2)`` array with ``i < j``."""
        rows = np.repeat(np.arange(self.size), self.n_neighbors)
        keep = rows < self.indices
        return np.column_stack([rows[keep], self.indices[keep]])

    def to_sparse(self) -> sparse.csr_matrix:
        data = np.ones(self.indices.size)
        return sparse.csr_matrix((data, self.indices, self.indptr), shape=(self.size, self.size))

    def laplacian(self) -> sparse.csr_matrix:
        """``diag(w_{i+}) - W``, the (singular) intrinsic CAR precision up to scale."""
        return (sparse.diags(self.n_neighbors.astype(float)) - self.to_sparse()).tocsr()

    @classmethod
    def from_edges(cls, n: int, edges) -> "AdjacencyStructure":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if np.any(edges[:, 0] == edges[:, 1]):
            raise LatticeError("self-loops are not allowed")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        w = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        w.sum_duplicates()
        w.sort_indices()
        adj = cls(w.indptr.astype(np.int64), w.indices.astype(np.int64))
        _reject_isolated(adj)
        return adj

    def permute(self, order) -> "AdjacencyStructure":
        """Relabel so that new cell ``k`` is old cell ``order[k]``."""
        order = np.asarray(order)
        w = self.to_sparse()[order][:, order].tocsr()
        w.sort_indices()
        return AdjacencyStructure(w.indptr.astype(np.int64), w.indices.astype(np.int64))

    def is_connected(self) -> bool:
        n_comp, _ = sparse.csgraph.connected_components(self.to_sparse(), directed=False)
        return n_comp == 1


def _reject_isolated(adj: AdjacencyStructure) -> None:
    isolated = np.flatnonzero(adj.n_neighbors == 0)
    if isolated.size:
        shown = ", ".join(map(str, isolated[:20]))
        more = "" if isolated.size <= 20 else f" (and {isolated.size - 20} more)"
        raise LatticeError(f"isolated cells (no neighbours): {shown}{more}")


def build_adjacency(grid: CellGrid, threshold: float) -> AdjacencyStructure:
    """Neighbours are distinct cells closer than ``threshold`` (strictly).

    Raises:
        LatticeError: for a non-positive threshold or if any cell is isolated.
    """
    if not threshold > 0:
        raise LatticeError("threshold must be positive")
    tree = cKDTree(grid.coords)
    # query_pairs is inclusive; step just below threshold for a strict '<'
    pairs = tree.query_pairs(np.nextafter(threshold, 0.0), output_type="ndarray")
    return AdjacencyStructure.from_edges(grid.size, pairs)


@dataclass(frozen=True)
class SeparatorPartition:
    """Boundary cells plus mutually non-adjacent blocks, all as sorted id arrays."""

    boundary: np.ndarray
    blocks: list = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def labels(self, n_cells: int) -> np.ndarray:
        """Block index per cell, ``-1`` for boundary cells."""
        lab = np.full(n_cells, -2, dtype=np.int64)
        lab[self.boundary] = -1
        for k, blk in enumerate(self.blocks):
            lab[blk] = k
        return lab


def validate_partition(part: SeparatorPartition, adj: AdjacencyStructure) -> None:
    """Exhaustive check of coverage and block separation.

    Raises:
        LatticeError: on overlap, missing cells, or any edge joining two blocks.
    """
    n = adj.size
    pieces = [part.boundary, *part.blocks]
    allc = np.concatenate(pieces) if pieces else np.empty(0, int)
    if allc.size != n or np.unique(allc).size != n or (n and (allc.min() < 0 or allc.max() >= n)):
        raise LatticeError("partition must cover every cell exactly once")
    lab = part.labels(n)
    e = adj.edges()
    a, b = lab[e[:, 0]], lab[e[:, 1]]
    cross = (a >= 0) & (b >= 0) & (a != b)
    if np.any(cross):
        i, j = e[np.flatnonzero(cross)[0]]
        raise LatticeError(f"cells {i} and {j} are adjacent but lie in different blocks")


def sequential_step_count(part: SeparatorPartition) -> int:
    """Critical path of one sweep: the boundary pass plus the longest block."""
    longest = max((blk.size for blk in part.blocks), default=0)
    return int(part.boundary.size + longest)


def _axis_ranks(values: np.ndarray) -> tuple[np.ndarray, int]:
    levels, ranks = np.unique(np.round(values, 9), return_inverse=True)
    return ranks, levels.size


def _even_separators(n: int, n_blocks: int) -> list[int]:
    """Separator positions splitting ``n`` lines into ``n_blocks`` near-equal runs."""
    free = n - (n_blocks - 1)
    sizes = [free // n_blocks + (1 if k < free % n_blocks else 0) for k in range(n_blocks)]
    seps, pos = [], 0
    for s in sizes[:-1]:
        pos += s
        seps.append(pos)
        pos += 1
    return seps


def _stripe_partition(xr, yr, x_seps, y_seps) -> SeparatorPartition:
    x_seps, y_seps = sorted(set(x_seps)), sorted(set(y_seps))
    on_sep = np.isin(xr, x_seps) | np.isin(yr, y_seps)
    bx = np.searchsorted(x_seps, xr)
    by = np.searchsorted(y_seps, yr)
    key = by * (len(x_seps) + 1) + bx
    blocks = []
    for k in np.unique(key[~on_sep]):
        blocks.append(np.flatnonzero((key == k) & ~on_sep))
    return SeparatorPartition(np.flatnonzero(on_sep), blocks)


def partition_stripes(
    adj: AdjacencyStructure,
    grid: CellGrid,
    L: int | None = None,
    *,
    x_separators=None,
    y_separators=None,
) -> SeparatorPartition:
    """Separate the lattice with one-cell-wide, axis-aligned stripes.

    Either give the target block count ``L`` or explicit separator line
    positions (0-based column / row ranks in coordinate order). For a target
    ``L`` every factorisation ``L = bx * by`` that fits the grid is tried, and
    the one with the shortest critical path wins; ties go to the layout with
    fewer separator lines along x. Blocks that end up empty (irregular cell
    sets) are dropped.

    Raises:
        LatticeError: if ``L`` cannot be realised, naming the largest feasible
            block count, or if the stripes fail to disconnect the blocks.
    """
    xr, nx = _axis_ranks(grid.coords[:, 0])
    yr, ny = _axis_ranks(grid.coords[:, 1])
    if x_separators is not None or y_separators is not None:
        part = _stripe_partition(xr, yr, list(x_separators or []), list(y_separators or []))
        validate_partition(part, adj)
        return part
    if L is None or L < 1:
        raise LatticeError("L must be a positive integer")
    if L == 1:
        return SeparatorPartition(np.empty(0, dtype=np.int64), [np.arange(grid.size)])
    max_x, max_y = (nx + 1) // 2, (ny + 1) // 2
    best = None
    for bx in range(1, L + 1):
        if L % bx:
            continue
        by = L // bx
        if bx > max_x or by > max_y:
            continue
        part = _stripe_partition(xr, yr, _even_separators(nx, bx), _even_separators(ny, by))
        steps = sequential_step_count(part)
        if best is None or steps < best[0]:
            best = (steps, part)
    if best is None:
        raise LatticeError(
            f"L={L} cannot be laid out as bx*by stripe blocks on a {nx}x{ny} lattice "
            f"(bx <= {max_x}, by <= {max_y}); maximum feasible L is {max_x * max_y}"
        )
    validate_partition(best[1], adj)
    return best[1]


def write_partition_csv(part: SeparatorPartition, grid: CellGrid, path) -> None:
    """Debug dump with columns ``cell_id,role`` (``boundary`` or ``block_k``)."""
    lab = part.labels(grid.size)
    roles = np.where(lab < 0, "boundary", np.char.add("block_", lab.astype(str)))
    pd.DataFrame({"cell_id": grid.cell_id, "role": roles}).to_csv(path, index=False)
