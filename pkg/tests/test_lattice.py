import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abundmap.lattice import (
    AdjacencyStructure,
    CellGrid,
    LatticeError,
    build_adjacency,
    partition_stripes,
    sequential_step_count,
    validate_partition,
    write_partition_csv,
)


def brute_adjacency(coords, threshold):
    n = len(coords)
    W = np.zeros((n, n), dtype=int)
    for i, j in itertools.combinations(range(n), 2):
        if np.hypot(*(coords[i] - coords[j])) < threshold:
            W[i, j] = W[j, i] = 1
    return W


def test_three_by_three_counts():
    grid = CellGrid.rectangle(3, 3)
    adj = build_adjacency(grid, 1.5)
    assert adj.n_neighbors[4] == 8
    assert [adj.n_neighbors[i] for i in (0, 2, 6, 8)] == [3, 3, 3, 3]


def test_fifteen_by_eight_counts_match_enumeration():
    grid = CellGrid.rectangle(15, 8)
    adj = build_adjacency(grid, 1.5)
    W = brute_adjacency(grid.coords, 1.5)
    assert np.array_equal(adj.to_sparse().toarray(), W)
    x, y = grid.coords.T
    interior = (x > 0) & (x < 14) & (y > 0) & (y < 7)
    corner = ((x == 0) | (x == 14)) & ((y == 0) | (y == 7))
    assert np.all(adj.n_neighbors[interior] == 8)
    assert np.all(adj.n_neighbors[~interior & ~corner] == 5)


def test_threshold_is_strict():
    grid = CellGrid.rectangle(3, 1)
    with pytest.raises(LatticeError):
        build_adjacency(grid, 1.0)  # spacing exactly 1 is not < 1
    assert build_adjacency(grid, 1.0001).n_edges == 2


def test_isolated_cells_rejected_with_ids():
    grid = CellGrid(np.array([[0, 0], [1, 0], [10, 10], [20, 20]]))
    with pytest.raises(LatticeError, match="2, 3"):
        build_adjacency(grid, 1.5)


def test_grid_validation():
    with pytest.raises(LatticeError):
        CellGrid(np.array([[0.0, np.nan]]))
    with pytest.raises(LatticeError):
        CellGrid(np.zeros((2, 2)), cell_id=np.array([1, 1]))
    with pytest.raises(LatticeError):
        build_adjacency(CellGrid.rectangle(2, 2), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.floats(1.01, 3.0))
def test_adjacency_matches_brute_force(nx, ny, thr):
    grid = CellGrid.rectangle(nx, ny)
    adj = build_adjacency(grid, thr)
    W = adj.to_sparse().toarray()
    assert np.array_equal(W, brute_adjacency(grid.coords, thr))
    assert np.all(np.diag(W) == 0) and np.array_equal(W, W.T)


def test_fifteen_by_eight_stripe_layout():
    grid = CellGrid.rectangle(15, 8)
    adj = build_adjacency(grid, 1.5)
    part = partition_stripes(adj, grid, 12)
    assert part.boundary.size == 48
    assert [b.size for b in part.blocks] == [6] * 12
    assert sequential_step_count(part) == 54
    assert sequential_step_count(partition_stripes(adj, grid, 1)) == 120


def test_single_block():
    grid = CellGrid.rectangle(5, 4)
    adj = build_adjacency(grid, 1.5)
    part = partition_stripes(adj, grid, 1)
    assert part.boundary.size == 0 and part.n_blocks == 1
    assert sequential_step_count(part) == 20


def test_explicit_separator_four_by_four():
    grid = CellGrid.rectangle(4, 4)
    adj = build_adjacency(grid, 1.5)
    part = partition_stripes(adj, grid, x_separators=[2])
    assert part.boundary.size == 4
    assert sorted(b.size for b in part.blocks) == [4, 8]
    assert sequential_step_count(part) == 12
    W = adj.to_sparse().toarray()
    lab = part.labels(16)
    for i, j in zip(*np.nonzero(W)):
        assert not (lab[i] >= 0 and lab[j] >= 0 and lab[i] != lab[j])


def test_infeasible_L_names_maximum():
    grid = CellGrid.rectangle(5, 5)
    adj = build_adjacency(grid, 1.5)
    with pytest.raises(LatticeError, match="maximum feasible L is 9"):
        partition_stripes(adj, grid, 10)


def test_validate_partition_detects_cross_edges():
    grid = CellGrid.rectangle(4, 1)
    adj = build_adjacency(grid, 1.5)
    from abundmap.lattice import SeparatorPartition

    bad = SeparatorPartition(np.array([], int), [np.array([0, 1]), np.array([2, 3])])
    with pytest.raises(LatticeError, match="adjacent"):
        validate_partition(bad, adj)
    missing = SeparatorPartition(np.array([0]), [np.array([1, 2])])
    with pytest.raises(LatticeError, match="cover"):
        validate_partition(missing, adj)


@settings(max_examples=40, deadline=None)
@given(st.integers(6, 30), st.integers(3, 20), st.integers(1, 12))
def test_partition_properties(nx, ny, L):
    grid = CellGrid.rectangle(nx, ny)
    adj = build_adjacency(grid, 1.5)
    try:
        part = partition_stripes(adj, grid, L)
    except LatticeError:
        return
    validate_partition(part, adj)
    assert part.boundary.size + sum(b.size for b in part.blocks) == grid.size
    assert sequential_step_count(part) <= grid.size


def test_irregular_cells_drop_empty_blocks():
    grid = CellGrid.rectangle(9, 9)
    keep = np.flatnonzero(grid.coords[:, 0] + grid.coords[:, 1] <= 9)
    sub = grid.subset(keep)
    adj = build_adjacency(sub, 1.5)
    part = partition_stripes(adj, sub, 4)
    validate_partition(part, adj)
    assert all(b.size > 0 for b in part.blocks)


def test_permute_and_laplacian():
    grid = CellGrid.rectangle(3, 2)
    adj = build_adjacency(grid, 1.5)
    order = np.array([5, 3, 1, 0, 2, 4])
    p = adj.permute(order)
    W, Wp = adj.to_sparse().toarray(), p.to_sparse().toarray()
    assert np.array_equal(Wp, W[np.ix_(order, order)])
    assert np.allclose(adj.laplacian() @ np.ones(6), 0)
    assert adj.is_connected()


def test_partition_csv(tmp_path):
    grid = CellGrid.rectangle(15, 8)
    adj = build_adjacency(grid, 1.5)
    part = partition_stripes(adj, grid, 12)
    path = tmp_path / "part.csv"
    write_partition_csv(part, grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "cell_id,role"
    roles = [ln.split(",")[1] for ln in lines[1:]]
    assert roles.count("boundary") == 48
    assert len({r for r in roles if r.startswith("block_")}) == 12


def test_from_edges_rejects_self_loops():
    with pytest.raises(LatticeError):
        AdjacencyStructure.from_edges(2, [(0, 0)])
