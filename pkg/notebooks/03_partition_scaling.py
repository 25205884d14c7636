# %% [markdown]
# # Separator partitions and the spatial-effect sweep
#
# Removing one-cell-wide stripes of "boundary" cells splits the lattice
# into blocks with no edges between them. After the boundary cells are
# updated, blocks can be swept at the same time. The number of sequential
# steps per sweep drops from the cell count to
# `|boundary| + largest block`.

# %%
import os

from abundmap.lattice import CellGrid, build_adjacency, partition_stripes, sequential_step_count
from abundmap.parallel import bench_theta_sweep

grid = CellGrid.rectangle(15, 8)
adj = build_adjacency(grid, 1.5)
part = partition_stripes(adj, grid, 12)
print("boundary cells:", part.boundary.size)
print("block sizes:", [b.size for b in part.blocks])
print("sequential steps:", sequential_step_count(part), "instead of", grid.size)

# %% [markdown]
# The layout as a character map: `#` for boundary cells, block index
# otherwise (row 0 at the bottom).

# %%
lab = part.labels(grid.size)
for y in reversed(range(8)):
    row = lab[grid.coords[:, 1] == y]
    print("".join("#" if v < 0 else "abcdefghijkl"[v] for v in row))

# %% [markdown]
# ## Critical path against L
#
# More blocks shorten the longest block but add boundary cells. On a
# 200 by 185 grid the step count falls fast and then flattens.

# %%
big = CellGrid.rectangle(200, 185)
big_adj = build_adjacency(big, 1.5)
for L in (1, 2, 4, 6, 11, 16, 32, 64):
    steps = sequential_step_count(partition_stripes(big_adj, big, L))
    print(f"L={L:3d}  steps={steps:6d}  ideal speedup {big.size / steps:5.1f}x")

# %% [markdown]
# ## Wall time
#
# Measured speedup depends on the cores available; on a single core it
# stays below one because of thread dispatch.

# %%
print("CPUs available:", len(os.sched_getaffinity(0)))
tab = bench_theta_sweep(big_adj, big, [1, 11], [1, 4], repetitions=10,
                        n_sites=(big.coords[:, 0] % 3 == 0).astype(float))
print(tab.round(3).to_string(index=False))
