"""Sparse voxelization and voxel-space distance primitives.

A voxel is addressed by its integer grid index (i, j, k) computed as
floor((coordinate - origin) / voxel_size) per axis, with the origin at the
axis-wise coordinate minimum. Only occupied voxels are stored. The grid
carries a configurable neighborhood system (6, 18 or 26 connectivity);
26 is the default so sparse canopies that touch only diagonally stay
connected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .io import PointCloud

VoxelIndex = tuple[int, int, int]

CONNECTIVITIES = (6, 18, 26)


def neighbor_offsets(connectivity: int = 26) -> tuple[VoxelIndex, ...]:
    """Neighbor offsets for the given connectivity, in lexicographic order."""
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}")
    offsets = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                manhattan = abs(di) + abs(dj) + abs(dk)
                if connectivity == 6 and manhattan > 1:
                    continue
                if connectivity == 18 and manhattan > 2:
                    continue
                offsets.append((di, dj, dk))
    return tuple(offsets)


def is_adjacent(a: VoxelIndex, b: VoxelIndex, connectivity: int = 26) -> bool:
    di, dj, dk = abs(a[0] - b[0]), abs(a[1] - b[1]), abs(a[2] - b[2])
    if max(di, dj, dk) != 1:
        return False
    if connectivity == 26:
        return True
    manhattan = di + dj + dk
    return manhattan == 1 if connectivity == 6 else manhattan <= 2


def voxel_distance(a: VoxelIndex, b: VoxelIndex, connectivity: int = 26) -> int:
    """Voxel-space distance: 0 for identity, 1 for neighbors, else Manhattan.

    The adjacency short-circuit only matters for diagonal neighbors, whose
    Manhattan distance would otherwise be 2 or 3.
    """
    if a == b:
        return 0
    if is_adjacent(a, b, connectivity):
        return 1
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) + abs(a[2] - b[2])


def detour_ratio(a: VoxelIndex, b: VoxelIndex, connectivity: int = 26) -> float:
    """Voxel distance over straight-line index distance (dimensionless).

    Large values flag voxels whose connection detours around space, e.g.
    separate branches that are close in the air. Undefined for a == b.
    """
    if a == b:
        raise ValueError("detour ratio is undefined for identical voxels")
    euclidean = math.sqrt(
        (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2
    )
    return voxel_distance(a, b, connectivity) / euclidean


@dataclass
class VoxelGrid:
    """Sparse occupancy map: voxel index -> point indices (input order).

    Immutable after construction; every input point index appears in exactly
    one cell and every stored cell is non-empty.
    """

    voxel_size: float
    origin: np.ndarray
    cells: dict[VoxelIndex, list[int]]
    connectivity: int = 26
    point_voxel: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.cells)

    def occupied(self) -> list[VoxelIndex]:
        return list(self.cells.keys())

    def occupied_neighbors(self, v: VoxelIndex) -> list[VoxelIndex]:
        """Occupied neighbors of v, in fixed lexicographic offset order."""
        out = []
        for di, dj, dk in neighbor_offsets(self.connectivity):
            n = (v[0] + di, v[1] + dj, v[2] + dk)
            if n in self.cells:
                out.append(n)
        return out

    def to_frame(self):
        """Debug dump: one row per occupied cell (i, j, k, point_count)."""
        import pandas as pd

        rows = [(i, j, k, len(p)) for (i, j, k), p in self.cells.items()]
        return pd.DataFrame(rows, columns=["i", "j", "k", "point_count"])


def voxelize(cloud: PointCloud, voxel_size: float, connectivity: int = 26) -> VoxelGrid:
    """Partition a cloud into a sparse voxel grid.

    The origin is the axis-wise coordinate minimum, so the grid is
    deterministic per input without external anchoring.
    """
    if not (voxel_size > 0):
        raise ValueError(f"voxel_size must be > 0, got {voxel_size}")
    if len(cloud) == 0:
        raise ValueError("cannot voxelize an empty cloud")
    origin = cloud.xyz.min(axis=0)
    indices = np.floor((cloud.xyz - origin) / voxel_size).astype(np.int64)
    cells: dict[VoxelIndex, list[int]] = {}
    for point_index, (i, j, k) in enumerate(indices):
        cells.setdefault((int(i), int(j), int(k)), []).append(point_index)
    return VoxelGrid(
        voxel_size=float(voxel_size),
        origin=origin,
        cells=cells,
        connectivity=connectivity,
        point_voxel=indices,
    )
