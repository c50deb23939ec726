"""Geodesic voxelization decomposition: partition a voxel grid into components.

Growth starts from the lowest unvisited voxel and proceeds breadth-first
through the grid's neighborhood system. A candidate voxel joins the current
component only while its voxel distance to the seed stays below ``tau`` and
its detour ratio stays below ``gamma`` (both thresholds are checked before
admission, so every member satisfies them). When growth stops, the next
component is seeded from the lowest voxel still unvisited, until the grid is
exhausted. Components below the size thresholds are reported separately as
residuals rather than dropped, which keeps the partition auditable.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .voxel import VoxelGrid, VoxelIndex, detour_ratio, voxel_distance


@dataclass
class GvdConfig:
    tau: int = 10  # strict upper bound on voxel distance to the seed
    gamma: float = 1.5  # strict upper bound on detour ratio to the seed
    min_voxels: int = 3
    min_points: int = 100

    def validate(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if not (self.gamma > 0):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.min_voxels < 0 or self.min_points < 0:
            raise ValueError("min_voxels and min_points must be non-negative")
        return self


@dataclass
class Component:
    """One partition cell: its voxels, their points and seed distances.

    ``voxels`` is in BFS admission order (seed first); ``cell_points`` holds
    each member voxel's point indices (input order) in the same order; ``gd``
    maps each voxel to its voxel distance from the seed.
    """

    id: int
    seed_voxel: VoxelIndex
    voxels: list[VoxelIndex]
    cell_points: list[list[int]]
    gd: dict[VoxelIndex, int]

    @property
    def point_indices(self) -> list[int]:
        out = []
        for cell in self.cell_points:
            out.extend(cell)
        return out

    @property
    def n_voxels(self):
        return len(self.voxels)

    @property
    def n_points(self):
        return sum(len(cell) for cell in self.cell_points)


@dataclass
class Decomposition:
    components: list[Component] = field(default_factory=list)
    residuals: list[Component] = field(default_factory=list)

    def all_components(self) -> list[Component]:
        return self.components + self.residuals


def select_seed(unvisited) -> VoxelIndex:
    """Lowest voxel on the vertical axis; ties broken by (i, j) ascending."""
    if not unvisited:
        raise ValueError("cannot select a seed from an empty set")
    return min(unvisited, key=lambda v: (v[2], v[0], v[1]))


def grow_component(
    grid: VoxelGrid, seed: VoxelIndex, unvisited: set, cfg: GvdConfig
) -> tuple[list[VoxelIndex], dict[VoxelIndex, int]]:
    """BFS from ``seed`` over unvisited voxels, admitting within thresholds.

    Both thresholds compare the candidate against the seed (not path-
    accumulated), so admissibility is a per-voxel predicate and rejected
    voxels stay available for later components.
    """
    gd = {seed: 0}
    members = [seed]
    queue = deque([seed])
    rejected = set()
    while queue:
        current = queue.popleft()
        for neighbor in grid.occupied_neighbors(current):
            if neighbor not in unvisited or neighbor in gd or neighbor in rejected:
                continue
            distance = voxel_distance(seed, neighbor, grid.connectivity)
            if (
                distance >= cfg.tau
                or detour_ratio(seed, neighbor, grid.connectivity) >= cfg.gamma
            ):
                rejected.add(neighbor)
                continue
            gd[neighbor] = distance
            members.append(neighbor)
            queue.append(neighbor)
    return members, gd


def decompose(grid: VoxelGrid, cfg: GvdConfig) -> Decomposition:
    """Partition every occupied voxel into components.

    Component ids count up from 1 in discovery order, across accepted and
    residual components alike, so the id sequence audits the full run.
    """
    cfg.validate()
    if len(grid) == 0:
        raise ValueError("cannot decompose an empty grid")
    unvisited = set(grid.cells.keys())
    result = Decomposition()
    next_id = 1
    while unvisited:
        seed = select_seed(unvisited)
        members, gd = grow_component(grid, seed, unvisited, cfg)
        unvisited.difference_update(members)
        component = Component(
            id=next_id,
            seed_voxel=seed,
            voxels=members,
            cell_points=[list(grid.cells[voxel]) for voxel in members],
            gd=gd,
        )
        next_id += 1
        if component.n_voxels < cfg.min_voxels or component.n_points < cfg.min_points:
            result.residuals.append(component)
        else:
            result.components.append(component)
    return result


def sort_component_points(component: Component) -> np.ndarray:
    """Point indices ordered by ascending seed distance of their voxel.

    Points sharing a voxel share a distance; the sort is stable, so input
    order is preserved within a voxel (and admission order across voxels of
    equal distance).
    """
    points = []
    distances = []
    for voxel, cell in zip(component.voxels, component.cell_points):
        points.extend(cell)
        distances.extend([component.gd[voxel]] * len(cell))
    order = np.argsort(np.asarray(distances, dtype=np.int64), kind="stable")
    return np.asarray(points, dtype=np.int64)[order]


def point_component_table(
    decomposition: Decomposition, n_points: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point (component_id, seed distance, residual flag) arrays.

    Raises if the decomposition does not cover each point exactly once.
    """
    component_id = np.full(n_points, -1, dtype=np.int64)
    gd = np.full(n_points, -1, dtype=np.int64)
    residual = np.zeros(n_points, dtype=np.int64)
    for is_residual, bucket in ((0, "components"), (1, "residuals")):
        for component in getattr(decomposition, bucket):
            for voxel, cell in zip(component.voxels, component.cell_points):
                for point in cell:
                    if component_id[point] != -1:
                        raise ValueError(f"point {point} assigned twice")
                    component_id[point] = component.id
                    gd[point] = component.gd[voxel]
                    residual[point] = is_residual
    if (component_id == -1).any():
        missing = int(np.flatnonzero(component_id == -1)[0])
        raise ValueError(f"point {missing} not covered by any component")
    return component_id, gd, residual
