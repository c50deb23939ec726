"""Deterministic synthetic forest generator for tests and experiments.

Geometry is deliberately simple: trunks and branches are points on thin
cylinder surfaces (wood), crowns are points inside ellipsoids (leaf), plus
Gaussian jitter. The generator's job is class structure and imbalance, not
botanical realism; branches sit inside the crown so a slice of the wood
class lives in leaf-dominated neighborhoods, mirroring how canopies mix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .io import LABEL_LEAF, LABEL_WOOD, PointCloud


@dataclass
class ForestParams:
    trees: int = 50
    trunk_height: tuple[float, float] = (3.0, 6.0)
    trunk_radius: tuple[float, float] = (0.08, 0.15)
    branches_per_tree: int = 3
    crown_radii: tuple[float, float] = (1.0, 2.0)
    points_per_tree: int = 1000
    wood_fraction: float = 0.05
    noise_sigma: float = 0.01
    seed: int = 7
    spacing: float = 4.0  # grid pitch between trees

    def validate(self):
        if self.trees < 1:
            raise ValueError(f"trees must be >= 1, got {self.trees}")
        if self.points_per_tree < 100:
            raise ValueError(
                "points_per_tree must be >= 100 so the realized wood fraction "
                f"stays within 0.5 points of the target, got {self.points_per_tree}"
            )
        for name in ("trunk_height", "trunk_radius", "crown_radii"):
            low, high = getattr(self, name)
            if not (0 < low <= high):
                raise ValueError(f"{name} must be a positive (low, high) range")
        if not (0.0 < self.wood_fraction < 1.0):
            raise ValueError(
                f"wood_fraction must be inside (0, 1), got {self.wood_fraction}"
            )
        if self.branches_per_tree < 0:
            raise ValueError("branches_per_tree must be >= 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not (self.spacing > 0):
            raise ValueError("spacing must be > 0")
        return self


def _cylinder_surface(rng, start, axis, length, radius, count):
    """Uniform points on an open cylinder around the given axis segment."""
    axis = axis / np.linalg.norm(axis)
    pivot = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        pivot = np.array([0.0, 1.0, 0.0])
    u = np.cross(axis, pivot)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    t = rng.uniform(0.0, length, size=count)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    return (
        start
        + t[:, None] * axis
        + radius * np.cos(theta)[:, None] * u
        + radius * np.sin(theta)[:, None] * v
    )


def _ellipsoid_volume(rng, center, radii, count):
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    shell = np.cbrt(rng.uniform(0.0, 1.0, size=count))
    return center + direction * shell[:, None] * radii


def _split_counts(total, shares):
    """Integer split of ``total`` proportional to ``shares``, exact sum."""
    raw = np.asarray(shares, dtype=np.float64)
    raw = raw / raw.sum() * total
    counts = np.floor(raw).astype(int)
    remainder = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:remainder]] += 1
    return counts


def generate(params: ForestParams) -> PointCloud:
    """Labeled forest cloud; a pure function of the parameters.

    Per-tree point counts match ``points_per_tree`` exactly and the wood
    count per tree is round(points_per_tree * wood_fraction), so the
    realized fraction sits within half a percentage point of the target.
    """
    params.validate()
    columns = math.ceil(math.sqrt(params.trees))
    per_tree = []
    for tree in range(params.trees):
        rng = np.random.default_rng([params.seed, tree])
        base = np.array(
            [
                (tree % columns) * params.spacing,
                (tree // columns) * params.spacing,
                0.0,
            ]
        )
        base[:2] += rng.uniform(-0.5, 0.5, size=2)
        height = rng.uniform(*params.trunk_height)
        trunk_r = rng.uniform(*params.trunk_radius)
        crown = rng.uniform(*params.crown_radii, size=3)
        crown_center = base + np.array([0.0, 0.0, height])

        n = params.points_per_tree
        n_wood = int(math.floor(params.wood_fraction * n + 0.5))
        n_wood = min(max(n_wood, 1), n - 1)
        n_leaf = n - n_wood
        if params.branches_per_tree > 0:
            shares = [0.3] + [0.7 / params.branches_per_tree] * params.branches_per_tree
        else:
            shares = [1.0]
        wood_counts = _split_counts(n_wood, shares)

        pieces = [
            _cylinder_surface(
                rng,
                base,
                np.array([0.0, 0.0, 1.0]),
                height,
                trunk_r,
                wood_counts[0],
            )
        ]
        for branch in range(params.branches_per_tree):
            azimuth = rng.uniform(0.0, 2.0 * math.pi)
            elevation = rng.uniform(math.radians(15.0), math.radians(65.0))
            axis = np.array(
                [
                    math.cos(azimuth) * math.cos(elevation),
                    math.sin(azimuth) * math.cos(elevation),
                    math.sin(elevation),
                ]
            )
            start = base + np.array([0.0, 0.0, height * rng.uniform(0.8, 1.0)])
            length = rng.uniform(0.6, 1.0) * float(np.mean(crown))
            pieces.append(
                _cylinder_surface(
                    rng, start, axis, length, 0.3 * trunk_r, wood_counts[1 + branch]
                )
            )
        wood_xyz = np.vstack(pieces)
        leaf_xyz = _ellipsoid_volume(rng, crown_center, crown, n_leaf)
        xyz = np.vstack([wood_xyz, leaf_xyz])
        if params.noise_sigma > 0:
            xyz = xyz + rng.normal(scale=params.noise_sigma, size=xyz.shape)
        labels = np.concatenate(
            [
                np.full(n_wood, LABEL_WOOD, dtype=np.int64),
                np.full(n_leaf, LABEL_LEAF, dtype=np.int64),
            ]
        )
        per_tree.append((xyz, labels, np.full(n, tree, dtype=np.int64)))

    xyz = np.vstack([p[0] for p in per_tree])
    labels = np.concatenate([p[1] for p in per_tree])
    tree_ids = np.concatenate([p[2] for p in per_tree])
    return PointCloud(xyz=xyz, label=labels, tree_id=tree_ids)
