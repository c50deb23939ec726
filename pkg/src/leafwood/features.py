"""Multi-scale geometric features from neighborhood covariance eigenvalues.

For every point, the points within radius r (the point itself included) form
its neighborhood. The population covariance of the neighborhood about its
barycenter is eigendecomposed into lam1 >= lam2 >= lam3 with eigenvectors
e1, e2, e3, and four shape descriptors are derived:

    linearity   = (lam1 - lam2) / lam3      (1D structure; see note below)
    sphericity  = lam3 / lam1               (volumetric structure)
    verticality = 1 - |<up, e3>|            (perpendicularity to the horizon)
    pca1        = lam1 / (lam1+lam2+lam3)   (slenderness)

Denominators are clamped at 1e-12 to stay total on degenerate neighborhoods.
The linearity denominator is lam3 by default (the convention this pipeline
standardizes on) but divides by lam1 instead when configured, which matches
the older survey literature and stays bounded.

Neighbor search uses a uniform hash grid with cell size equal to the largest
query radius; the contract is exactness (identical to a full O(n^2) scan),
not approximate nearest neighbors.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .io import PointCloud

EPS = 1e-12
FEATURE_NAMES = ("linearity", "sphericity", "verticality", "pca1")
LINEARITY_DENOMINATORS = ("lambda3", "lambda1")
UP = np.array([0.0, 0.0, 1.0])


@dataclass
class NeighborhoodSpec:
    """Search radii in meters, strictly positive and strictly ascending."""

    radii: tuple[float, ...] = (0.3, 0.6, 0.9)

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if not self.radii:
            raise ValueError("at least one radius is required")
        if any(r <= 0 for r in self.radii):
            raise ValueError(f"radii must be positive, got {self.radii}")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise ValueError(f"radii must be strictly ascending, got {self.radii}")

    @property
    def n_columns(self):
        return 4 * len(self.radii)


def feature_column_names(radii) -> list[str]:
    """Column names in the fixed order: all four features per radius."""
    return [f"{name}_{r:g}" for r in radii for name in FEATURE_NAMES]


class FixedRadiusIndex:
    """Uniform hash grid for exact fixed-radius neighbor queries.

    Cells are cubes of ``cell_size``; a query inspects the cell block
    covering the search ball and filters candidates by exact squared
    distance, so results equal a brute-force scan for any radius.
    """

    def __init__(self, xyz: np.ndarray, cell_size: float):
        if not (cell_size > 0):
            raise ValueError(f"cell_size must be > 0, got {cell_size}")
        self.xyz = np.ascontiguousarray(xyz, dtype=np.float64)
        self.cell_size = float(cell_size)
        self.origin = self.xyz.min(axis=0) if len(self.xyz) else np.zeros(3)
        keys = np.floor((self.xyz - self.origin) / self.cell_size).astype(np.int64)
        cells: dict[tuple[int, int, int], list[int]] = {}
        for idx, (i, j, k) in enumerate(keys):
            cells.setdefault((int(i), int(j), int(k)), []).append(idx)
        self.cells = {k: np.asarray(v, dtype=np.int64) for k, v in cells.items()}
        self._keys = keys

    def query(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Indices of points within ``radius`` of ``center``, ascending."""
        reach = int(np.ceil(radius / self.cell_size))
        ci, cj, ck = np.floor((center - self.origin) / self.cell_size).astype(np.int64)
        buckets = []
        for i in range(ci - reach, ci + reach + 1):
            for j in range(cj - reach, cj + reach + 1):
                for k in range(ck - reach, ck + reach + 1):
                    bucket = self.cells.get((i, j, k))
                    if bucket is not None:
                        buckets.append(bucket)
        if not buckets:
            return np.empty(0, dtype=np.int64)
        candidates = np.concatenate(buckets)
        dx = self.xyz[candidates, 0] - center[0]
        dy = self.xyz[candidates, 1] - center[1]
        dz = self.xyz[candidates, 2] - center[2]
        d2 = dx * dx + dy * dy + dz * dz
        return np.sort(candidates[d2 <= radius * radius])


def radius_neighbors(cloud: PointCloud, point_index: int, radius: float) -> np.ndarray:
    """Indices of points within ``radius`` of the given point (itself included)."""
    if not (radius > 0):
        raise ValueError(f"radius must be > 0, got {radius}")
    index = FixedRadiusIndex(cloud.xyz, cell_size=radius)
    return index.query(cloud.xyz[point_index], radius)


def covariance(cloud, neighbor_indices) -> np.ndarray:
    """Population covariance of a neighborhood about its barycenter.

    Divides by the neighborhood size, not size - 1.
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud)
    neighbor_indices = np.asarray(neighbor_indices, dtype=np.int64)
    if len(neighbor_indices) == 0:
        raise ValueError("covariance needs a non-empty neighborhood")
    nb = xyz[neighbor_indices]
    d = nb - nb.mean(axis=0)
    cov = np.empty((3, 3), dtype=np.float64)
    for a in range(3):
        for b in range(a, 3):
            cov[a, b] = cov[b, a] = np.sum(d[:, a] * d[:, b]) / len(nb)
    return cov


def eigen_features(
    cov: np.ndarray,
    up: np.ndarray = UP,
    linearity_denominator: str = "lambda3",
) -> tuple[float, float, float, float]:
    """(linearity, sphericity, verticality, pca1) from one covariance matrix.

    Eigenvalues are clamped to >= 0 before use. An all-zero matrix (single
    or fully coincident neighborhood) takes the canonical-basis convention
    e3 = up, giving verticality 0.
    """
    if linearity_denominator not in LINEARITY_DENOMINATORS:
        raise ValueError(
            f"linearity_denominator must be one of {LINEARITY_DENOMINATORS}"
        )
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    lam1 = max(float(eigenvalues[2]), 0.0)
    lam2 = max(float(eigenvalues[1]), 0.0)
    lam3 = max(float(eigenvalues[0]), 0.0)
    if lam1 <= 0.0:
        verticality = 0.0
    else:
        e3 = eigenvectors[:, 0]
        verticality = 1.0 - abs(float(np.dot(up, e3)))
    denom = lam3 if linearity_denominator == "lambda3" else lam1
    linearity = (lam1 - lam2) / max(denom, EPS)
    sphericity = lam3 / max(lam1, EPS)
    pca1 = lam1 / max(lam1 + lam2 + lam3, EPS)
    return linearity, sphericity, verticality, pca1


def _feature_block(xyz, index, radius, linearity_denominator, out, start, stop):
    """Fill rows [start, stop) of one radius' 4-column block."""
    for p in range(start, stop):
        neighbors = index.query(xyz[p], radius)
        nb = xyz[neighbors]
        d = nb - nb.mean(axis=0)
        cov = np.empty((3, 3), dtype=np.float64)
        for a in range(3):
            for b in range(a, 3):
                cov[a, b] = cov[b, a] = np.sum(d[:, a] * d[:, b]) / len(nb)
        out[p] = eigen_features(cov, UP, linearity_denominator)


def multiscale_features(
    cloud: PointCloud,
    spec: NeighborhoodSpec = NeighborhoodSpec(),
    linearity_denominator: str = "lambda3",
    threads: int = 1,
) -> np.ndarray:
    """Per-point feature matrix, 4 columns per radius in ascending-radius order.

    Deterministic and independent of ``threads`` (each worker writes a
    disjoint row slice of a pure per-point function).
    """
    if len(cloud) == 0:
        raise ValueError("cannot compute features of an empty cloud")
    xyz = np.ascontiguousarray(cloud.xyz)
    index = FixedRadiusIndex(xyz, cell_size=max(spec.radii))
    n = len(xyz)
    out = np.empty((n, spec.n_columns), dtype=np.float64)
    for r_pos, radius in enumerate(spec.radii):
        block = out[:, 4 * r_pos : 4 * r_pos + 4]
        if threads <= 1 or n < 2048:
            _feature_block(xyz, index, radius, linearity_denominator, block, 0, n)
        else:
            bounds = np.linspace(0, n, threads + 1, dtype=int)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [
                    pool.submit(
                        _feature_block,
                        xyz,
                        index,
                        radius,
                        linearity_denominator,
                        block,
                        int(a),
                        int(b),
                    )
                    for a, b in zip(bounds[:-1], bounds[1:])
                ]
                for future in futures:
                    future.result()
    return out


@dataclass
class FeatureStats:
    """Per-column standardization statistics, persisted for reuse."""

    columns: list[str]
    mean: np.ndarray
    std: np.ndarray

    def save(self, path):
        pd.DataFrame(
            {"column": self.columns, "mean": self.mean, "std": self.std}
        ).to_csv(path, index=False)

    @classmethod
    def load(cls, path) -> "FeatureStats":
        frame = pd.read_csv(path)
        return cls(
            columns=list(frame["column"]),
            mean=frame["mean"].to_numpy(dtype=np.float64),
            std=frame["std"].to_numpy(dtype=np.float64),
        )


def standardize(
    features: np.ndarray,
    stats: FeatureStats | None = None,
    columns: list[str] | None = None,
) -> tuple[np.ndarray, FeatureStats]:
    """Z-score columns with population statistics.

    Without ``stats`` the statistics are fitted on the input (the training
    split) and returned for reuse on validation/test/prediction inputs.
    Zero-variance columns map to zero and emit a warning.
    """
    features = np.asarray(features, dtype=np.float64)
    if stats is None:
        if len(features) < 2:
            raise ValueError("fitting standardization stats needs >= 2 rows")
        mean = features.mean(axis=0)
        std = features.std(axis=0)  # population, ddof=0
        stats = FeatureStats(
            columns=list(columns)
            if columns is not None
            else [f"c{i}" for i in range(features.shape[1])],
            mean=mean,
            std=std,
        )
    if features.shape[1] != len(stats.mean):
        raise ValueError(
            f"feature width {features.shape[1]} does not match stats width "
            f"{len(stats.mean)}"
        )
    flat = stats.std == 0
    if flat.any():
        names = [stats.columns[i] for i in np.flatnonzero(flat)]
        warnings.warn(f"zero-variance feature columns set to 0: {names}")
    safe_std = np.where(flat, 1.0, stats.std)
    standardized = (features - stats.mean) / safe_std
    standardized[:, flat] = 0.0
    return standardized, stats
