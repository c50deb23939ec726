"""Per-component coordinate normalization and fixed-size batch assembly.

Each component is shifted to the origin and scaled by its longest axis so
coordinates land in [0, 1]^3, then its rows (in geodesic-sorted order) are
cut into batches of exactly ``batch_size``. A final partial batch is padded
by uniform resampling with replacement from the whole component, so every
original point is covered and batch contents are a pure function of
(component rows, seed).
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

DEFAULT_BATCH_SIZE = 3000


@dataclass
class ComponentTransform:
    """Shift/scale record; invert with ``restore`` to recover input coords."""

    shift: np.ndarray
    scale: float

    def restore(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.scale + self.shift


def normalize_component(xyz: np.ndarray) -> tuple[np.ndarray, ComponentTransform]:
    """Shift to the origin and scale all axes by the longest extent.

    A fully coincident component (zero extent on every axis) falls back to
    scale 1 with a warning.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3 or len(xyz) == 0:
        raise ValueError(f"expected a non-empty (N, 3) array, got {xyz.shape}")
    shift = xyz.min(axis=0)
    extent = xyz.max(axis=0) - shift
    scale = float(extent.max())
    if scale == 0.0:
        warnings.warn("component has zero extent on all axes; using scale 1")
        scale = 1.0
    return (xyz - shift) / scale, ComponentTransform(shift=shift, scale=scale)


@dataclass
class Batch:
    """Fixed-size training rows for one component.

    ``source_index`` maps every row back to an original point index;
    padding rows repeat source indices.
    """

    component_id: int
    xyz: np.ndarray  # (B, 3) normalized coordinates
    features: np.ndarray  # (B, F) standardized features
    labels: np.ndarray  # (B,) int64
    source_index: np.ndarray  # (B,) int64

    def __len__(self):
        return len(self.xyz)

    @property
    def network_input(self) -> np.ndarray:
        return np.hstack([self.xyz, self.features])


def component_rng(seed: int, component_id: int) -> np.random.Generator:
    """Per-component stream so parallel batching stays reproducible."""
    return np.random.default_rng([seed, component_id])


def make_batches(
    component_id: int,
    xyz: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    source_index: np.ndarray,
    seed: int,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> list[Batch]:
    """Cut one component's rows (already geodesic-sorted) into batches.

    Produces ceil(n / batch_size) batches; only the last one is padded.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(xyz)
    if n == 0:
        raise ValueError("component has no rows")
    normalized, _ = normalize_component(xyz)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    source_index = np.asarray(source_index, dtype=np.int64)
    rng = component_rng(seed, component_id)
    batches = []
    for start in range(0, n, batch_size):
        rows = np.arange(start, min(start + batch_size, n))
        shortfall = batch_size - len(rows)
        if shortfall > 0:
            padding = rng.integers(0, n, size=shortfall)
            rows = np.concatenate([rows, padding])
        batches.append(
            Batch(
                component_id=component_id,
                xyz=normalized[rows],
                features=features[rows],
                labels=labels[rows],
                source_index=source_index[rows],
            )
        )
    return batches


def write_batch_csv(batch: Batch, path, feature_columns: list[str]) -> None:
    data = {
        "nx": batch.xyz[:, 0],
        "ny": batch.xyz[:, 1],
        "nz": batch.xyz[:, 2],
    }
    for col, name in enumerate(feature_columns):
        data[name] = batch.features[:, col]
    data["label"] = batch.labels
    data["source_index"] = batch.source_index
    data["component_id"] = np.full(len(batch), batch.component_id, dtype=np.int64)
    pd.DataFrame(data).to_csv(path, index=False)


def read_batch_csv(path) -> Batch:
    frame = pd.read_csv(path)
    fixed = {"nx", "ny", "nz", "label", "source_index", "component_id"}
    feature_columns = [c for c in frame.columns if c not in fixed]
    return Batch(
        component_id=int(frame["component_id"].iloc[0]),
        xyz=frame[["nx", "ny", "nz"]].to_numpy(dtype=np.float64),
        features=frame[feature_columns].to_numpy(dtype=np.float64),
        labels=frame["label"].to_numpy(dtype=np.int64),
        source_index=frame["source_index"].to_numpy(dtype=np.int64),
    )


def load_batch_dir(directory) -> list[Batch]:
    """Read every batch CSV in a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("batch_*.csv"))
    if not paths:
        raise ValueError(f"no batch files found under {directory}")
    return [read_batch_csv(p) for p in paths]


def batch_file_name(ordinal: int) -> str:
    return f"batch_{ordinal:05d}.csv"


def batch_ordinal(path) -> int:
    match = re.match(r"batch_(\d+)\.csv$", Path(path).name)
    if not match:
        raise ValueError(f"not a batch file name: {path}")
    return int(match.group(1))
