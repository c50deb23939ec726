"""Point cloud text I/O, quality filtering and precision subsampling.

The interchange format is plain CSV with a header row. Required columns are
x, y, z; optional columns are intensity, deviation, label and tree_id, in any
order. Unknown numeric columns are preserved as extra per-point attributes so
pipeline stages can append columns (component ids, features, probabilities)
without losing information. An ASCII PLY reader is provided as a convenience
import path; CSV stays the canonical format.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

LABEL_UNKNOWN = -1
LABEL_LEAF = 0
LABEL_WOOD = 1
VALID_LABELS = (LABEL_UNKNOWN, LABEL_LEAF, LABEL_WOOD)

CORE_COLUMNS = ("x", "y", "z", "intensity", "deviation", "label", "tree_id")


class CloudError(ValueError):
    """Base error for point cloud I/O and validation failures."""


class SchemaError(CloudError):
    """A required column is missing or a column has the wrong shape."""


class ParseError(CloudError):
    """A data row could not be parsed; carries the 1-based file line."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class PointCloud:
    """Ordered point collection with optional per-point attributes.

    ``xyz`` is an (N, 3) float64 array; the row index is the stable point
    index. Optional attributes are either None (column absent) or full-length
    arrays; intensity/deviation may contain NaN for rows without evidence.
    ``extras`` holds any additional float columns keyed by name.
    """

    xyz: np.ndarray
    intensity: np.ndarray | None = None
    deviation: np.ndarray | None = None
    label: np.ndarray | None = None
    tree_id: np.ndarray | None = None
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        if self.xyz.ndim != 2 or self.xyz.shape[1] != 3:
            raise SchemaError(f"xyz must be (N, 3), got {self.xyz.shape}")
        if not np.all(np.isfinite(self.xyz)):
            bad = int(np.flatnonzero(~np.isfinite(self.xyz).all(axis=1))[0])
            raise CloudError(f"non-finite coordinate at point index {bad}")
        n = len(self.xyz)
        for name in ("intensity", "deviation"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.shape != (n,):
                    raise SchemaError(f"{name} must have shape ({n},)")
                setattr(self, name, arr)
        for name in ("label", "tree_id"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.int64)
                if arr.shape != (n,):
                    raise SchemaError(f"{name} must have shape ({n},)")
                setattr(self, name, arr)
        if self.label is not None and not np.isin(self.label, VALID_LABELS).all():
            bad = int(self.label[~np.isin(self.label, VALID_LABELS)][0])
            raise CloudError(f"label {bad} not in {{-1, 0, 1}}")
        if self.tree_id is not None and (self.tree_id < 0).any():
            raise CloudError("tree_id must be non-negative")
        self.extras = {
            k: np.asarray(v, dtype=np.float64) for k, v in self.extras.items()
        }
        for k, v in self.extras.items():
            if v.shape != (n,):
                raise SchemaError(f"extra column {k!r} must have shape ({n},)")

    def __len__(self):
        return len(self.xyz)

    def take(self, indices) -> "PointCloud":
        """Subset (or reorder) by point index, preserving all attributes."""
        indices = np.asarray(indices)
        return PointCloud(
            xyz=self.xyz[indices],
            intensity=None if self.intensity is None else self.intensity[indices],
            deviation=None if self.deviation is None else self.deviation[indices],
            label=None if self.label is None else self.label[indices],
            tree_id=None if self.tree_id is None else self.tree_id[indices],
            extras={k: v[indices] for k, v in self.extras.items()},
        )

    def replace(self, **kwargs) -> "PointCloud":
        """Copy with some attributes swapped out."""
        data = dict(
            xyz=self.xyz,
            intensity=self.intensity,
            deviation=self.deviation,
            label=self.label,
            tree_id=self.tree_id,
            extras=dict(self.extras),
        )
        data.update(kwargs)
        return PointCloud(**data)

    def column_names(self) -> list[str]:
        """Names of all present columns, core ones first."""
        names = ["x", "y", "z"]
        for name in ("intensity", "deviation", "label", "tree_id"):
            if getattr(self, name) is not None:
                names.append(name)
        names.extend(self.extras.keys())
        return names


def _numeric_column(raw: pd.Series, name: str, allow_missing: bool) -> np.ndarray:
    """Convert a string column to float64, reporting the offending line."""
    stripped = raw.str.strip()
    missing = stripped == ""
    values = pd.to_numeric(stripped.mask(missing), errors="coerce")
    garbled = values.isna() & ~missing
    if garbled.any():
        row = int(np.flatnonzero(garbled.to_numpy())[0])
        raise ParseError(
            f"column {name!r} has non-numeric value {stripped.iloc[row]!r}",
            line=row + 2,
        )
    if not allow_missing and missing.any():
        row = int(np.flatnonzero(missing.to_numpy())[0])
        raise ParseError(f"column {name!r} has an empty value", line=row + 2)
    return values.to_numpy(dtype=np.float64)


def _integer_column(values: np.ndarray, name: str) -> np.ndarray:
    rounded = np.round(values)
    off = np.abs(values - rounded) > 0
    if off.any():
        row = int(np.flatnonzero(off)[0])
        raise ParseError(
            f"column {name!r} has non-integer value {values[off][0]!r}",
            line=row + 2,
        )
    return rounded.astype(np.int64)


def parse_csv(path, column_map: dict[str, str] | None = None) -> PointCloud:
    """Read a point cloud CSV.

    ``column_map`` maps canonical names (x, y, z, intensity, deviation,
    label, tree_id) to actual header names when they differ. Raises
    SchemaError for a missing required column and ParseError (with the
    1-based file line) for malformed values.
    """
    column_map = column_map or {}
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    frame.columns = [c.strip() for c in frame.columns]

    def actual(canonical: str) -> str:
        return column_map.get(canonical, canonical)

    for coord in ("x", "y", "z"):
        if actual(coord) not in frame.columns:
            raise SchemaError(f"required column {actual(coord)!r} not found in {path}")

    xyz = np.column_stack(
        [_numeric_column(frame[actual(c)], c, allow_missing=False) for c in "xyz"]
    )
    bad = ~np.isfinite(xyz).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError("coordinate is not finite", line=row + 2)

    def optional(canonical: str, integer: bool):
        name = actual(canonical)
        if name not in frame.columns:
            return None
        values = _numeric_column(frame[name], canonical, allow_missing=not integer)
        return _integer_column(values, canonical) if integer else values

    mapped = {actual(c) for c in CORE_COLUMNS}
    extras = {}
    for name in frame.columns:
        if name in mapped:
            continue
        extras[name] = _numeric_column(frame[name], name, allow_missing=True)

    return PointCloud(
        xyz=xyz,
        intensity=optional("intensity", integer=False),
        deviation=optional("deviation", integer=False),
        label=optional("label", integer=True),
        tree_id=optional("tree_id", integer=True),
        extras=extras,
    )


def write_csv(cloud: PointCloud, path, columns: list[str] | None = None) -> None:
    """Write a point cloud CSV; round-trips float columns exactly.

    ``columns`` selects and orders the output columns (default: everything
    present). Unknown names raise SchemaError.
    """
    available = cloud.column_names()
    if columns is None:
        columns = available
    else:
        unknown = [c for c in columns if c not in available]
        if unknown:
            raise SchemaError(f"cannot write absent columns {unknown}")
    data = {}
    for name in columns:
        if name == "x":
            data[name] = cloud.xyz[:, 0]
        elif name == "y":
            data[name] = cloud.xyz[:, 1]
        elif name == "z":
            data[name] = cloud.xyz[:, 2]
        elif name in ("intensity", "deviation", "label", "tree_id"):
            data[name] = getattr(cloud, name)
        else:
            data[name] = cloud.extras[name]
    # pandas writes shortest round-trip reprs for float64, so read-back is exact
    pd.DataFrame(data, columns=columns).to_csv(path, index=False)


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY file, mapping vertex properties by name.

    Properties x, y, z are required; intensity, deviation, label and tree_id
    are picked up when present. Other elements are skipped.
    """
    with open(path, "r", encoding="utf-8") as fh:
        magic = fh.readline().strip()
        if magic != "ply":
            raise ParseError("not a PLY file (missing 'ply' magic)", line=1)
        fmt = fh.readline().strip().split()
        if len(fmt) < 2 or fmt[0] != "format" or fmt[1] != "ascii":
            raise ParseError("only ascii PLY is supported", line=2)
        elements = []  # (name, count, [property names])
        line_no = 2
        while True:
            line = fh.readline()
            line_no += 1
            if not line:
                raise ParseError("unexpected end of header", line=line_no)
            parts = line.strip().split()
            if not parts or parts[0] == "comment":
                continue
            if parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                if parts[1] == "list":
                    elements[-1][2].append(None)  # list property, not supported per row
                else:
                    elements[-1][2].append(parts[-1])
            elif parts[0] == "end_header":
                break

        vertex = next((e for e in elements if e[0] == "vertex"), None)
        if vertex is None:
            raise SchemaError(f"no vertex element in {path}")
        rows = {}
        for name, count, props in elements:
            block = []
            for _ in range(count):
                line = fh.readline()
                line_no += 1
                if not line:
                    raise ParseError("unexpected end of data", line=line_no)
                if name == "vertex":
                    block.append(line.split())
            if name == "vertex":
                rows = {p: i for i, p in enumerate(props) if p is not None}
                values = block

    columns = {}
    for prop, col in rows.items():
        columns[prop] = np.array([float(r[col]) for r in values], dtype=np.float64)
    for coord in ("x", "y", "z"):
        if coord not in columns:
            raise SchemaError(f"vertex property {coord!r} not found in {path}")
    xyz = np.column_stack([columns.pop("x"), columns.pop("y"), columns.pop("z")])
    known = {}
    for name in ("intensity", "deviation"):
        if name in columns:
            known[name] = columns.pop(name)
    for name in ("label", "tree_id"):
        if name in columns:
            known[name] = columns.pop(name).astype(np.int64)
    return PointCloud(xyz=xyz, extras=columns, **known)


def filter_quality(
    cloud: PointCloud, min_intensity_db: float, max_deviation: float
) -> PointCloud:
    """Drop low-quality returns, judging only on present evidence.

    A point is removed when its intensity is strictly below
    ``min_intensity_db`` or its deviation is strictly above
    ``max_deviation``. Points lacking the respective attribute (absent
    column or NaN value) are retained. Output is a subsequence of the input.
    """
    if not (np.isfinite(min_intensity_db) and np.isfinite(max_deviation)):
        raise ValueError("filter thresholds must be finite")
    keep = np.ones(len(cloud), dtype=bool)
    if cloud.intensity is not None:
        with np.errstate(invalid="ignore"):
            keep &= ~(cloud.intensity < min_intensity_db)
    if cloud.deviation is not None:
        with np.errstate(invalid="ignore"):
            keep &= ~(cloud.deviation > max_deviation)
    return cloud.take(np.flatnonzero(keep))


def subsample_precision(cloud: PointCloud, precision: float) -> PointCloud:
    """Quantize coordinates to a grid and deduplicate colliding points.

    Coordinates are snapped to multiples of ``precision``; among points that
    land on the same grid node only the first in input order survives.
    Idempotent: a second application changes nothing.
    """
    if not (precision > 0):
        raise ValueError(f"precision must be > 0, got {precision}")
    cells = np.round(cloud.xyz / precision).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    survivors = np.sort(first)
    out = cloud.take(survivors)
    return out.replace(xyz=cells[survivors] * precision)
