"""Pipeline configuration: one place for every stage default.

Precedence is defaults < config file < command-line flags. The effective
configuration is echoed as JSON next to every stage output; it contains
algorithmic parameters only (no paths), so re-running a stage with the
echoed file reproduces the outputs bit for bit.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .features import LINEARITY_DENOMINATORS
from .voxel import CONNECTIVITIES


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # ingest
    min_intensity_db: float = -20.0
    precision: float = 0.001
    # voxelization and decomposition
    voxel_size: float = 0.6
    connectivity: int = 26
    tau: int = 10
    gamma: float = 1.5
    min_voxels: int = 3
    min_points: int = 100
    # features
    radii: tuple[float, ...] = (0.3, 0.6, 0.9)
    linearity_denominator: str = "lambda3"
    # label transfer
    knn_k: int = 5
    drop_unknown: bool = True
    # batching
    batch_size: int = 3000
    # training
    hidden: tuple[int, ...] = (32, 16)
    learning_rate: float = 1e-7
    epochs: int = 1000
    initial_step_batches: int = 1
    double_every: int = 1000
    max_step_batches: int = 128
    dropout: float = 0.3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    # global
    seed: int = 7
    threads: int = 1

    def validate(self) -> "PipelineConfig":
        def require(condition, field, message):
            if not condition:
                raise ConfigError(f"config field {field!r}: {message}")

        require(self.precision > 0, "precision", "must be > 0")
        require(self.voxel_size > 0, "voxel_size", "must be > 0")
        require(
            self.connectivity in CONNECTIVITIES,
            "connectivity",
            f"must be one of {CONNECTIVITIES}",
        )
        require(self.tau >= 1, "tau", "must be >= 1")
        require(self.gamma > 0, "gamma", "must be > 0")
        require(self.min_voxels >= 0, "min_voxels", "must be >= 0")
        require(self.min_points >= 0, "min_points", "must be >= 0")
        require(len(self.radii) > 0, "radii", "must not be empty")
        require(all(r > 0 for r in self.radii), "radii", "must be positive")
        require(
            all(b > a for a, b in zip(self.radii, self.radii[1:])),
            "radii",
            "must be strictly ascending",
        )
        require(
            self.linearity_denominator in LINEARITY_DENOMINATORS,
            "linearity_denominator",
            f"must be one of {LINEARITY_DENOMINATORS}",
        )
        require(self.knn_k >= 1, "knn_k", "must be >= 1")
        require(self.batch_size >= 1, "batch_size", "must be >= 1")
        require(self.learning_rate > 0, "learning_rate", "must be > 0")
        require(self.epochs >= 0, "epochs", "must be >= 0")
        require(self.initial_step_batches >= 1, "initial_step_batches", "must be >= 1")
        require(self.double_every >= 1, "double_every", "must be >= 1")
        require(
            self.max_step_batches >= self.initial_step_batches,
            "max_step_batches",
            "must be >= initial_step_batches",
        )
        require(0.0 <= self.dropout < 1.0, "dropout", "must be in [0, 1)")
        require(self.focal_gamma >= 0, "focal_gamma", "must be >= 0")
        require(0.0 < self.focal_alpha < 1.0, "focal_alpha", "must be in (0, 1)")
        require(self.threads >= 1, "threads", "must be >= 1")
        require(all(h >= 1 for h in self.hidden), "hidden", "layer sizes must be >= 1")
        return self

    def to_json(self) -> str:
        data = dataclasses.asdict(self)
        data["radii"] = list(self.radii)
        data["hidden"] = list(self.hidden)
        return json.dumps(data, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "radii" in data:
            data["radii"] = tuple(data["radii"])
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def override(self, **kwargs) -> "PipelineConfig":
        """Copy with non-None overrides applied (flags beat file values)."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return dataclasses.replace(self, **updates).validate()

    def echo(self, directory, stage: str) -> Path:
        """Write the effective config next to a stage's outputs."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"effective_config_{stage}.json"
        path.write_text(self.to_json())
        return path
