"""Per-point wood/leaf classifier: a small feed-forward network.

The network consumes the 3 normalized coordinates plus the precomputed
geometric features of one point and emits the probability of that point
being wood. Hidden layers use the exponential-linear activation, the output
is logistic, and dropout (training only) defaults to 0.3.

Three losses are available. Plain cross entropy and focal loss average over
all rows. The rebalanced loss instead sums cross entropy over every wood row
plus an equal-size uniform sample of leaf rows, making the classes
participate 1:1 in each batch regardless of their actual imbalance;
all-leaf batches contribute nothing. Validation is always scored with plain
cross entropy so curves stay comparable across training losses.

The trainer is plain Adam with a schedule that doubles the number of batches
aggregated per optimizer step on a fixed epoch period, capped, instead of
decaying the learning rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import metrics
from .batching import Batch

PROB_FLOOR = 1e-12
LOSS_KINDS = ("cross_entropy", "focal", "rebalanced")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z, activated):
    return np.where(z > 0, 1.0, activated + 1.0)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, PROB_FLOOR, 1.0 - PROB_FLOOR)


@dataclass
class LossSpec:
    kind: str = "rebalanced"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def validate(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}")
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not (0.0 < self.focal_alpha < 1.0):
            raise ValueError(f"focal_alpha must be in (0, 1), got {self.focal_alpha}")
        return self


@dataclass
class ClassifierModel:
    """Feed-forward weights; layer_sizes runs input -> hidden... -> 1."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout: float = 0.3

    @classmethod
    def init(cls, layer_sizes, seed: int, dropout: float = 0.3) -> "ClassifierModel":
        """Glorot-uniform initialization from a dedicated seed stream."""
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
            raise ValueError(f"layer_sizes must end in 1, got {layer_sizes}")
        rng = np.random.default_rng([seed, 714])
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layer_sizes=layer_sizes, weights=weights, biases=biases, dropout=dropout)

    @property
    def input_width(self):
        return self.layer_sizes[0]

    def copy(self) -> "ClassifierModel":
        return ClassifierModel(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            dropout=self.dropout,
        )

    def parameters(self):
        return self.weights + self.biases

    def save(self, path, seed: int | None = None, epoch: int | None = None) -> None:
        """Flat CSV checkpoint: metadata comments plus one row per weight."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(f"# layer_sizes={','.join(str(s) for s in self.layer_sizes)}\n")
            fh.write(f"# dropout={self.dropout!r}\n")
            if seed is not None:
                fh.write(f"# seed={seed}\n")
            if epoch is not None:
                fh.write(f"# epoch={epoch}\n")
            writer = csv.writer(fh)
            writer.writerow(["tensor", "row", "col", "value"])
            for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
                for r in range(w.shape[0]):
                    for c in range(w.shape[1]):
                        writer.writerow([f"W{layer}", r, c, repr(w[r, c])])
                for c in range(b.shape[0]):
                    writer.writerow([f"b{layer}", 0, c, repr(b[c])])

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        meta = {}
        rows = []
        with open(path, "r") as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].strip().partition("=")
                    meta[key.strip()] = value.strip()
                    continue
                rows.append(line)
        if "layer_sizes" not in meta:
            raise ValueError(f"checkpoint {path} lacks a layer_sizes header")
        layer_sizes = tuple(int(s) for s in meta["layer_sizes"].split(","))
        model = cls(
            layer_sizes=layer_sizes,
            weights=[
                np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])
            ],
            biases=[np.zeros(b) for b in layer_sizes[1:]],
            dropout=float(meta.get("dropout", 0.3)),
        )
        for record in csv.DictReader(rows):
            tensor = record["tensor"]
            layer = int(tensor[1:])
            value = float(record["value"])
            if tensor.startswith("W"):
                model.weights[layer][int(record["row"]), int(record["col"])] = value
            else:
                model.biases[layer][int(record["col"])] = value
        return model


def make_dropout_masks(model: ClassifierModel, batch_size: int, rng) -> list | None:
    """Inverted-dropout masks for each hidden layer, or None when disabled."""
    if model.dropout <= 0.0:
        return None
    keep = 1.0 - model.dropout
    return [
        rng.binomial(1, keep, size=(batch_size, width)) / keep
        for width in model.layer_sizes[1:-1]
    ]


def _forward_full(model: ClassifierModel, inputs: np.ndarray, dropout_masks=None):
    """Forward pass keeping per-layer caches for backprop."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_width:
        raise ValueError(
            f"input width {inputs.shape[1] if inputs.ndim == 2 else inputs.shape} "
            f"does not match model input {model.input_width}"
        )
    activations = [inputs]
    pre_activations = []
    h = inputs
    n_hidden = len(model.weights) - 1
    for layer in range(n_hidden):
        z = h @ model.weights[layer] + model.biases[layer]
        h = _elu(z)
        if dropout_masks is not None:
            h = h * dropout_masks[layer]
        pre_activations.append(z)
        activations.append(h)
    logits = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    probabilities = _sigmoid(logits)
    return probabilities, logits, pre_activations, activations


def forward(model: ClassifierModel, batch) -> np.ndarray:
    """Per-row wood probability in (0, 1); dropout disabled (inference)."""
    inputs = batch.network_input if isinstance(batch, Batch) else batch
    probabilities, _, _, _ = _forward_full(model, inputs)
    return probabilities


def cross_entropy_loss(labels, probs, reduction: str = "mean") -> float:
    """Binary cross entropy of wood probabilities against {0, 1} labels."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, 1 - PROB_FLOOR)
    per_row = -(labels * np.log(probs) + (1 - labels) * np.log1p(-probs))
    return float(per_row.sum() if reduction == "sum" else per_row.mean())


def focal_loss(labels, probs, focal_gamma: float = 2.0, focal_alpha: float = 0.25) -> float:
    """Mean focal loss; reduces to alpha-scaled cross entropy at gamma 0."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, 1 - PROB_FLOOR)
    p_t = labels * probs + (1 - labels) * (1 - probs)
    alpha_t = labels * focal_alpha + (1 - labels) * (1 - focal_alpha)
    per_row = -alpha_t * (1 - p_t) ** focal_gamma * np.log(p_t)
    return float(per_row.mean())


def rebalanced_selection(labels, rng) -> np.ndarray:
    """Leaf rows participating in the rebalanced loss (uniform, no replacement)."""
    labels = np.asarray(labels)
    wood = np.flatnonzero(labels == 1)
    leaf = np.flatnonzero(labels == 0)
    if len(wood) == 0 or len(leaf) == 0:
        return np.empty(0, dtype=np.int64) if len(wood) == 0 else leaf
    if len(leaf) >= len(wood):
        return np.sort(rng.choice(leaf, size=len(wood), replace=False))
    return leaf


def rebalanced_loss(labels, probs, rng) -> tuple[float, np.ndarray]:
    """Summed cross entropy over all wood rows plus sampled leaf rows.

    Returns (loss, selected leaf rows). A batch without wood is skipped:
    loss 0, empty selection, no gradient contribution.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    labels = np.asarray(labels)
    wood = np.flatnonzero(labels == 1)
    if len(wood) == 0:
        return 0.0, np.empty(0, dtype=np.int64)
    selected = rebalanced_selection(labels, rng)
    participating = np.concatenate([wood, selected])
    loss = cross_entropy_loss(labels[participating], np.asarray(probs)[participating],
                              reduction="sum")
    return loss, selected


def _loss_row_grad(labels, probs, spec: LossSpec, rng):
    """(loss, dLoss/dLogit per row, selected leaf rows or None)."""
    labels = np.asarray(labels, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    n = len(labels)
    if spec.kind == "cross_entropy":
        loss = cross_entropy_loss(labels, probs, reduction="mean")
        return loss, (probs - labels) / n, None
    if spec.kind == "rebalanced":
        loss, selected = rebalanced_loss(labels, probs, rng)
        wood = np.flatnonzero(labels == 1)
        row_grad = np.zeros(n)
        if len(wood) > 0:
            participating = np.concatenate([wood, selected])
            row_grad[participating] = (probs - labels)[participating]
        return loss, row_grad, selected
    # focal
    gamma, alpha = spec.focal_gamma, spec.focal_alpha
    p = np.clip(probs, PROB_FLOOR, 1 - PROB_FLOOR)
    p_t = labels * p + (1 - labels) * (1 - p)
    alpha_t = labels * alpha + (1 - labels) * (1 - alpha)
    loss = focal_loss(labels, probs, gamma, alpha)
    one_minus = 1 - p_t
    d_pt = alpha_t * (gamma * one_minus ** (gamma - 1) * np.log(p_t)
                      - one_minus**gamma / p_t)
    dpt_dz = (2 * labels - 1) * p * (1 - p)
    return loss, d_pt * dpt_dz / n, None


def loss_and_gradients(
    model: ClassifierModel,
    inputs: np.ndarray,
    labels,
    spec: LossSpec,
    rng,
    dropout_masks=None,
):
    """Loss plus analytic gradients for every weight and bias.

    ``rng`` drives the rebalanced selection; pass fixed ``dropout_masks`` to
    make the computation a deterministic function of the weights (as finite
    difference checks require).
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    spec.validate()
    probs, _, pre_activations, activations = _forward_full(
        model, inputs, dropout_masks
    )
    loss, row_grad, selected = _loss_row_grad(labels, probs, spec, rng)
    grad_w = [np.zeros_like(w) for w in model.weights]
    grad_b = [np.zeros_like(b) for b in model.biases]
    delta = row_grad[:, None]  # dLoss/dLogits, (B, 1)
    grad_w[-1] = activations[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    upstream = delta @ model.weights[-1].T
    for layer in range(len(model.weights) - 2, -1, -1):
        if dropout_masks is not None:
            upstream = upstream * dropout_masks[layer]
        dz = upstream * _elu_grad(pre_activations[layer], _elu(pre_activations[layer]))
        grad_w[layer] = activations[layer].T @ dz
        grad_b[layer] = dz.sum(axis=0)
        if layer > 0:
            upstream = dz @ model.weights[layer].T
    return loss, grad_w, grad_b, selected


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (32, 16)
    learning_rate: float = 1e-7  # published default; desk-scale runs want more
    epochs: int = 1000
    initial_step_batches: int = 1
    double_every: int = 1000
    max_step_batches: int = 128
    dropout: float = 0.3
    seed: int = 7
    checkpoint_every: int = 0  # epochs; 0 disables periodic checkpoints
    checkpoint_dir: str | None = None

    def validate(self):
        if not (self.learning_rate > 0):
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.initial_step_batches < 1 or self.double_every < 1:
            raise ValueError("initial_step_batches and double_every must be >= 1")
        if self.max_step_batches < self.initial_step_batches:
            raise ValueError(
                f"max_step_batches {self.max_step_batches} is below "
                f"initial_step_batches {self.initial_step_batches}"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        return self


class _Adam:
    def __init__(self, params, learning_rate):
        self.learning_rate = learning_rate
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def update(self, params, grads, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = beta1 * self.m[i] + (1 - beta1) * g
            self.v[i] = beta2 * self.v[i] + (1 - beta2) * g * g
            m_hat = self.m[i] / (1 - beta1**self.t)
            v_hat = self.v[i] / (1 - beta2**self.t)
            p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + eps)


def step_batches_at(cfg: TrainConfig, epoch: int) -> int:
    """How many batches one optimizer step aggregates at a given epoch."""
    return min(
        cfg.max_step_batches,
        cfg.initial_step_batches * 2 ** (epoch // cfg.double_every),
    )


def _epoch_validation(model, val_batches):
    labels = np.concatenate([b.labels for b in val_batches])
    probs = np.concatenate([forward(model, b) for b in val_batches])
    counts = metrics.confusion(labels, (probs >= 0.5).astype(np.int64))
    try:
        area = metrics.auroc(labels, probs)
    except ValueError:
        area = float("nan")
    return {
        "val_ce": cross_entropy_loss(labels, probs, reduction="mean"),
        "val_specificity": metrics.summary(counts)["specificity"],
        "val_mcc": metrics.mcc(counts),
        "val_auroc": area,
    }


def train(
    train_batches: list[Batch],
    val_batches: list[Batch],
    cfg: TrainConfig,
    loss: LossSpec,
) -> tuple[ClassifierModel, pd.DataFrame]:
    """Train a fresh model; returns it with the per-epoch metric log.

    Deterministic given cfg.seed: batch order is list order, gradients are
    summed in that order, and the rebalanced selection and dropout masks
    derive from (seed, epoch, batch ordinal) streams.
    """
    cfg.validate()
    loss.validate()
    if not train_batches or not val_batches:
        raise ValueError("train and validation batch sets must be non-empty")
    width = train_batches[0].network_input.shape[1]
    model = ClassifierModel.init(
        (width, *cfg.hidden, 1), seed=cfg.seed, dropout=cfg.dropout
    )
    adam = _Adam(model.parameters(), cfg.learning_rate)
    records = []
    for epoch in range(cfg.epochs):
        aggregate = step_batches_at(cfg, epoch)
        epoch_loss = 0.0
        epoch_rows = 0
        for start in range(0, len(train_batches), aggregate):
            group = train_batches[start : start + aggregate]
            grads = None
            for offset, batch in enumerate(group):
                rng = np.random.default_rng([cfg.seed, epoch, start + offset])
                masks = make_dropout_masks(model, len(batch), rng)
                value, gw, gb, _ = loss_and_gradients(
                    model, batch.network_input, batch.labels, loss, rng, masks
                )
                parts = gw + gb
                grads = parts if grads is None else [a + b for a, b in zip(grads, parts)]
                epoch_loss += value
                epoch_rows += len(batch)
            adam.update(model.parameters(), grads)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch)
        record = {
            "epoch": epoch,
            "step_batches": aggregate,
            "train_loss": epoch_loss,
            "train_loss_per_row": epoch_loss / max(epoch_rows, 1),
        }
        record.update(_epoch_validation(model, val_batches))
        records.append(record)
        if (
            cfg.checkpoint_every > 0
            and cfg.checkpoint_dir is not None
            and (epoch + 1) % cfg.checkpoint_every == 0
        ):
            model.save(
                Path(cfg.checkpoint_dir) / f"epoch_{epoch + 1:05d}.csv",
                seed=cfg.seed,
                epoch=epoch + 1,
            )
    log = pd.DataFrame.from_records(records)
    return model, log


def predict_batches(
    model: ClassifierModel, batches: list[Batch], n_points: int
) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate per-point wood probabilities and hard labels.

    Points that appear in several batch rows (padding duplicates) take the
    mean of their row probabilities; the hard label is wood at probability
    >= 0.5. Every one of the ``n_points`` source points must be covered.
    """
    sums = np.zeros(n_points)
    counts = np.zeros(n_points)
    for batch in batches:
        probs = forward(model, batch)
        sums += np.bincount(batch.source_index, weights=probs, minlength=n_points)
        counts += np.bincount(batch.source_index, minlength=n_points)
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"point {missing} not covered by any batch")
    wood_probability = sums / counts
    labels = (wood_probability >= 0.5).astype(np.int64)
    return wood_probability, labels
