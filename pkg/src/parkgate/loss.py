"""Composite detection loss (localization + objectness + class terms) and a toy trainer.

The loss is quadratic throughout: localization penalizes center offsets on
object boxes only, objectness splits into object-cell and background-cell
parts, and the class term compares probability vectors on object boxes. The
toy model is a per-cell linear predictor, which keeps the whole objective an
exactly quadratic function of the parameters.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CellBox",
    "GridPrediction",
    "GridTarget",
    "LossWeights",
    "LossBreakdown",
    "ToyModel",
    "GridExample",
    "TrainingDiverged",
    "localization_loss",
    "objectness_loss",
    "classification_loss",
    "total_loss",
    "grad_loss",
    "toy_train",
    "mean_loss",
    "make_toy_dataset",
    "load_prediction_grid",
    "load_target_grid",
    "format_grid",
]


@dataclass(frozen=True)
class CellBox:
    """One predicted box: center, objectness score, class-probability vector."""

    x: float
    y: float
    objectness: float
    class_probs: tuple[float, ...]


@dataclass
class GridPrediction:
    """Per-cell, per-box predicted values as (cells, boxes[, classes]) arrays."""

    x: np.ndarray
    y: np.ndarray
    objectness: np.ndarray
    class_probs: np.ndarray

    @classmethod
    def from_cells(cls, cells: list[list[CellBox]]) -> "GridPrediction":
        return cls(
            x=np.array([[b.x for b in row] for row in cells], dtype=np.float64),
            y=np.array([[b.y for b in row] for row in cells], dtype=np.float64),
            objectness=np.array([[b.objectness for b in row] for row in cells], dtype=np.float64),
            class_probs=np.array([[b.class_probs for b in row] for row in cells], dtype=np.float64),
        )

    @property
    def shape(self):
        return self.class_probs.shape


@dataclass
class GridTarget:
    """Ground-truth grid plus the object-presence indicator per box."""

    x: np.ndarray
    y: np.ndarray
    objectness: np.ndarray
    class_probs: np.ndarray
    obj_mask: np.ndarray  # 1.0 where a box is responsible for an object, else 0.0

    def __post_init__(self):
        if not np.all((self.obj_mask == 0.0) | (self.obj_mask == 1.0)):
            raise ValueError("obj indicator must be 0 or 1")

    @classmethod
    def from_cells(cls, cells: list[list[CellBox]], obj_mask: list[list[int]]) -> "GridTarget":
        pred = GridPrediction.from_cells(cells)
        return cls(pred.x, pred.y, pred.objectness, pred.class_probs,
                   np.array(obj_mask, dtype=np.float64))

    @property
    def shape(self):
        return self.class_probs.shape


@dataclass(frozen=True)
class LossWeights:
    loc: float = 1.0
    obj: float = 1.0
    cls: float = 1.0

    def __post_init__(self):
        if self.loc < 0 or self.obj < 0 or self.cls < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    loc: float
    obj: float
    obj_present: float   # objectness error summed over object boxes
    obj_absent: float    # objectness error summed over background boxes
    cls: float
    total: float


def _check_shapes(pred: GridPrediction, target: GridTarget):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")


def localization_loss(pred: GridPrediction, target: GridTarget) -> float:
    """Squared center offsets, object boxes only."""
    _check_shapes(pred, target)
    mask = target.obj_mask
    return float(np.sum(mask * ((pred.x - target.x) ** 2 + (pred.y - target.y) ** 2)))


def objectness_loss(pred: GridPrediction, target: GridTarget) -> tuple[float, float, float]:
    """Returns (object-box error, background-box error, their sum)."""
    _check_shapes(pred, target)
    sq = (pred.objectness - target.objectness) ** 2
    present = float(np.sum(target.obj_mask * sq))
    absent = float(np.sum((1.0 - target.obj_mask) * sq))
    return present, absent, present + absent


def classification_loss(pred: GridPrediction, target: GridTarget) -> float:
    """Squared class-probability error, object boxes only."""
    _check_shapes(pred, target)
    sq = np.sum((pred.class_probs - target.class_probs) ** 2, axis=-1)
    return float(np.sum(target.obj_mask * sq))


def total_loss(pred: GridPrediction, target: GridTarget,
               weights: LossWeights = LossWeights()) -> LossBreakdown:
    loc = localization_loss(pred, target)
    present, absent, obj = objectness_loss(pred, target)
    cls = classification_loss(pred, target)
    total = weights.loc * loc + weights.obj * obj + weights.cls * cls
    return LossBreakdown(loc=loc, obj=obj, obj_present=present,
                         obj_absent=absent, cls=cls, total=total)


# ---------------------------------------------------------------------------
# Toy linear model and trainer

@dataclass
class ToyModel:
    """Linear per-cell predictor: theta maps a cell feature vector to (x, y, objectness, probs)."""

    theta: np.ndarray  # (3 + n_classes, feat_dim)
    n_classes: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("model parameters must be finite")
        if self.theta.shape[0] != 3 + self.n_classes:
            raise ValueError("theta rows must equal 3 + n_classes")

    @classmethod
    def zeros(cls, n_classes: int, feat_dim: int) -> "ToyModel":
        return cls(np.zeros((3 + n_classes, feat_dim)), n_classes)

    def predict(self, features: np.ndarray) -> GridPrediction:
        out = features @ self.theta.T  # (cells, 3 + n_classes)
        return GridPrediction(
            x=out[:, 0:1],
            y=out[:, 1:2],
            objectness=out[:, 2:3],
            class_probs=out[:, None, 3:],
        )


@dataclass(frozen=True)
class GridExample:
    features: np.ndarray  # (cells, feat_dim)
    target: GridTarget    # boxes dimension must be 1 for the toy model


class TrainingDiverged(RuntimeError):
    pass


def _residual_grad(model: ToyModel, example: GridExample,
                   weights: LossWeights) -> np.ndarray:
    """d total_loss / d theta for one example (closed form for the quadratic loss)."""
    pred = model.predict(example.features)
    target = example.target
    _check_shapes(pred, target)
    mask = target.obj_mask[:, 0]  # (cells,)
    dout = np.empty((example.features.shape[0], 3 + model.n_classes))
    dout[:, 0] = 2.0 * weights.loc * mask * (pred.x - target.x)[:, 0]
    dout[:, 1] = 2.0 * weights.loc * mask * (pred.y - target.y)[:, 0]
    # Objectness error applies to every box; present/absent parts share the weight.
    dout[:, 2] = 2.0 * weights.obj * (pred.objectness - target.objectness)[:, 0]
    dout[:, 3:] = 2.0 * weights.cls * mask[:, None] * (pred.class_probs - target.class_probs)[:, 0, :]
    return dout.T @ example.features


def grad_loss(model: ToyModel, batch: list[GridExample],
              weights: LossWeights = LossWeights()) -> np.ndarray:
    """Analytic gradient of the mean total loss over the batch w.r.t. theta."""
    if not batch:
        raise ValueError("empty batch")
    acc = np.zeros_like(model.theta)
    for example in batch:
        acc += _residual_grad(model, example, weights)
    return acc / len(batch)


def mean_loss(model: ToyModel, dataset: list[GridExample],
              weights: LossWeights = LossWeights()) -> LossBreakdown:
    loc = obj = present = absent = cls = total = 0.0
    for example in dataset:
        b = total_loss(model.predict(example.features), example.target, weights)
        loc += b.loc
        obj += b.obj
        present += b.obj_present
        absent += b.obj_absent
        cls += b.cls
        total += b.total
    n = len(dataset)
    return LossBreakdown(loc / n, obj / n, present / n, absent / n, cls / n, total / n)


def toy_train(model: ToyModel, dataset: list[GridExample], learning_rate: float,
              epochs: int, seed: int,
              weights: LossWeights = LossWeights()) -> tuple[ToyModel, list[LossBreakdown]]:
    """Plain SGD, one update per example in seeded shuffled order.

    Returns the trained model and the mean loss over the dataset after each
    epoch. Aborts with TrainingDiverged as soon as the loss stops being finite.
    """
    if learning_rate < 0:
        raise ValueError("learning rate must be >= 0")
    if not dataset:
        raise ValueError("empty dataset")
    rng = random.Random(seed)
    theta = model.theta.copy()
    current = ToyModel(theta, model.n_classes)
    trace: list[LossBreakdown] = []
    # overflow during a diverging run is expected right up until it is detected
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            order = list(range(len(dataset)))
            rng.shuffle(order)
            for i in order:
                grad = _residual_grad(current, dataset[i], weights)
                current.theta = current.theta - learning_rate * grad
            epoch_loss = mean_loss(current, dataset, weights)
            if not np.isfinite(epoch_loss.total):
                raise TrainingDiverged(
                    f"non-finite loss {epoch_loss.total} after epoch {epoch + 1}; "
                    f"reduce the learning rate (currently {learning_rate})")
            trace.append(epoch_loss)
    return current, trace


def make_toy_dataset(count: int = 20, cells: int = 4, n_classes: int = 2,
                     feat_dim: int = 4, seed: int = 0) -> list[GridExample]:
    """Synthetic grid set generated by a hidden linear model (zero-noise, so
    the optimum achieves zero loss)."""
    rng = np.random.RandomState(seed)
    hidden = rng.uniform(-0.5, 0.5, size=(3 + n_classes, feat_dim))
    dataset = []
    for _ in range(count):
        features = rng.uniform(0.0, 1.0, size=(cells, feat_dim))
        features[:, 0] = 1.0  # bias feature
        out = features @ hidden.T
        mask = (rng.uniform(size=(cells, 1)) < 0.6).astype(np.float64)
        target = GridTarget(
            x=out[:, 0:1].copy(),
            y=out[:, 1:2].copy(),
            objectness=out[:, 2:3].copy(),
            class_probs=out[:, None, 3:].copy(),
            obj_mask=mask,
        )
        dataset.append(GridExample(features=features, target=target))
    return dataset


# ---------------------------------------------------------------------------
# Grid fixture files: one box per line, "cell box indicator x y objectness p0 p1 ..."

def _parse_grid_rows(path: Path):
    rows = []
    n_cols = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if n_cols is None:
            n_cols = len(fields)
            if n_cols < 7:
                raise ValueError(f"{path}:{lineno}: need at least 7 columns")
        elif len(fields) != n_cols:
            raise ValueError(f"{path}:{lineno}: expected {n_cols} columns")
        try:
            cell, box, indicator = int(fields[0]), int(fields[1]), int(fields[2])
            values = [float(f) for f in fields[3:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric field") from None
        if indicator not in (0, 1):
            raise ValueError(f"{path}:{lineno}: indicator must be 0 or 1")
        rows.append((cell, box, indicator, values))
    if not rows:
        raise ValueError(f"{path}: empty grid file")
    return rows, n_cols - 6


def _rows_to_arrays(rows, n_classes):
    cells = max(r[0] for r in rows) + 1
    boxes = max(r[1] for r in rows) + 1
    seen = set()
    x = np.zeros((cells, boxes))
    y = np.zeros((cells, boxes))
    objectness = np.zeros((cells, boxes))
    probs = np.zeros((cells, boxes, n_classes))
    mask = np.zeros((cells, boxes))
    for cell, box, indicator, values in rows:
        if (cell, box) in seen:
            raise ValueError(f"duplicate grid entry for cell {cell} box {box}")
        seen.add((cell, box))
        x[cell, box], y[cell, box], objectness[cell, box] = values[0], values[1], values[2]
        probs[cell, box] = values[3:]
        mask[cell, box] = indicator
    if len(seen) != cells * boxes:
        raise ValueError("grid file does not cover every (cell, box) entry")
    return x, y, objectness, probs, mask


def load_prediction_grid(path: Path) -> GridPrediction:
    """Load a grid file as a prediction; the indicator column is ignored."""
    rows, n_classes = _parse_grid_rows(path)
    x, y, objectness, probs, _ = _rows_to_arrays(rows, n_classes)
    return GridPrediction(x, y, objectness, probs)


def load_target_grid(path: Path) -> GridTarget:
    rows, n_classes = _parse_grid_rows(path)
    return GridTarget(*_rows_to_arrays(rows, n_classes))


def format_grid(x, y, objectness, probs, mask) -> str:
    lines = ["# cell box indicator x y objectness class_probs..."]
    cells, boxes = np.asarray(x).shape
    for c in range(cells):
        for b in range(boxes):
            vals = " ".join(f"{v:.6f}" for v in
                            [x[c][b], y[c][b], objectness[c][b], *np.asarray(probs)[c][b]])
            lines.append(f"{c} {b} {int(mask[c][b])} {vals}")
    return "\n".join(lines) + "\n"
