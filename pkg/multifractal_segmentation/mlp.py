"""Feedforward sigmoid classifier used as the per-pixel baseline.

Output unit 0 scores land and unit 1 scores water. Training minimises the
mean cross-entropy of both sigmoid outputs against one-hot targets with
Møller's scaled conjugate gradient, full batch.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit  # type: ignore

from .raster_io import PathType, RasterFormatError, RasterStack
from .segment import SegmentationMask

LOG = logging.getLogger(__name__)

OPTIMIZERS = ("scg", "gd")
# Møller's defaults for the curvature probe and the initial damping
SCG_SIGMA = 1e-5
SCG_LAMBDA = 1e-6

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class TrainingSummary:
    initial_loss: float
    epochs: int
    best_validation_loss: Optional[float]
    test_accuracy: Optional[float]


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Layer sizes plus one (outputs, inputs) weight matrix per layer."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    summary: Optional[TrainingSummary] = None

    def __post_init__(self):
        sizes = tuple(int(size) for size in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
            raise ValueError("one weight matrix and bias per layer expected")
        for fan_in, fan_out, w, b in zip(sizes, sizes[1:], weights, biases):
            if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                raise ValueError(
                    f"layer {fan_in}->{fan_out} has weights {w.shape}"
                    f" and biases {b.shape}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("model parameters must be finite")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> MlpModel:
        return cls.from_parameters(
            layer_sizes, np.zeros(_parameter_count(layer_sizes))
        )

    @classmethod
    def initialized(
        cls, layer_sizes: Sequence[int], rng: np.random.Generator
    ) -> MlpModel:
        """Uniform weights and biases in ±1/sqrt(fan_in)."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            limit = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(rng.uniform(-limit, limit, size=fan_out))
        return cls(
            layer_sizes=tuple(layer_sizes),
            weights=tuple(weights),
            biases=tuple(biases),
        )

    @classmethod
    def from_parameters(
        cls, layer_sizes: Sequence[int], parameters: np.ndarray
    ) -> MlpModel:
        if len(parameters) != _parameter_count(layer_sizes):
            raise ValueError(
                f"{len(parameters)} parameters do not fit {list(layer_sizes)}"
            )
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            end = offset + fan_out * fan_in
            weights.append(parameters[offset:end].reshape(fan_out, fan_in))
            biases.append(parameters[end : end + fan_out])
            offset = end + fan_out
        return cls(
            layer_sizes=tuple(layer_sizes),
            weights=tuple(weights),
            biases=tuple(biases),
        )

    def parameters(self) -> np.ndarray:
        return np.concatenate(
            [
                part
                for w, b in zip(self.weights, self.biases)
                for part in (w.ravel(), b)
            ]
        )

    def with_summary(self, summary: TrainingSummary) -> MlpModel:
        return MlpModel(
            layer_sizes=self.layer_sizes,
            weights=self.weights,
            biases=self.biases,
            summary=summary,
        )


@dataclass(frozen=True)
class TrainConfig:
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    max_epochs: int = 1000
    patience: int = 50
    optimizer: str = "scg"
    # only used by plain gradient descent
    learning_rate: float = 0.5

    def __post_init__(self):
        if len(self.split) != 3 or min(self.split) < 0:
            raise ValueError(f"invalid split {self.split}")
        if abs(math.fsum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1: {self.split}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _parameter_count(layer_sizes: Sequence[int]) -> int:
    return sum(
        fan_out * (fan_in + 1)
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:])
    )


def _as_inputs(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[-1:] != (model.layer_sizes[0],):
        raise ValueError(
            f"inputs of shape {x.shape} do not match"
            f" {model.layer_sizes[0]} input units"
        )
    return x


def _activations(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    activations = [x]
    for w, b in zip(model.weights, model.biases):
        activations.append(expit(activations[-1] @ w.T + b))
    return activations


def forward(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    """Output scores for one input vector or a (samples, inputs) matrix."""
    return _activations(model, _as_inputs(model, inputs))[-1]


def one_hot(labels: np.ndarray) -> np.ndarray:
    water = np.asarray(labels, dtype=bool)
    return np.stack([~water, water], axis=1).astype(np.float64)


def loss(model: MlpModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    x = _as_inputs(model, inputs)
    logits = x
    for index, (w, b) in enumerate(zip(model.weights, model.biases)):
        logits = logits @ w.T + b
        if index < len(model.weights) - 1:
            logits = expit(logits)
    # -y ln s(z) - (1 - y) ln(1 - s(z)) without evaluating s(z)
    per_sample = np.logaddexp(0.0, logits) - targets * logits
    return float(per_sample.sum() / len(x))


def loss_and_gradient(
    model: MlpModel, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    x = _as_inputs(model, inputs)
    activations = _activations(model, x)
    delta = (activations[-1] - targets) / len(x)
    gradients = []
    for layer in reversed(range(len(model.weights))):
        gradients.append((delta.sum(axis=0), delta.T @ activations[layer]))
        if layer:
            below = activations[layer]
            delta = (delta @ model.weights[layer]) * below * (1.0 - below)
    flat = np.concatenate(
        [part for b, w in reversed(gradients) for part in (w.ravel(), b)]
    )
    return loss(model, x, targets), flat


def _scg_epochs(
    objective: Objective, start: np.ndarray, max_epochs: int
):
    """Yields the parameters after every scaled conjugate gradient step."""
    w = start.copy()
    error, gradient = objective(w)
    r = -gradient
    p = r.copy()
    damping, raised = SCG_LAMBDA, 0.0
    success = True
    restart = len(w)
    delta = 0.0
    for epoch in range(1, max_epochs + 1):
        p_norm2 = float(p @ p)
        if p_norm2 == 0.0:
            return
        if success:
            probe = SCG_SIGMA / math.sqrt(p_norm2)
            _, probed = objective(w + probe * p)
            delta = float(p @ ((probed - gradient) / probe))
        delta += (damping - raised) * p_norm2
        if delta <= 0:
            raised = 2.0 * (damping - delta / p_norm2)
            delta = -delta + damping * p_norm2
            damping = raised
        mu = float(p @ r)
        if mu == 0.0:
            return
        step = mu / delta
        trial = w + step * p
        trial_error, trial_gradient = objective(trial)
        comparison = 2.0 * delta * (error - trial_error) / (mu * mu)
        if comparison >= 0:
            w, error, gradient = trial, trial_error, trial_gradient
            r_next = -gradient
            raised, success = 0.0, True
            if epoch % restart == 0:
                p = r_next.copy()
            else:
                beta = (float(r_next @ r_next) - float(r_next @ r)) / mu
                p = r_next + beta * p
            r = r_next
            if comparison >= 0.75:
                damping /= 4.0
        else:
            raised, success = damping, False
        if comparison < 0.25:
            damping += delta * (1.0 - comparison) / p_norm2
        yield w
        if not r.any():
            return


def _gd_epochs(
    objective: Objective, start: np.ndarray, max_epochs: int, rate: float
):
    w = start.copy()
    for _ in range(max_epochs):
        _, gradient = objective(w)
        w = w - rate * gradient
        yield w


def _split(
    count: int, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.random.default_rng(cfg.seed).permutation(count)
    train_end = int(round(cfg.split[0] * count))
    validation_end = train_end + int(round(cfg.split[1] * count))
    return (
        order[:train_end],
        order[train_end:validation_end],
        order[validation_end:],
    )


def accuracy(
    model: MlpModel, inputs: np.ndarray, labels: np.ndarray
) -> float:
    scores = forward(model, inputs)
    return float(np.mean((scores[:, 1] > scores[:, 0]) == labels))


def train(
    samples: np.ndarray,
    labels: np.ndarray,
    layer_sizes: Sequence[int],
    cfg: TrainConfig,
) -> MlpModel:
    samples = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if samples.ndim != 2 or len(samples) != len(labels):
        raise ValueError("one label per sample row expected")
    if not np.isfinite(samples).all():
        raise ValueError("samples must be finite")
    if labels.all() or not labels.any():
        raise ValueError("training data holds a single class")
    if layer_sizes[-1] != 2:
        raise ValueError("the output layer must have 2 units")
    train_rows, validation_rows, test_rows = _split(len(samples), cfg)
    if not len(train_rows):
        raise ValueError("the training split is empty")
    rng = np.random.default_rng(cfg.seed)
    model = MlpModel.initialized(layer_sizes, rng)
    targets = one_hot(labels)
    x_train, y_train = samples[train_rows], targets[train_rows]

    def objective(parameters: np.ndarray) -> tuple[float, np.ndarray]:
        candidate = MlpModel.from_parameters(layer_sizes, parameters)
        return loss_and_gradient(candidate, x_train, y_train)

    def monitored_loss(candidate: MlpModel) -> float:
        if len(validation_rows):
            return loss(
                candidate, samples[validation_rows], targets[validation_rows]
            )
        return loss(candidate, x_train, y_train)

    initial_loss = loss(model, x_train, y_train)
    best, best_loss = model, monitored_loss(model)
    LOG.info(
        f"Training {list(layer_sizes)} on {len(train_rows)} samples"
        f" ({cfg.optimizer}), initial loss {initial_loss:.6g}"
    )
    steps = (
        _scg_epochs(objective, model.parameters(), cfg.max_epochs)
        if cfg.optimizer == "scg"
        else _gd_epochs(
            objective, model.parameters(), cfg.max_epochs, cfg.learning_rate
        )
    )
    epochs = stale = 0
    for parameters in steps:
        epochs += 1
        candidate = MlpModel.from_parameters(layer_sizes, parameters)
        candidate_loss = monitored_loss(candidate)
        LOG.debug(f"Epoch {epochs}: monitored loss {candidate_loss:.6g}")
        if candidate_loss < best_loss:
            best, best_loss, stale = candidate, candidate_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                LOG.info(f"No improvement for {stale} epochs; stopping")
                break
    test_accuracy = (
        accuracy(best, samples[test_rows], labels[test_rows])
        if len(test_rows)
        else None
    )
    summary = TrainingSummary(
        initial_loss=initial_loss,
        epochs=epochs,
        best_validation_loss=best_loss if len(validation_rows) else None,
        test_accuracy=test_accuracy,
    )
    LOG.info(f"Trained for {epochs} epochs: {summary}")
    return best.with_summary(summary)


def pixel_vectors(stack: RasterStack) -> np.ndarray:
    """One row of band values per pixel, row-major."""
    return np.stack([band.values.ravel() for band in stack], axis=1)


def predict_mask(model: MlpModel, stack: RasterStack) -> SegmentationMask:
    if len(stack) != model.layer_sizes[0]:
        raise ValueError(
            f"the model takes {model.layer_sizes[0]} bands,"
            f" the raster has {len(stack)}"
        )
    if model.layer_sizes[-1] != 2:
        raise ValueError("the output layer must have 2 units")
    scores = forward(model, pixel_vectors(stack))
    # equal scores are not water
    water = scores[:, 1] > scores[:, 0]
    return SegmentationMask(water=water.reshape(stack.height, stack.width))


def save_model(model: MlpModel, path: PathType) -> None:
    document: dict[str, object] = {
        "layer_sizes": list(model.layer_sizes),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    if model.summary is not None:
        document["summary"] = asdict(model.summary)
    # float repr round-trips, which is at most 17 significant digits
    Path(path).write_text(json.dumps(document) + "\n", encoding="utf-8")
    LOG.debug(f"Saved model {list(model.layer_sizes)}: {path}")


def load_model(path: PathType) -> MlpModel:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        summary = document.get("summary")
        return MlpModel(
            layer_sizes=tuple(document["layer_sizes"]),
            weights=tuple(np.array(w) for w in document["weights"]),
            biases=tuple(np.array(b) for b in document["biases"]),
            summary=None if summary is None else TrainingSummary(**summary),
        )
    except (ValueError, KeyError, TypeError, AttributeError) as error:
        raise RasterFormatError(f"malformed model file {path}: {error}")
