"""Predictors: linear models for the theory lab and dense/ReLU MLP classifiers.

Both model kinds expose the same small surface used by attributions and
metrics: ``logits(batch)``, ``input_gradient(batch, targets)``, ``dim`` and
``classes``. Weight matrices are stored ``(rows=inputs, cols=outputs)`` so a
layer computes ``x @ W + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from faithbench import autodiff as ad


class ModelFormatError(ValueError):
    """A model file that does not describe a valid model."""


@dataclass(frozen=True)
class Dense:
    weights: np.ndarray  # (rows, cols)
    bias: np.ndarray  # (cols,)
    activation: str = "none"  # "relu" | "none"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError(
                f"dense layer shape mismatch: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {self.activation!r}")


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == dim and not (arr.ndim == 2 and arr.shape == (1, dim)):
        return arr.reshape(1, dim), True
    if arr.ndim >= 2 and int(np.prod(arr.shape[1:])) == dim:
        return arr.reshape(arr.shape[0], dim), False
    raise ValueError(f"input of shape {arr.shape} does not match model input dimension {dim}")


def _selected_logit_sum(logits: ad.Var, targets: np.ndarray) -> ad.Var:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), targets] = 1.0
    return ad.total(ad.mul(logits, onehot))


@dataclass(frozen=True)
class LinearModel:
    """``f(x) = x w + b``."""

    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).ravel()
        if w.size < 1 or not np.all(np.isfinite(w)) or not math.isfinite(self.b):
            raise ValueError("linear model needs d >= 1 finite weights and a finite bias")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))

    @property
    def dim(self) -> int:
        return self.w.size

    @property
    def classes(self) -> int:
        return 1

    @property
    def input_shape(self) -> tuple[int, ...]:
        return (1, self.dim)

    def program(self) -> ad.Program:
        w, b = self.w[:, None], np.array([self.b])
        return ad.Program(lambda x: ad.dense(x, w, b), {"x": (None, self.dim)})

    def logits(self, x) -> np.ndarray:
        batch, _ = _as_batch(x, self.dim)
        return (batch @ self.w + self.b)[:, None]

    def input_gradient(self, x, targets=None) -> np.ndarray:
        batch, _ = _as_batch(x, self.dim)
        prog = ad.Program(
            lambda x: ad.total(ad.dense(x, self.w[:, None], np.array([self.b]))),
            {"x": (None, self.dim)},
        )
        return ad.gradient(prog, {"x": batch}, "x")


@dataclass(frozen=True)
class MLPModel:
    """Dense layers with ReLU between them; the last layer produces class logits."""

    layers: tuple[Dense, ...]
    input_shape: tuple[int, ...] = (28, 28)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("MLP needs at least one layer")
        if self.layers[0].weights.shape[0] != int(np.prod(self.input_shape)):
            raise ValueError("first layer rows do not match the input shape")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ValueError(
                    f"layer dimension mismatch: {a.weights.shape} followed by {b.weights.shape}"
                )

    @property
    def dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def classes(self) -> int:
        return self.layers[-1].weights.shape[1]

    @property
    def final(self) -> Dense:
        return self.layers[-1]

    def _graph(self, x: ad.Var, params: Sequence[tuple[ad.Var, ad.Var]] | None = None):
        h = x
        for i, layer in enumerate(self.layers):
            if i == len(self.layers) - 1:
                penultimate = h
            w, b = params[i] if params is not None else (layer.weights, layer.bias)
            h = ad.dense(h, w, b)
            if layer.activation == "relu":
                h = ad.relu(h)
        return h, penultimate

    def program(self, output: str = "logits") -> ad.Program:
        """``output`` is ``"logits"`` or ``"features"`` (the penultimate activations)."""
        pick = 0 if output == "logits" else 1
        return ad.Program(lambda x: self._graph(x)[pick], {"x": (None, self.dim)})

    def features(self, x) -> np.ndarray:
        batch, _ = _as_batch(x, self.dim)
        h = batch
        for layer in self.layers[:-1]:
            h = h @ layer.weights + layer.bias
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
        return h

    def head(self, features: np.ndarray) -> np.ndarray:
        out = features @ self.final.weights + self.final.bias
        return np.maximum(out, 0.0) if self.final.activation == "relu" else out

    def forward_with_features(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Logits and penultimate features; a single input gives unbatched outputs."""
        batch, single = _as_batch(x, self.dim)
        feats = self.features(batch)
        logits = self.head(feats)
        return (logits[0], feats[0]) if single else (logits, feats)

    def logits(self, x) -> np.ndarray:
        return self.head(self.features(x))

    def input_gradient(self, x, targets) -> np.ndarray:
        """Per-row gradient of ``logit[target]`` wrt the input row."""
        batch, _ = _as_batch(x, self.dim)
        targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (batch.shape[0],))
        prog = ad.Program(
            lambda x: _selected_logit_sum(self._graph(x)[0], targets), {"x": (None, self.dim)}
        )
        return ad.gradient(prog, {"x": batch}, "x")


Model = Union[LinearModel, MLPModel]


def predict(model: Model, x) -> np.ndarray | float:
    """Logits of one input; a scalar for linear models."""
    batch, _ = _as_batch(x, model.dim)
    out = model.logits(batch)[0]
    return float(out[0]) if isinstance(model, LinearModel) else out


def forward_with_features(model: MLPModel, x):
    return model.forward_with_features(x)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 3
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be >= 1")


@dataclass
class TrainResult:
    model: MLPModel
    accuracy: float
    loss: float
    epoch_losses: list[float] = field(default_factory=list)


def init_mlp(sizes: Sequence[int], input_shape: tuple[int, ...], rng: np.random.Generator) -> MLPModel:
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        w = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))
        act = "relu" if i < len(sizes) - 2 else "none"
        layers.append(Dense(w, np.zeros(n_out), act))
    return MLPModel(tuple(layers), tuple(input_shape))


def _loss_and_grads(model: MLPModel, params, x, y, weight_decay):
    leaves = [(ad.Var(w), ad.Var(b)) for w, b in params]
    logits, _ = model._graph(ad.Var(x), leaves)
    loss = ad.cross_entropy(logits, y)
    grads = ad.backprop(loss)
    out = []
    for (wv, bv), (w, _) in zip(leaves, params):
        out.append((grads[id(wv)] + weight_decay * w, grads[id(bv)]))
    penalty = 0.5 * weight_decay * sum(float(np.sum(w * w)) for w, _ in params)
    return float(loss.value) + penalty, out


def _with_params(model: MLPModel, params) -> MLPModel:
    layers = tuple(Dense(w.copy(), b.copy(), l.activation) for (w, b), l in zip(params, model.layers))
    return MLPModel(layers, model.input_shape)


def evaluate_classifier(model: Model, images, labels) -> tuple[float, float]:
    """Accuracy and mean cross-entropy."""
    logits = model.logits(images)
    labels = np.asarray(labels)
    loss = float(ad.cross_entropy(logits, labels).value)
    return float(np.mean(np.argmax(logits, axis=1) == labels)), loss


def train_sgd(
    sizes: Sequence[int],
    images,
    labels,
    cfg: TrainConfig = TrainConfig(),
    input_shape: tuple[int, ...] | None = None,
) -> TrainResult:
    """Mini-batch SGD on softmax cross-entropy (plus optional L2 penalty).

    ``sizes`` lists the layer widths from input to classes, e.g. ``[784, 128, 10]``.
    Deterministic given ``cfg.seed``.
    """
    x = np.asarray(images, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("empty dataset")
    if len(y) != x.shape[0]:
        raise ValueError("images and labels differ in length")
    classes = sizes[-1]
    if y.min() < 0 or y.max() >= classes:
        raise ValueError(f"labels must lie in [0, {classes})")
    shape = tuple(input_shape) if input_shape is not None else tuple(x.shape[1:])
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != sizes[0]:
        raise ValueError(f"input dimension {x.shape[1]} does not match sizes[0]={sizes[0]}")

    rng = np.random.default_rng(cfg.seed)
    model = init_mlp(sizes, shape, rng)
    params = [(l.weights.copy(), l.bias.copy()) for l in model.layers]
    epoch_losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, grads = _loss_and_grads(model, params, x[idx], y[idx], cfg.weight_decay)
            params = [
                (w - cfg.learning_rate * gw, b - cfg.learning_rate * gb)
                for (w, b), (gw, gb) in zip(params, grads)
            ]
        full_loss, _ = _loss_and_grads(model, params, x, y, cfg.weight_decay)
        epoch_losses.append(full_loss)
    trained = _with_params(model, params)
    acc, _ = evaluate_classifier(trained, x, y)
    return TrainResult(trained, acc, epoch_losses[-1], epoch_losses)


# ---------------------------------------------------------------------------
# serialization


def _floats(values) -> list[float]:
    # repr of a Python float is the shortest string that round-trips (<= 17 digits)
    return [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]


def model_to_dict(model: Model) -> dict:
    if isinstance(model, LinearModel):
        return {
            "type": "linear",
            "input_shape": [1, model.dim],
            "classes": 1,
            "layers": [
                {"rows": model.dim, "cols": 1, "weights": _floats(model.w),
                 "bias": [model.b], "activation": "none"}
            ],
        }
    return {
        "type": "mlp",
        "input_shape": list(model.input_shape),
        "classes": model.classes,
        "layers": [
            {
                "rows": int(l.weights.shape[0]),
                "cols": int(l.weights.shape[1]),
                "weights": _floats(l.weights),
                "bias": _floats(l.bias),
                "activation": l.activation,
            }
            for l in model.layers
        ],
    }


def model_from_dict(doc: dict) -> Model:
    def need(obj, key, where):
        if key not in obj:
            raise ModelFormatError(f"{where}: missing field {key!r}")
        return obj[key]

    kind = need(doc, "type", "model")
    shape = tuple(int(s) for s in need(doc, "input_shape", "model"))
    classes = int(need(doc, "classes", "model"))
    raw_layers = need(doc, "layers", "model")
    if not raw_layers:
        raise ModelFormatError("model: field 'layers' is empty")
    layers = []
    prev_cols = int(np.prod(shape))
    for i, raw in enumerate(raw_layers):
        where = f"layers[{i}]"
        rows, cols = int(need(raw, "rows", where)), int(need(raw, "cols", where))
        weights = np.asarray(need(raw, "weights", where), dtype=np.float64)
        bias = np.asarray(need(raw, "bias", where), dtype=np.float64)
        act = need(raw, "activation", where)
        if rows != prev_cols:
            raise ModelFormatError(f"{where}.rows: expected {prev_cols}, got {rows}")
        if weights.size != rows * cols:
            raise ModelFormatError(f"{where}.weights: expected {rows * cols} values, got {weights.size}")
        if bias.size != cols:
            raise ModelFormatError(f"{where}.bias: expected {cols} values, got {bias.size}")
        if act not in ("relu", "none"):
            raise ModelFormatError(f"{where}.activation: unknown value {act!r}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ModelFormatError(f"{where}: non-finite parameter")
        layers.append(Dense(weights.reshape(rows, cols), bias, act))
        prev_cols = cols
    if prev_cols != classes:
        raise ModelFormatError(f"classes: last layer has {prev_cols} outputs, declared {classes}")
    if kind == "linear":
        if len(layers) != 1 or classes != 1:
            raise ModelFormatError("linear model must have exactly one layer with one output")
        return LinearModel(layers[0].weights[:, 0], float(layers[0].bias[0]))
    if kind == "mlp":
        return MLPModel(tuple(layers), shape)
    raise ModelFormatError(f"type: unknown model type {kind!r}")


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from exc
    return model_from_dict(doc)
