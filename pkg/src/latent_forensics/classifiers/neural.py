"""
Gradient-trained classifiers: logistic regression and the two MLPs.

All three are dense networks ending in one logit, trained on binary cross-entropy
with minibatch SGD (momentum) through the autodiff engine. Training keeps the weights
of the epoch with the lowest validation loss and stops after `patience` epochs
without improvement.
"""

import json
import logging
import os
from collections.abc import Mapping, Sequence
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import expit

from latent_forensics.autodiff import (
    ComputationGraph,
    GraphBuilder,
    MomentumSGD,
    Tensor,
    evaluate,
    load_tensors,
    save_tensors,
    value_and_gradient,
)
from latent_forensics.classifiers.base import (
    ClassifierKind,
    ClassifierModel,
    Standardizer,
    TrainConfig,
    as_training_data,
)
from latent_forensics.models.layers import glorot_normal, he_normal
from latent_forensics.utils.seeding import rng_for

logger = logging.getLogger(__name__)

HIDDEN_SIZES: dict[ClassifierKind, tuple[int, ...]] = {
    ClassifierKind.LR: (),
    ClassifierKind.MLP2: (512,),
    ClassifierKind.MLP5: (2048, 512, 512, 512),
}


def init_dense_weights(input_dim: int, hidden: Sequence[int], seed: int) -> dict[str, Tensor]:
    """
    He-initialized hidden layers; the logistic model (no hidden layers) starts at zero
    """
    rng = rng_for(seed, "dense_init")
    weights: dict[str, Tensor] = {}
    fan_in = input_dim
    for layer, width in enumerate(hidden):
        weights[f"h{layer}/w"] = he_normal(rng, (fan_in, width))
        weights[f"h{layer}/b"] = np.zeros(width)
        fan_in = width
    weights["out/w"] = glorot_normal(rng, (fan_in, 1)) if hidden else np.zeros((fan_in, 1))
    weights["out/b"] = np.zeros(1)
    return weights


def build_dense_network(weights: Mapping[str, Tensor], n_hidden: int) -> ComputationGraph:
    b = GraphBuilder()
    h = b.input("x")
    targets = b.input("y")
    for layer in range(n_hidden):
        w = b.param(f"h{layer}/w", weights[f"h{layer}/w"])
        bias = b.param(f"h{layer}/b", weights[f"h{layer}/b"])
        h = b.relu(b.dense(h, w, bias))
    out_w = b.param("out/w", weights["out/w"])
    out_b = b.param("out/b", weights["out/b"])
    logits = b.dense(h, out_w, out_b, name="logits")
    b.bce_with_logits(logits, targets, name="loss")
    return b.build()


class DenseClassifier(ClassifierModel):
    def __init__(self, kind: ClassifierKind, standardizer: Standardizer, weights: Mapping[str, ArrayLike]):
        self.kind = kind
        self.standardizer: Standardizer = standardizer
        self.weights: dict[str, Tensor] = {name: np.asarray(value, dtype=np.float64) for name, value in weights.items()}
        self.hidden_sizes: tuple[int, ...] = tuple(
            self.weights[f"h{layer}/w"].shape[1] for layer in range(len(HIDDEN_SIZES[kind]))
        )
        self._graph: ComputationGraph = build_dense_network(self.weights, len(self.hidden_sizes))

    @property
    def graph(self) -> ComputationGraph:
        return self._graph

    def logits(self, features: Tensor) -> Tensor:
        return evaluate(self._graph, {"x": features}, ["logits"])["logits"][:, 0]

    def _scores(self, features: Tensor) -> Tensor:
        return expit(self.logits(features))

    def decision_function(self, codes: ArrayLike) -> Tensor:
        x = np.asarray(codes, dtype=np.float64)
        return self.logits(self.standardizer.transform(x.reshape(x.shape[0], -1)))

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        tensors = {**self.weights, "mean": self.standardizer.mean, "scale": self.standardizer.scale}
        meta = {"kind": self.kind.value, "hidden_sizes": json.dumps(list(self.hidden_sizes)), **(metadata or {})}
        return save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "DenseClassifier":
        tensors, metadata = load_tensors(path)
        standardizer = Standardizer(tensors.pop("mean"), tensors.pop("scale"))
        model_cls = LogisticModel if metadata["kind"] == ClassifierKind.LR.value else MlpModel
        return model_cls(ClassifierKind(metadata["kind"]), standardizer, tensors)


class LogisticModel(DenseClassifier):
    @property
    def coefficients(self) -> Tensor:
        return self.weights["out/w"][:, 0]

    @property
    def bias(self) -> float:
        return float(self.weights["out/b"][0])


class MlpModel(DenseClassifier):
    pass


def _validation_split(n: int, fraction: float, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    order = rng.permutation(n)
    n_val = int(np.floor(n * fraction))
    if n_val < 1 or n - n_val < 2:
        return order, order[:0]
    return order[n_val:], order[:n_val]


def _fit_dense(
    kind: ClassifierKind, codes: ArrayLike, labels: ArrayLike, cfg: TrainConfig
) -> tuple[DenseClassifier, list[float]]:
    x, y = as_training_data(codes, labels)
    standardizer = Standardizer.fit(x)
    x = standardizer.transform(x)
    rng = rng_for(cfg.seed, "train", kind.value)
    train_rows, val_rows = _validation_split(x.shape[0], cfg.validation_fraction, rng)

    hidden = HIDDEN_SIZES[kind]
    weights = init_dense_weights(x.shape[1], hidden, cfg.seed)
    graph = build_dense_network(weights, len(hidden))
    optimizer = MomentumSGD(cfg.learning_rate, cfg.momentum)

    def val_loss(current: Mapping[str, Tensor]) -> float:
        bound = {"x": x[val_rows], "y": y[val_rows, None]}
        return float(evaluate(graph, bound, ["loss"], current)["loss"])

    best_weights, best_val, stale = weights, np.inf, 0
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = train_rows[rng.permutation(train_rows.size)]
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss, grads = value_and_gradient(graph, {"x": x[rows], "y": y[rows, None]}, "loss", list(weights), weights)
            weights = optimizer.step(weights, grads)
            total += loss * rows.size
        history.append(total / order.size)

        if val_rows.size == 0:
            best_weights = weights
            continue
        current = val_loss(weights)
        if current < best_val:
            best_weights, best_val, stale = weights, current, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.debug(f"{kind.short_name} early stop at epoch {epoch + 1}: validation loss {best_val:.5f}")
                break

    model_cls = LogisticModel if kind is ClassifierKind.LR else MlpModel
    model = model_cls(kind, standardizer, best_weights)
    logger.info(f"Trained {kind.short_name} for {len(history)} epochs: final training loss {history[-1]:.5f}")
    return model, history


def train_logistic(codes: ArrayLike, labels: ArrayLike, cfg: TrainConfig | None = None) -> LogisticModel:
    model, _ = _fit_dense(ClassifierKind.LR, codes, labels, cfg or TrainConfig())
    assert isinstance(model, LogisticModel)
    return model


def train_mlp(codes: ArrayLike, labels: ArrayLike, arch: ClassifierKind | str, cfg: TrainConfig | None = None) -> MlpModel:
    kind = ClassifierKind(arch)
    if kind not in (ClassifierKind.MLP2, ClassifierKind.MLP5):
        raise ValueError(f"unknown MLP architecture '{arch}', expected mlp2 or mlp5")
    model, _ = _fit_dense(kind, codes, labels, cfg or TrainConfig())
    assert isinstance(model, MlpModel)
    return model


def training_history(
    kind: ClassifierKind | str, codes: ArrayLike, labels: ArrayLike, cfg: TrainConfig | None = None
) -> list[float]:
    """
    Per-epoch mean training loss of a fresh fit
    """
    return _fit_dense(ClassifierKind(kind), codes, labels, cfg or TrainConfig())[1]
