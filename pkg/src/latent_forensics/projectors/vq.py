"""
Single-level vector-quantized autoencoder.

The encoder maps a 3x32x32 image to an 8x8 grid of d_c-dimensional vectors, each snapped
to its nearest codebook row. Gradients cross the quantizer with the straight-through
estimator; the codebook itself follows an exponential moving average of the encoder
outputs assigned to each row, with Laplace-smoothed cluster sizes.
"""

import json
import logging
import os
from collections.abc import Mapping
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import (
    Adam,
    ComputationGraph,
    GraphBuilder,
    Tensor,
    evaluate,
    forward_backward,
    load_tensors,
    save_tensors,
)
from latent_forensics.models.layers import he_normal
from latent_forensics.projectors.base import Projector, ProjectorKind
from latent_forensics.utils.seeding import rng_for

logger = logging.getLogger(__name__)

GRID = 8
EMA_EPS = 1e-5


class VqSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = True
    codebook_size: int = Field(default=64, ge=2)
    code_dim: int = Field(default=8, ge=1)
    hidden: int = Field(default=16, ge=1)
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    commitment: float = Field(default=0.25, ge=0.0)
    decay: float = Field(default=0.99, gt=0.0, lt=1.0)
    seed: int | None = Field(default=None, ge=0)


def init_vq_weights(settings: VqSettings, seed: int) -> dict[str, Tensor]:
    rng = rng_for(seed, "vq")
    h, d_c = settings.hidden, settings.code_dim
    layout = {
        "enc0": (h, 3),
        "enc1": (h, h),
        "enc2": (d_c, h),
        "dec0": (h, d_c),
        "dec1": (h, h),
        "dec2": (3, h),
    }
    weights: dict[str, Tensor] = {}
    for name, (c_out, c_in) in layout.items():
        weights[f"vq/{name}"] = he_normal(rng, (c_out, c_in, 3, 3))
        weights[f"vq/{name}_b"] = np.zeros((c_out, 1, 1))
    return weights


def nearest_codes(vectors: Tensor, codebook: Tensor) -> Tensor:
    """
    Index of the nearest codebook row (squared L2) for every row of `vectors`; ties go to the lower index
    """
    distances = (
        (vectors * vectors).sum(axis=1, keepdims=True) - 2.0 * vectors @ codebook.T + (codebook * codebook).sum(axis=1)[None, :]
    )
    return np.argmin(distances, axis=1)


def _grid_to_rows(z: Tensor) -> Tensor:
    # (N, d_c, 8, 8) -> (N * 64, d_c)
    return z.transpose(0, 2, 3, 1).reshape(-1, z.shape[1])


def _rows_to_grid(rows: Tensor, n: int) -> Tensor:
    return rows.reshape(n, GRID, GRID, -1).transpose(0, 3, 1, 2)


class VqModel:
    """
    Encoder, codebook and decoder; immutable once built
    """

    def __init__(self, settings: VqSettings, weights: Mapping[str, ArrayLike], codebook: ArrayLike):
        self.settings: VqSettings = settings
        self.weights: dict[str, Tensor] = {name: np.asarray(value, dtype=np.float64) for name, value in weights.items()}
        self.codebook: Tensor = np.asarray(codebook, dtype=np.float64)
        self._graph: ComputationGraph = self._build()

    @property
    def codebook_size(self) -> int:
        return self.codebook.shape[0]

    def _build(self) -> ComputationGraph:
        b = GraphBuilder()
        x = b.input("x")
        zq = b.input("zq")
        p = {name: b.param(name, value) for name, value in self.weights.items()}

        h = b.avg_pool2(b.relu(b.conv_bias(x, p["vq/enc0"], p["vq/enc0_b"])))
        h = b.avg_pool2(b.relu(b.conv_bias(h, p["vq/enc1"], p["vq/enc1_b"])))
        z_e = b.conv_bias(h, p["vq/enc2"], p["vq/enc2_b"], name="z_e")

        z = b.straight_through(z_e, zq)
        h = b.upsample2(b.relu(b.conv_bias(z, p["vq/dec0"], p["vq/dec0_b"])))
        h = b.upsample2(b.relu(b.conv_bias(h, p["vq/dec1"], p["vq/dec1_b"])))
        x_hat = b.sigmoid(b.conv_bias(h, p["vq/dec2"], p["vq/dec2_b"]), name="x_hat")

        residual = b.sub(x_hat, x)
        recon = b.mean(b.mul(residual, residual), name="recon")
        commit = b.sub(z_e, zq)
        commitment = b.mean(b.mul(commit, commit))
        b.add(recon, b.scale(commitment, self.settings.commitment), name="loss")
        return b.build()

    def encode(self, images: ArrayLike, weights: Mapping[str, Tensor] | None = None) -> Tensor:
        values = evaluate(self._graph, {"x": np.asarray(images, dtype=np.float64)}, ["z_e"], weights)
        return values["z_e"]

    def quantize(self, z_e: Tensor) -> Tensor:
        """
        Integer index grid (N, 8, 8) for encoder outputs (N, d_c, 8, 8)
        """
        return nearest_codes(_grid_to_rows(z_e), self.codebook).reshape(z_e.shape[0], GRID, GRID)

    def lookup(self, indices: ArrayLike) -> Tensor:
        idx = np.asarray(indices).astype(np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.codebook_size):
            raise ValueError(f"code indices must lie in [0, {self.codebook_size})")
        return _rows_to_grid(self.codebook[idx.reshape(-1)], idx.shape[0])

    def decode(self, indices: ArrayLike) -> Tensor:
        zq = self.lookup(indices)
        n = zq.shape[0]
        # the encoder branch is not evaluated for the decoder output, but "x" must be bound
        dummy = np.zeros((n, 3, GRID * 4, GRID * 4))
        return evaluate(self._graph, {"x": dummy, "zq": zq}, ["x_hat"])["x_hat"]

    def loss_and_gradients(
        self, images: ArrayLike, weights: Mapping[str, Tensor] | None = None
    ) -> tuple[float, float, dict[str, Tensor], Tensor]:
        """
        Total loss, reconstruction MSE, parameter gradients and encoder outputs for one batch
        """
        x = np.asarray(images, dtype=np.float64)
        current = weights or self.weights
        z_e = self.encode(x, current)
        zq = _rows_to_grid(self.codebook[nearest_codes(_grid_to_rows(z_e), self.codebook)], x.shape[0])
        inputs = {"x": x, "zq": zq}
        values, grads = forward_backward(self._graph, inputs, "loss", list(self.weights), ["recon"], current)
        return float(values["loss"]), float(values["recon"]), grads, z_e

    def save(self, path: str | os.PathLike[str], metadata: Mapping[str, str] | None = None) -> Path:
        meta = {"kind": ProjectorKind.VQ.value, "vq_settings": self.settings.model_dump_json(), **(metadata or {})}
        return save_tensors(path, {**self.weights, "codebook": self.codebook}, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "VqModel":
        tensors, metadata = load_tensors(path)
        settings = VqSettings.model_validate(json.loads(metadata["vq_settings"]))
        codebook = tensors.pop("codebook")
        return cls(settings, tensors, codebook)


class _EmaCodebook:
    def __init__(self, codebook: Tensor, decay: float):
        self.decay: float = decay
        self.cluster_size: Tensor = np.ones(codebook.shape[0])
        self.embed_sum: Tensor = codebook.copy()

    def update(self, vectors: Tensor, codebook: Tensor) -> Tensor:
        indices = nearest_codes(vectors, codebook)
        k = codebook.shape[0]
        one_hot = np.zeros((vectors.shape[0], k))
        one_hot[np.arange(vectors.shape[0]), indices] = 1.0

        self.cluster_size = self.decay * self.cluster_size + (1.0 - self.decay) * one_hot.sum(axis=0)
        total = self.cluster_size.sum()
        smoothed = (self.cluster_size + EMA_EPS) / (total + k * EMA_EPS) * total
        self.embed_sum = self.decay * self.embed_sum + (1.0 - self.decay) * (one_hot.T @ vectors)
        return self.embed_sum / smoothed[:, None]


def vq_train(data: ArrayLike, epochs: int, seed: int, settings: VqSettings | None = None) -> tuple[VqModel, list[float]]:
    """
    Train encoder/decoder with Adam and the codebook by EMA; returns the model and
    the mean reconstruction MSE of every epoch
    """
    settings = settings or VqSettings()
    if epochs < 1:
        raise ValueError(f"vq_train needs at least one epoch, got {epochs}")
    images = np.asarray(data, dtype=np.float64)
    if images.shape[0] == 0:
        raise ValueError("vq_train needs at least one image")
    rng = rng_for(seed, "vq_train")

    weights = init_vq_weights(settings, seed)
    model = VqModel(settings, weights, np.zeros((settings.codebook_size, settings.code_dim)))

    # seed the codebook with encoder outputs drawn from the training data
    rows = _grid_to_rows(model.encode(images[: min(len(images), 256)]))
    picks = rng.choice(rows.shape[0], settings.codebook_size, replace=rows.shape[0] < settings.codebook_size)
    codebook = rows[picks] + rng.normal(0.0, 1e-3, size=(settings.codebook_size, settings.code_dim))
    ema = _EmaCodebook(codebook, settings.decay)
    optimizer = Adam(settings.learning_rate)

    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(images.shape[0])
        total, count = 0.0, 0
        for start in range(0, len(order), settings.batch_size):
            batch = images[order[start : start + settings.batch_size]]
            model = VqModel(settings, weights, codebook)
            _, recon, grads, z_e = model.loss_and_gradients(batch)
            weights = optimizer.step(weights, grads)
            codebook = ema.update(_grid_to_rows(z_e), codebook)
            total += recon * len(batch)
            count += len(batch)
        history.append(total / count)
        logger.debug(f"VQ epoch {epoch + 1}/{epochs}: reconstruction MSE {history[-1]:.5f}")

    logger.info(f"Trained VQ autoencoder: final reconstruction MSE {history[-1]:.5f}")
    return VqModel(settings, weights, codebook), history


class VqProjector(Projector):
    kind = ProjectorKind.VQ

    def __init__(self, model: VqModel):
        self.model: VqModel = model

    @property
    def code_shape(self) -> tuple[int, ...]:
        return (GRID, GRID)

    def _project(self, images: Tensor) -> Tensor:
        return self.model.quantize(self.model.encode(images)).astype(np.float64)

    def _reconstruct(self, codes: Tensor) -> Tensor:
        return self.model.decode(codes)

    def classifier_features(self, codes: ArrayLike) -> Tensor:
        # raw indices scaled to [0, 1]
        return super().classifier_features(codes) / self.model.codebook_size

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        return self.model.save(path, metadata)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "VqProjector":
        return cls(VqModel.load(path))
