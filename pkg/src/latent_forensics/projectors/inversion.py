"""
Generator inversion: recover the StyleCode whose synthesis best matches an image.

The objective for a target x is Lp(G(w), x) + alpha * pixel(G(w), x), with the pixel
term taken as the per-location squared RGB error averaged over the 32x32 positions.
Every image keeps its own step size; a step that raises that image's loss is retried
with the step halved, and after `max_halvings` failed retries the step is dropped and
the image's velocity reset, so the recorded loss of every image never increases.
"""

import json
import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
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
from latent_forensics.config import Config
from latent_forensics.errors import InversionDivergedError, NonFiniteError, ShapeMismatchError
from latent_forensics.models.generator import IMAGE_SHAPE, IMAGE_SIZE, GeneratorModel, sample_z
from latent_forensics.models.layers import glorot_normal, he_normal
from latent_forensics.models.perceptual import STAGE_CHANNELS, FeatureExtractor
from latent_forensics.projectors.base import Projector, ProjectorKind
from latent_forensics.utils.parallel import parallel_map
from latent_forensics.utils.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

MIXING_PROBABILITY = 0.5


class InitKind(str, Enum):
    MEAN_W = "mean_w"
    ENCODER = "encoder"
    RANDOM = "random"


class InversionConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(default=100, ge=0)
    step_size: float = Field(default=0.05, gt=0.0)
    alpha: float = Field(default=1.0, ge=0.0)
    init: InitKind = InitKind.MEAN_W
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    max_halvings: int = Field(default=5, ge=0)
    batch_size: int = Field(default=Config.INVERSION_BATCH_SIZE, ge=1)


class InversionObjective:
    """
    Batched inversion loss over codes (N, C, d); per-sample losses are independent, so
    the gradient of their sum w.r.t. code i is the gradient of loss i alone
    """

    def __init__(self, g: GeneratorModel, extractor: FeatureExtractor, alpha: float):
        self.g: GeneratorModel = g
        self.extractor: FeatureExtractor = extractor
        self.alpha: float = alpha
        self._graph: ComputationGraph = self._build()

    @property
    def graph(self) -> ComputationGraph:
        return self._graph

    def _build(self) -> ComputationGraph:
        b = GraphBuilder()
        w = b.input("w")
        target = b.input("target")
        target_features = [b.input(f"target_f{stage}") for stage in range(len(STAGE_CHANNELS))]

        image = self.g.add_synthesis(b, w, output="image")
        perceptual = FeatureExtractor.add_distance(
            b, self.extractor.add_features(b, image), target_features, IMAGE_SIZE
        )
        pixel = b.scale(b.sum_squares(b.sub(image, target), per_sample=True), self.alpha / IMAGE_SIZE**2)
        losses = b.add(perceptual, pixel, name="losses")
        b.sum(losses, name="total")
        return b.build()

    def targets(self, images: Tensor) -> dict[str, Tensor]:
        bound = {"target": images}
        for stage, value in enumerate(self.extractor.features(images)):
            bound[f"target_f{stage}"] = value
        return bound

    def losses(self, w: Tensor, targets: Mapping[str, Tensor]) -> Tensor:
        return evaluate(self._graph, {**targets, "w": w}, ["losses"])["losses"]

    def losses_and_gradient(self, w: Tensor, targets: Mapping[str, Tensor]) -> tuple[Tensor, Tensor]:
        values, grads = forward_backward(self._graph, {**targets, "w": w}, "total", ["w"], ["losses"])
        return values["losses"], grads["w"]


def _subset(targets: Mapping[str, Tensor], rows: Tensor) -> dict[str, Tensor]:
    return {name: value[rows] for name, value in targets.items()}


@dataclass
class InversionResult:
    codes: Tensor
    losses: Tensor
    # history[k] holds the per-image losses after k iterations; history[0] is the init
    history: list[Tensor] = field(default_factory=list)


def _optimize(
    objective: InversionObjective, images: Tensor, init: Tensor, cfg: InversionConfig
) -> InversionResult:
    targets = objective.targets(images)
    w = init.copy()
    n = w.shape[0]
    eta = np.full(n, cfg.step_size)
    velocity = np.zeros_like(w)

    try:
        losses, grad = objective.losses_and_gradient(w, targets)
    except NonFiniteError as e:
        raise InversionDivergedError(0, str(e)) from e
    history = [losses.copy()]

    for iteration in range(1, cfg.steps + 1):
        pending = np.arange(n)
        halvings = np.zeros(n, dtype=int)
        while pending.size:
            shrink = (0.5 ** halvings[pending])[:, None, None]
            step = shrink * cfg.momentum * velocity[pending] - eta[pending][:, None, None] * grad[pending]
            candidate = w[pending] + step
            try:
                candidate_losses = objective.losses(candidate, _subset(targets, pending))
            except NonFiniteError as e:
                raise InversionDivergedError(iteration, str(e)) from e

            improved = candidate_losses <= losses[pending]
            accepted = pending[improved]
            w[accepted] = candidate[improved]
            velocity[accepted] = step[improved]
            losses[accepted] = candidate_losses[improved]

            failed = pending[~improved]
            exhausted = failed[halvings[failed] >= cfg.max_halvings]
            velocity[exhausted] = 0.0
            pending = np.setdiff1d(failed, exhausted)
            halvings[pending] += 1
            eta[pending] *= 0.5

        try:
            _, grad = objective.losses_and_gradient(w, targets)
        except NonFiniteError as e:
            raise InversionDivergedError(iteration, str(e)) from e
        history.append(losses.copy())
        logger.debug(f"Inversion iteration {iteration}/{cfg.steps}: mean loss {losses.mean():.5f}")

    return InversionResult(codes=w, losses=losses, history=history)


def _invert_chunk(task: tuple[GeneratorModel, FeatureExtractor, InversionConfig, Tensor, Tensor]) -> InversionResult:
    g, extractor, cfg, images, init = task
    return _optimize(InversionObjective(g, extractor, cfg.alpha), images, init, cfg)


def initial_codes(
    g: GeneratorModel,
    images: Tensor,
    cfg: InversionConfig,
    encoder: "EncoderModel | None" = None,
    seed: int = 0,
    first_index: int = 0,
) -> Tensor:
    n = images.shape[0]
    if cfg.init is InitKind.ENCODER:
        if encoder is None:
            raise ValueError("inversion init 'encoder' requires a trained encoder")
        return encoder.predict(images)
    if cfg.init is InitKind.RANDOM:
        zs = np.stack([sample_z(derive_seed(seed, "init", first_index + i), g.config.d_z) for i in range(n)])
        return g.map_batch(zs)
    return np.repeat(np.asarray(g.mean_w)[None], n, axis=0)


def invert_batch(
    g: GeneratorModel,
    images: ArrayLike,
    cfg: InversionConfig,
    encoder: "EncoderModel | None" = None,
    seed: int = 0,
    extractor: FeatureExtractor | None = None,
    workers: int = 1,
) -> InversionResult:
    """
    Invert a stack of images in fixed batches of `cfg.batch_size`.

    Batches are processed independently (in parallel with `workers > 1`); the result
    does not depend on the worker count.
    """
    batch = np.asarray(images, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != IMAGE_SHAPE:
        raise ShapeMismatchError(f"inversion expects images (N, *{IMAGE_SHAPE}), got {batch.shape}")
    if cfg.init is InitKind.ENCODER and encoder is None:
        raise ValueError("inversion init 'encoder' requires a trained encoder")
    extractor = extractor or FeatureExtractor()

    tasks = []
    for start in range(0, batch.shape[0], cfg.batch_size):
        chunk = batch[start : start + cfg.batch_size]
        tasks.append((g, extractor, cfg, chunk, initial_codes(g, chunk, cfg, encoder, seed, start)))

    results = parallel_map(_invert_chunk, tasks, workers)
    if not results:
        return InversionResult(codes=np.zeros((0, *g.code_shape)), losses=np.zeros(0), history=[])
    history = [np.concatenate(step) for step in zip(*(r.history for r in results), strict=True)]
    merged = InversionResult(
        codes=np.concatenate([r.codes for r in results]),
        losses=np.concatenate([r.losses for r in results]),
        history=history,
    )
    logger.info(f"Inverted {batch.shape[0]} images in {cfg.steps} steps: mean final loss {merged.losses.mean():.5f}")
    return merged


def invert(
    g: GeneratorModel,
    x: ArrayLike,
    cfg: InversionConfig,
    e: "EncoderModel | None" = None,
    seed: int = 0,
    extractor: FeatureExtractor | None = None,
) -> tuple[Tensor, float]:
    image = np.asarray(x, dtype=np.float64)
    if image.shape != IMAGE_SHAPE:
        raise ShapeMismatchError(f"inversion expects an image of shape {IMAGE_SHAPE}, got {image.shape}")
    result = invert_batch(g, image[None], cfg, e, seed, extractor)
    return result.codes[0], float(result.losses[0])


# ---- encoder ----


class EncoderSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = False
    n_pairs: int = Field(default=1024, ge=1)
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=32, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    seed: int | None = Field(default=None, ge=0)


ENCODER_CHANNELS = ((8, 3), (16, 8), (16, 16))


def init_encoder_weights(code_shape: tuple[int, int], seed: int) -> dict[str, Tensor]:
    rng = rng_for(seed, "encoder")
    weights: dict[str, Tensor] = {}
    for stage, (c_out, c_in) in enumerate(ENCODER_CHANNELS):
        weights[f"enc/conv{stage}"] = he_normal(rng, (c_out, c_in, 3, 3))
        weights[f"enc/conv{stage}_b"] = np.zeros((c_out, 1, 1))
    flat = ENCODER_CHANNELS[-1][0] * (IMAGE_SIZE // 8) ** 2
    weights["enc/head"] = glorot_normal(rng, (flat, code_shape[0] * code_shape[1])) * 0.1
    weights["enc/head_b"] = np.zeros(code_shape[0] * code_shape[1])
    return weights


class EncoderModel:
    """
    Image -> StyleCode regressor; predicts an offset from the generator's mean code
    """

    def __init__(self, code_shape: tuple[int, int], mean_w: ArrayLike, weights: Mapping[str, ArrayLike]):
        self.code_shape: tuple[int, int] = (int(code_shape[0]), int(code_shape[1]))
        self.mean_w: Tensor = np.asarray(mean_w, dtype=np.float64)
        self.weights: dict[str, Tensor] = {name: np.asarray(value, dtype=np.float64) for name, value in weights.items()}
        self._graph: ComputationGraph = self._build()

    def _build(self) -> ComputationGraph:
        b = GraphBuilder()
        h = b.input("x")
        target = b.input("w_target")
        p = {name: b.param(name, value) for name, value in self.weights.items()}
        for stage in range(len(ENCODER_CHANNELS)):
            h = b.avg_pool2(b.relu(b.conv_bias(h, p[f"enc/conv{stage}"], p[f"enc/conv{stage}_b"])))
        h = b.reshape(h, (-1, ENCODER_CHANNELS[-1][0] * (IMAGE_SIZE // 8) ** 2))
        offset = b.reshape(b.dense(h, p["enc/head"], p["enc/head_b"]), (-1, *self.code_shape))
        prediction = b.add(offset, b.const(self.mean_w), name="prediction")
        residual = b.sub(prediction, target)
        b.mean(b.mul(residual, residual), name="loss")
        return b.build()

    def predict(self, images: ArrayLike) -> Tensor:
        batch = np.asarray(images, dtype=np.float64)
        if batch.ndim == 3:
            return self.predict(batch[None])[0]
        return evaluate(self._graph, {"x": batch}, ["prediction"])["prediction"]

    def loss_and_gradients(
        self, images: Tensor, codes: Tensor, weights: Mapping[str, Tensor] | None = None
    ) -> tuple[float, dict[str, Tensor]]:
        values, grads = forward_backward(
            self._graph, {"x": images, "w_target": codes}, "loss", list(self.weights), (), weights or self.weights
        )
        return float(values["loss"]), grads

    def regression_mse(self, images: ArrayLike, codes: ArrayLike) -> float:
        return float(np.mean((self.predict(images) - np.asarray(codes, dtype=np.float64)) ** 2))

    def save(self, path: str | os.PathLike[str], metadata: Mapping[str, str] | None = None) -> Path:
        meta = {"kind": "encoder", "code_shape": json.dumps(list(self.code_shape)), **(metadata or {})}
        return save_tensors(path, {**self.weights, "mean_w": self.mean_w}, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "EncoderModel":
        tensors, metadata = load_tensors(path)
        mean_w = tensors.pop("mean_w")
        return cls(tuple(json.loads(metadata["code_shape"])), mean_w, tensors)


def sample_training_pairs(g: GeneratorModel, n_pairs: int, seed: int) -> tuple[Tensor, Tensor]:
    """
    (images, codes) drawn from the generator; half the codes are style mixes of two
    mapped vectors at a random crossover so the encoder sees per-channel variation
    """
    rng = rng_for(seed, "encoder_pairs")
    channels = g.config.channels
    codes = g.map_batch(rng.standard_normal((n_pairs, g.config.d_z)))
    donors = g.map_batch(rng.standard_normal((n_pairs, g.config.d_z)))
    if channels > 1:
        mixed = rng.random(n_pairs) < MIXING_PROBABILITY
        crossovers = rng.integers(1, channels, size=n_pairs)
        for i in np.flatnonzero(mixed):
            codes[i, crossovers[i] :] = donors[i, crossovers[i] :]
    return g.synthesize_batch(codes), codes


def train_encoder(
    g: GeneratorModel,
    n_pairs: int,
    epochs: int,
    seed: int,
    settings: EncoderSettings | None = None,
) -> EncoderModel:
    settings = settings or EncoderSettings()
    images, codes = sample_training_pairs(g, n_pairs, seed)
    rng = rng_for(seed, "encoder_train")

    weights = init_encoder_weights(g.code_shape, seed)
    model = EncoderModel(g.code_shape, g.mean_w, weights)
    optimizer = Adam(settings.learning_rate)
    for epoch in range(epochs):
        order = rng.permutation(n_pairs)
        total = 0.0
        for start in range(0, n_pairs, settings.batch_size):
            rows = order[start : start + settings.batch_size]
            loss, grads = model.loss_and_gradients(images[rows], codes[rows], weights)
            weights = optimizer.step(weights, grads)
            total += loss * len(rows)
        logger.debug(f"Encoder epoch {epoch + 1}/{epochs}: code MSE {total / n_pairs:.5f}")

    model = EncoderModel(g.code_shape, g.mean_w, weights)
    logger.info(f"Trained encoder on {n_pairs} generator pairs for {epochs} epochs")
    return model


class GanInversionProjector(Projector):
    kind = ProjectorKind.GAN_INVERSION

    def __init__(
        self,
        generator: GeneratorModel,
        config: InversionConfig | None = None,
        extractor: FeatureExtractor | None = None,
        encoder: EncoderModel | None = None,
        seed: int = 0,
        workers: int = 1,
    ):
        self.generator: GeneratorModel = generator
        self.config: InversionConfig = config or InversionConfig()
        self.extractor: FeatureExtractor = extractor or FeatureExtractor()
        self.encoder: EncoderModel | None = encoder
        self.seed: int = seed
        self.workers: int = workers

    @property
    def code_shape(self) -> tuple[int, ...]:
        return self.generator.code_shape

    def project_with_losses(self, images: ArrayLike) -> InversionResult:
        return invert_batch(self.generator, images, self.config, self.encoder, self.seed, self.extractor, self.workers)

    def _project(self, images: Tensor) -> Tensor:
        return self.project_with_losses(images).codes

    def _reconstruct(self, codes: Tensor) -> Tensor:
        return self.generator.synthesize_batch(codes)

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        tensors = {} if self.encoder is None else {**self.encoder.weights, "mean_w": self.encoder.mean_w}
        meta = {
            "kind": self.kind.value,
            "inversion_config": self.config.model_dump_json(),
            "seed": str(self.seed),
            "has_encoder": str(self.encoder is not None).lower(),
            **(metadata or {}),
        }
        return save_tensors(path, tensors, meta)

    @classmethod
    def load(
        cls, path: str | os.PathLike[str], generator: GeneratorModel, extractor: FeatureExtractor | None = None
    ) -> "GanInversionProjector":
        tensors, metadata = load_tensors(path)
        config = InversionConfig.model_validate(json.loads(metadata["inversion_config"]))
        encoder = None
        if metadata.get("has_encoder") == "true":
            mean_w = tensors.pop("mean_w")
            encoder = EncoderModel(generator.code_shape, mean_w, tensors)
        return cls(generator, config, extractor, encoder, int(metadata["seed"]))
