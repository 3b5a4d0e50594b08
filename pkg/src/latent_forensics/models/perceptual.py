"""
Perceptual distance from a frozen, seeded random-feature pyramid.

Two convolution stages (3->16 and 16->32 channels, 3x3, relu) with factor-2 average
pooling between them. Each stage's activations are unit-normalized across channels at
every location; the distance sums, over stages, the per-location squared difference
averaged over spatial positions.
"""

import logging
from collections.abc import Sequence
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.autodiff import ComputationGraph, GraphBuilder, Tensor, evaluate
from latent_forensics.errors import ShapeMismatchError
from latent_forensics.models.layers import he_normal
from latent_forensics.utils.seeding import rng_for

if TYPE_CHECKING:
    from latent_forensics.projectors.base import Projector
    from latent_forensics.world.dataset import LabeledImage

logger = logging.getLogger(__name__)

STAGE_CHANNELS = ((3, 16), (16, 32))
CI_Z = 1.96


class FeatureExtractor:
    """
    Immutable perceptual feature network; weights are a pure function of `seed`
    """

    def __init__(self, seed: int = 0):
        self.seed: int = seed
        rng = rng_for(seed, "perceptual")
        self._weights: dict[str, Tensor] = {}
        for stage, (c_in, c_out) in enumerate(STAGE_CHANNELS):
            self._weights[f"lp/conv{stage}"] = he_normal(rng, (c_out, c_in, 3, 3))
            self._weights[f"lp/conv{stage}_b"] = rng.standard_normal((c_out, 1, 1)) * 0.1
        for value in self._weights.values():
            value.flags.writeable = False
        self._graph: ComputationGraph = self._build()

    def add_features(self, b: GraphBuilder, x: str, prefix: str | None = None) -> list[str]:
        """
        Append the feature pyramid for images at node `x`; returns one node per stage.

        Parameters are shared between calls on the same builder.
        """
        features: list[str] = []
        h = x
        for stage in range(len(STAGE_CHANNELS)):
            kernel, bias = f"lp/conv{stage}", f"lp/conv{stage}_b"
            for name in (kernel, bias):
                if name not in b:
                    b.param(name, self._weights[name])
            if stage > 0:
                h = b.avg_pool2(h)
            h = b.relu(b.conv_bias(h, kernel, bias))
            features.append(b.channel_normalize(h, name=f"{prefix}{stage}" if prefix else None))
        return features

    @staticmethod
    def add_distance(b: GraphBuilder, x_features: Sequence[str], y_features: Sequence[str], image_size: int) -> str:
        """
        Per-sample distance node of shape (N,) between two feature pyramids of
        `image_size` x `image_size` images
        """
        total: str | None = None
        for stage, (fx, fy) in enumerate(zip(x_features, y_features, strict=True)):
            spatial = (image_size >> stage) ** 2
            term = b.scale(b.sum_squares(b.sub(fx, fy), per_sample=True), 1.0 / spatial)
            total = term if total is None else b.add(total, term)
        if total is None:
            raise ValueError("feature pyramids are empty")
        return total

    def _build(self) -> ComputationGraph:
        b = GraphBuilder()
        self.add_features(b, b.input("x"), prefix="f")
        return b.build()

    def features(self, images: ArrayLike) -> list[Tensor]:
        batch = as_image_batch(images)
        names = [f"f{stage}" for stage in range(len(STAGE_CHANNELS))]
        values = evaluate(self._graph, {"x": batch}, names)
        return [values[name] for name in names]

    def distance_batch(self, xs: ArrayLike, ys: ArrayLike) -> Tensor:
        xs, ys = as_image_batch(xs), as_image_batch(ys)
        if xs.shape != ys.shape:
            raise ShapeMismatchError(f"cannot compare images of shapes {xs.shape} and {ys.shape}")
        return features_distance(self.features(xs), self.features(ys))


def features_distance(fx: Sequence[Tensor], fy: Sequence[Tensor]) -> Tensor:
    total = np.zeros(fx[0].shape[0])
    for a, b in zip(fx, fy, strict=True):
        total += ((a - b) ** 2).sum(axis=(1, 2, 3)) / (a.shape[2] * a.shape[3])
    return total


def as_image_batch(images: ArrayLike) -> Tensor:
    array = np.asarray(images, dtype=np.float64)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[1] != 3:
        raise ShapeMismatchError(f"expected images of shape (N, 3, H, W), got {array.shape}")
    return array


def perceptual_distance(x: ArrayLike, y: ArrayLike, extractor: FeatureExtractor) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"cannot compare images of shapes {x.shape} and {y.shape}")
    return float(extractor.distance_batch(x, y)[0])


def mean_with_ci(values: ArrayLike) -> tuple[float, float]:
    """
    Sample mean and normal-approximation 95% half-width (1.96 s / sqrt(n))
    """
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ValueError("cannot summarize an empty sample")
    spread = float(array.std(ddof=1)) if array.size > 1 else 0.0
    return float(array.mean()), CI_Z * spread / np.sqrt(array.size)


def reconstruction_benchmark(
    p: "Projector",
    data: Sequence[ArrayLike],
    extractor: FeatureExtractor,
    n: int = 250,
    codes: ArrayLike | None = None,
) -> tuple[float, float]:
    """
    Mean perceptual distance between the first `n` images and their reconstructions,
    with its 95% confidence half-width.

    `codes`, when given, are precomputed projections of `data` (row-aligned) and skip
    the projection step.
    """
    if n <= 0:
        raise ValueError(f"benchmark needs n > 0, got {n}")
    if n > len(data):
        raise ValueError(f"benchmark asked for {n} images but only {len(data)} are available")

    images = np.stack([np.asarray(x, dtype=np.float64) for x in data[:n]])
    projected = p.project_batch(images) if codes is None else np.asarray(codes, dtype=np.float64)[:n]
    reconstructions = p.reconstruct_batch(projected)
    mean, ci = mean_with_ci(extractor.distance_batch(images, reconstructions))
    logger.info(f"Reconstruction benchmark [{p.kind.value}] n={n}: {mean:.5f} +/- {ci:.5f}")
    return mean, ci


def reconstruction_benchmark_by_label(
    p: "Projector",
    data: Sequence["LabeledImage"],
    extractor: FeatureExtractor,
    n: int = 250,
    codes: ArrayLike | None = None,
) -> dict[str, tuple[int, float, float]]:
    """
    Benchmark run separately per label plus pooled ("all"); each entry is (n, mean, ci95).

    Every group uses its first min(n, group size) images.
    """
    groups: dict[str, list[int]] = {"all": list(range(len(data)))}
    for k, item in enumerate(data):
        groups.setdefault(item.label.value, []).append(k)
    all_codes = None if codes is None else np.asarray(codes, dtype=np.float64)

    summary: dict[str, tuple[int, float, float]] = {}
    for label in sorted(groups):
        count = min(n, len(groups[label]))
        if count == 0:
            continue
        rows = groups[label][:count]
        images = [data[k].image for k in rows]
        group_codes = None if all_codes is None else all_codes[rows]
        mean, ci = reconstruction_benchmark(p, images, extractor, count, group_codes)
        summary[label] = (count, mean, ci)
    return summary
