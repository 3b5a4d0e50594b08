"""
Incremental PCA (Ross et al. style sequential SVD with a mean-correction row).

Fitting on a single batch is exactly batch PCA through the SVD of the centered data.
"""

import logging
import os
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from latent_forensics.autodiff import Tensor, load_tensors, save_tensors
from latent_forensics.errors import ShapeMismatchError
from latent_forensics.projectors.base import Projector, ProjectorKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcaModel:
    mean: Tensor
    components: Tensor
    explained_variance: Tensor
    singular_values: Tensor
    n_samples_seen: int

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, x: ArrayLike) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) @ self.components.T

    def inverse_transform(self, codes: ArrayLike) -> Tensor:
        return np.asarray(codes, dtype=np.float64) @ self.components + self.mean


def _svd_flip(u: Tensor, vt: Tensor) -> tuple[Tensor, Tensor]:
    # sign convention: the largest-magnitude entry of every right singular vector is positive
    signs = np.sign(vt[np.arange(vt.shape[0]), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    return u * signs, vt * signs[:, None]


class IncrementalPca:
    """
    Streaming fit; call `partial_fit` per batch then `model()`
    """

    def __init__(self, n_components: int):
        if n_components < 1:
            raise ValueError(f"n_components must be >= 1, got {n_components}")
        self.n_components: int = n_components
        self._mean: Tensor | None = None
        self._components: Tensor | None = None
        self._singular_values: Tensor | None = None
        self._n_seen: int = 0

    def partial_fit(self, batch: ArrayLike) -> "IncrementalPca":
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2:
            x = x.reshape(x.shape[0], -1)
        n_new = x.shape[0]
        if n_new == 0:
            return self
        if self._mean is not None and x.shape[1] != self._mean.shape[0]:
            raise ShapeMismatchError(f"batch has {x.shape[1]} features, model has {self._mean.shape[0]}")

        batch_mean = x.mean(axis=0)
        n_total = self._n_seen + n_new
        if self._mean is None or self._components is None or self._singular_values is None:
            stacked = x - batch_mean
            mean = batch_mean
        else:
            correction = np.sqrt(self._n_seen * n_new / n_total) * (self._mean - batch_mean)
            stacked = np.vstack([self._singular_values[:, None] * self._components, x - batch_mean, correction])
            mean = self._mean + (batch_mean - self._mean) * (n_new / n_total)

        u, s, vt = linalg.svd(stacked, full_matrices=False, check_finite=False)
        _, vt = _svd_flip(u, vt)
        keep = min(self.n_components, vt.shape[0])
        self._components = vt[:keep]
        self._singular_values = s[:keep]
        self._mean = mean
        self._n_seen = n_total
        return self

    def model(self) -> PcaModel:
        if self._components is None or self._mean is None or self._singular_values is None:
            raise ValueError("IncrementalPca has not seen any data")
        if self._n_seen < self.n_components or self._components.shape[0] < self.n_components:
            raise ValueError(f"need at least {self.n_components} samples to keep {self.n_components} components, saw {self._n_seen}")
        variance = self._singular_values**2 / max(self._n_seen - 1, 1)
        return PcaModel(
            mean=self._mean.copy(),
            components=self._components.copy(),
            explained_variance=variance,
            singular_values=self._singular_values.copy(),
            n_samples_seen=self._n_seen,
        )


def pca_fit_incremental(batches: Iterable[ArrayLike], d_prime: int) -> PcaModel:
    """
    Fit the top-d' principal subspace from a stream of batches (images or vectors)
    """
    fitter = IncrementalPca(d_prime)
    for batch in batches:
        fitter.partial_fit(batch)
    model = fitter.model()
    logger.info(f"Fitted incremental PCA: {model.n_components} components from {model.n_samples_seen} samples")
    return model


def batched(data: ArrayLike, batch_size: int) -> list[Tensor]:
    array = np.asarray(data, dtype=np.float64)
    return [array[start : start + batch_size] for start in range(0, array.shape[0], batch_size)]


class PcaProjector(Projector):
    kind = ProjectorKind.PCA

    def __init__(self, model: PcaModel, image_shape: tuple[int, ...]):
        self.model: PcaModel = model
        self.image_shape: tuple[int, ...] = tuple(image_shape)

    @property
    def code_shape(self) -> tuple[int, ...]:
        return (self.model.n_components,)

    def _project(self, images: Tensor) -> Tensor:
        return self.model.transform(images.reshape(images.shape[0], -1))

    def _reconstruct(self, codes: Tensor) -> Tensor:
        flat = self.model.inverse_transform(codes)
        return np.clip(flat, 0.0, 1.0).reshape((codes.shape[0], *self.image_shape))

    @classmethod
    def fit(cls, images: ArrayLike, d_prime: int, batch_size: int) -> "PcaProjector":
        images = np.asarray(images, dtype=np.float64)
        model = pca_fit_incremental(batched(images.reshape(images.shape[0], -1), batch_size), d_prime)
        return cls(model, images.shape[1:])

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        tensors = {
            "mean": self.model.mean,
            "components": self.model.components,
            "explained_variance": self.model.explained_variance,
            "singular_values": self.model.singular_values,
            "image_shape": np.array(self.image_shape, dtype=np.float64),
        }
        meta = {"kind": self.kind.value, "n_samples_seen": str(self.model.n_samples_seen), **(metadata or {})}
        return save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "PcaProjector":
        tensors, metadata = load_tensors(path)
        model = PcaModel(
            mean=tensors["mean"],
            components=tensors["components"],
            explained_variance=tensors["explained_variance"],
            singular_values=tensors["singular_values"],
            n_samples_seen=int(metadata["n_samples_seen"]),
        )
        return cls(model, tuple(int(e) for e in tensors["image_shape"]))
