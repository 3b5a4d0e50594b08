import logging
import os
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.autodiff import Tensor
from latent_forensics.errors import ShapeMismatchError
from latent_forensics.models.generator import IMAGE_SHAPE

logger = logging.getLogger(__name__)


class ProjectorKind(str, Enum):
    PCA = "pca"
    VQ = "vq"
    GAN_INVERSION = "gan_inversion"
    IDENTITY = "identity"

    @property
    def short_name(self) -> str:
        return {"pca": "PCA", "vq": "VQ", "gan_inversion": "SG", "identity": "ID"}[self.value]


class Projector(ABC):
    """
    Dimensionality reducer P with a matching reconstruction map.

    Subclasses implement the batched methods; single-image methods wrap them.
    """

    kind: ProjectorKind

    @property
    @abstractmethod
    def code_shape(self) -> tuple[int, ...]: ...

    @abstractmethod
    def _project(self, images: Tensor) -> Tensor: ...

    @abstractmethod
    def _reconstruct(self, codes: Tensor) -> Tensor: ...

    def project_batch(self, images: ArrayLike) -> Tensor:
        batch = np.asarray(images, dtype=np.float64)
        if batch.ndim != 4 or batch.shape[1:] != IMAGE_SHAPE:
            raise ShapeMismatchError(f"{self.kind.value} projector expects images (N, *{IMAGE_SHAPE}), got {batch.shape}")
        return self._project(batch)

    def reconstruct_batch(self, codes: ArrayLike) -> Tensor:
        batch = np.asarray(codes, dtype=np.float64)
        if batch.shape[1:] != self.code_shape:
            raise ShapeMismatchError(f"{self.kind.value} projector expects codes (N, *{self.code_shape}), got {batch.shape}")
        return self._reconstruct(batch)

    def project(self, x: ArrayLike) -> Tensor:
        return self.project_batch(np.asarray(x, dtype=np.float64)[None])[0]

    def reconstruct(self, c: ArrayLike) -> Tensor:
        return self.reconstruct_batch(np.asarray(c, dtype=np.float64)[None])[0]

    def classifier_features(self, codes: ArrayLike) -> Tensor:
        """
        Flatten codes to the real vectors classifiers consume
        """
        batch = np.asarray(codes, dtype=np.float64)
        return batch.reshape(batch.shape[0], -1)

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        raise NotImplementedError(f"{self.kind.value} projector cannot be saved")


class IdentityProjector(Projector):
    """
    P(x) = x; reconstruction is exact
    """

    kind = ProjectorKind.IDENTITY

    @property
    def code_shape(self) -> tuple[int, ...]:
        return IMAGE_SHAPE

    def _project(self, images: Tensor) -> Tensor:
        return images.copy()

    def _reconstruct(self, codes: Tensor) -> Tensor:
        return codes.copy()
