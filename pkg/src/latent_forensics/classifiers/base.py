import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import Tensor
from latent_forensics.errors import ShapeMismatchError, SingleClassError

logger = logging.getLogger(__name__)


class ClassifierKind(str, Enum):
    RF = "rf"
    LR = "lr"
    MLP2 = "mlp2"
    MLP5 = "mlp5"

    @property
    def short_name(self) -> str:
        return {"rf": "RF", "lr": "LR", "mlp2": "MLP-2", "mlp5": "MLP-5"}[self.value]


class TrainConfig(BaseModel):
    """
    Hyperparameters shared by the gradient-trained classifiers
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(default=5e-4, gt=0.0)
    epochs: int = Field(default=200, ge=1)
    batch_size: int = Field(default=32, ge=1)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    patience: int = Field(default=20, ge=1)
    validation_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = Field(default=0, ge=0)


@dataclass(frozen=True)
class Standardizer:
    """
    Per-feature zero-mean, unit-variance scaling fitted on training codes; constant
    features keep unit scale
    """

    mean: Tensor
    scale: Tensor

    @classmethod
    def fit(cls, features: Tensor) -> "Standardizer":
        std = features.std(axis=0)
        return cls(mean=features.mean(axis=0), scale=np.where(std > 0, std, 1.0))

    def transform(self, features: Tensor) -> Tensor:
        return (features - self.mean) / self.scale


def as_training_data(codes: ArrayLike, labels: ArrayLike) -> tuple[Tensor, Tensor]:
    x = np.asarray(codes, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    y = np.asarray(labels).astype(np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise ShapeMismatchError(f"{x.shape[0]} codes but {y.shape[0]} labels")
    if x.shape[0] < 2 or np.unique(y).size < 2:
        raise SingleClassError("training labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary (0 = genuine, 1 = fake)")
    return x, y


class ClassifierModel(ABC):
    """
    Trained, immutable code classifier producing fake-probabilities
    """

    kind: ClassifierKind
    standardizer: Standardizer

    @property
    def input_dim(self) -> int:
        return self.standardizer.mean.shape[0]

    @abstractmethod
    def _scores(self, features: Tensor) -> Tensor: ...

    @abstractmethod
    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path: ...

    def predict_scores(self, codes: ArrayLike) -> Tensor:
        x = np.asarray(codes, dtype=np.float64)
        x = x.reshape(x.shape[0], -1)
        if x.shape[1] != self.input_dim:
            raise ShapeMismatchError(f"{self.kind.value} classifier expects {self.input_dim} features, got {x.shape[1]}")
        return self._scores(self.standardizer.transform(x))
