from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from latent_forensics.autodiff import Tensor


class BenchmarkRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    projector: str
    classifier: str
    train_size: int = Field(ge=0)
    seed: int
    accuracy: float = Field(ge=0.0, le=1.0)
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @model_validator(mode="after")
    def _check_accuracy(self) -> "BenchmarkRow":
        if self.total == 0 or abs(self.accuracy - (self.tp + self.tn) / self.total) > 1e-12:
            raise ValueError("accuracy must equal (tp + tn) / total of the confusion counts")
        return self

    @classmethod
    def from_decisions(
        cls,
        decided_fake: ArrayLike,
        labels: ArrayLike,
        projector: str,
        classifier: str,
        train_size: int,
        seed: int,
    ) -> "BenchmarkRow":
        decided = np.asarray(decided_fake, dtype=bool)
        fake = np.asarray(labels, dtype=np.float64) == 1.0
        tp = int((decided & fake).sum())
        fp = int((decided & ~fake).sum())
        tn = int((~decided & ~fake).sum())
        fn = int((~decided & fake).sum())
        return cls(
            projector=projector,
            classifier=classifier,
            train_size=train_size,
            seed=seed,
            accuracy=(tp + tn) / decided.size,
            tp=tp,
            fp=fp,
            tn=tn,
            fn=fn,
        )


class BenchmarkResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: tuple[BenchmarkRow, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, projector: str | None = None, classifier: str | None = None) -> list[BenchmarkRow]:
        return [
            row
            for row in self.rows
            if (projector is None or row.projector == projector) and (classifier is None or row.classifier == classifier)
        ]

    def median_accuracy(self, projector: str | None = None, classifier: str | None = None) -> float:
        rows = self.select(projector, classifier)
        if not rows:
            raise KeyError(f"no rows for projector={projector} classifier={classifier}")
        return float(np.median([row.accuracy for row in rows]))


class ChannelReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    classifier: str
    seed: int
    accuracies: tuple[float, ...]

    @property
    def n_channels(self) -> int:
        return len(self.accuracies)

    def ranking(self) -> list[int]:
        """
        Channels ordered from most to least accurate; ties keep channel order
        """
        return sorted(range(self.n_channels), key=lambda c: (-self.accuracies[c], c))


class RobustnessRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    quality: int
    accuracy: float


class BudgetRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: int
    mean_distance: float
    ci95: float


@dataclass(frozen=True)
class EncodedSplit:
    """
    Classifier-ready features of both splits under one projector
    """

    projector: str
    train_features: Tensor
    train_labels: Tensor
    test_features: Tensor
    test_labels: Tensor
