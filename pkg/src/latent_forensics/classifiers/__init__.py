import logging
import os

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import load_tensors
from latent_forensics.classifiers.base import ClassifierKind, ClassifierModel, Standardizer, TrainConfig
from latent_forensics.classifiers.forest import ForestSettings, RandomForestModel, train_random_forest
from latent_forensics.classifiers.neural import (
    DenseClassifier,
    LogisticModel,
    MlpModel,
    train_logistic,
    train_mlp,
    training_history,
)
from latent_forensics.errors import ShapeMismatchError

logger = logging.getLogger(__name__)


class ClassifierSpec(BaseModel):
    """
    One classifier family plus its hyperparameters, as listed in an experiment config
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ClassifierKind
    forest: ForestSettings = Field(default_factory=ForestSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)


def train_classifier(
    spec: ClassifierSpec | ClassifierKind | str,
    codes: ArrayLike,
    labels: ArrayLike,
    seed: int = 0,
    workers: int = 1,
) -> ClassifierModel:
    """
    Train the family named by `spec`; `seed` overrides the configured training seed
    """
    if not isinstance(spec, ClassifierSpec):
        spec = ClassifierSpec(kind=ClassifierKind(spec))
    if spec.kind is ClassifierKind.RF:
        return train_random_forest(codes, labels, spec.forest, seed, workers)
    cfg = spec.train.model_copy(update={"seed": seed})
    if spec.kind is ClassifierKind.LR:
        return train_logistic(codes, labels, cfg)
    return train_mlp(codes, labels, spec.kind, cfg)


def predict_score(model: ClassifierModel, code: ArrayLike) -> float:
    """
    Fake-probability of a single code
    """
    x = np.asarray(code, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.input_dim:
        raise ShapeMismatchError(f"code has {x.shape[0]} features, classifier expects {model.input_dim}")
    return float(model.predict_scores(x[None])[0])


def load_classifier(path: str | os.PathLike[str]) -> ClassifierModel:
    _, metadata = load_tensors(path)
    if metadata.get("kind") == ClassifierKind.RF.value:
        return RandomForestModel.load(path)
    return DenseClassifier.load(path)


__all__ = [
    "ClassifierKind",
    "ClassifierModel",
    "ClassifierSpec",
    "DenseClassifier",
    "ForestSettings",
    "LogisticModel",
    "MlpModel",
    "RandomForestModel",
    "Standardizer",
    "TrainConfig",
    "load_classifier",
    "predict_score",
    "train_classifier",
    "train_logistic",
    "train_mlp",
    "train_random_forest",
    "training_history",
]
