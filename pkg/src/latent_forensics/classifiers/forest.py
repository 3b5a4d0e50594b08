"""
Random forest of Gini decision trees.

Trees grow without a depth limit: an impure node holding at least `min_samples_split`
samples is split at the (feature, threshold) pair with the lowest weighted Gini cost
among `max_features` randomly drawn features, falling back to the remaining features
when none of the drawn ones separates the node. Thresholds are midpoints between
consecutive distinct values and samples with x <= threshold go left.

The forest is stored flat: every node of every tree is one row of the arrays below,
with leaves marked by feature -1.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import Tensor, load_tensors, save_tensors
from latent_forensics.classifiers.base import ClassifierKind, ClassifierModel, Standardizer, as_training_data
from latent_forensics.utils.parallel import parallel_map
from latent_forensics.utils.seeding import rng_for

logger = logging.getLogger(__name__)

TREES_PER_TASK = 25
LEAF = -1


class ForestSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_estimators: int = Field(default=200, ge=1)
    max_features: int | None = Field(default=None, ge=1, description="None means floor(sqrt(d))")
    bootstrap: bool = True
    min_samples_split: int = Field(default=2, ge=2)


@dataclass(frozen=True)
class TreeArrays:
    feature: Tensor
    threshold: Tensor
    left: Tensor
    right: Tensor
    counts: Tensor


def _gini_cost(left_n: Tensor, left_pos: Tensor, right_n: Tensor, right_pos: Tensor) -> Tensor:
    # n * (1 - p0^2 - p1^2) on each side
    def weighted(n: Tensor, pos: Tensor) -> Tensor:
        p = pos / n
        return n * (2.0 * p * (1.0 - p))

    return weighted(left_n, left_pos) + weighted(right_n, right_pos)


def best_split(values: Tensor, y: Tensor) -> tuple[float, float] | None:
    """
    Lowest weighted Gini cost split of one feature, as (cost, threshold); None when
    the feature is constant on these samples
    """
    order = np.argsort(values, kind="stable")
    v, t = values[order], y[order]
    n = v.shape[0]
    if n < 2:
        return None

    left_n = np.arange(1, n, dtype=np.float64)
    left_pos = np.cumsum(t)[:-1]
    cost = _gini_cost(left_n, left_pos, n - left_n, t.sum() - left_pos)
    cost[v[1:] <= v[:-1]] = np.inf
    i = int(np.argmin(cost))
    if not np.isfinite(cost[i]):
        return None

    threshold = 0.5 * (v[i] + v[i + 1])
    if threshold >= v[i + 1]:
        threshold = v[i]
    return float(cost[i]), float(threshold)


def _choose_split(x: Tensor, y: Tensor, rng: np.random.Generator, max_features: int) -> tuple[int, float] | None:
    order = rng.permutation(x.shape[1])
    for features in (order[:max_features], order[max_features:]):
        best: tuple[float, int, float] | None = None
        for feature in features:
            found = best_split(x[:, feature], y)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(feature), found[1])
        if best is not None:
            return best[1], best[2]
    return None


def grow_tree(x: Tensor, y: Tensor, rng: np.random.Generator, max_features: int, min_samples_split: int = 2) -> TreeArrays:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[tuple[float, float]] = []

    def new_node(rows: Tensor) -> int:
        positives = float(y[rows].sum())
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        counts.append((rows.size - positives, positives))
        return len(feature) - 1

    stack = [(new_node(np.arange(x.shape[0])), np.arange(x.shape[0]))]
    while stack:
        node, rows = stack.pop()
        n_neg, n_pos = counts[node]
        if rows.size < min_samples_split or n_neg == 0 or n_pos == 0:
            continue
        split = _choose_split(x[rows], y[rows], rng, max_features)
        if split is None:
            continue

        f, t = split
        goes_left = x[rows, f] <= t
        feature[node], threshold[node] = f, t
        left[node] = new_node(rows[goes_left])
        right[node] = new_node(rows[~goes_left])
        stack.append((right[node], rows[~goes_left]))
        stack.append((left[node], rows[goes_left]))

    return TreeArrays(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts).reshape(-1, 2),
    )


def _fit_trees(task: tuple[Tensor, Tensor, int, list[int], ForestSettings, int]) -> list[TreeArrays]:
    x, y, seed, indices, settings, max_features = task
    trees = []
    for index in indices:
        rng = rng_for(seed, "tree", index)
        rows = rng.integers(0, x.shape[0], x.shape[0]) if settings.bootstrap else np.arange(x.shape[0])
        trees.append(grow_tree(x[rows], y[rows], rng, max_features, settings.min_samples_split))
    return trees


class RandomForestModel(ClassifierModel):
    kind = ClassifierKind.RF

    def __init__(self, standardizer: Standardizer, roots: Tensor, nodes: TreeArrays, settings: ForestSettings):
        self.standardizer: Standardizer = standardizer
        self.roots: Tensor = np.asarray(roots, dtype=np.int64)
        self.nodes: TreeArrays = nodes
        self.settings: ForestSettings = settings

    @property
    def n_estimators(self) -> int:
        return self.roots.shape[0]

    @classmethod
    def from_trees(cls, standardizer: Standardizer, trees: list[TreeArrays], settings: ForestSettings) -> "RandomForestModel":
        offsets = np.cumsum([0] + [tree.feature.shape[0] for tree in trees])
        shifted = [
            (np.where(tree.left >= 0, tree.left + offset, LEAF), np.where(tree.right >= 0, tree.right + offset, LEAF))
            for tree, offset in zip(trees, offsets[:-1], strict=True)
        ]
        nodes = TreeArrays(
            feature=np.concatenate([tree.feature for tree in trees]),
            threshold=np.concatenate([tree.threshold for tree in trees]),
            left=np.concatenate([pair[0] for pair in shifted]),
            right=np.concatenate([pair[1] for pair in shifted]),
            counts=np.concatenate([tree.counts for tree in trees]),
        )
        return cls(standardizer, offsets[:-1], nodes, settings)

    def leaf_indices(self, features: Tensor) -> Tensor:
        """
        Leaf reached by every sample in every tree, shape (n_trees, N)
        """
        nodes = np.repeat(self.roots[:, None], features.shape[0], axis=1)
        columns = np.arange(features.shape[0])[None, :]
        while True:
            internal = self.nodes.feature[nodes] != LEAF
            if not internal.any():
                return nodes
            f = np.where(internal, self.nodes.feature[nodes], 0)
            goes_left = features[columns, f] <= self.nodes.threshold[nodes]
            step = np.where(goes_left, self.nodes.left[nodes], self.nodes.right[nodes])
            nodes = np.where(internal, step, nodes)

    def _scores(self, features: Tensor) -> Tensor:
        counts = self.nodes.counts[self.leaf_indices(features)]
        return (counts[..., 1] / counts.sum(axis=-1)).mean(axis=0)

    def save(self, path: str | os.PathLike[str], metadata: dict[str, str] | None = None) -> Path:
        tensors = {
            "mean": self.standardizer.mean,
            "scale": self.standardizer.scale,
            "roots": self.roots.astype(np.float64),
            "feature": self.nodes.feature.astype(np.float64),
            "threshold": self.nodes.threshold,
            "left": self.nodes.left.astype(np.float64),
            "right": self.nodes.right.astype(np.float64),
            "counts": self.nodes.counts,
        }
        meta = {"kind": self.kind.value, "forest_settings": self.settings.model_dump_json(), **(metadata or {})}
        return save_tensors(path, tensors, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "RandomForestModel":
        tensors, metadata = load_tensors(path)
        nodes = TreeArrays(
            feature=tensors["feature"].astype(np.int64),
            threshold=tensors["threshold"],
            left=tensors["left"].astype(np.int64),
            right=tensors["right"].astype(np.int64),
            counts=tensors["counts"].reshape(-1, 2),
        )
        settings = ForestSettings.model_validate_json(metadata["forest_settings"])
        return cls(Standardizer(tensors["mean"], tensors["scale"]), tensors["roots"], nodes, settings)


def train_random_forest(
    codes: ArrayLike,
    labels: ArrayLike,
    settings: ForestSettings | None = None,
    seed: int = 0,
    workers: int = 1,
) -> RandomForestModel:
    settings = settings or ForestSettings()
    x, y = as_training_data(codes, labels)
    standardizer = Standardizer.fit(x)
    x = standardizer.transform(x)
    max_features = min(settings.max_features or max(1, int(np.sqrt(x.shape[1]))), x.shape[1])

    indices = list(range(settings.n_estimators))
    tasks = [
        (x, y, seed, indices[start : start + TREES_PER_TASK], settings, max_features)
        for start in range(0, len(indices), TREES_PER_TASK)
    ]
    trees = [tree for chunk in parallel_map(_fit_trees, tasks, workers) for tree in chunk]
    model = RandomForestModel.from_trees(standardizer, trees, settings)
    logger.info(
        f"Trained random forest: {settings.n_estimators} trees, {model.nodes.feature.shape[0]} nodes, "
        f"max_features={max_features}"
    )
    return model
