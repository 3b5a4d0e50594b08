"""
Experiment harness: the projector x classifier accuracy grid, the training-size
ablation, per-channel importance of style codes, and two probes of inversion fidelity
and robustness.

Every classifier decision is taken at the calibrated score threshold for the given
priors (training-set class proportion when none are given).
"""

import logging
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.analysis.results import (
    BenchmarkResult,
    BenchmarkRow,
    BudgetRow,
    ChannelReport,
    EncodedSplit,
    RobustnessRow,
)
from latent_forensics.autodiff import Tensor
from latent_forensics.classifiers import ClassifierModel, ClassifierSpec, train_classifier
from latent_forensics.decision import Priors, calibrate_threshold
from latent_forensics.errors import ShapeMismatchError
from latent_forensics.models.generator import GeneratorModel
from latent_forensics.models.perceptual import FeatureExtractor, mean_with_ci
from latent_forensics.projectors import Projector
from latent_forensics.projectors.inversion import InversionConfig, invert_batch
from latent_forensics.utils.parallel import parallel_map
from latent_forensics.utils.seeding import derive_seed, rng_for
from latent_forensics.world.dataset import LabeledImage, labels_of, stack_images
from latent_forensics.world.perturb import PerturbationParams, perturb

logger = logging.getLogger(__name__)


def score_accuracy(
    model: ClassifierModel,
    features: ArrayLike,
    labels: ArrayLike,
    priors: Priors,
    projector: str,
    train_size: int,
    seed: int,
) -> BenchmarkRow:
    rule = calibrate_threshold(priors)
    scores = model.predict_scores(features)
    return BenchmarkRow.from_decisions(rule.decide(scores), labels, projector, model.kind.short_name, train_size, seed)


def encode_split(projector: Projector, train: Sequence[LabeledImage], test: Sequence[LabeledImage]) -> EncodedSplit:
    name = projector.kind.short_name
    try:
        train_codes = projector.project_batch(stack_images(train))
        test_codes = projector.project_batch(stack_images(test))
    except Exception as e:
        logger.error(f"Error encoding benchmark splits with projector {name}: {e}")
        e.add_note(f"while encoding the benchmark splits with projector {name}")
        raise
    return EncodedSplit(
        projector=name,
        train_features=projector.classifier_features(train_codes),
        train_labels=labels_of(train),
        test_features=projector.classifier_features(test_codes),
        test_labels=labels_of(test),
    )


def fit_grid_classifier(spec: ClassifierSpec, features: Tensor, labels: Tensor, seed: int, workers: int = 1) -> ClassifierModel:
    """
    Classifier of one grid cell; its training seed depends only on (seed, family)
    """
    return train_classifier(spec, features, labels, seed=derive_seed(seed, "classifier", spec.kind.value), workers=workers)


def _grid_cell(task: tuple[EncodedSplit, ClassifierSpec, int, Priors | None, Tensor | None]) -> BenchmarkRow:
    split, spec, seed, priors, rows = task
    x, y = split.train_features, split.train_labels
    if rows is not None:
        x, y = x[rows], y[rows]
    model = fit_grid_classifier(spec, x, y, seed)
    priors = priors or Priors.from_labels(y)
    return score_accuracy(model, split.test_features, split.test_labels, priors, split.projector, len(y), seed)


def benchmark_codes(
    splits: Sequence[EncodedSplit],
    classifiers: Sequence[ClassifierSpec],
    seeds: Sequence[int],
    priors: Priors | None = None,
    workers: int = 1,
) -> BenchmarkResult:
    """
    One row per (projector, classifier, seed), in that nesting order
    """
    if not seeds:
        raise ValueError("benchmark needs at least one seed")
    tasks = [(split, spec, seed, priors, None) for split in splits for spec in classifiers for seed in seeds]
    rows = parallel_map(_grid_cell, tasks, workers)
    result = BenchmarkResult(rows=tuple(rows))
    for split in splits:
        for spec in classifiers:
            median = result.median_accuracy(split.projector, spec.kind.short_name)
            logger.info(f"Benchmark {split.projector} {spec.kind.short_name}: median accuracy {median:.4f}")
    return result


def benchmark_grid(
    train: Sequence[LabeledImage],
    test: Sequence[LabeledImage],
    projectors: Sequence[Projector],
    classifiers: Sequence[ClassifierSpec],
    seeds: Sequence[int],
    priors: Priors | None = None,
    workers: int = 1,
) -> BenchmarkResult:
    """
    Accuracy grid for projectors already fitted on `train`; both splits are encoded once
    per projector and every (classifier, seed) cell trains a fresh classifier
    """
    train_sources = {item.source_id for item in train}
    if any(item.source_id in train_sources for item in test):
        raise ValueError("benchmark splits must be source-disjoint")
    splits = [encode_split(projector, train, test) for projector in projectors]
    return benchmark_codes(splits, classifiers, seeds, priors, workers)


def stratified_subsample(labels: ArrayLike, size: int, seed: int) -> Tensor:
    """
    Sorted row indices of a class-stratified subsample with at least one row per class
    """
    y = np.asarray(labels, dtype=np.float64)
    if size > y.size:
        raise ValueError(f"subsample of {size} exceeds the {y.size} available training rows")
    if size < 2:
        raise ValueError(f"subsample needs at least one row per class, got size {size}")
    if size == y.size:
        return np.arange(y.size)

    rng = rng_for(seed, "subsample", size)
    fake_rows, genuine_rows = np.flatnonzero(y == 1.0), np.flatnonzero(y == 0.0)
    n_fake = int(round(size * fake_rows.size / y.size))
    n_fake = min(max(n_fake, 1), size - 1, fake_rows.size)
    n_genuine = min(size - n_fake, genuine_rows.size)
    picked = np.concatenate([rng.choice(fake_rows, n_fake, replace=False), rng.choice(genuine_rows, n_genuine, replace=False)])
    return np.sort(picked)


def training_size_ablation(
    split: EncodedSplit,
    sizes: Sequence[int],
    classifier: ClassifierSpec,
    seeds: Sequence[int],
    priors: Priors | None = None,
    workers: int = 1,
) -> BenchmarkResult:
    """
    One row per (size, seed); the full training size reproduces the grid cell of the same seed
    """
    available = split.train_labels.size
    if any(size > available for size in sizes):
        raise ValueError(f"ablation size {max(sizes)} exceeds the {available} available training rows")
    tasks = [
        (split, classifier, seed, priors, stratified_subsample(split.train_labels, size, seed))
        for size in sizes
        for seed in seeds
    ]
    return BenchmarkResult(rows=tuple(parallel_map(_grid_cell, tasks, workers)))


def _channel_cell(task: tuple[Tensor, Tensor, Tensor, Tensor, ClassifierSpec, int, Priors | None]) -> ChannelReport:
    train_codes, train_labels, test_codes, test_labels, spec, seed, priors = task
    priors = priors or Priors.from_labels(train_labels)
    accuracies = []
    for channel in range(train_codes.shape[1]):
        model = train_classifier(spec, train_codes[:, channel], train_labels, seed=derive_seed(seed, "channel", channel))
        row = score_accuracy(model, test_codes[:, channel], test_labels, priors, "SG", train_labels.size, seed)
        accuracies.append(row.accuracy)
    return ChannelReport(classifier=spec.kind.short_name, seed=seed, accuracies=tuple(accuracies))


def channel_importance(
    train_codes: ArrayLike,
    train_labels: ArrayLike,
    test_codes: ArrayLike,
    test_labels: ArrayLike,
    classifier: ClassifierSpec,
    seeds: Sequence[int],
    priors: Priors | None = None,
    workers: int = 1,
) -> list[ChannelReport]:
    """
    Per seed, test accuracy of classifiers trained on each style-code channel alone
    """
    train_c = np.asarray(train_codes, dtype=np.float64)
    test_c = np.asarray(test_codes, dtype=np.float64)
    if train_c.ndim != 3 or test_c.ndim != 3 or train_c.shape[1:] != test_c.shape[1:]:
        raise ShapeMismatchError(f"channel importance needs style codes (N, C, d), got {train_c.shape} and {test_c.shape}")
    y_train = np.asarray(train_labels, dtype=np.float64)
    y_test = np.asarray(test_labels, dtype=np.float64)
    tasks = [(train_c, y_train, test_c, y_test, classifier, seed, priors) for seed in seeds]
    reports = parallel_map(_channel_cell, tasks, workers)
    for report in reports:
        logger.info(f"Channel importance {report.classifier} seed {report.seed}: top channels {report.ranking()[:3]}")
    return reports


def robustness_probe(
    projector: Projector,
    model: ClassifierModel,
    test: Sequence[LabeledImage],
    qualities: Sequence[int],
    seed: int,
    priors: Priors | None = None,
    noise_sigma: float = 0.0,
) -> list[RobustnessRow]:
    """
    Accuracy of a fitted projector + classifier pair on test images recompressed at
    each quality
    """
    priors = priors or Priors()
    labels = labels_of(test)
    rows = []
    for quality in qualities:
        params = PerturbationParams(noise_sigma=noise_sigma, compression_quality=quality)
        images = np.stack(
            [perturb(item.image, params, derive_seed(seed, "probe", quality, k)) for k, item in enumerate(test)]
        )
        features = projector.classifier_features(projector.project_batch(images))
        row = score_accuracy(model, features, labels, priors, projector.kind.short_name, 0, seed)
        rows.append(RobustnessRow(quality=quality, accuracy=row.accuracy))
        logger.info(f"Robustness {projector.kind.short_name} {model.kind.short_name} quality {quality}: {row.accuracy:.4f}")
    return rows


def inversion_budget_sweep(
    g: GeneratorModel,
    images: ArrayLike,
    steps_list: Sequence[int],
    cfg: InversionConfig,
    extractor: FeatureExtractor | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[BudgetRow]:
    """
    Mean perceptual distance between images and their inverted reconstructions for
    each step budget
    """
    extractor = extractor or FeatureExtractor()
    batch = np.asarray(images, dtype=np.float64)
    rows = []
    for steps in steps_list:
        result = invert_batch(g, batch, cfg.model_copy(update={"steps": steps}), seed=seed, extractor=extractor, workers=workers)
        distances = extractor.distance_batch(batch, g.synthesize_batch(result.codes))
        mean, ci = mean_with_ci(distances)
        rows.append(BudgetRow(steps=steps, mean_distance=mean, ci95=ci))
        logger.info(f"Inversion budget {steps} steps: distance {mean:.5f} +/- {ci:.5f}")
    return rows
