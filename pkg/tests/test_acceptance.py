"""
End-to-end checks at desk-benchmark scale. Deselected by default; run with `-m slow`.
"""

import json
from itertools import pairwise
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from latent_forensics.analysis import BenchmarkResult
from latent_forensics.autodiff import check_gradients
from latent_forensics.classifiers import ForestSettings, train_classifier, train_random_forest
from latent_forensics.decision import Priors, fit_density_histogram, likelihood_ratio_rule
from latent_forensics.experiment import load_config
from latent_forensics.models.generator import GeneratorModel, sample_z
from latent_forensics.models.perceptual import (
    FeatureExtractor,
    reconstruction_benchmark,
    reconstruction_benchmark_by_label,
)
from latent_forensics.projectors import (
    IdentityProjector,
    InitKind,
    InversionConfig,
    PcaProjector,
    invert_batch,
    train_encoder,
)
from latent_forensics.projectors.inversion import InversionObjective, sample_training_pairs
from latent_forensics.services import Pipeline
from latent_forensics.world.dataset import DatasetSettings, build_dataset, split_dataset, stack_images
from latent_forensics.world.forgery import ForgeryMethod, ForgeryParams

pytestmark = pytest.mark.slow

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def _generated(g: GeneratorModel, n: int, first: int = 0) -> np.ndarray:
    codes = g.map_batch(np.stack([sample_z(first + k, g.config.d_z) for k in range(n)]))
    return g.synthesize_batch(codes)


@pytest.fixture(scope="module")
def default_run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    out = tmp_path_factory.mktemp("desk")
    pipeline = Pipeline(load_config(DEFAULT, output_dir=str(out)))
    pipeline.full()
    return pipeline.run_dir


def _benchmark(run_dir: Path) -> BenchmarkResult:
    payload = json.loads((run_dir / "results" / "benchmark.json").read_text(encoding="utf-8"))
    return BenchmarkResult.model_validate({"rows": payload["rows"]})


# ---- gradients and projections ----


def test_inversion_loss_gradient_matches_finite_differences(generator: GeneratorModel, extractor: FeatureExtractor):
    objective = InversionObjective(generator, extractor, alpha=1.0)
    targets = objective.targets(_generated(generator, 1, first=1000))
    rng = np.random.default_rng(0)

    for k in range(20):
        w = generator.mean_w[None] + 0.5 * rng.standard_normal((1, *generator.code_shape))
        report = check_gradients(objective.graph, {**targets, "w": w}, 1e-4, "total", wrt=["w"], max_coords=24, seed=k)
        assert report.passed, report.errors


def test_pca_matches_batch_svd(generator: GeneratorModel):
    images = _generated(generator, 300)
    held_out = _generated(generator, 100, first=300).reshape(100, -1)
    flat = images.reshape(len(images), -1)
    mean = flat.mean(axis=0)
    _, _, vt = np.linalg.svd(flat - mean, full_matrices=False)
    oracle = vt[:64]

    single = PcaProjector.fit(images, d_prime=64, batch_size=len(images)).model
    angles = np.linalg.svd(single.components @ oracle.T, compute_uv=False)
    assert np.min(angles) > 1.0 - 1e-6

    streamed = PcaProjector.fit(images, d_prime=64, batch_size=64).model
    oracle_error = np.mean(((held_out - mean) - (held_out - mean) @ oracle.T @ oracle) ** 2)
    streamed_error = np.mean((held_out - streamed.inverse_transform(streamed.transform(held_out))) ** 2)
    assert streamed_error <= 1.05 * oracle_error


# ---- inversion ----


def test_inversion_recovers_generated_images(generator: GeneratorModel, extractor: FeatureExtractor):
    images = _generated(generator, 50)

    result = invert_batch(generator, images, InversionConfig(), extractor=extractor)

    start = generator.synthesize_batch(np.repeat(generator.mean_w[None], len(images), axis=0))
    before = extractor.distance_batch(start, images)
    after = extractor.distance_batch(generator.synthesize_batch(result.codes), images)
    assert np.mean(after <= 0.1 * before) >= 0.9
    untouched = invert_batch(generator, images[:4], InversionConfig(steps=0), extractor=extractor)
    assert np.array_equal(untouched.codes, np.repeat(generator.mean_w[None], 4, axis=0))


def test_forgeries_sit_off_the_manifold(generator: GeneratorModel, extractor: FeatureExtractor):
    data = build_dataset(generator, DatasetSettings(n_identities=100), seed=3)
    labels = np.array([item.is_fake for item in data])

    result = invert_batch(generator, stack_images(data), InversionConfig(), extractor=extractor)

    genuine_median = np.median(result.losses[~labels])
    assert np.mean(result.losses[labels] > genuine_median) >= 0.9


def test_encoder_init_beats_the_mean_code(generator: GeneratorModel, extractor: FeatureExtractor):
    encoder = train_encoder(generator, n_pairs=1024, epochs=20, seed=0)
    images, codes = sample_training_pairs(generator, 200, seed=99)

    assert encoder.regression_mse(images, codes) < float(np.mean((codes - codes.mean(axis=0)) ** 2))

    targets = _generated(generator, 50, first=500)
    budget = InversionConfig(steps=25)
    from_mean = invert_batch(generator, targets, budget, extractor=extractor)
    from_encoder = invert_batch(
        generator, targets, budget.model_copy(update={"init": InitKind.ENCODER}), encoder, extractor=extractor
    )
    assert np.mean(from_encoder.losses < from_mean.losses) >= 0.8


# ---- benchmark ----


def test_projector_ordering_under_random_forest(default_run: Path):
    result = _benchmark(default_run)

    sg, pca, vq = (result.median_accuracy(p, "RF") for p in ("SG", "PCA", "VQ"))
    assert sg >= pca + 0.02
    assert pca >= vq + 0.02


def test_deep_classifier_keeps_up_on_inverted_codes(default_run: Path):
    result = _benchmark(default_run)

    mlp5 = result.median_accuracy("SG", "MLP-5")
    assert mlp5 >= result.median_accuracy("SG", "LR") - 0.01
    assert mlp5 >= result.median_accuracy("SG", "RF") - 0.01


def test_reconstruction_uses_the_requested_count(default_run: Path, generator: GeneratorModel, extractor: FeatureExtractor):
    payload = json.loads((default_run / "results" / "reconstruction.json").read_text(encoding="utf-8"))
    assert all(entry["all"]["n"] == 250 for entry in payload["projectors"].values())

    data = build_dataset(generator, DatasetSettings(n_identities=150), seed=4)
    assert reconstruction_benchmark(IdentityProjector(), stack_images(data), extractor, n=250) == (0.0, 0.0)
    assert reconstruction_benchmark_by_label(IdentityProjector(), data, extractor, n=250)["all"][0] == 250


def test_forest_variance_shrinks_with_more_trees():
    rng = np.random.default_rng(0)
    y = (np.arange(600) % 2).astype(float)
    x = rng.normal(0.0, 1.0, (600, 8)) + 0.6 * y[:, None]
    train, test = slice(0, 300), slice(300, 600)

    def spread(n_estimators: int) -> float:
        accuracies = []
        for seed in range(10):
            model = train_random_forest(x[train], y[train], ForestSettings(n_estimators=n_estimators), seed=seed)
            accuracies.append(np.mean((model.predict_scores(x[test]) > 0.5) == (y[test] == 1.0)))
        return float(np.std(accuracies))

    assert spread(200) <= spread(20)


# ---- decision ----


@pytest.mark.parametrize("pi_m", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_likelihood_ratio_rule_is_bayes_optimal(pi_m: float):
    rng = np.random.default_rng(0)
    p_g = fit_density_histogram(rng.normal(-1.0, 1.0, 20_000), 50)
    p_m = fit_density_histogram(rng.normal(1.0, 1.0, 20_000), 50)
    priors = Priors(pi_m=pi_m)

    rule = likelihood_ratio_rule(p_m, p_g, priors, np.linspace(-3.0, 3.0, 200))

    def mean_error(t: float) -> float:
        return priors.pi_m * norm.cdf(t - 1.0) + priors.pi_g * norm.sf(t + 1.0)

    best = np.log(priors.pi_g / priors.pi_m) / 2.0
    assert mean_error(rule.threshold) <= mean_error(best) + 0.01


def test_bayes_boundary_moves_with_the_fake_prior():
    rng = np.random.default_rng(0)
    p_g = fit_density_histogram(rng.normal(-1.0, 1.0, 20_000), 50)
    p_m = fit_density_histogram(rng.normal(1.0, 1.0, 20_000), 50)
    grid = np.linspace(-3.0, 3.0, 200)

    thresholds = [likelihood_ratio_rule(p_m, p_g, Priors(pi_m=pi_m), grid).threshold for pi_m in (0.1, 0.3, 0.5, 0.7, 0.9)]

    assert all(a > b for a, b in pairwise(thresholds))


# ---- channel localization ----


def test_style_swap_is_localized_to_its_channels(tmp_path):
    overrides = [
        "dataset.n_identities=200",
        "dataset.forgery.method=style_swap",
        "dataset.forgery.swap_channels=[2, 3]",
        "projectors.pca.enabled=false",
        "projectors.vq.enabled=false",
        'analysis.channel_classifiers=["rf"]',
    ]
    pipeline = Pipeline(load_config(DEFAULT, overrides=overrides, output_dir=str(tmp_path)))
    pipeline.gen_data()
    pipeline.fit_projector()
    pipeline.invert()

    reports = pipeline.channel_importance()

    assert len(reports) == 5
    median = np.median([report.accuracies for report in reports], axis=0)
    order = list(np.argsort(-median, kind="stable"))
    assert set(order[:2]) == {2, 3}
    assert all(abs(median[c] - 0.5) <= 0.07 for c in (0, 1, 4, 5))


# ---- determinism ----


def test_worker_count_never_changes_results(generator: GeneratorModel, extractor: FeatureExtractor):
    settings = DatasetSettings(n_identities=40, forgery=ForgeryParams(method=ForgeryMethod.SPLICE))
    serial = build_dataset(generator, settings, seed=8, workers=1)
    parallel = build_dataset(generator, settings, seed=8, workers=4)
    assert all(np.array_equal(a.image, b.image) and a.label == b.label for a, b in zip(serial, parallel, strict=True))

    train, test = split_dataset(serial, 0.5, seed=8)
    images = stack_images(train)[:12]
    cfg = InversionConfig(steps=10, batch_size=4)
    one = invert_batch(generator, images, cfg, extractor=extractor, workers=1)
    three = invert_batch(generator, images, cfg, extractor=extractor, workers=3)
    assert np.array_equal(one.codes, three.codes)

    features = stack_images(train).reshape(len(train), -1)[:, ::16]
    labels = [item.is_fake for item in train]
    a = train_classifier("rf", features, labels, seed=1, workers=1)
    b = train_classifier("rf", features, labels, seed=1, workers=4)
    probe = stack_images(test).reshape(len(test), -1)[:, ::16]
    assert np.array_equal(a.predict_scores(probe), b.predict_scores(probe))
