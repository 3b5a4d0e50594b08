import json

import numpy as np
import pytest
from pydantic import ValidationError

from latent_forensics.analysis import (
    CSV_HEADER,
    BenchmarkResult,
    BenchmarkRow,
    ChannelReport,
    EncodedSplit,
    ReportFormat,
    benchmark_codes,
    benchmark_grid,
    channel_importance,
    emit_report,
    encode_split,
    inversion_budget_sweep,
    render_report,
    robustness_probe,
    stratified_subsample,
    training_size_ablation,
)
from latent_forensics.analysis.report import CHANNEL_CSV_HEADER
from latent_forensics.classifiers import ClassifierKind, ClassifierSpec, ForestSettings, TrainConfig, train_classifier
from latent_forensics.models.generator import GeneratorModel, sample_z
from latent_forensics.models.perceptual import FeatureExtractor
from latent_forensics.projectors import InversionConfig, PcaProjector
from latent_forensics.world.dataset import LabeledImage, stack_images

RF = ClassifierSpec(kind=ClassifierKind.RF, forest=ForestSettings(n_estimators=10))
LR = ClassifierSpec(kind=ClassifierKind.LR, train=TrainConfig(epochs=5))


def _split(seed: int, n_train: int = 60, n_test: int = 40, dim: int = 3) -> EncodedSplit:
    rng = np.random.default_rng(seed)

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        y = (np.arange(n) % 2).astype(float)
        return rng.normal(0.0, 1.0, (n, dim)) + 1.5 * y[:, None], y

    train_x, train_y = draw(n_train)
    test_x, test_y = draw(n_test)
    return EncodedSplit("PCA", train_x, train_y, test_x, test_y)


def _result() -> BenchmarkResult:
    return benchmark_codes([_split(0)], [RF, LR], seeds=[0, 1])


def _channel_reports() -> list[ChannelReport]:
    return [ChannelReport(classifier="RF", seed=s, accuracies=(0.5, 0.75, 0.625)) for s in (0, 1)]


# ---- grid ----


def test_one_cell_gives_one_row():
    result = benchmark_codes([_split(0)], [RF], seeds=[3])

    assert len(result) == 1
    row = result.rows[0]
    assert (row.projector, row.classifier, row.seed, row.train_size) == ("PCA", "RF", 3, 60)
    assert row.total == 40


def test_grid_rows_are_ordered_and_consistent():
    result = _result()

    assert [(r.classifier, r.seed) for r in result.rows] == [("RF", 0), ("RF", 1), ("LR", 0), ("LR", 1)]
    assert all(r.tp + r.fp + r.tn + r.fn == 40 for r in result.rows)
    assert result.median_accuracy("PCA", "RF") == pytest.approx(np.median([r.accuracy for r in result.select(classifier="RF")]))
    with pytest.raises(KeyError):
        result.median_accuracy("VQ")


def test_grid_is_deterministic():
    assert render_report(_result(), "csv", "abc") == render_report(_result(), "csv", "abc")


def test_grid_needs_seeds():
    with pytest.raises(ValueError):
        benchmark_codes([_split(0)], [RF], seeds=[])


def test_grid_on_images(small_split: tuple[list[LabeledImage], list[LabeledImage]]):
    train, test = small_split
    projector = PcaProjector.fit(stack_images(train), d_prime=4, batch_size=len(train))

    result = benchmark_grid(train, test, [projector], [RF], seeds=[0])

    assert len(result) == 1 and result.rows[0].total == len(test)
    with pytest.raises(ValueError):
        benchmark_grid(train, train, [projector], [RF], seeds=[0])


def test_encoded_split_uses_classifier_features(small_split: tuple[list[LabeledImage], list[LabeledImage]]):
    train, test = small_split
    projector = PcaProjector.fit(stack_images(train), d_prime=4, batch_size=len(train))

    split = encode_split(projector, train, test)

    assert split.projector == "PCA"
    assert split.train_features.shape == (len(train), 4)
    assert split.test_labels.sum() == sum(item.is_fake for item in test)


def test_accuracy_must_match_confusion_counts():
    with pytest.raises(ValidationError):
        BenchmarkRow(projector="PCA", classifier="RF", train_size=4, seed=0, accuracy=0.9, tp=1, fp=1, tn=1, fn=1)


# ---- ablation ----


def test_full_size_ablation_reproduces_the_grid():
    split = _split(1)

    grid = benchmark_codes([split], [RF], seeds=[2])
    ablation = training_size_ablation(split, [60], RF, seeds=[2])

    assert ablation.rows == grid.rows


def test_ablation_rows_per_size_and_seed():
    result = training_size_ablation(_split(2), [2, 10, 30], LR, seeds=[0, 1])

    assert [(r.train_size, r.seed) for r in result.rows] == [(2, 0), (2, 1), (10, 0), (10, 1), (30, 0), (30, 1)]
    with pytest.raises(ValueError):
        training_size_ablation(_split(2), [61], LR, seeds=[0])


def test_stratified_subsample_keeps_both_classes():
    labels = np.array([0.0] * 30 + [1.0] * 10)

    rows = stratified_subsample(labels, 8, seed=0)

    assert rows.size == 8 and np.all(np.diff(rows) > 0)
    assert labels[rows].sum() == 2
    assert set(labels[stratified_subsample(labels, 2, seed=0)]) == {0.0, 1.0}
    assert np.array_equal(stratified_subsample(labels, 40, seed=5), np.arange(40))
    with pytest.raises(ValueError):
        stratified_subsample(labels, 1, seed=0)
    with pytest.raises(ValueError):
        stratified_subsample(labels, 41, seed=0)


# ---- channel importance ----


def _codes(n: int, seed: int, shifted: tuple[int, ...] = ()) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    y = (np.arange(n) % 2).astype(float)
    codes = rng.standard_normal((n, 6, 4))
    for channel in shifted:
        codes[:, channel] += 2.0 * y[:, None]
    return codes, y


def test_swapped_channels_rank_first():
    train, test = _codes(200, 0, shifted=(2, 3)), _codes(200, 1, shifted=(2, 3))

    (report,) = channel_importance(*train, *test, LR, seeds=[0])

    assert report.n_channels == 6
    assert set(report.ranking()[:2]) == {2, 3}


def test_full_code_keeps_up_with_the_best_channel():
    (train_x, train_y), (test_x, test_y) = _codes(200, 0, shifted=(2, 3)), _codes(200, 1, shifted=(2, 3))
    spec = ClassifierSpec(kind=ClassifierKind.LR, train=TrainConfig(learning_rate=1e-2, epochs=50))

    (report,) = channel_importance(train_x, train_y, test_x, test_y, spec, seeds=[0])
    flat = EncodedSplit("SG", train_x.reshape(200, -1), train_y, test_x.reshape(200, -1), test_y)
    full = benchmark_codes([flat], [spec], seeds=[0])

    assert full.median_accuracy("SG", "LR") >= max(report.accuracies) - 0.05


def test_label_free_codes_stay_at_chance():
    train, test = _codes(400, 2), _codes(2000, 3)

    reports = channel_importance(*train, *test, LR, seeds=[0, 1])

    assert [r.seed for r in reports] == [0, 1]
    for report in reports:
        assert all(abs(a - 0.5) <= 0.05 for a in report.accuracies)


def test_channel_importance_needs_style_codes():
    flat = np.zeros((4, 6))
    with pytest.raises(ValueError):
        channel_importance(flat, np.array([0, 1, 0, 1]), flat, np.array([0, 1, 0, 1]), LR, seeds=[0])


def test_ranking_breaks_ties_by_channel():
    report = ChannelReport(classifier="RF", seed=0, accuracies=(0.6, 0.8, 0.6, 0.8))

    assert report.ranking() == [1, 3, 0, 2]


# ---- probes ----


def test_robustness_probe_reports_each_quality(small_split: tuple[list[LabeledImage], list[LabeledImage]]):
    train, test = small_split
    projector = PcaProjector.fit(stack_images(train), d_prime=4, batch_size=len(train))
    features = projector.classifier_features(projector.project_batch(stack_images(train)))
    model = train_classifier(RF, features, [item.is_fake for item in train], seed=0)

    rows = robustness_probe(projector, model, test, [100, 50, 10], seed=0)

    assert [row.quality for row in rows] == [100, 50, 10]
    assert all(0.0 <= row.accuracy <= 1.0 for row in rows)


def test_budget_sweep_distance_never_grows(small_generator: GeneratorModel, extractor: FeatureExtractor):
    codes = small_generator.map_batch(np.stack([sample_z(k, small_generator.config.d_z) for k in range(2)]))
    images = small_generator.synthesize_batch(codes)

    rows = inversion_budget_sweep(small_generator, images, [0, 3], InversionConfig(alpha=0.0), extractor)

    assert [row.steps for row in rows] == [0, 3]
    assert rows[1].mean_distance <= rows[0].mean_distance + 1e-12


# ---- reports ----


def test_csv_report_layout():
    result = _result()

    lines = render_report(result, ReportFormat.CSV, "abc123").splitlines()

    assert lines[0] == CSV_HEADER == "projector,classifier,train_size,seed,accuracy,tp,fp,tn,fn"
    assert len(lines) == len(result) + 2
    assert lines[-1] == "# config_hash: abc123"
    assert lines[1].split(",")[:4] == ["PCA", "RF", "60", "0"]


def test_markdown_report_has_one_line_per_row():
    result = _result()

    text = render_report(result, "markdown", "abc123")
    table = [line for line in text.splitlines() if line.startswith("|")]

    assert len(table) == len(result) + 2
    assert text.rstrip().endswith("<!-- config_hash: abc123 -->")


def test_channel_plotdata_has_one_pair_per_channel():
    payload = json.loads(render_report(_channel_reports(), "plotdata", "abc123"))

    assert payload["figure"] == "channel_importance"
    assert payload["config_hash"] == "abc123"
    assert len(payload["series"]) == 2
    assert all(len(s["x"]) == len(s["y"]) == 3 for s in payload["series"])


def test_channel_csv_report():
    lines = render_report(_channel_reports(), "csv").splitlines()

    assert lines[0] == CHANNEL_CSV_HEADER
    assert len(lines) == 1 + 2 * 3
    assert lines[2] == "RF,0,1,0.750000"


def test_emit_report_writes_the_suffix(tmp_path):
    path = emit_report(_result(), "markdown", tmp_path / "reports" / "benchmark", "abc123")

    assert path.name == "benchmark.md"
    assert path.read_text(encoding="utf-8") == render_report(_result(), "markdown", "abc123")


def test_emit_report_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        emit_report(_result(), "html", tmp_path / "benchmark")
    with pytest.raises(ValueError):
        emit_report(BenchmarkResult(), "csv", tmp_path / "benchmark")
