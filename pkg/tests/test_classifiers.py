import numpy as np
import pytest

from latent_forensics.autodiff import check_gradients
from latent_forensics.classifiers import (
    ClassifierKind,
    ClassifierSpec,
    DenseClassifier,
    ForestSettings,
    LogisticModel,
    MlpModel,
    RandomForestModel,
    Standardizer,
    TrainConfig,
    load_classifier,
    predict_score,
    train_classifier,
    train_logistic,
    train_mlp,
    train_random_forest,
    training_history,
)
from latent_forensics.classifiers.forest import LEAF, TreeArrays, best_split
from latent_forensics.classifiers.neural import HIDDEN_SIZES, init_dense_weights
from latent_forensics.decision import Priors, calibrate_threshold
from latent_forensics.errors import ShapeMismatchError, SingleClassError


def _xor(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    corners = rng.integers(0, 2, size=(n, 2))
    x = (2.0 * corners - 1.0) + rng.normal(0.0, 0.15, size=(n, 2))
    y = (corners[:, 0] ^ corners[:, 1]).astype(float)
    return x, y


def _separable(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    x = np.where(y[:, None] == 1, 2.0, -2.0) + rng.normal(0.0, 0.5, size=(n, 2))
    return x, y.astype(float)


def _accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(calibrate_threshold(Priors()).decide(scores) == (labels == 1.0)))


def _constant_forest(counts: list[tuple[float, float]], dim: int = 2) -> RandomForestModel:
    trees = [
        TreeArrays(
            feature=np.array([LEAF]),
            threshold=np.zeros(1),
            left=np.array([LEAF]),
            right=np.array([LEAF]),
            counts=np.array([pair], dtype=float),
        )
        for pair in counts
    ]
    return RandomForestModel.from_trees(Standardizer(np.zeros(dim), np.ones(dim)), trees, ForestSettings(n_estimators=len(counts)))


# ---- random forest ----


def test_forest_memorizes_one_sample_per_class():
    x, y = np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.0, 1.0])

    model = train_random_forest(x, y, ForestSettings(n_estimators=100), seed=0)

    assert _accuracy(model.predict_scores(x), y) == 1.0


def test_forest_solves_xor():
    x_train, y_train = _xor(400, 0)
    x_test, y_test = _xor(400, 1)

    model = train_random_forest(x_train, y_train, ForestSettings(n_estimators=20), seed=0)

    test_accuracy = _accuracy(model.predict_scores(x_test), y_test)
    assert test_accuracy > 0.95
    assert _accuracy(model.predict_scores(x_train), y_train) >= test_accuracy


def test_unanimous_forest_scores_one():
    model = _constant_forest([(0.0, 3.0), (0.0, 1.0), (0.0, 7.0)])

    assert predict_score(model, [0.3, -0.2]) == 1.0


def test_forest_tie_decides_genuine():
    model = _constant_forest([(0.0, 2.0), (2.0, 0.0)])
    score = predict_score(model, [0.0, 0.0])

    assert score == 0.5
    assert not calibrate_threshold(Priors()).decide([score])[0]


def test_best_split_uses_midpoints():
    cost, threshold = best_split(np.array([0.0, 1.0, 3.0, 4.0]), np.array([0.0, 0.0, 1.0, 1.0]))

    assert cost == 0.0
    assert threshold == 2.0
    assert best_split(np.ones(4), np.array([0.0, 1.0, 0.0, 1.0])) is None


def test_forest_does_not_depend_on_worker_count():
    x, y = _xor(120, 2)

    serial = train_random_forest(x, y, ForestSettings(n_estimators=30), seed=4, workers=1)
    parallel = train_random_forest(x, y, ForestSettings(n_estimators=30), seed=4, workers=2)

    assert np.array_equal(serial.predict_scores(x), parallel.predict_scores(x))


def test_forest_falls_back_when_drawn_features_are_constant():
    rng = np.random.default_rng(0)
    y = np.arange(40) % 2
    # one informative column among many constant ones
    x = np.zeros((40, 16))
    x[:, 7] = y + rng.normal(0.0, 0.1, size=40)

    model = train_random_forest(x, y, ForestSettings(n_estimators=10), seed=0)

    assert _accuracy(model.predict_scores(x), y.astype(float)) == 1.0


# ---- gradient-trained classifiers ----


def test_logistic_separates_linear_data():
    x_train, y_train = _separable(200, 0)
    x_test, y_test = _separable(200, 1)

    model = train_logistic(x_train, y_train)

    assert _accuracy(model.predict_scores(x_test), y_test) == 1.0


def test_zero_logistic_scores_one_half():
    model = LogisticModel(ClassifierKind.LR, Standardizer(np.zeros(3), np.ones(3)), init_dense_weights(3, (), seed=0))

    assert predict_score(model, [1.0, -4.0, 2.0]) == 0.5
    assert model.bias == 0.0 and np.array_equal(model.coefficients, np.zeros(3))


def test_mlp_solves_xor():
    x_train, y_train = _xor(400, 3)
    x_test, y_test = _xor(400, 4)

    model = train_mlp(x_train, y_train, "mlp2", TrainConfig(learning_rate=1e-2, epochs=100))

    assert _accuracy(model.predict_scores(x_test), y_test) > 0.95


@pytest.mark.parametrize(
    ("kind", "sizes"),
    [(ClassifierKind.MLP2, (512,)), (ClassifierKind.MLP5, (2048, 512, 512, 512)), (ClassifierKind.LR, ())],
)
def test_hidden_layer_sizes(kind: ClassifierKind, sizes: tuple[int, ...]):
    model = DenseClassifier(kind, Standardizer(np.zeros(4), np.ones(4)), init_dense_weights(4, HIDDEN_SIZES[kind], seed=0))

    assert model.hidden_sizes == sizes


def test_mlp_gradients_match_finite_differences(rng: np.random.Generator):
    model = MlpModel(ClassifierKind.MLP2, Standardizer(np.zeros(3), np.ones(3)), init_dense_weights(3, (512,), seed=1))
    inputs = {"x": rng.standard_normal((5, 3)), "y": np.array([[0.0], [1.0], [1.0], [0.0], [1.0]])}

    report = check_gradients(model.graph, inputs, 1e-4, "loss")

    assert report.passed, report.errors


def test_swapping_labels_flips_logistic_decisions():
    x, y = _separable(120, 5)
    probe, _ = _separable(50, 6)

    original = train_logistic(x, y).decision_function(probe)
    swapped = train_logistic(x, 1.0 - y).decision_function(probe)

    assert np.all(np.sign(original) == -np.sign(swapped))


def test_default_training_hyperparameters():
    cfg = TrainConfig()

    assert cfg.learning_rate == 5e-4
    assert (cfg.epochs, cfg.batch_size, cfg.patience) == (200, 32, 20)
    assert ForestSettings().n_estimators == 200


def test_training_history_has_one_entry_per_epoch():
    x, y = _separable(60, 7)

    history = training_history("lr", x, y, TrainConfig(epochs=5, validation_fraction=0.0))

    assert len(history) == 5
    assert history[-1] < history[0]


# ---- shared behavior ----


@pytest.mark.parametrize("kind", ["rf", "lr", "mlp2"])
def test_save_and_load_preserve_scores(kind: str, tmp_path):
    x, y = _separable(60, 8)
    spec = ClassifierSpec(
        kind=ClassifierKind(kind), forest=ForestSettings(n_estimators=10), train=TrainConfig(epochs=3)
    )
    model = train_classifier(spec, x, y, seed=1)

    loaded = load_classifier(model.save(tmp_path / f"{kind}.lfl", {"config_hash": "abc"}))

    assert loaded.kind is model.kind
    assert np.array_equal(loaded.predict_scores(x), model.predict_scores(x))


def test_scores_are_deterministic_and_seeded():
    x, y = _xor(80, 9)
    spec = ClassifierSpec(kind=ClassifierKind.RF, forest=ForestSettings(n_estimators=10))
    model = train_classifier(spec, x, y, seed=2)

    assert predict_score(model, x[0]) == predict_score(model, x[0])
    assert np.array_equal(model.predict_scores(x), train_classifier(spec, x, y, seed=2).predict_scores(x))


def test_training_rejects_bad_labels():
    x = np.zeros((4, 2))
    with pytest.raises(SingleClassError):
        train_classifier("lr", x, np.ones(4))
    with pytest.raises(ValueError):
        train_classifier("rf", x, np.array([0.0, 1.0, 2.0, 1.0]))
    with pytest.raises(ShapeMismatchError):
        train_classifier("rf", x, np.array([0.0, 1.0]))


def test_unknown_mlp_architecture_rejected():
    x, y = _separable(10, 0)
    with pytest.raises(ValueError):
        train_mlp(x, y, "lr")


def test_predict_score_checks_code_length():
    model = _constant_forest([(1.0, 1.0)], dim=3)

    with pytest.raises(ShapeMismatchError):
        predict_score(model, [0.0, 1.0])
