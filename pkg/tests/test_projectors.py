from itertools import pairwise

import numpy as np
import pytest
from scipy import linalg

from latent_forensics.errors import InversionDivergedError, NonFiniteError, ShapeMismatchError
from latent_forensics.models.generator import IMAGE_SHAPE, GeneratorModel, sample_z
from latent_forensics.models.perceptual import FeatureExtractor
from latent_forensics.projectors import (
    GanInversionProjector,
    InitKind,
    InversionConfig,
    PcaProjector,
    VqProjector,
    VqSettings,
    invert,
    invert_batch,
    load_projector,
    pca_fit_incremental,
    train_encoder,
    vq_train,
)
from latent_forensics.projectors.inversion import InversionObjective, initial_codes
from latent_forensics.projectors.pca import batched
from latent_forensics.projectors.vq import nearest_codes
from latent_forensics.world.dataset import LabeledImage, generate_genuine, stack_images

SMALL_VQ = VqSettings(codebook_size=8, code_dim=4, hidden=8, batch_size=8, learning_rate=5e-3)


@pytest.fixture(scope="module")
def faces(generator: GeneratorModel) -> np.ndarray:
    return stack_images(generate_genuine(generator, 96, 0.02, seed=21))


@pytest.fixture(scope="module")
def trained_vq(small_dataset: list[LabeledImage]):
    return vq_train(stack_images(small_dataset), epochs=10, seed=0, settings=SMALL_VQ)


def _decaying_data(rng: np.random.Generator, n: int, d: int = 40) -> np.ndarray:
    return rng.standard_normal((n, d)) * (10.0 / np.arange(1, d + 1)) + 3.0


def _held_out_error(model, data: np.ndarray) -> float:
    return float(np.mean((model.inverse_transform(model.transform(data)) - data) ** 2))


# ---- PCA ----


def test_single_batch_matches_batch_pca(rng: np.random.Generator):
    data = _decaying_data(rng, 200)

    model = pca_fit_incremental([data], 10)
    _, _, vt = np.linalg.svd(data - data.mean(axis=0), full_matrices=False)

    angles = linalg.subspace_angles(model.components.T, vt[:10].T)
    assert np.max(angles) < 1e-6


def test_affine_subspace_is_reconstructed_exactly(rng: np.random.Generator):
    basis = rng.standard_normal((5, 50))
    data = rng.standard_normal((300, 5)) @ basis + rng.standard_normal(50)

    model = pca_fit_incremental(batched(data, 50), 5)

    assert _held_out_error(model, data) < 1e-16


def test_multi_batch_fit_is_close_to_batch_pca(rng: np.random.Generator):
    train, held_out = _decaying_data(rng, 1000), _decaying_data(rng, 200)

    streamed = pca_fit_incremental(batched(train, 100), 10)
    full = pca_fit_incremental([train], 10)

    assert _held_out_error(streamed, held_out) <= 1.05 * _held_out_error(full, held_out)


def test_components_are_orthonormal_and_sorted(faces: np.ndarray):
    model = PcaProjector.fit(faces, d_prime=32, batch_size=48).model

    assert np.allclose(model.components @ model.components.T, np.eye(32), atol=1e-8)
    assert np.all(np.diff(model.explained_variance) <= 0.0)


def test_error_is_non_increasing_in_d_prime(faces: np.ndarray):
    flat = faces.reshape(len(faces), -1)

    errors = [_held_out_error(pca_fit_incremental([flat], d), flat) for d in (8, 16, 32, 64)]

    assert all(later <= earlier + 1e-12 for earlier, later in pairwise(errors))


def test_pca_code_length_and_idempotence(faces: np.ndarray):
    projector = PcaProjector.fit(faces, d_prime=64, batch_size=96)
    codes = projector.project_batch(faces[:4])

    assert projector.code_shape == (64,)
    assert codes.shape == (4, 64)
    model = projector.model
    assert np.allclose(model.transform(model.inverse_transform(codes)), codes, atol=1e-8)


def test_pca_needs_enough_samples(rng: np.random.Generator):
    with pytest.raises(ValueError):
        pca_fit_incremental([rng.standard_normal((5, 20))], 8)
    with pytest.raises(ValueError):
        pca_fit_incremental([], 2)


def test_projectors_reject_wrong_resolution(faces: np.ndarray):
    projector = PcaProjector.fit(faces, d_prime=8, batch_size=96)

    with pytest.raises(ShapeMismatchError):
        projector.project(np.zeros((3, 16, 16)))
    with pytest.raises(ShapeMismatchError):
        projector.reconstruct(np.zeros(9))


def test_pca_save_and_load(faces: np.ndarray, tmp_path):
    projector = PcaProjector.fit(faces, d_prime=8, batch_size=96)

    loaded = load_projector(projector.save(tmp_path / "pca.lfl"))

    assert isinstance(loaded, PcaProjector)
    assert np.array_equal(loaded.project_batch(faces[:3]), projector.project_batch(faces[:3]))


# ---- VQ ----


def test_vq_training_lowers_reconstruction_error(trained_vq):
    _, history = trained_vq

    assert len(history) == 10
    assert history[-1] < history[0]


def test_exact_codebook_vector_maps_to_itself(rng: np.random.Generator):
    codebook = rng.standard_normal((64, 4))

    assert np.array_equal(nearest_codes(codebook, codebook), np.arange(64))


def test_vq_codes_are_nearest_codebook_rows(trained_vq, small_dataset: list[LabeledImage]):
    model, _ = trained_vq
    images = stack_images(small_dataset[:4])

    z_e = model.encode(images)
    indices = model.quantize(z_e)

    assert indices.shape == (4, 8, 8)
    assert indices.min() >= 0 and indices.max() < model.codebook_size
    vectors = z_e.transpose(0, 2, 3, 1).reshape(-1, z_e.shape[1])
    distances = ((vectors[:, None, :] - model.codebook[None, :, :]) ** 2).sum(axis=2)
    chosen = distances[np.arange(len(vectors)), indices.reshape(-1)]
    assert np.all(chosen <= distances.min(axis=1) + 1e-9)


def test_default_codebook_indices_stay_in_range(small_dataset: list[LabeledImage]):
    model, _ = vq_train(stack_images(small_dataset[:8]), epochs=1, seed=1, settings=VqSettings(hidden=4, batch_size=8))
    projector = VqProjector(model)

    codes = projector.project_batch(stack_images(small_dataset[:8]))

    assert projector.code_shape == (8, 8)
    assert np.array_equal(codes, np.round(codes))
    assert codes.min() >= 0 and codes.max() < 64
    assert np.all(projector.classifier_features(codes) < 1.0)


def test_straight_through_reaches_the_encoder(trained_vq, small_dataset: list[LabeledImage]):
    model, _ = trained_vq

    _, _, grads, _ = model.loss_and_gradients(stack_images(small_dataset[:4]))

    assert np.linalg.norm(grads["vq/enc0"]) > 0.0
    assert np.all(np.isfinite(model.codebook))


def test_vq_reconstruction_beats_random_codes(trained_vq, small_dataset: list[LabeledImage]):
    model, _ = trained_vq
    projector = VqProjector(model)
    images = stack_images(small_dataset)
    rng = np.random.default_rng(0)

    recon_mse = np.mean((projector.reconstruct_batch(projector.project_batch(images)) - images) ** 2)
    random_codes = rng.integers(0, model.codebook_size, size=(len(images), 8, 8))
    random_mse = np.mean((projector.reconstruct_batch(random_codes) - images) ** 2)

    assert np.isfinite(recon_mse)
    assert recon_mse <= random_mse


def test_vq_rejects_out_of_range_indices(trained_vq):
    model, _ = trained_vq

    with pytest.raises(ValueError):
        model.decode(np.full((1, 8, 8), model.codebook_size))


def test_vq_save_and_load(trained_vq, small_dataset: list[LabeledImage], tmp_path):
    projector = VqProjector(trained_vq[0])
    images = stack_images(small_dataset[:3])

    loaded = load_projector(projector.save(tmp_path / "vq.lfl"))

    assert isinstance(loaded, VqProjector)
    assert np.array_equal(loaded.project_batch(images), projector.project_batch(images))


def test_vq_train_needs_data():
    with pytest.raises(ValueError):
        vq_train(np.zeros((0, *IMAGE_SHAPE)), epochs=1, seed=0, settings=SMALL_VQ)


@pytest.mark.parametrize("epochs", [0, -1])
def test_vq_train_needs_an_epoch(small_dataset: list[LabeledImage], epochs: int):
    with pytest.raises(ValueError, match="at least one epoch"):
        vq_train(stack_images(small_dataset[:4]), epochs=epochs, seed=0, settings=SMALL_VQ)


# ---- inversion ----


def _targets(g: GeneratorModel, count: int, seed: int) -> np.ndarray:
    return g.synthesize_batch(g.map_batch(np.stack([sample_z(seed + k, g.config.d_z) for k in range(count)])))


def test_zero_steps_returns_the_initial_code(small_generator: GeneratorModel, extractor: FeatureExtractor):
    x = _targets(small_generator, 1, 40)[0]

    code, loss = invert(small_generator, x, InversionConfig(steps=0), extractor=extractor)

    assert np.array_equal(code, small_generator.mean_w)
    assert loss > 0.0


def test_recorded_losses_never_increase(small_generator: GeneratorModel, extractor: FeatureExtractor):
    images = _targets(small_generator, 3, 50)

    result = invert_batch(small_generator, images, InversionConfig(steps=8, batch_size=3), extractor=extractor)

    history = np.stack(result.history)
    assert history.shape == (9, 3)
    assert np.all(np.diff(history, axis=0) <= 0.0)
    assert np.all(result.losses < history[0])


def test_inversion_is_deterministic(small_generator: GeneratorModel, extractor: FeatureExtractor):
    x = _targets(small_generator, 1, 60)[0]
    cfg = InversionConfig(steps=4, init=InitKind.RANDOM)

    first = invert(small_generator, x, cfg, seed=3, extractor=extractor)
    second = invert(small_generator, x, cfg, seed=3, extractor=extractor)

    assert np.array_equal(first[0], second[0]) and first[1] == second[1]


def test_random_init_depends_on_seed(small_generator: GeneratorModel):
    images = _targets(small_generator, 2, 70)
    cfg = InversionConfig(init=InitKind.RANDOM)

    assert np.array_equal(initial_codes(small_generator, images, cfg, seed=1), initial_codes(small_generator, images, cfg, seed=1))
    assert not np.array_equal(initial_codes(small_generator, images, cfg, seed=1), initial_codes(small_generator, images, cfg, seed=2))


def test_encoder_init_requires_an_encoder(small_generator: GeneratorModel):
    x = _targets(small_generator, 1, 80)[0]

    with pytest.raises(ValueError):
        invert(small_generator, x, InversionConfig(steps=1, init=InitKind.ENCODER))


def test_non_finite_loss_reports_the_iteration(
    small_generator: GeneratorModel, extractor: FeatureExtractor, monkeypatch: pytest.MonkeyPatch
):
    def explode(self, w, targets):
        raise NonFiniteError("losses")

    monkeypatch.setattr(InversionObjective, "losses", explode)

    with pytest.raises(InversionDivergedError) as info:
        invert(small_generator, _targets(small_generator, 1, 90)[0], InversionConfig(steps=3), extractor=extractor)

    assert info.value.iteration == 1


def test_inversion_rejects_wrong_resolution(small_generator: GeneratorModel):
    with pytest.raises(ShapeMismatchError):
        invert(small_generator, np.zeros((3, 16, 16)), InversionConfig(steps=0))


def test_gan_code_shape(generator: GeneratorModel, extractor: FeatureExtractor, faces: np.ndarray):
    projector = GanInversionProjector(generator, InversionConfig(steps=1), extractor)

    codes = projector.project_batch(faces[:2])

    assert projector.code_shape == (6, 32)
    assert codes.shape == (2, 6, 32)
    assert projector.reconstruct_batch(codes).shape == (2, *IMAGE_SHAPE)


def test_worker_count_does_not_change_codes(small_generator: GeneratorModel, extractor: FeatureExtractor):
    images = _targets(small_generator, 4, 100)
    cfg = InversionConfig(steps=2, batch_size=2)

    serial = invert_batch(small_generator, images, cfg, extractor=extractor, workers=1)
    parallel = invert_batch(small_generator, images, cfg, extractor=extractor, workers=2)

    assert np.array_equal(serial.codes, parallel.codes)
    assert np.array_equal(serial.losses, parallel.losses)


def test_encoder_predicts_codes_of_the_right_shape(small_generator: GeneratorModel, tmp_path):
    encoder = train_encoder(small_generator, n_pairs=16, epochs=1, seed=0)
    images = _targets(small_generator, 3, 110)

    predicted = encoder.predict(images)
    projector = GanInversionProjector(small_generator, InversionConfig(steps=0, init=InitKind.ENCODER), encoder=encoder)
    loaded = load_projector(projector.save(tmp_path / "gan.lfl"), small_generator)

    assert predicted.shape == (3, *small_generator.code_shape)
    assert encoder.predict(images[0]).shape == small_generator.code_shape
    assert isinstance(loaded, GanInversionProjector) and loaded.encoder is not None
    assert np.array_equal(loaded.encoder.predict(images), predicted)
    assert loaded.config == projector.config


def test_gan_projector_load_needs_the_generator(small_generator: GeneratorModel, tmp_path):
    path = GanInversionProjector(small_generator, InversionConfig(steps=0)).save(tmp_path / "gan.lfl")

    with pytest.raises(ValueError):
        load_projector(path)
