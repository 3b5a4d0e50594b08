from __future__ import annotations

import numpy as np
import pytest

from latent_forensics.models.generator import GeneratorConfig, GeneratorModel
from latent_forensics.models.perceptual import FeatureExtractor
from latent_forensics.world.dataset import DatasetSettings, LabeledImage, build_dataset, split_dataset


@pytest.fixture(scope="session")
def generator() -> GeneratorModel:
    return GeneratorModel(GeneratorConfig(seed=7))


@pytest.fixture(scope="session")
def small_generator() -> GeneratorModel:
    # narrow network for gradient checks and fast inversions
    return GeneratorModel(GeneratorConfig(d_z=8, d=8, channels=4, features=4, seed=3))


@pytest.fixture(scope="session")
def extractor() -> FeatureExtractor:
    return FeatureExtractor(seed=11)


@pytest.fixture(scope="session")
def small_dataset(generator: GeneratorModel) -> list[LabeledImage]:
    return build_dataset(generator, DatasetSettings(n_identities=20), seed=5)


@pytest.fixture(scope="session")
def small_split(small_dataset: list[LabeledImage]) -> tuple[list[LabeledImage], list[LabeledImage]]:
    return split_dataset(small_dataset, 0.5, seed=5)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
