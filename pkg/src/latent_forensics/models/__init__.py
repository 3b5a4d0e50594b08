from latent_forensics.models.generator import (
    IMAGE_SHAPE,
    GeneratorConfig,
    GeneratorModel,
    sample_z,
)
from latent_forensics.models.perceptual import (
    FeatureExtractor,
    perceptual_distance,
    reconstruction_benchmark,
    reconstruction_benchmark_by_label,
)

__all__ = [
    "IMAGE_SHAPE",
    "FeatureExtractor",
    "GeneratorConfig",
    "GeneratorModel",
    "perceptual_distance",
    "reconstruction_benchmark",
    "reconstruction_benchmark_by_label",
    "sample_z",
]
