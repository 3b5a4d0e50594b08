import os

from latent_forensics.autodiff import load_tensors
from latent_forensics.models.generator import GeneratorModel
from latent_forensics.models.perceptual import FeatureExtractor
from latent_forensics.projectors.base import IdentityProjector, Projector, ProjectorKind
from latent_forensics.projectors.inversion import (
    EncoderModel,
    EncoderSettings,
    GanInversionProjector,
    InitKind,
    InversionConfig,
    InversionResult,
    invert,
    invert_batch,
    train_encoder,
)
from latent_forensics.projectors.pca import IncrementalPca, PcaModel, PcaProjector, pca_fit_incremental
from latent_forensics.projectors.vq import VqModel, VqProjector, VqSettings, vq_train


def load_projector(
    path: str | os.PathLike[str],
    generator: GeneratorModel | None = None,
    extractor: FeatureExtractor | None = None,
) -> Projector:
    """
    Load any saved projector, dispatching on the container's kind tag
    """
    _, metadata = load_tensors(path)
    kind = ProjectorKind(metadata.get("kind", ""))
    if kind is ProjectorKind.PCA:
        return PcaProjector.load(path)
    if kind is ProjectorKind.VQ:
        return VqProjector.load(path)
    if kind is ProjectorKind.GAN_INVERSION:
        if generator is None:
            raise ValueError("loading a gan_inversion projector requires its generator")
        return GanInversionProjector.load(path, generator, extractor)
    return IdentityProjector()


__all__ = [
    "EncoderModel",
    "EncoderSettings",
    "GanInversionProjector",
    "IdentityProjector",
    "IncrementalPca",
    "InitKind",
    "InversionConfig",
    "InversionResult",
    "PcaModel",
    "PcaProjector",
    "Projector",
    "ProjectorKind",
    "VqModel",
    "VqProjector",
    "VqSettings",
    "invert",
    "invert_batch",
    "load_projector",
    "pca_fit_incremental",
    "train_encoder",
]
