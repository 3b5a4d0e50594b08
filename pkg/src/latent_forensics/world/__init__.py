from latent_forensics.world.dataset import (
    DatasetSettings,
    Label,
    LabeledImage,
    build_dataset,
    generate_fake,
    generate_genuine,
    labels_of,
    read_dataset,
    split_dataset,
    stack_images,
    write_dataset,
)
from latent_forensics.world.forgery import ForgeryMethod, ForgeryParams
from latent_forensics.world.perturb import PerturbationParams, perturb

__all__ = [
    "DatasetSettings",
    "ForgeryMethod",
    "ForgeryParams",
    "Label",
    "LabeledImage",
    "PerturbationParams",
    "build_dataset",
    "generate_fake",
    "generate_genuine",
    "labels_of",
    "perturb",
    "read_dataset",
    "split_dataset",
    "stack_images",
    "write_dataset",
]
