"""
Labeled benchmark fabrication, source-disjoint splitting and manifest IO.

Identity i always draws its base noise from the stream (seed, "identity", i), so a fake
built for identity i shares its base face with the genuine image of identity i.
"""

import json
import logging
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import Tensor, load_tensors, save_tensors
from latent_forensics.models.generator import IMAGE_SHAPE, GeneratorModel
from latent_forensics.utils.hashing import stable_hash
from latent_forensics.utils.parallel import parallel_map
from latent_forensics.utils.seeding import derive_seed, rng_for
from latent_forensics.world.forgery import ForgeryMethod, ForgeryParams, splice, style_swap
from latent_forensics.world.perturb import PerturbationParams, perturb

logger = logging.getLogger(__name__)

GENERATION_CHUNK = 50
MANIFEST_NAME = "manifest.jsonl"
PACKED_NAME = "images.lfl"


class Label(str, Enum):
    GENUINE = "genuine"
    FAKE = "fake"


@dataclass(frozen=True)
class LabeledImage:
    image: Tensor
    label: Label
    source_id: int

    def __post_init__(self):
        if self.source_id < 0:
            raise ValueError(f"source_id must be >= 0, got {self.source_id}")
        if not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))

    @property
    def is_fake(self) -> bool:
        return self.label is Label.FAKE


class DatasetSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_identities: int = Field(default=700, ge=2)
    noise_sigma: float = Field(default=0.02, ge=0.0)
    forgery: ForgeryParams = ForgeryParams()
    perturbation: PerturbationParams = PerturbationParams()
    train_fraction: float = Field(default=0.715, gt=0.0, lt=1.0)
    seed: int | None = Field(default=None, ge=0)
    storage: Literal["packed", "files"] = "packed"


# ---- generation ----


def identity_z(g: GeneratorModel, seed: int, index: int, role: str = "identity") -> Tensor:
    return rng_for(seed, role, index).standard_normal(g.config.d_z)


def _add_noise(images: Tensor, sigma: float, seed: int, role: str, indices: Sequence[int]) -> Tensor:
    if sigma == 0.0:
        return images
    noise = np.stack([rng_for(seed, role, i).normal(0.0, sigma, size=IMAGE_SHAPE) for i in indices])
    return np.clip(images + noise, 0.0, 1.0)


def _genuine_chunk(indices: Sequence[int], g: GeneratorModel, noise_sigma: float, seed: int) -> Tensor:
    codes = g.map_batch(np.stack([identity_z(g, seed, i) for i in indices]))
    return _add_noise(g.synthesize_batch(codes), noise_sigma, seed, "genuine_noise", indices)


def _fake_chunk(indices: Sequence[int], g: GeneratorModel, params: ForgeryParams, noise_sigma: float, seed: int) -> Tensor:
    base = g.map_batch(np.stack([identity_z(g, seed, i) for i in indices]))
    donor = g.map_batch(np.stack([identity_z(g, seed, i, role="donor") for i in indices]))

    if params.method is ForgeryMethod.SPLICE:
        base_images, donor_images = g.synthesize_batch(base), g.synthesize_batch(donor)
        images = np.stack(
            [splice(b, d, params.mask_radius, params.feather) for b, d in zip(base_images, donor_images, strict=True)]
        )
    else:
        mixed = np.stack([style_swap(g, b, d, params.swap_channels) for b, d in zip(base, donor, strict=True)])
        images = g.synthesize_batch(mixed)
    return _add_noise(images, noise_sigma, seed, "fake_noise", indices)


def _chunks(n: int, first: int) -> list[list[int]]:
    return [list(range(start, min(start + GENERATION_CHUNK, first + n))) for start in range(first, first + n, GENERATION_CHUNK)]


def generate_genuine(
    g: GeneratorModel,
    n: int,
    noise_sigma: float,
    seed: int,
    first_source: int = 0,
    workers: int = 1,
) -> list[LabeledImage]:
    """
    n images synthesize(map(z_i)) plus clipped Gaussian noise, source_id = i
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    chunks = _chunks(n, first_source)
    images = parallel_map(partial(_genuine_chunk, g=g, noise_sigma=noise_sigma, seed=seed), chunks, workers)
    return [
        LabeledImage(image, Label.GENUINE, index)
        for chunk, batch in zip(chunks, images, strict=True)
        for index, image in zip(chunk, batch, strict=True)
    ]


def generate_fake(
    g: GeneratorModel,
    n: int,
    params: ForgeryParams,
    noise_sigma: float,
    seed: int,
    first_source: int = 0,
    workers: int = 1,
) -> list[LabeledImage]:
    """
    n forgeries; identity i is the base and a separate donor stream supplies the
    replaced region (splice) or the replaced style rows (style_swap)
    """
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if params.method is ForgeryMethod.STYLE_SWAP:
        if not params.swap_channels:
            raise ValueError("style_swap needs at least one swap channel")
        if max(params.swap_channels) >= g.config.channels:
            raise ValueError(f"swap channels must lie in [0, {g.config.channels})")

    chunks = _chunks(n, first_source)
    fn = partial(_fake_chunk, g=g, params=params, noise_sigma=noise_sigma, seed=seed)
    images = parallel_map(fn, chunks, workers)
    return [
        LabeledImage(image, Label.FAKE, index)
        for chunk, batch in zip(chunks, images, strict=True)
        for index, image in zip(chunk, batch, strict=True)
    ]


def build_dataset(g: GeneratorModel, settings: DatasetSettings, seed: int, workers: int = 1) -> list[LabeledImage]:
    """
    One genuine and one fake image per identity, genuines first; the optional
    perturbation is applied to every image with a per-image stream
    """
    n = settings.n_identities
    logger.info(f"Fabricating {n} genuine and {n} fake images ({settings.forgery.method.value})")
    data = generate_genuine(g, n, settings.noise_sigma, seed, workers=workers)
    data += generate_fake(g, n, settings.forgery, settings.noise_sigma, seed, workers=workers)

    perturbation = settings.perturbation
    if perturbation.noise_sigma > 0.0 or perturbation.compression_quality < 100:
        data = [
            LabeledImage(
                perturb(item.image, perturbation, derive_seed(seed, "perturb", item.label.value, item.source_id)),
                item.label,
                item.source_id,
            )
            for item in data
        ]
    return data


def split_dataset(
    data: Sequence[LabeledImage], train_fraction: float, seed: int
) -> tuple[list[LabeledImage], list[LabeledImage]]:
    """
    Source-disjoint split; floor(fraction * sources) sources go to train, at least one per side
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    sources = sorted({item.source_id for item in data})
    if len(sources) < 2:
        raise ValueError(f"need at least 2 distinct source ids to split, got {len(sources)}")

    # epsilon keeps products like 0.29 * 100 from flooring one short
    n_train = min(max(math.floor(train_fraction * len(sources) + 1e-9), 1), len(sources) - 1)
    order = np.random.default_rng(derive_seed(seed, "split")).permutation(len(sources))
    train_sources = {sources[i] for i in order[:n_train]}

    train = [item for item in data if item.source_id in train_sources]
    test = [item for item in data if item.source_id not in train_sources]
    logger.info(f"Split {len(sources)} sources into {n_train} train / {len(sources) - n_train} test")
    return train, test


# ---- arrays ----


def stack_images(data: Sequence[LabeledImage]) -> Tensor:
    return np.stack([item.image for item in data])


def labels_of(data: Sequence[LabeledImage]) -> Tensor:
    return np.array([1.0 if item.is_fake else 0.0 for item in data])


# ---- manifest IO ----


class ManifestRecord(BaseModel):
    path: str
    label: Label
    source_id: int = Field(ge=0)
    params_hash: str
    config_hash: str


def write_dataset(
    data: Sequence[LabeledImage],
    directory: str | os.PathLike[str],
    params_hash: str,
    config_hash: str,
    storage: Literal["packed", "files"] = "packed",
) -> Path:
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
        names = [f"img_{k:05d}" for k in range(len(data))]
        meta = {"config_hash": config_hash, "params_hash": params_hash}

        if storage == "packed":
            save_tensors(root / PACKED_NAME, {name: item.image for name, item in zip(names, data, strict=True)}, meta)
            paths = [f"{PACKED_NAME}#{name}" for name in names]
        else:
            paths = []
            for name, item in zip(names, data, strict=True):
                save_tensors(root / "images" / f"{name}.lfl", {"image": item.image}, meta)
                paths.append(f"images/{name}.lfl")

        lines = [
            ManifestRecord(
                path=path,
                label=item.label,
                source_id=item.source_id,
                params_hash=params_hash,
                config_hash=config_hash,
            ).model_dump_json()
            for path, item in zip(paths, data, strict=True)
        ]
        manifest = root / MANIFEST_NAME
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"Wrote {len(data)} images to {root} ({storage})")
        return manifest
    except Exception as e:
        logger.error(f"Error writing dataset to {root}: {e}")
        raise


def read_manifest(directory: str | os.PathLike[str]) -> list[ManifestRecord]:
    manifest = Path(directory) / MANIFEST_NAME
    with open(manifest, encoding="utf-8") as handle:
        return [ManifestRecord.model_validate(json.loads(line)) for line in handle if line.strip()]


def read_dataset(directory: str | os.PathLike[str]) -> list[LabeledImage]:
    root = Path(directory)
    try:
        records = read_manifest(root)
        packed: dict[str, Tensor] | None = None
        data: list[LabeledImage] = []
        for record in records:
            if "#" in record.path:
                if packed is None:
                    packed, _ = load_tensors(root / record.path.split("#", 1)[0])
                image = packed[record.path.split("#", 1)[1]]
            else:
                image = load_tensors(root / record.path)[0]["image"]
            data.append(LabeledImage(image, record.label, record.source_id))
        logger.info(f"Read {len(data)} images from {root}")
        return data
    except Exception as e:
        logger.error(f"Error reading dataset from {root}: {e}")
        raise


def dataset_params_hash(settings: DatasetSettings, generator_seed: int, seed: int) -> str:
    return stable_hash({"dataset": settings.model_dump(mode="json"), "generator_seed": generator_seed, "seed": seed})

