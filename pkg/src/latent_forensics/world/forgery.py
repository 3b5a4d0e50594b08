import logging
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from latent_forensics.autodiff import Tensor
from latent_forensics.models.generator import GeneratorModel

logger = logging.getLogger(__name__)


class ForgeryMethod(str, Enum):
    SPLICE = "splice"
    STYLE_SWAP = "style_swap"


class ForgeryParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: ForgeryMethod = ForgeryMethod.SPLICE
    mask_radius: float = Field(default=0.25, gt=0.0, le=0.5)
    feather: float = Field(default=0.05, ge=0.0, le=0.25)
    swap_channels: tuple[int, ...] = ()

    @model_validator(mode="after")
    def _check_swap_channels(self) -> "ForgeryParams":
        if self.method is ForgeryMethod.STYLE_SWAP and not self.swap_channels:
            raise ValueError("style_swap needs at least one swap channel")
        if any(c < 0 for c in self.swap_channels):
            raise ValueError("swap channels must be non-negative")
        return self


def splice_mask(size: int, radius: float, feather: float) -> Tensor:
    """
    Centered disk mask with a linear ramp of width `feather` outside `radius`.

    Distances are measured from the image center to pixel centers, in image-width units.
    """
    coords = (np.arange(size) + 0.5) / size - 0.5
    r = np.hypot(coords[:, None], coords[None, :])
    if feather == 0.0:
        return (r <= radius).astype(np.float64)
    return np.clip(1.0 - (r - radius) / feather, 0.0, 1.0)


def splice(base: ArrayLike, donor: ArrayLike, radius: float, feather: float) -> Tensor:
    base, donor = np.asarray(base, dtype=np.float64), np.asarray(donor, dtype=np.float64)
    if base.shape != donor.shape:
        raise ValueError(f"splice parents differ in shape: {base.shape} vs {donor.shape}")
    mask = splice_mask(base.shape[-1], radius, feather)
    return mask * donor + (1.0 - mask) * base


def style_swap(g: GeneratorModel, base_w: ArrayLike, donor_w: ArrayLike, channels: tuple[int, ...]) -> Tensor:
    """
    Base code with the listed rows replaced by the donor's rows
    """
    if not channels:
        raise ValueError("style_swap needs at least one swap channel")
    out_of_range = [c for c in channels if not 0 <= c < g.config.channels]
    if out_of_range:
        raise ValueError(f"swap channels {out_of_range} outside [0, {g.config.channels})")
    mixed = np.array(base_w, dtype=np.float64)
    index = list(channels)
    mixed[index] = np.asarray(donor_w, dtype=np.float64)[index]
    return mixed
