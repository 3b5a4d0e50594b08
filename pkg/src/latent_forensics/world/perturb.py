"""
Sensor noise followed by JPEG-like block-DCT quantization.
"""

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field
from scipy.fft import dctn, idctn

from latent_forensics.autodiff import Tensor

BLOCK = 8
LOSSLESS_QUALITY = 100

# JPEG luminance quantization table (Annex K), in 8-bit pixel units
JPEG_LUMINANCE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


class PerturbationParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    noise_sigma: float = Field(default=0.0, ge=0.0)
    compression_quality: int = Field(default=100, ge=1, le=100)


def quantization_steps(quality: int) -> Tensor:
    return JPEG_LUMINANCE / 255.0 * (101 - quality) / 100.0


def block_dct_quantize(image: ArrayLike, quality: int) -> Tensor:
    """
    Quantize every 8x8 block of every channel in the orthonormal DCT domain
    """
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    if h % BLOCK or w % BLOCK:
        raise ValueError(f"image extents must be multiples of {BLOCK}, got {h}x{w}")

    blocks = image.reshape(c, h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)
    coefficients = dctn(blocks, axes=(-2, -1), norm="ortho")
    steps = quantization_steps(quality)
    quantized = np.round(coefficients / steps) * steps
    restored = idctn(quantized, axes=(-2, -1), norm="ortho")
    return restored.transpose(0, 1, 3, 2, 4).reshape(c, h, w)


def perturb(image: ArrayLike, params: PerturbationParams, seed: int) -> Tensor:
    """
    Add N(0, sigma^2) noise, quantize below quality 100, clip to [0, 1]
    """
    out = np.array(image, dtype=np.float64)
    if params.noise_sigma > 0.0:
        out = out + np.random.default_rng(seed).normal(0.0, params.noise_sigma, size=out.shape)
    if params.compression_quality < LOSSLESS_QUALITY:
        out = block_dct_quantize(out, params.compression_quality)
    return np.clip(out, 0.0, 1.0)
