import numpy as np
from scipy.linalg import svdvals

from latent_forensics.autodiff.tensor import Tensor


def _fan_in(shape: tuple[int, ...]) -> int:
    # dense weights are (in, out); conv kernels are (out, in, k, k)
    return shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))


def spectral_scaled(rng: np.random.Generator, shape: tuple[int, ...], gain: float = 1.0) -> Tensor:
    """
    Gaussian weights rescaled so the largest singular value of the layer equals `gain`
    """
    weights = rng.standard_normal(shape)
    matrix = weights if len(shape) == 2 else weights.reshape(shape[0], -1)
    return weights * (gain / float(svdvals(matrix)[0]))


def he_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    return rng.standard_normal(shape) * np.sqrt(2.0 / _fan_in(shape))


def glorot_normal(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    fan_out = shape[1] if len(shape) == 2 else shape[0] * int(np.prod(shape[2:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / (_fan_in(shape) + fan_out))
