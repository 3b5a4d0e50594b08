from typing import TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Dense row-major float64 array; every tensor in the package is one of these.
Tensor: TypeAlias = NDArray[np.float64]


def as_tensor(value: ArrayLike) -> Tensor:
    return np.ascontiguousarray(value, dtype=np.float64)


def frozen(value: ArrayLike) -> Tensor:
    """
    Float64 copy of `value` marked read-only
    """
    array = np.array(value, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array
