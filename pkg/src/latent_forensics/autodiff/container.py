"""
LFL1 tensor container.

Layout (all integers 64-bit little-endian unsigned, all data 64-bit little-endian floats):

    b"LFL1"
    repeated until end of file:
        name_length, name (UTF-8), rank, extents[rank], data[prod(extents)]

String metadata travels as one-element records whose name is "@key=value" and whose
payload is a single 0.0, so any reader of the plain format still parses the file.
"""

import logging
import os
from collections.abc import Mapping
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from latent_forensics.autodiff.tensor import Tensor, as_tensor
from latent_forensics.errors import ContainerFormatError

logger = logging.getLogger(__name__)

MAGIC = b"LFL1"
META_PREFIX = "@"

_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


def encode_tensors(tensors: Mapping[str, ArrayLike], metadata: Mapping[str, str] | None = None) -> bytes:
    chunks: list[bytes] = [MAGIC]

    def record(name: str, array: Tensor) -> None:
        encoded = name.encode("utf-8")
        chunks.append(np.array([len(encoded)], dtype=_U64).tobytes())
        chunks.append(encoded)
        chunks.append(np.array([array.ndim, *array.shape], dtype=_U64).tobytes())
        chunks.append(np.ascontiguousarray(array, dtype=_F64).tobytes())

    for key, value in sorted((metadata or {}).items()):
        if "=" in key:
            raise ValueError(f"Metadata key may not contain '=': {key}")
        record(f"{META_PREFIX}{key}={value}", np.zeros(1))
    for name, value in tensors.items():
        if name.startswith(META_PREFIX):
            raise ValueError(f"Tensor names may not start with '{META_PREFIX}': {name}")
        record(name, as_tensor(value))
    return b"".join(chunks)


def decode_tensors(payload: bytes) -> tuple[dict[str, Tensor], dict[str, str]]:
    if payload[: len(MAGIC)] != MAGIC:
        raise ContainerFormatError("missing LFL1 magic")

    tensors: dict[str, Tensor] = {}
    metadata: dict[str, str] = {}
    offset = len(MAGIC)

    def take(count: int, dtype: np.dtype) -> np.ndarray:
        nonlocal offset
        end = offset + count * dtype.itemsize
        if end > len(payload):
            raise ContainerFormatError(f"truncated container at byte {offset}")
        values = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
        offset = end
        return values

    while offset < len(payload):
        name_length = int(take(1, _U64)[0])
        if offset + name_length > len(payload):
            raise ContainerFormatError(f"truncated record name at byte {offset}")
        try:
            name = payload[offset : offset + name_length].decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerFormatError(f"record name at byte {offset} is not UTF-8") from e
        offset += name_length
        rank = int(take(1, _U64)[0])
        shape = tuple(int(e) for e in take(rank, _U64))
        data = take(int(np.prod(shape, dtype=np.int64)), _F64)

        if name.startswith(META_PREFIX):
            key, _, value = name[len(META_PREFIX) :].partition("=")
            metadata[key] = value
        else:
            tensors[name] = data.astype(np.float64).reshape(shape)
    return tensors, metadata


def save_tensors(
    path: str | os.PathLike[str],
    tensors: Mapping[str, ArrayLike],
    metadata: Mapping[str, str] | None = None,
) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(encode_tensors(tensors, metadata))
        logger.debug(f"Wrote {len(tensors)} tensors to {target}")
        return target
    except Exception as e:
        logger.error(f"Error writing tensor container {target}: {e}")
        raise


def load_tensors(path: str | os.PathLike[str]) -> tuple[dict[str, Tensor], dict[str, str]]:
    source = Path(path)
    try:
        return decode_tensors(source.read_bytes())
    except Exception as e:
        logger.error(f"Error reading tensor container {source}: {e}")
        raise
