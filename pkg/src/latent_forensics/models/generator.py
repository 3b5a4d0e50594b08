"""
Desk-scale style-based generator.

A mapping network turns seed noise z into a style vector; the synthesis network starts
from a constant feature block and runs C modulated convolution blocks, each driven by
one row of the per-channel StyleCode. Row 0 drives the coarsest block.
"""

import json
import logging
import os
from collections.abc import Mapping
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import ComputationGraph, GraphBuilder, Tensor, evaluate, load_tensors, save_tensors
from latent_forensics.errors import ShapeMismatchError
from latent_forensics.models.layers import spectral_scaled
from latent_forensics.utils.seeding import rng_for

logger = logging.getLogger(__name__)

IMAGE_SIZE = 32
IMAGE_SHAPE = (3, IMAGE_SIZE, IMAGE_SIZE)
CONST_SIZE = 4
MEAN_W_SAMPLES = 1024

MAPPING_GAIN = 2.0
RGB_GAIN = 2.0
BIAS_STD = 0.1


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    d_z: int = Field(default=32, ge=1)
    d: int = Field(default=32, ge=1)
    channels: int = Field(default=6, ge=1)
    features: int = Field(default=16, ge=1)
    seed: int = Field(default=0, ge=0)


def sample_z(rng_seed: int, d_z: int = 32) -> Tensor:
    return np.random.default_rng(rng_seed).standard_normal(d_z)


def block_resolutions(channels: int) -> list[int]:
    """
    Resolution level (0 = 4x4 ... 3 = 32x32) of every synthesis block
    """
    return [min(3, (4 * i) // channels) for i in range(channels)]


def init_generator_weights(config: GeneratorConfig) -> dict[str, Tensor]:
    rng = rng_for(config.seed, "generator")
    d_z, d, f = config.d_z, config.d, config.features
    weights: dict[str, Tensor] = {}

    fan_ins = [d_z, d, d]
    for layer, fan_in in enumerate(fan_ins):
        weights[f"map/w{layer}"] = spectral_scaled(rng, (fan_in, d), MAPPING_GAIN)
        weights[f"map/b{layer}"] = rng.standard_normal(d) * BIAS_STD

    weights["syn/const"] = rng.standard_normal((1, f, CONST_SIZE, CONST_SIZE))
    for block in range(config.channels):
        weights[f"syn/conv{block}"] = spectral_scaled(rng, (f, f, 3, 3))
        weights[f"syn/conv{block}_b"] = rng.standard_normal((f, 1, 1)) * BIAS_STD
        weights[f"syn/scale{block}"] = spectral_scaled(rng, (d, f))
        weights[f"syn/scale{block}_b"] = np.ones(f)
        weights[f"syn/shift{block}"] = spectral_scaled(rng, (d, f))
        weights[f"syn/shift{block}_b"] = rng.standard_normal(f) * BIAS_STD
    weights["syn/rgb"] = spectral_scaled(rng, (3, f, 1, 1), RGB_GAIN)
    weights["syn/rgb_b"] = rng.standard_normal((3, 1, 1)) * BIAS_STD
    return weights


class GeneratorModel:
    """
    Immutable generator: weights are fixed at construction and every method is pure.

    Graphs are built once per instance; `add_synthesis` lets other modules splice the
    synthesis network into their own graphs (the inversion loss does this).
    """

    def __init__(self, config: GeneratorConfig | None = None, weights: Mapping[str, ArrayLike] | None = None):
        self.config: GeneratorConfig = config or GeneratorConfig()
        source = init_generator_weights(self.config) if weights is None else weights
        self._weights: dict[str, Tensor] = {name: np.asarray(value, dtype=np.float64) for name, value in source.items()}
        for value in self._weights.values():
            value.flags.writeable = False
        self._mapping: ComputationGraph = self._build_mapping()
        self._synthesis: ComputationGraph = self._build_synthesis()

    @property
    def code_shape(self) -> tuple[int, int]:
        return (self.config.channels, self.config.d)

    @property
    def weights(self) -> Mapping[str, Tensor]:
        return self._weights

    # ---- graph construction ----

    def _build_mapping(self) -> ComputationGraph:
        b = GraphBuilder()
        h = b.input("z")
        for layer in range(3):
            weight = b.param(f"map/w{layer}", self._weights[f"map/w{layer}"])
            bias = b.param(f"map/b{layer}", self._weights[f"map/b{layer}"])
            h = b.dense(h, weight, bias, name="w" if layer == 2 else None)
            if layer < 2:
                h = b.relu(h)
        return b.build()

    def _build_synthesis(self) -> ComputationGraph:
        b = GraphBuilder()
        w = b.input("w")
        self.add_synthesis(b, w, output="image")
        return b.build()

    def add_synthesis(self, b: GraphBuilder, w: str, output: str | None = None) -> str:
        """
        Append the synthesis network to `b`, reading codes of shape (N, C, d) from node `w`
        """
        f = self.config.features
        params = {name: b.param(name, value) for name, value in self._weights.items() if name.startswith("syn/")}

        x = params["syn/const"]
        level = 0
        for block, target_level in enumerate(block_resolutions(self.config.channels)):
            while level < target_level:
                x = b.upsample2(x)
                level += 1
            x = b.conv_bias(x, params[f"syn/conv{block}"], params[f"syn/conv{block}_b"])
            x = b.scale(b.channel_normalize(x), np.sqrt(f))

            style = b.select(w, axis=1, index=block)
            scale = b.dense(style, params[f"syn/scale{block}"], params[f"syn/scale{block}_b"])
            shift = b.dense(style, params[f"syn/shift{block}"], params[f"syn/shift{block}_b"])
            x = b.mul(x, b.reshape(scale, (-1, f, 1, 1)))
            x = b.add(x, b.reshape(shift, (-1, f, 1, 1)))
            x = b.relu(x)

        while level < 3:
            x = b.upsample2(x)
            level += 1
        rgb = b.conv_bias(x, params["syn/rgb"], params["syn/rgb_b"])
        return b.sigmoid(rgb, name=output)

    # ---- operations ----

    def map(self, z: ArrayLike) -> Tensor:
        """
        Map one noise vector to a StyleCode whose C rows all hold the same style vector
        """
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.config.d_z,):
            raise ShapeMismatchError(f"z must have shape ({self.config.d_z},), got {z.shape}")
        return self.map_batch(z[None, :])[0]

    def map_batch(self, zs: ArrayLike) -> Tensor:
        zs = np.asarray(zs, dtype=np.float64)
        if zs.ndim != 2 or zs.shape[1] != self.config.d_z:
            raise ShapeMismatchError(f"z batch must have shape (N, {self.config.d_z}), got {zs.shape}")
        w = evaluate(self._mapping, {"z": zs}, ["w"])["w"]
        return np.repeat(w[:, None, :], self.config.channels, axis=1)

    def synthesize(self, w: ArrayLike) -> Tensor:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != self.code_shape:
            raise ShapeMismatchError(f"style code must have shape {self.code_shape}, got {w.shape}")
        return self.synthesize_batch(w[None])[0]

    def synthesize_batch(self, ws: ArrayLike) -> Tensor:
        ws = np.asarray(ws, dtype=np.float64)
        if ws.ndim != 3 or ws.shape[1:] != self.code_shape:
            raise ShapeMismatchError(f"style codes must have shape (N, {self.code_shape[0]}, {self.code_shape[1]}), got {ws.shape}")
        return evaluate(self._synthesis, {"w": ws}, ["image"])["image"]

    def style_mix(self, w1: ArrayLike, w2: ArrayLike, crossover: int) -> Tensor:
        """
        Synthesize with rows [0, crossover) from w1 and rows [crossover, C) from w2
        """
        if not 0 <= crossover <= self.config.channels:
            raise ValueError(f"crossover must lie in [0, {self.config.channels}], got {crossover}")
        mixed = np.array(w2, dtype=np.float64)
        mixed[:crossover] = np.asarray(w1, dtype=np.float64)[:crossover]
        return self.synthesize(mixed)

    @cached_property
    def mean_w(self) -> Tensor:
        rng = rng_for(self.config.seed, "mean_w")
        zs = rng.standard_normal((MEAN_W_SAMPLES, self.config.d_z))
        mean = self.map_batch(zs).mean(axis=0)
        mean.flags.writeable = False
        return mean

    # ---- persistence ----

    def save(self, path: str | os.PathLike[str], metadata: Mapping[str, str] | None = None) -> Path:
        meta = {"kind": "generator", "generator_config": self.config.model_dump_json(), **(metadata or {})}
        return save_tensors(path, self._weights, meta)

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "GeneratorModel":
        tensors, metadata = load_tensors(path)
        config = GeneratorConfig.model_validate(json.loads(metadata["generator_config"]))
        logger.info(f"Loaded generator (seed {config.seed}) from {path}")
        return cls(config, tensors)
