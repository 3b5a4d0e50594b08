"""
Hierarchical experiment configuration: TOML files plus dotted `--set` overrides.
"""

import logging
import os
import tomllib
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from latent_forensics.analysis.report import ReportFormat
from latent_forensics.classifiers import ClassifierKind, ClassifierSpec
from latent_forensics.config import Config
from latent_forensics.decision import Priors
from latent_forensics.errors import ConfigValidationError
from latent_forensics.models.generator import GeneratorConfig
from latent_forensics.projectors import EncoderSettings, InversionConfig, ProjectorKind, VqSettings
from latent_forensics.utils.hashing import stable_hash
from latent_forensics.utils.seeding import derive_seed
from latent_forensics.world.dataset import DatasetSettings

logger = logging.getLogger(__name__)

# Keys that never change results and are left out of the config hash
UNHASHED_KEYS = {"output_dir", "workers"}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeneratorSection(_Section):
    d_z: int = Field(default=32, ge=1)
    d: int = Field(default=32, ge=1)
    channels: int = Field(default=6, ge=1)
    features: int = Field(default=16, ge=1)
    seed: int | None = Field(default=None, ge=0)


class PcaSettings(_Section):
    enabled: bool = True
    d_prime: int = Field(default=64, ge=1)
    batch_size: int = Field(default=128, ge=1)


class GanInversionSettings(_Section):
    enabled: bool = True
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    encoder: EncoderSettings = Field(default_factory=EncoderSettings)
    seed: int | None = Field(default=None, ge=0)


class ProjectorsSection(_Section):
    pca: PcaSettings = Field(default_factory=PcaSettings)
    vq: VqSettings = Field(default_factory=VqSettings)
    gan_inversion: GanInversionSettings = Field(default_factory=GanInversionSettings)

    def enabled(self) -> list[ProjectorKind]:
        flags = {
            ProjectorKind.PCA: self.pca.enabled,
            ProjectorKind.VQ: self.vq.enabled,
            ProjectorKind.GAN_INVERSION: self.gan_inversion.enabled,
        }
        return [kind for kind, on in flags.items() if on]


class DecisionSection(_Section):
    # None: use the training-set class proportion
    pi_m: float | None = Field(default=None, gt=0.0, lt=1.0)
    # histogram bins of the score densities recorded with the benchmark
    density_bins: int = Field(default=20, ge=1)

    def priors(self) -> Priors | None:
        return None if self.pi_m is None else Priors(pi_m=self.pi_m)


class RobustnessSettings(_Section):
    enabled: bool = True
    projector: ProjectorKind = ProjectorKind.PCA
    classifier: ClassifierKind = ClassifierKind.RF
    qualities: list[int] = Field(default_factory=lambda: [100, 75, 50, 25])


class AnalysisSection(_Section):
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], min_length=1)
    ablation_sizes: list[int] = Field(default_factory=lambda: [50, 200, 800])
    ablation_projector: ProjectorKind = ProjectorKind.GAN_INVERSION
    ablation_classifier: ClassifierKind = ClassifierKind.RF
    channel_classifiers: list[ClassifierKind] = Field(default_factory=lambda: [ClassifierKind.RF, ClassifierKind.MLP5])
    reconstruction_n: int = Field(default=250, ge=1)
    budget_steps: list[int] = Field(default_factory=list)
    budget_images: int = Field(default=50, ge=1)
    robustness: RobustnessSettings = Field(default_factory=RobustnessSettings)
    formats: list[ReportFormat] = Field(
        default_factory=lambda: [ReportFormat.CSV, ReportFormat.MARKDOWN, ReportFormat.PLOTDATA]
    )


def _default_classifiers() -> list[ClassifierSpec]:
    return [ClassifierSpec(kind=kind) for kind in ClassifierKind]


class ExperimentConfig(_Section):
    seed: int = Field(default=0, ge=0)
    perceptual_seed: int | None = Field(default=None, ge=0)
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    dataset: DatasetSettings = Field(default_factory=DatasetSettings)
    projectors: ProjectorsSection = Field(default_factory=ProjectorsSection)
    classifiers: list[ClassifierSpec] = Field(default_factory=_default_classifiers, min_length=1)
    decision: DecisionSection = Field(default_factory=DecisionSection)
    analysis: AnalysisSection = Field(default_factory=AnalysisSection)
    output_dir: str = Config.RUNS_DIR
    workers: int = Field(default=1, ge=1)

    # ---- derived values ----

    def component_seed(self, explicit: int | None, component: str) -> int:
        return derive_seed(self.seed, component) if explicit is None else explicit

    def generator_config(self) -> GeneratorConfig:
        section = self.generator
        return GeneratorConfig(
            d_z=section.d_z,
            d=section.d,
            channels=section.channels,
            features=section.features,
            seed=self.component_seed(section.seed, "generator"),
        )

    @property
    def dataset_seed(self) -> int:
        return self.component_seed(self.dataset.seed, "dataset")

    @property
    def perceptual_seed_value(self) -> int:
        return self.component_seed(self.perceptual_seed, "perceptual")

    @property
    def config_hash(self) -> str:
        return stable_hash(self.model_dump(mode="json", exclude=UNHASHED_KEYS))

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.config_hash

    def classifier_spec(self, kind: ClassifierKind) -> ClassifierSpec:
        for spec in self.classifiers:
            if spec.kind is kind:
                return spec
        return ClassifierSpec(kind=kind)


# ---- loading ----


def parse_override(override: str) -> tuple[list[str], Any]:
    """
    Split `a.b.c=value`; the value is read as a TOML literal, or kept as a bare string
    """
    key, sep, raw = override.partition("=")
    if not sep or not key.strip():
        raise ConfigValidationError(override, "overrides must look like key.path=value")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")["value"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return [part.strip() for part in key.split(".")], value


def apply_overrides(data: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    for override in overrides:
        path, value = parse_override(override)
        node = data
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigValidationError(".".join(path), f"'{part}' is not a table")
            node = child
        node[path[-1]] = value
    return data


def validate_experiment(data: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key_path = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigValidationError(key_path, first["msg"]) from e


def load_config(
    path: str | os.PathLike[str] | None = None,
    overrides: Sequence[str] = (),
    seed: int | None = None,
    output_dir: str | None = None,
    workers: int | None = None,
) -> ExperimentConfig:
    """
    Read a TOML experiment file (defaults when `path` is None), apply overrides and validate
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            raise ConfigValidationError(str(path), f"invalid TOML: {e}") from e
        except Exception as e:
            logger.error(f"Error reading config {path}: {e}")
            raise

    data = apply_overrides(data, overrides)
    for key, value in (("seed", seed), ("output_dir", output_dir), ("workers", workers)):
        if value is not None:
            data[key] = value

    config = validate_experiment(data)
    logger.info(f"Loaded experiment config {config.config_hash} (master seed {config.seed})")
    return config
