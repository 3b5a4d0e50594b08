"""
Stage orchestration behind the CLI.

Every stage reads and writes only artifacts under `<output_dir>/<config_hash>/`; every
artifact carries the config hash and is refused when it was produced by another
config. Nothing time- or worker-dependent is written, so reruns are byte-identical.
"""

import json
import logging
from collections.abc import Callable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from funlog import log_calls

from latent_forensics.analysis import (
    BenchmarkResult,
    ChannelReport,
    EncodedSplit,
    channel_importance,
    emit_report,
    fit_grid_classifier,
    inversion_budget_sweep,
    render_reconstruction_csv,
    robustness_probe,
    score_accuracy,
    training_size_ablation,
    write_json,
)
from latent_forensics.autodiff import Tensor, load_tensors, save_tensors
from latent_forensics.classifiers import ClassifierKind, ClassifierModel, load_classifier
from latent_forensics.decision import Priors, calibrate_threshold, fit_density_histogram
from latent_forensics.errors import ArtifactHashMismatchError, MissingArtifactError
from latent_forensics.experiment import ExperimentConfig
from latent_forensics.models.generator import GeneratorModel
from latent_forensics.models.perceptual import FeatureExtractor, reconstruction_benchmark_by_label
from latent_forensics.projectors import (
    GanInversionProjector,
    PcaProjector,
    Projector,
    ProjectorKind,
    VqProjector,
    load_projector,
    train_encoder,
    vq_train,
)
from latent_forensics.utils.parallel import parallel_map
from latent_forensics.world.dataset import (
    LabeledImage,
    build_dataset,
    dataset_params_hash,
    labels_of,
    read_dataset,
    read_manifest,
    split_dataset,
    stack_images,
    write_dataset,
)

logger = logging.getLogger(__name__)


class Stage(str, Enum):
    GEN_DATA = "gen-data"
    FIT_PROJECTOR = "fit-projector"
    INVERT = "invert"
    TRAIN_CLASSIFIER = "train-classifier"
    EVALUATE = "evaluate"
    CHANNEL_IMPORTANCE = "channel-importance"
    ABLATE_SIZE = "ablate-size"
    REPORT = "report"
    FULL = "full"


def _fit_classifier_task(task: tuple[Any, Tensor, Tensor, int]) -> ClassifierModel:
    spec, features, labels, seed = task
    return fit_grid_classifier(spec, features, labels, seed)


class Pipeline:
    def __init__(self, config: ExperimentConfig):
        self.config: ExperimentConfig = config
        self.config_hash: str = config.config_hash
        self.run_dir: Path = config.run_dir
        self.workers: int = config.workers
        self._generator: GeneratorModel | None = None
        self._extractor: FeatureExtractor | None = None
        self._split: tuple[list[LabeledImage], list[LabeledImage]] | None = None

    # ---- artifact paths ----

    @property
    def generator_path(self) -> Path:
        return self.run_dir / "generator.lfl"

    @property
    def data_dir(self) -> Path:
        return self.run_dir / "data"

    @property
    def split_path(self) -> Path:
        return self.data_dir / "split.json"

    def projector_path(self, kind: ProjectorKind) -> Path:
        return self.run_dir / "projectors" / f"{kind.value}.lfl"

    def codes_path(self, kind: ProjectorKind) -> Path:
        return self.run_dir / "codes" / f"{kind.value}.lfl"

    def classifier_path(self, kind: ProjectorKind, classifier: ClassifierKind, seed: int) -> Path:
        return self.run_dir / "classifiers" / f"{kind.value}_{classifier.value}_seed{seed}.lfl"

    def result_path(self, name: str) -> Path:
        return self.run_dir / "results" / f"{name}.json"

    @property
    def reports_dir(self) -> Path:
        return self.run_dir / "reports"

    # ---- artifact checks ----

    @property
    def _meta(self) -> dict[str, str]:
        return {"config_hash": self.config_hash}

    def _check_hash(self, path: Path, found: str | None) -> None:
        if found != self.config_hash:
            raise ArtifactHashMismatchError(str(path), self.config_hash, found)

    def _require(self, path: Path, producer: Stage) -> Path:
        if not path.exists():
            raise MissingArtifactError(str(path), producer.value)
        return path

    def _load_checked(self, path: Path, producer: Stage) -> tuple[dict[str, Tensor], dict[str, str]]:
        tensors, metadata = load_tensors(self._require(path, producer))
        self._check_hash(path, metadata.get("config_hash"))
        return tensors, metadata

    def _read_json(self, path: Path, producer: Stage) -> dict[str, Any]:
        payload = json.loads(self._require(path, producer).read_text(encoding="utf-8"))
        self._check_hash(path, payload.get("config_hash"))
        return payload

    def _read_result(self, name: str, producer: Stage) -> dict[str, Any]:
        return self._read_json(self.result_path(name), producer)

    # ---- shared state ----

    @property
    def generator(self) -> GeneratorModel:
        if self._generator is None:
            self._load_checked(self.generator_path, Stage.GEN_DATA)
            self._generator = GeneratorModel.load(self.generator_path)
        return self._generator

    @property
    def extractor(self) -> FeatureExtractor:
        if self._extractor is None:
            self._extractor = FeatureExtractor(self.config.perceptual_seed_value)
        return self._extractor

    @property
    def priors(self) -> Priors | None:
        return self.config.decision.priors()

    def split(self) -> tuple[list[LabeledImage], list[LabeledImage]]:
        if self._split is None:
            self._require(self.data_dir / "manifest.jsonl", Stage.GEN_DATA)
            records = read_manifest(self.data_dir)
            if records:
                self._check_hash(self.data_dir, records[0].config_hash)
            split = self._read_json(self.split_path, Stage.GEN_DATA)
            data = read_dataset(self.data_dir)
            train_sources = set(split["train_sources"])
            train = [item for item in data if item.source_id in train_sources]
            test = [item for item in data if item.source_id not in train_sources]
            self._split = (train, test)
        return self._split

    def load_projector(self, kind: ProjectorKind) -> Projector:
        path = self.projector_path(kind)
        self._load_checked(path, Stage.FIT_PROJECTOR)
        projector = load_projector(path, self.generator, self.extractor)
        if isinstance(projector, GanInversionProjector):
            projector.workers = self.workers
        return projector

    def load_codes(self, kind: ProjectorKind) -> dict[str, Tensor]:
        tensors, _ = self._load_checked(self.codes_path(kind), Stage.INVERT)
        return tensors

    def encoded_split(self, kind: ProjectorKind) -> EncodedSplit:
        train, test = self.split()
        codes = self.load_codes(kind)
        projector = self.load_projector(kind)
        return EncodedSplit(
            projector=kind.short_name,
            train_features=projector.classifier_features(codes["train"]),
            train_labels=labels_of(train),
            test_features=projector.classifier_features(codes["test"]),
            test_labels=labels_of(test),
        )

    # ---- stages ----

    @log_calls(level="info", show_timing_only=True)
    def gen_data(self) -> Path:
        settings = self.config.dataset
        seed = self.config.dataset_seed
        g = GeneratorModel(self.config.generator_config())
        g.save(self.generator_path, self._meta)
        self._generator = g

        data = build_dataset(g, settings, seed, self.workers)
        train, test = split_dataset(data, settings.train_fraction, seed)
        params_hash = dataset_params_hash(settings, g.config.seed, seed)
        manifest = write_dataset(data, self.data_dir, params_hash, self.config_hash, settings.storage)
        write_json(
            self.split_path,
            {
                "train_sources": sorted({item.source_id for item in train}),
                "test_sources": sorted({item.source_id for item in test}),
            },
            self.config_hash,
        )
        self._split = (train, test)
        return manifest

    @log_calls(level="info", show_timing_only=True)
    def fit_projector(self) -> list[Path]:
        train, _ = self.split()
        images = stack_images(train)
        section = self.config.projectors
        written = []
        for kind in section.enabled():
            path = self.projector_path(kind)
            try:
                projector = self._fit(kind, images)
                written.append(projector.save(path, self._meta))
            except Exception as e:
                logger.error(f"Error fitting projector {kind.value}: {e}")
                raise
        return written

    def _fit(self, kind: ProjectorKind, images: Tensor) -> Projector:
        section = self.config.projectors
        if kind is ProjectorKind.PCA:
            return PcaProjector.fit(images, section.pca.d_prime, section.pca.batch_size)
        if kind is ProjectorKind.VQ:
            seed = self.config.component_seed(section.vq.seed, "vq")
            model, _ = vq_train(images, section.vq.epochs, seed, section.vq)
            return VqProjector(model)

        gan = section.gan_inversion
        seed = self.config.component_seed(gan.seed, "gan_inversion")
        encoder = None
        if gan.encoder.enabled:
            encoder_seed = self.config.component_seed(gan.encoder.seed, "encoder")
            encoder = train_encoder(self.generator, gan.encoder.n_pairs, gan.encoder.epochs, encoder_seed, gan.encoder)
        return GanInversionProjector(self.generator, gan.inversion, self.extractor, encoder, seed, self.workers)

    @log_calls(level="info", show_timing_only=True)
    def invert(self) -> list[Path]:
        train, test = self.split()
        written = []
        for kind in self.config.projectors.enabled():
            projector = self.load_projector(kind)
            tensors: dict[str, Tensor] = {}
            for name, part in (("train", train), ("test", test)):
                images = stack_images(part)
                if isinstance(projector, GanInversionProjector):
                    result = projector.project_with_losses(images)
                    tensors[name], tensors[f"{name}_losses"] = result.codes, result.losses
                else:
                    tensors[name] = projector.project_batch(images)
            written.append(save_tensors(self.codes_path(kind), tensors, self._meta))
        return written

    @log_calls(level="info", show_timing_only=True)
    def train_classifier(self) -> list[Path]:
        seeds = self.config.analysis.seeds
        written = []
        for kind in self.config.projectors.enabled():
            split = self.encoded_split(kind)
            cells = [(spec, seed) for spec in self.config.classifiers for seed in seeds]
            tasks = [(spec, split.train_features, split.train_labels, seed) for spec, seed in cells]
            models = parallel_map(_fit_classifier_task, tasks, self.workers)
            for (spec, seed), model in zip(cells, models, strict=True):
                written.append(model.save(self.classifier_path(kind, spec.kind, seed), self._meta))
        return written

    def load_classifier(self, kind: ProjectorKind, classifier: ClassifierKind, seed: int) -> ClassifierModel:
        path = self.classifier_path(kind, classifier, seed)
        self._load_checked(path, Stage.TRAIN_CLASSIFIER)
        return load_classifier(path)

    @log_calls(level="info", show_timing_only=True)
    def evaluate(self) -> BenchmarkResult:
        _, test = self.split()
        analysis = self.config.analysis
        rows = []
        reconstruction: dict[str, Any] = {}
        decision: dict[str, Any] = {}
        for kind in self.config.projectors.enabled():
            split = self.encoded_split(kind)
            priors = self.priors or Priors.from_labels(split.train_labels)
            densities: dict[str, Any] = {}
            for spec in self.config.classifiers:
                for seed in analysis.seeds:
                    model = self.load_classifier(kind, spec.kind, seed)
                    rows.append(
                        score_accuracy(
                            model, split.test_features, split.test_labels, priors, kind.short_name, split.train_labels.size, seed
                        )
                    )
                    if seed == analysis.seeds[0]:
                        densities[spec.kind.short_name] = self._score_densities(model, split)
            decision[kind.short_name] = {
                "pi_m": priors.pi_m,
                "pi_g": priors.pi_g,
                **calibrate_threshold(priors).to_dict(),
                "density": densities,
            }

            projector = self.load_projector(kind)
            summary = reconstruction_benchmark_by_label(
                projector, test, self.extractor, min(analysis.reconstruction_n, len(test)), self.load_codes(kind)["test"]
            )
            reconstruction[kind.short_name] = {
                label: {"n": n, "mean": mean, "ci95": ci} for label, (n, mean, ci) in summary.items()
            }

        result = BenchmarkResult(rows=tuple(rows))
        write_json(
            self.result_path("benchmark"), {**result.model_dump(mode="json"), "decision": decision}, self.config_hash
        )
        write_json(self.result_path("reconstruction"), {"projectors": reconstruction}, self.config_hash)
        self._robustness(test)
        self._budget(test)
        return result

    def _score_densities(self, model: ClassifierModel, split: EncodedSplit) -> dict[str, Any]:
        """
        Histogram densities of the test scores, one per label present
        """
        scores = model.predict_scores(split.test_features)
        fake = np.asarray(split.test_labels) == 1.0
        bins = self.config.decision.density_bins
        return {
            name: fit_density_histogram(scores[mask], bins).to_dict()
            for name, mask in (("genuine", ~fake), ("fake", fake))
            if mask.any()
        }

    def _robustness(self, test: Sequence[LabeledImage]) -> None:
        settings = self.config.analysis.robustness
        if not settings.enabled or settings.projector not in self.config.projectors.enabled():
            return
        seed = self.config.analysis.seeds[0]
        model = self.load_classifier(settings.projector, settings.classifier, seed)
        priors = self.priors or Priors.from_labels(labels_of(self.split()[0]))
        rows = robustness_probe(self.load_projector(settings.projector), model, test, settings.qualities, seed, priors)
        payload = {
            "projector": settings.projector.short_name,
            "classifier": model.kind.short_name,
            "rows": [row.model_dump(mode="json") for row in rows],
        }
        write_json(self.result_path("robustness"), payload, self.config_hash)

    def _budget(self, test: Sequence[LabeledImage]) -> None:
        analysis = self.config.analysis
        gan = self.config.projectors.gan_inversion
        if not analysis.budget_steps or not gan.enabled:
            return
        genuine = [item for item in test if not item.is_fake][: analysis.budget_images]
        rows = inversion_budget_sweep(
            self.generator,
            stack_images(genuine),
            analysis.budget_steps,
            gan.inversion,
            self.extractor,
            self.config.component_seed(gan.seed, "gan_inversion"),
            self.workers,
        )
        write_json(self.result_path("budget"), {"rows": [row.model_dump(mode="json") for row in rows]}, self.config_hash)

    @log_calls(level="info", show_timing_only=True)
    def channel_importance(self) -> list[ChannelReport]:
        if not self.config.projectors.gan_inversion.enabled:
            raise ValueError("channel importance needs the gan_inversion projector to be enabled")
        train, test = self.split()
        codes = self.load_codes(ProjectorKind.GAN_INVERSION)
        reports: list[ChannelReport] = []
        for kind in self.config.analysis.channel_classifiers:
            reports += channel_importance(
                codes["train"],
                labels_of(train),
                codes["test"],
                labels_of(test),
                self.config.classifier_spec(kind),
                self.config.analysis.seeds,
                self.priors,
                self.workers,
            )
        write_json(self.result_path("channels"), {"reports": [r.model_dump(mode="json") for r in reports]}, self.config_hash)
        return reports

    @log_calls(level="info", show_timing_only=True)
    def ablate_size(self) -> BenchmarkResult:
        analysis = self.config.analysis
        split = self.encoded_split(analysis.ablation_projector)
        result = training_size_ablation(
            split,
            analysis.ablation_sizes,
            self.config.classifier_spec(analysis.ablation_classifier),
            analysis.seeds,
            self.priors,
            self.workers,
        )
        write_json(self.result_path("ablation"), result.model_dump(mode="json"), self.config_hash)
        return result

    @log_calls(level="info", show_timing_only=True)
    def report(self) -> list[Path]:
        formats = self.config.analysis.formats
        benchmark = BenchmarkResult.model_validate(self._read_result("benchmark", Stage.EVALUATE))
        written = [emit_report(benchmark, fmt, self.reports_dir / "benchmark", self.config_hash) for fmt in formats]

        if self.result_path("channels").exists():
            payload = self._read_result("channels", Stage.CHANNEL_IMPORTANCE)
            reports = [ChannelReport.model_validate(item) for item in payload["reports"]]
            written += [emit_report(reports, fmt, self.reports_dir / "channel_importance", self.config_hash) for fmt in formats]
        if self.result_path("ablation").exists():
            ablation = BenchmarkResult.model_validate(self._read_result("ablation", Stage.ABLATE_SIZE))
            written += [emit_report(ablation, fmt, self.reports_dir / "ablation", self.config_hash) for fmt in formats]

        self.reports_dir.mkdir(parents=True, exist_ok=True)
        reconstruction = self.reports_dir / "reconstruction.csv"
        summary = self._read_result("reconstruction", Stage.EVALUATE)["projectors"]
        reconstruction.write_text(render_reconstruction_csv(summary, self.config_hash), encoding="utf-8")
        written.append(reconstruction)

        written.append(self._summary())
        return written

    def _summary(self) -> Path:
        lines = ["# Reconstruction benchmark", "", "| projector | label | n | mean | ci95 |", "|---|---|---:|---:|---:|"]
        reconstruction = self._read_result("reconstruction", Stage.EVALUATE)["projectors"]
        for projector, labels in reconstruction.items():
            for label, entry in labels.items():
                lines.append(f"| {projector} | {label} | {entry['n']} | {entry['mean']:.6f} | {entry['ci95']:.6f} |")

        if self.result_path("robustness").exists():
            robustness = self._read_result("robustness", Stage.EVALUATE)
            lines += ["", f"# Robustness ({robustness['projector']} {robustness['classifier']})", ""]
            lines += ["| quality | accuracy |", "|---:|---:|"]
            lines += [f"| {row['quality']} | {row['accuracy']:.6f} |" for row in robustness["rows"]]

        if self.result_path("budget").exists():
            budget = self._read_result("budget", Stage.EVALUATE)
            lines += ["", "# Inversion budget", "", "| steps | mean | ci95 |", "|---:|---:|---:|"]
            lines += [f"| {row['steps']} | {row['mean_distance']:.6f} | {row['ci95']:.6f} |" for row in budget["rows"]]

        lines += ["", f"<!-- config_hash: {self.config_hash} -->"]
        target = self.reports_dir / "summary.md"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return target

    @log_calls(level="info", show_timing_only=True)
    def full(self) -> list[Path]:
        self.gen_data()
        self.fit_projector()
        self.invert()
        self.train_classifier()
        self.evaluate()
        if self.config.projectors.gan_inversion.enabled:
            self.channel_importance()
        if self.config.analysis.ablation_sizes and self.config.analysis.ablation_projector in self.config.projectors.enabled():
            self.ablate_size()
        return self.report()

    def run(self, stage: Stage | str) -> Any:
        actions: dict[Stage, Callable[[], Any]] = {
            Stage.GEN_DATA: self.gen_data,
            Stage.FIT_PROJECTOR: self.fit_projector,
            Stage.INVERT: self.invert,
            Stage.TRAIN_CLASSIFIER: self.train_classifier,
            Stage.EVALUATE: self.evaluate,
            Stage.CHANNEL_IMPORTANCE: self.channel_importance,
            Stage.ABLATE_SIZE: self.ablate_size,
            Stage.REPORT: self.report,
            Stage.FULL: self.full,
        }
        self.run_dir.mkdir(parents=True, exist_ok=True)
        return actions[Stage(stage)]()

