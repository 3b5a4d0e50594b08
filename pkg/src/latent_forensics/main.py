import argparse
import logging
import sys
from collections.abc import Sequence

from latent_forensics.config import Config, create_directories, validate_config
from latent_forensics.errors import ConfigValidationError
from latent_forensics.experiment import load_config
from latent_forensics.services.pipeline import Pipeline, Stage

logger = logging.getLogger(__name__)

STAGE_HELP = {
    Stage.GEN_DATA: "synthesize the generator and the labeled dataset",
    Stage.FIT_PROJECTOR: "fit every enabled projector on the training split",
    Stage.INVERT: "encode both splits with every projector",
    Stage.TRAIN_CLASSIFIER: "train every classifier family on every projector's codes",
    Stage.EVALUATE: "score the benchmark grid and the fidelity probes",
    Stage.CHANNEL_IMPORTANCE: "per-channel accuracy of style codes",
    Stage.ABLATE_SIZE: "accuracy against training-set size",
    Stage.REPORT: "render csv, markdown and plot-data reports",
    Stage.FULL: "run every stage in order",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-forensics",
        description="Latent-space detection of synthetic image manipulations on a generated desk benchmark",
    )
    subparsers = parser.add_subparsers(dest="stage", required=True)
    for stage, help_text in STAGE_HELP.items():
        sub = subparsers.add_parser(stage.value, help=help_text)
        sub.add_argument("--config", default=None, help="TOML experiment file (defaults when omitted)")
        sub.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value by dotted key path; repeatable",
        )
        sub.add_argument("--out", default=None, help=f"output directory (default {Config.RUNS_DIR})")
        sub.add_argument("--workers", type=int, default=None, help="worker processes")
        sub.add_argument("--seed", type=int, default=None, help="master seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    try:
        validate_config()
    except ValueError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return 2

    if not logging.getLogger().handlers:
        logging.basicConfig(level=Config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config, args.overrides, args.seed, args.out, args.workers)
        create_directories(config.output_dir)
        pipeline = Pipeline(config)
        logger.info(f"Running {args.stage} in {pipeline.run_dir}")
        pipeline.run(args.stage)
    except ConfigValidationError as e:
        print(f"Configuration error at {e.key_path}: {e.message}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.error(f"{args.stage} failed: {e}")
        if Config.DEBUG:
            logger.exception(e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
