import json
import logging
import os
from collections.abc import Sequence
from enum import Enum
from pathlib import Path
from typing import Any

from latent_forensics.analysis.results import BenchmarkResult, ChannelReport

logger = logging.getLogger(__name__)

CSV_HEADER = "projector,classifier,train_size,seed,accuracy,tp,fp,tn,fn"
CHANNEL_CSV_HEADER = "classifier,seed,channel,accuracy"
RECONSTRUCTION_CSV_HEADER = "projector,label,n,mean,ci_low,ci_high"


class ReportFormat(str, Enum):
    CSV = "csv"
    MARKDOWN = "markdown"
    PLOTDATA = "plotdata"

    @property
    def suffix(self) -> str:
        return {"csv": ".csv", "markdown": ".md", "plotdata": ".json"}[self.value]


Results = BenchmarkResult | Sequence[ChannelReport]


def _accuracy(value: float) -> str:
    return f"{value:.6f}"


def _benchmark_csv(result: BenchmarkResult) -> list[str]:
    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(f"{r.projector},{r.classifier},{r.train_size},{r.seed},{_accuracy(r.accuracy)},{r.tp},{r.fp},{r.tn},{r.fn}")
    return lines


def _benchmark_markdown(result: BenchmarkResult) -> list[str]:
    lines = [
        "| projector | classifier | train_size | seed | accuracy | tp | fp | tn | fn |",
        "|---|---|---:|---:|---:|---:|---:|---:|---:|",
    ]
    for r in result.rows:
        lines.append(
            f"| {r.projector} | {r.classifier} | {r.train_size} | {r.seed} | {_accuracy(r.accuracy)} "
            f"| {r.tp} | {r.fp} | {r.tn} | {r.fn} |"
        )
    return lines


def _benchmark_plotdata(result: BenchmarkResult) -> dict[str, Any]:
    series: dict[tuple[str, str], dict[str, list[float]]] = {}
    for r in result.rows:
        entry = series.setdefault((r.projector, r.classifier), {"x": [], "y": []})
        entry["x"].append(r.train_size)
        entry["y"].append(r.accuracy)
    return {
        "figure": "accuracy",
        "x_label": "train_size",
        "y_label": "accuracy",
        "series": [{"label": f"{p} {c}", **values} for (p, c), values in series.items()],
    }


def _channel_csv(reports: Sequence[ChannelReport]) -> list[str]:
    lines = [CHANNEL_CSV_HEADER]
    for report in reports:
        for channel, accuracy in enumerate(report.accuracies):
            lines.append(f"{report.classifier},{report.seed},{channel},{_accuracy(accuracy)}")
    return lines


def _channel_markdown(reports: Sequence[ChannelReport]) -> list[str]:
    n = max(report.n_channels for report in reports)
    lines = [
        "| classifier | seed | " + " | ".join(f"ch{c}" for c in range(n)) + " |",
        "|---|---:|" + "---:|" * n,
    ]
    for report in reports:
        cells = " | ".join(_accuracy(a) for a in report.accuracies)
        lines.append(f"| {report.classifier} | {report.seed} | {cells} |")
    return lines


def _channel_plotdata(reports: Sequence[ChannelReport]) -> dict[str, Any]:
    return {
        "figure": "channel_importance",
        "x_label": "channel",
        "y_label": "accuracy",
        "series": [
            {
                "label": f"{report.classifier} seed {report.seed}",
                "x": list(range(report.n_channels)),
                "y": list(report.accuracies),
            }
            for report in reports
        ],
    }


def render_report(results: Results, fmt: ReportFormat | str, config_hash: str = "") -> str:
    """
    Deterministic text rendering of benchmark rows or channel reports
    """
    fmt = ReportFormat(fmt)
    is_benchmark = isinstance(results, BenchmarkResult)
    if len(results) == 0:
        raise ValueError("cannot emit a report for empty results")
    if not is_benchmark and not all(isinstance(item, ChannelReport) for item in results):
        raise TypeError("results must be a BenchmarkResult or a sequence of ChannelReport")

    if fmt is ReportFormat.PLOTDATA:
        payload = _benchmark_plotdata(results) if is_benchmark else _channel_plotdata(results)  # type: ignore[arg-type]
        payload["config_hash"] = config_hash
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    if fmt is ReportFormat.CSV:
        lines = _benchmark_csv(results) if is_benchmark else _channel_csv(results)  # type: ignore[arg-type]
        if config_hash:
            lines.append(f"# config_hash: {config_hash}")
    else:
        lines = _benchmark_markdown(results) if is_benchmark else _channel_markdown(results)  # type: ignore[arg-type]
        if config_hash:
            lines += ["", f"<!-- config_hash: {config_hash} -->"]
    return "\n".join(lines) + "\n"


def render_reconstruction_csv(summary: dict[str, dict[str, dict[str, Any]]], config_hash: str = "") -> str:
    """
    Perceptual reconstruction benchmark as `projector -> label -> {n, mean, ci95}` rows
    """
    lines = [RECONSTRUCTION_CSV_HEADER]
    for projector, labels in summary.items():
        for label, entry in labels.items():
            mean, ci = entry["mean"], entry["ci95"]
            lines.append(f"{projector},{label},{entry['n']},{mean:.6f},{mean - ci:.6f},{mean + ci:.6f}")
    if config_hash:
        lines.append(f"# config_hash: {config_hash}")
    return "\n".join(lines) + "\n"


def emit_report(
    results: Results,
    fmt: ReportFormat | str,
    path: str | os.PathLike[str],
    config_hash: str = "",
) -> Path:
    """
    Write the rendered report to `path`; the format's suffix is added when missing
    """
    try:
        fmt = ReportFormat(fmt)
    except ValueError as e:
        raise ValueError(f"unknown report format '{fmt}', expected one of csv, markdown, plotdata") from e

    target = Path(path)
    if target.suffix != fmt.suffix:
        target = target.with_name(target.name + fmt.suffix)
    text = render_report(results, fmt, config_hash)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    except Exception as e:
        logger.error(f"Error writing report {target}: {e}")
        raise
    logger.info(f"Wrote {fmt.value} report {target}")
    return target


def write_json(path: str | os.PathLike[str], payload: dict[str, Any], config_hash: str) -> Path:
    """
    Canonical JSON artifact carrying its config hash
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps({**payload, "config_hash": config_hash}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except Exception as e:
        logger.error(f"Error writing {target}: {e}")
        raise
    return target
