from latent_forensics.analysis.experiments import (
    benchmark_codes,
    benchmark_grid,
    channel_importance,
    encode_split,
    fit_grid_classifier,
    inversion_budget_sweep,
    robustness_probe,
    score_accuracy,
    stratified_subsample,
    training_size_ablation,
)
from latent_forensics.analysis.report import (
    CSV_HEADER,
    RECONSTRUCTION_CSV_HEADER,
    ReportFormat,
    emit_report,
    render_reconstruction_csv,
    render_report,
    write_json,
)
from latent_forensics.analysis.results import (
    BenchmarkResult,
    BenchmarkRow,
    BudgetRow,
    ChannelReport,
    EncodedSplit,
    RobustnessRow,
)

__all__ = [
    "CSV_HEADER",
    "RECONSTRUCTION_CSV_HEADER",
    "BenchmarkResult",
    "BenchmarkRow",
    "BudgetRow",
    "ChannelReport",
    "EncodedSplit",
    "ReportFormat",
    "RobustnessRow",
    "benchmark_codes",
    "benchmark_grid",
    "channel_importance",
    "emit_report",
    "encode_split",
    "fit_grid_classifier",
    "inversion_budget_sweep",
    "render_reconstruction_csv",
    "render_report",
    "robustness_probe",
    "score_accuracy",
    "stratified_subsample",
    "training_size_ablation",
    "write_json",
]
