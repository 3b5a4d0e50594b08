from latent_forensics.decision.criterion import (
    DecisionRule,
    DensityModel,
    Priors,
    calibrate_threshold,
    criterion_value,
    empirical_mean_error,
    fit_density_histogram,
    likelihood_ratio_rule,
)

__all__ = [
    "DecisionRule",
    "DensityModel",
    "Priors",
    "calibrate_threshold",
    "criterion_value",
    "empirical_mean_error",
    "fit_density_histogram",
    "likelihood_ratio_rule",
]
