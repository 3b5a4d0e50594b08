from itertools import pairwise

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import norm

from latent_forensics.decision import (
    DecisionRule,
    DensityModel,
    Priors,
    calibrate_threshold,
    criterion_value,
    empirical_mean_error,
    fit_density_histogram,
    likelihood_ratio_rule,
)
from latent_forensics.errors import ShapeMismatchError, SingleClassError, UndefinedPointError


@pytest.fixture(scope="module")
def gaussians() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(0)
    return rng.normal(-1.0, 1.0, 20_000), rng.normal(1.0, 1.0, 20_000)


def _step_density(values: list[float]) -> DensityModel:
    return DensityModel(edges=(np.arange(len(values) + 1, dtype=float),), density=np.array(values))


def test_priors_are_validated():
    with pytest.raises(ValidationError):
        Priors(pi_m=0.0)
    with pytest.raises(ValidationError):
        Priors(pi_m=1.0)

    priors = Priors(pi_m=0.2)
    assert priors.pi_g == pytest.approx(0.8)
    assert priors.odds == pytest.approx(4.0)


def test_priors_from_training_labels():
    assert Priors.from_labels([0, 1, 1, 1]).pi_m == 0.75
    with pytest.raises(SingleClassError):
        Priors.from_labels([1, 1])


def test_equal_densities_sit_on_the_boundary():
    density = _step_density([0.5, 0.5])

    assert criterion_value(0.5, density, density, Priors()) == 0.0


def test_double_fake_density_decides_fake():
    p_m, p_g = _step_density([0.5, 0.5]), _step_density([0.25, 0.75])

    assert criterion_value(0.5, p_m, p_g, Priors()) == 1.0


def test_criterion_where_densities_vanish():
    p_m, p_g = _step_density([0.0, 1.0]), _step_density([1.0, 0.0])

    assert criterion_value(1.5, p_m, p_g, Priors()) == float("inf")
    with pytest.raises(UndefinedPointError):
        criterion_value(5.0, p_m, p_g, Priors())


def test_two_gaussians_meet_at_the_midpoint(gaussians):
    genuine, fake = gaussians
    p_g, p_m = fit_density_histogram(genuine, 40), fit_density_histogram(fake, 40)
    width = max(np.diff(p_g.edges[0]).max(), np.diff(p_m.edges[0]).max())

    assert abs(criterion_value(0.0, p_m, p_g, Priors())) < np.expm1(2.0 * width) + 0.1


def test_likelihood_ratio_threshold_is_bayes_optimal(gaussians):
    genuine, fake = gaussians
    p_g, p_m = fit_density_histogram(genuine, 40), fit_density_histogram(fake, 40)
    grid = np.linspace(-3.0, 3.0, 121)

    rule = likelihood_ratio_rule(p_m, p_g, Priors(), grid)

    rng = np.random.default_rng(1)
    scores = np.concatenate([rng.normal(-1.0, 1.0, 20_000), rng.normal(1.0, 1.0, 20_000)])
    labels = np.repeat([0.0, 1.0], 20_000)
    errors = [empirical_mean_error(DecisionRule(t), scores, labels, Priors()) for t in grid]
    assert abs(rule.threshold) < 0.3
    assert empirical_mean_error(rule, scores, labels, Priors()) <= min(errors) + 0.01


def test_boundary_moves_with_the_fake_prior(gaussians):
    genuine, fake = gaussians
    p_g, p_m = fit_density_histogram(genuine, 40), fit_density_histogram(fake, 40)
    grid = np.linspace(-3.0, 3.0, 121)

    thresholds = [likelihood_ratio_rule(p_m, p_g, Priors(pi_m=pi_m), grid).threshold for pi_m in (0.2, 0.5, 0.8)]

    assert thresholds[0] > thresholds[1] > thresholds[2]


def test_scaling_both_densities_keeps_every_decision(gaussians):
    genuine, fake = gaussians
    p_g, p_m = fit_density_histogram(genuine, 20), fit_density_histogram(fake, 20)
    scaled_g = DensityModel(p_g.edges, 3.0 * p_g.density)
    scaled_m = DensityModel(p_m.edges, 3.0 * p_m.density)

    for x in np.linspace(-2.5, 2.5, 41):
        assert np.sign(criterion_value(x, p_m, p_g, Priors())) == np.sign(criterion_value(x, scaled_m, scaled_g, Priors()))


def test_mean_error_of_a_perfect_rule_is_zero():
    scores, labels = np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])

    assert empirical_mean_error(DecisionRule(0.5), scores, labels, Priors()) == 0.0


def test_always_genuine_costs_the_fake_prior():
    scores, labels = np.array([0.1, 0.7, 0.3, 0.9]), np.array([0, 1, 0, 1])

    assert empirical_mean_error(DecisionRule(2.0), scores, labels, Priors(pi_m=0.3)) == pytest.approx(0.3)


def test_random_scores_give_chance_error():
    rng = np.random.default_rng(2)
    n = 10_000
    scores, labels = rng.random(n), rng.integers(0, 2, n)

    error = empirical_mean_error(calibrate_threshold(Priors()), scores, labels, Priors())

    assert abs(error - 0.5) <= 3.0 / np.sqrt(n)


def test_mean_error_argument_checks():
    with pytest.raises(SingleClassError):
        empirical_mean_error(DecisionRule(0.5), [0.1, 0.2], [1, 1], Priors())
    with pytest.raises(ShapeMismatchError):
        empirical_mean_error(DecisionRule(0.5), [0.1, 0.2, 0.3], [0, 1], Priors())


def test_calibrated_threshold_is_the_genuine_prior():
    assert calibrate_threshold(Priors()).threshold == 0.5
    assert calibrate_threshold(Priors(pi_m=0.1)).threshold == pytest.approx(0.9)

    thresholds = [calibrate_threshold(Priors(pi_m=p)).threshold for p in np.linspace(0.1, 0.9, 9)]
    assert all(a > b for a, b in pairwise(thresholds))


def test_exact_threshold_decides_genuine():
    rule = calibrate_threshold(Priors())

    assert rule.decide([0.5, 0.5000001]).tolist() == [False, True]
    with pytest.raises(ValueError):
        DecisionRule(float("inf"))


def test_histogram_matches_the_normal_density():
    samples = np.random.default_rng(3).standard_normal(100_000)

    model = fit_density_histogram(samples, 50)
    edges = model.edges[0]
    expected = np.diff(norm.cdf(edges))
    observed = model.density * np.diff(edges)

    assert 0.5 * np.abs(observed - expected).sum() < 0.02


@pytest.mark.parametrize("dims", [1, 2])
def test_histogram_is_normalized(dims: int):
    samples = np.random.default_rng(4).standard_normal((500, dims))

    assert fit_density_histogram(samples, 12).total_mass() == pytest.approx(1.0, abs=1e-9)


def test_single_bin_is_uniform_over_the_padded_range():
    model = fit_density_histogram(np.array([0.0, 1.0, 2.0]), 1)
    (low, high), = model.support

    assert (low, high) == pytest.approx((-0.1, 2.1))
    assert model.density[0] == pytest.approx(1.0 / (high - low))


def test_constant_samples_get_a_unit_support():
    model = fit_density_histogram(np.full(10, 2.0), 4)

    assert model.support == [(1.5, 2.5)]
    assert model.total_mass() == pytest.approx(1.0)


def test_pdf_is_zero_outside_the_support():
    model = fit_density_histogram(np.array([0.0, 1.0]), 2)

    assert model(-5.0) == 0.0 and model(5.0) == 0.0
    assert model(0.5) > 0.0


def test_histogram_argument_checks():
    with pytest.raises(ValueError):
        fit_density_histogram(np.zeros(3), 0)
    with pytest.raises(ValueError):
        fit_density_histogram(np.zeros(0), 5)
    with pytest.raises(ShapeMismatchError):
        fit_density_histogram(np.zeros((5, 3)), 5)


def test_likelihood_ratio_rule_argument_checks():
    one_d = fit_density_histogram(np.array([0.0, 1.0]), 2)
    two_d = fit_density_histogram(np.zeros((4, 2)), 2)

    with pytest.raises(ShapeMismatchError):
        likelihood_ratio_rule(two_d, two_d, Priors(), [0.0])
    with pytest.raises(ValueError):
        likelihood_ratio_rule(one_d, one_d, Priors(), [])
    with pytest.raises(UndefinedPointError):
        likelihood_ratio_rule(one_d, one_d, Priors(), [10.0, 20.0])
