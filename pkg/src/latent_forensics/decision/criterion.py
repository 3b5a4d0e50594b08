"""
Prior-aware decision theory for the fake/genuine call.

The mean error rate of a decision region D is
    J = pi_g * P(X in D | genuine) + pi_m * P(X not in D | fake)
and it is minimized by deciding fake wherever
    F(x) = p_m(x) / p_g(x) - pi_g / pi_m
is positive. Classifier scores approximating P(fake | x) realize the same rule with the
score threshold t = pi_g.
"""

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from latent_forensics.autodiff import Tensor
from latent_forensics.errors import ShapeMismatchError, SingleClassError, UndefinedPointError

logger = logging.getLogger(__name__)

PADDING = 0.05
MAX_DENSITY_DIMS = 2


class Priors(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    pi_m: float = Field(default=0.5, gt=0.0, lt=1.0)

    @property
    def pi_g(self) -> float:
        return 1.0 - self.pi_m

    @property
    def odds(self) -> float:
        """
        Prior odds pi_g / pi_m
        """
        return self.pi_g / self.pi_m

    @classmethod
    def from_labels(cls, labels: ArrayLike) -> "Priors":
        y = np.asarray(labels).astype(np.float64).reshape(-1)
        if y.size == 0 or y.min() == y.max():
            raise SingleClassError("prior labels")
        return cls(pi_m=float(y.mean()))


def _bin_volumes(edges: tuple[Tensor, ...] | list[Tensor]) -> Tensor:
    widths = [np.diff(e) for e in edges]
    return widths[0] if len(widths) == 1 else np.outer(widths[0], widths[1])


@dataclass(frozen=True)
class DensityModel:
    """
    Normalized histogram over one or two dimensions
    """

    edges: tuple[Tensor, ...]
    density: Tensor

    @property
    def ndim(self) -> int:
        return len(self.edges)

    @property
    def bin_volumes(self) -> Tensor:
        return _bin_volumes(self.edges)

    @property
    def support(self) -> list[tuple[float, float]]:
        return [(float(e[0]), float(e[-1])) for e in self.edges]

    def total_mass(self) -> float:
        return float((self.density * self.bin_volumes).sum())

    def pdf(self, points: ArrayLike) -> Tensor:
        """
        Density at each point (shape (N,) or (N, ndim)); zero outside the support
        """
        x = np.asarray(points, dtype=np.float64)
        x = x.reshape(-1, 1) if self.ndim == 1 and x.ndim <= 1 else x.reshape(-1, self.ndim)

        inside = np.ones(x.shape[0], dtype=bool)
        index = []
        for axis, e in enumerate(self.edges):
            column = x[:, axis]
            inside &= (column >= e[0]) & (column <= e[-1])
            # the right edge belongs to the last bin
            index.append(np.clip(np.searchsorted(e, column, side="right") - 1, 0, e.size - 2))
        values = self.density[tuple(index)]
        return np.where(inside, values, 0.0)

    def __call__(self, point: ArrayLike) -> float:
        return float(self.pdf(np.atleast_1d(np.asarray(point, dtype=np.float64)))[0])

    def to_dict(self) -> dict[str, Any]:
        return {"edges": [e.tolist() for e in self.edges], "density": self.density.tolist()}


def fit_density_histogram(samples: ArrayLike, bins: int) -> DensityModel:
    """
    Equal-width histogram over the sample range padded by 5% on every side
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("cannot fit a density to zero samples")
    if x.ndim != 2 or x.shape[1] > MAX_DENSITY_DIMS:
        raise ShapeMismatchError(f"density samples must have at most {MAX_DENSITY_DIMS} dimensions, got shape {x.shape}")

    ranges = []
    for column in x.T:
        low, high = float(column.min()), float(column.max())
        pad = PADDING * (high - low) if high > low else 0.5
        ranges.append((low - pad, high + pad))

    counts, edges = np.histogramdd(x, bins=bins, range=ranges)
    density = counts / (counts.sum() * _bin_volumes(edges))
    return DensityModel(edges=tuple(edges), density=density)


def criterion_value(x: ArrayLike, p_m: DensityModel, p_g: DensityModel, priors: Priors) -> float:
    """
    F(x) = p_m(x)/p_g(x) - pi_g/pi_m; +inf where only the fake density is positive
    """
    fake, genuine = p_m(x), p_g(x)
    if genuine == 0.0:
        if fake > 0.0:
            return float("inf")
        raise UndefinedPointError(f"both densities vanish at {np.asarray(x).tolist()}")
    return fake / genuine - priors.odds


@dataclass(frozen=True)
class DecisionRule:
    """
    Decide fake iff the statistic strictly exceeds `threshold`
    """

    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError(f"decision threshold must be finite, got {self.threshold}")

    def decide(self, statistics: ArrayLike) -> Tensor:
        return np.asarray(statistics, dtype=np.float64) > self.threshold

    def to_dict(self) -> dict[str, Any]:
        return {"threshold": self.threshold, "decide_fake": "statistic > threshold"}


def _split_by_label(scores: ArrayLike, labels: ArrayLike) -> tuple[Tensor, Tensor]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).astype(np.float64).reshape(-1)
    if s.shape != y.shape:
        raise ShapeMismatchError(f"{s.size} scores but {y.size} labels")
    genuine, fake = s[y == 0], s[y == 1]
    if genuine.size == 0 or fake.size == 0:
        raise SingleClassError("evaluation labels")
    return genuine, fake


def empirical_mean_error(rule: DecisionRule, scores: ArrayLike, labels: ArrayLike, priors: Priors) -> float:
    genuine, fake = _split_by_label(scores, labels)
    false_alarm = float(rule.decide(genuine).mean())
    miss = float((~rule.decide(fake)).mean())
    return priors.pi_g * false_alarm + priors.pi_m * miss


def calibrate_threshold(priors: Priors) -> DecisionRule:
    return DecisionRule(threshold=priors.pi_g)


def likelihood_ratio_rule(p_m: DensityModel, p_g: DensityModel, priors: Priors, grid: ArrayLike) -> DecisionRule:
    """
    Locate the F = 0 boundary of a one-dimensional criterion on `grid`.

    The threshold is the grid point that best agrees with the pointwise decisions
    sign(F) (fewest grid points decided differently by `x > t`); points where F is
    undefined are ignored.
    """
    if p_m.ndim != 1 or p_g.ndim != 1:
        raise ShapeMismatchError("likelihood_ratio_rule needs one-dimensional densities")
    points = np.sort(np.asarray(grid, dtype=np.float64).reshape(-1))
    if points.size == 0:
        raise ValueError("threshold grid is empty")

    fake, genuine = p_m.pdf(points), p_g.pdf(points)
    defined = (fake > 0) | (genuine > 0)
    if not defined.any():
        raise UndefinedPointError("both densities vanish on the whole grid")
    with np.errstate(divide="ignore"):
        says_fake = np.where(genuine > 0, fake / np.where(genuine > 0, genuine, 1.0) - priors.odds > 0, True)

    # disagreement(t_i) = #{j <= i: fake} + #{j > i: genuine}, over defined points
    fake_prefix = np.cumsum(defined & says_fake)
    genuine_suffix = np.cumsum((defined & ~says_fake)[::-1])[::-1]
    genuine_after = np.append(genuine_suffix[1:], 0)
    best = int(np.argmin(fake_prefix + genuine_after))
    rule = DecisionRule(threshold=float(points[best]))
    logger.debug(f"Likelihood-ratio boundary at {rule.threshold:.4f} for pi_m={priors.pi_m}")
    return rule
