"""Discrepancy metrics between a target and a simulated mid-price series."""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from .pgps_model import MidPriceSeries, PgpsParams, SimConfig, simulate

logger = logging.getLogger(__name__)

MSM_DEGENERATE_PENALTY = 1e6


class ObjectiveError(ValueError):
    """Raised when a metric is undefined for its inputs."""


class ObjectiveTag(StrEnum):
    KS = "ks"
    MSM = "msm"


@dataclass(frozen=True)
class MomentVector:
    """Mean, std, skewness and kurtosis; the last two are None when std is 0."""
    mean: float
    std: float
    skewness: float | None = None
    kurtosis: float | None = None

    @property
    def defined(self) -> bool:
        return self.skewness is not None and self.kurtosis is not None

    @property
    def excess_kurtosis(self) -> float | None:
        return None if self.kurtosis is None else self.kurtosis - 3.0

    def as_array(self) -> np.ndarray:
        if not self.defined:
            raise ObjectiveError("Skewness and kurtosis are undefined for a constant series")
        return np.array([self.mean, self.std, self.skewness, self.kurtosis])

    def to_dict(self) -> dict[str, float | None]:
        return {
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
            "excess_kurtosis": self.excess_kurtosis,
        }


@dataclass(frozen=True)
class ObjectiveKind:
    """Which metric to minimize, and at which sampling stride to compare."""
    tag: ObjectiveTag = ObjectiveTag.KS
    reference_moments: MomentVector | None = None
    stride: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", ObjectiveTag(self.tag))
        if self.tag is ObjectiveTag.MSM:
            if self.reference_moments is None:
                raise ObjectiveError("MSM requires reference moments")
            if not self.reference_moments.defined:
                raise ObjectiveError("MSM reference moments are undefined for a constant target")
        if self.stride < 1:
            raise ObjectiveError("stride must be >= 1")

    @classmethod
    def for_target(cls, tag: str, target: MidPriceSeries, stride: int = 1) -> "ObjectiveKind":
        tag = ObjectiveTag(tag)
        reference = moments(target.values[::stride]) if tag is ObjectiveTag.MSM else None
        return cls(tag=tag, reference_moments=reference, stride=stride)


def _as_sample(series, name: str) -> np.ndarray:
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ObjectiveError(f"Series {name} is empty")
    return values


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic over the pooled sample points."""
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_critical_value(N: int, n: int, alpha: float = 0.05) -> float:
    """Large-sample critical value of the two-sample K-S test at level ``alpha``."""
    if N < 1 or n < 1:
        raise ObjectiveError("Sample sizes must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ObjectiveError(f"alpha must lie in (0, 1), got {alpha}")
    return math.sqrt(-(N + n) * math.log(alpha / 2) / (2 * N * n))


def moments(series) -> MomentVector:
    """Mean, sample std and the (T-1)-normalized skewness and kurtosis."""
    values = np.asarray(series, dtype=float)
    if values.size < 2:
        raise ObjectiveError("Moments need at least two observations")
    mean = float(values.mean())
    centered = values - mean
    std = float(np.sqrt(np.sum(centered**2) / (values.size - 1)))
    if std == 0:
        return MomentVector(mean=mean, std=0.0)
    z = centered / std
    return MomentVector(
        mean=mean,
        std=std,
        skewness=float(np.sum(z**3) / (values.size - 1)),
        kurtosis=float(np.sum(z**4) / (values.size - 1)),
    )


def msm_distance(target: MomentVector, sim: MomentVector) -> float:
    """Unweighted mean squared error over the four moments."""
    diff = target.as_array() - sim.as_array()
    return float(np.mean(diff**2))


def log_returns(series) -> np.ndarray:
    values = np.asarray(series, dtype=float)
    if values.size < 2:
        raise ObjectiveError("Log returns need at least two observations")
    if np.any(values <= 0):
        raise ObjectiveError("Log returns need strictly positive prices")
    return np.diff(np.log(values))


def histogram(series, bins: int = 50, value_range: tuple[float, float] | None = None):
    """Frequency histogram (counts, edges) of a price series."""
    values = _as_sample(series, "series")
    return np.histogram(values, bins=bins, range=value_range)


def discrepancy(kind: ObjectiveKind, target: MidPriceSeries, simulated: MidPriceSeries) -> float:
    """Metric value of an already simulated series against the target."""
    stride = kind.stride
    sim_values = simulated.values[::stride]
    if kind.tag is ObjectiveTag.KS:
        return ks_statistic(target.values[::stride], sim_values)
    sim_moments = moments(sim_values)
    if not sim_moments.defined:
        logger.debug("Constant simulated series, returning MSM penalty")
        return MSM_DEGENERATE_PENALTY
    return msm_distance(kind.reference_moments, sim_moments)


def evaluate(
    kind: ObjectiveKind,
    target: MidPriceSeries,
    params: PgpsParams,
    config: SimConfig,
    seed: int,
) -> float:
    """f(w): simulate with ``params`` and measure the discrepancy to ``target``."""
    if len(target) != config.horizon_T:
        raise ObjectiveError(
            f"Target length {len(target)} does not match horizon_T={config.horizon_T}"
        )
    return discrepancy(kind, target, simulate(params, config, seed))


@dataclass
class SimulationObjective:
    """Picklable objective mapping (parameter vector, seed) to f-value."""
    kind: ObjectiveKind
    target: MidPriceSeries
    config: SimConfig

    def __call__(self, x, seed: int) -> float:
        return evaluate(self.kind, self.target, PgpsParams.from_vector(x), self.config, seed)
