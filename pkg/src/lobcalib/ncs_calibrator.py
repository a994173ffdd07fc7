"""Negatively correlated search with adaptive stochastic ranking.

A fixed number of Gaussian search processes explore the box-bounded parameter
space in parallel. Each iteration every process proposes an offspring
distribution; the parent is kept or replaced by comparing the expected
objective F (minimized) and the distance D to the other processes
(maximized). Random search is provided as a baseline.
"""

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .pgps_model import DEFAULT_BOUNDS, PARAM_NAMES
from .workers import EvaluationPool

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray, int], float]


class BudgetError(ValueError):
    """Raised when the evaluation budget cannot cover two generations."""


class BoundsError(ValueError):
    """Raised for degenerate box bounds."""


class CaseMapping(StrEnum):
    PSEUDOCODE = "pseudocode"
    PROSE = "prose"


class DiversityMode(StrEnum):
    CLOSED_FORM = "closed_form"
    SAMPLE_OVERLAP = "sample_overlap"


class SelectionRule(StrEnum):
    ASR = "asr"
    RATIO = "ratio"


class InitScale(StrEnum):
    STD = "std"
    VARIANCE = "variance"


class StepRule(StrEnum):
    REPLACEMENT = "replacement"
    IMPROVEMENT = "improvement"


class Decision(StrEnum):
    KEEP = "keep"
    REPLACE = "replace"


@dataclass
class NcsConfig:
    num_processes: int = 10
    samples_per_process: int = 1
    budget_evals: int = 10_000
    beta_start: float = 0.7
    beta_end: float = 0.3
    epsilon0: float = 0.2
    rho: float = 0.9
    sigma_epoch: int = 10
    sigma_factor: float = 1.05
    success_target: float = 0.2
    bounds: tuple[tuple[float, float], ...] = tuple(DEFAULT_BOUNDS[n] for n in PARAM_NAMES)
    case_mapping: CaseMapping = CaseMapping.PSEUDOCODE
    diversity: DiversityMode = DiversityMode.CLOSED_FORM
    selection: SelectionRule = SelectionRule.ASR
    init_scale: InitScale = InitScale.STD
    step_rule: StepRule = StepRule.REPLACEMENT

    def __post_init__(self) -> None:
        self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        self.case_mapping = CaseMapping(self.case_mapping)
        self.diversity = DiversityMode(self.diversity)
        self.selection = SelectionRule(self.selection)
        self.init_scale = InitScale(self.init_scale)
        self.step_rule = StepRule(self.step_rule)

    @property
    def bounds_array(self) -> np.ndarray:
        return np.array(self.bounds, dtype=float)

    @property
    def evals_per_generation(self) -> int:
        return self.num_processes * self.samples_per_process

    @property
    def max_iterations(self) -> int:
        """G_max such that evaluations = lambda * N * (G_max + 1) fit the budget."""
        return self.budget_evals // self.evals_per_generation - 1

    def validate(self) -> None:
        if self.num_processes < 2:
            raise ValueError("num_processes must be >= 2")
        if self.samples_per_process < 1:
            raise ValueError("samples_per_process must be >= 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if not 0.0 < self.epsilon0 < 1.0:
            raise ValueError("epsilon0 must lie in (0, 1)")
        if self.sigma_epoch < 1:
            raise ValueError("sigma_epoch must be >= 1")
        check_bounds(self.bounds_array)
        if self.budget_evals < 2 * self.evals_per_generation:
            raise BudgetError(
                f"budget too small: {self.budget_evals} < 2 * {self.evals_per_generation}"
            )


@dataclass
class SearchProcess:
    """One Gaussian search distribution N(mean, diag(cov_diag)) and its scores."""
    mean: np.ndarray
    cov_diag: np.ndarray
    score_f: float = math.nan
    score_d: float = math.nan
    last_samples: list[tuple[np.ndarray, float]] = field(default_factory=list)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.cov_diag)

    def sample(self, rng: np.random.Generator, n: int, bounds: np.ndarray) -> np.ndarray:
        draws = self.mean + self.std * rng.standard_normal((n, self.mean.size))
        return reflect_into(draws, bounds)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return norm.logpdf(np.atleast_2d(x), loc=self.mean, scale=self.std).sum(axis=-1)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    evals: int
    best_f: float
    mean_f: float
    epsilon_t: float
    phi_t: float
    replaced: int = 0
    step_scale: float = 1.0


@dataclass
class CalibrationResult:
    best_params: np.ndarray
    best_value: float
    trace: list[TraceRow]
    evals_used: int
    seed: int
    best_eval_seed: int | None = None

    @property
    def best_so_far(self) -> list[float]:
        return [row.best_f for row in self.trace]


def check_bounds(bounds: np.ndarray) -> None:
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2:
        raise BoundsError("bounds must be a sequence of (low, high) pairs")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise BoundsError("degenerate bounds: every low must be below its high")


def reflect_into(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Mirror coordinates at the box faces until they fall inside."""
    low, high = bounds[:, 0], bounds[:, 1]
    width = high - low
    y = np.mod(np.asarray(x, dtype=float) - low, 2 * width)
    y = np.where(y > width, 2 * width - y, y)
    return low + y


def bhattacharyya_distance(
    mean1: np.ndarray, var1: np.ndarray, mean2: np.ndarray, var2: np.ndarray
) -> float:
    """Closed-form Bhattacharyya distance between two diagonal Gaussians."""
    return float(_bhattacharyya_many(mean1, var1, np.atleast_2d(mean2), np.atleast_2d(var2))[0])


def _bhattacharyya_many(
    mean: np.ndarray, var: np.ndarray, means: np.ndarray, variances: np.ndarray
) -> np.ndarray:
    avg = (var + variances) / 2
    diff = mean - means
    mahalanobis = np.sum(diff**2 / avg, axis=-1) / 8
    log_det = 0.5 * np.sum(
        np.log(avg) - 0.5 * (np.log(var) + np.log(variances)), axis=-1
    )
    return mahalanobis + log_det


def expected_objective(
    samples: Sequence[tuple[np.ndarray, float]], process: SearchProcess
) -> float:
    """Density-weighted, self-normalized mean of the samples' f-values."""
    if not samples:
        raise ValueError("expected_objective needs at least one sample")
    values = np.array([f for _, f in samples], dtype=float)
    log_p = process.log_density(np.array([x for x, _ in samples]))
    if not np.any(np.isfinite(log_p)):
        return float(values.mean())
    weights = np.exp(log_p - np.max(log_p))
    return float(np.sum(weights * values) / np.sum(weights))


def diversity(
    i: int,
    processes: Sequence[SearchProcess],
    mode: DiversityMode = DiversityMode.CLOSED_FORM,
) -> float:
    """Distance of process ``i`` to the others; larger means more isolated."""
    if len(processes) < 2:
        raise ValueError("diversity needs at least two processes")
    others = [p for j, p in enumerate(processes) if j != i]
    own = processes[i]
    if mode is DiversityMode.CLOSED_FORM:
        distances = _bhattacharyya_many(
            own.mean,
            own.cov_diag,
            np.array([p.mean for p in others]),
            np.array([p.cov_diag for p in others]),
        )
        return float(np.min(distances))

    x = np.array([w for w, _ in own.last_samples])
    own_log_p = own.log_density(x)
    total = 0.0
    for other in others:
        total -= logsumexp(0.5 * (own_log_p + other.log_density(x)))
    return float(total)


def beta_schedule(G: int, G_max: int, beta_start: float = 0.7, beta_end: float = 0.3) -> float:
    """Probability of accepting a worse-F, better-D offspring at iteration G."""
    return beta_start - (beta_start - beta_end) * G / G_max


def select(
    parent: tuple[float, float],
    offspring: tuple[float, float],
    G: int,
    G_max: int,
    phi_t: float,
    epsilon_t: float,
    rng,
    case_mapping: CaseMapping = CaseMapping.PSEUDOCODE,
    beta_start: float = 0.7,
    beta_end: float = 0.3,
) -> Decision:
    """Adaptive stochastic ranking between a parent and its offspring.

    Scores are (F, D) pairs. Ties in either score keep the parent.
    """
    f_parent, d_parent = parent
    f_child, d_child = offspring
    f_better, f_worse = f_child < f_parent, f_child > f_parent
    d_better, d_worse = d_child > d_parent, d_child < d_parent

    if f_better and d_better:
        return Decision.REPLACE

    if case_mapping is CaseMapping.PSEUDOCODE:
        stochastic = f_worse and d_better
        adaptive = f_better and d_worse
    else:
        stochastic = f_better and d_worse
        adaptive = f_worse and d_worse

    if stochastic:
        beta = beta_schedule(G, G_max, beta_start, beta_end)
        return Decision.REPLACE if rng.random() < beta else Decision.KEEP
    if adaptive:
        return Decision.REPLACE if phi_t > epsilon_t else Decision.KEEP
    return Decision.KEEP


def ratio_select(
    parent: tuple[float, float], offspring: tuple[float, float], G: int, G_max: int, rng
) -> Decision:
    """Earlier NCS rule: normalized F'/D' against a N(1, xi) draw, xi 0.1 -> 0."""
    f_parent, d_parent = parent
    f_child, d_child = offspring
    f_norm = f_child / (f_parent + f_child) if f_parent + f_child > 0 else 0.5
    d_norm = d_child / (d_parent + d_child) if d_parent + d_child > 0 else 0.5
    xi = 0.1 * (1.0 - G / G_max)
    threshold = rng.normal(1.0, xi) if xi > 0 else 1.0
    if d_norm > 0 and f_norm / d_norm < threshold:
        return Decision.REPLACE
    return Decision.KEEP


def update_epsilon(epsilon_prev: float, phi_prev: float, epsilon0: float, rho: float) -> float:
    """Shrink the gate by rho after a high-success iteration, reset it otherwise."""
    if phi_prev > epsilon_prev:
        return epsilon_prev * rho
    return epsilon0


class _Evaluator:
    """Evaluates candidate batches with fresh seeds and tracks the best ever."""

    def __init__(self, objective: Objective, rng: np.random.Generator, pool: EvaluationPool):
        self.objective = objective
        self.rng = rng
        self.pool = pool
        self.evals = 0
        self.best_x: np.ndarray | None = None
        self.best_f = math.inf
        self.best_seed: int | None = None

    def __call__(self, candidates: np.ndarray) -> np.ndarray:
        seeds = [int(s) for s in self.rng.integers(0, 2**63 - 1, size=len(candidates))]
        values = np.array(
            self.pool.starmap(self.objective, list(zip(candidates, seeds, strict=True))),
            dtype=float,
        )
        for x, f, s in zip(candidates, values, seeds, strict=True):
            if f < self.best_f:
                self.best_f, self.best_x, self.best_seed = float(f), x.copy(), s
        self.evals += len(candidates)
        return values


def init_processes(
    config: NcsConfig,
    rng: np.random.Generator,
    evaluate: Callable[[np.ndarray], np.ndarray] | None = None,
) -> list[SearchProcess]:
    """Create the initial search processes, scoring them when ``evaluate`` is given."""
    bounds = config.bounds_array
    check_bounds(bounds)
    low, high = bounds[:, 0], bounds[:, 1]
    lam = config.num_processes
    scale = (high - low) / lam
    cov = scale**2 if config.init_scale is InitScale.STD else scale.copy()

    processes = [
        SearchProcess(mean=rng.uniform(low, high), cov_diag=cov.copy()) for _ in range(lam)
    ]
    if evaluate is not None:
        _score(processes, rng, evaluate, config)
        for i, process in enumerate(processes):
            process.score_d = diversity(i, processes, config.diversity)
    return processes


def _score(
    processes: list[SearchProcess],
    rng: np.random.Generator,
    evaluate: Callable[[np.ndarray], np.ndarray],
    config: NcsConfig,
) -> None:
    n = config.samples_per_process
    candidates = np.vstack([p.sample(rng, n, config.bounds_array) for p in processes])
    values = evaluate(candidates)
    for k, process in enumerate(processes):
        rows = slice(k * n, (k + 1) * n)
        process.last_samples = list(zip(candidates[rows], values[rows], strict=True))
        process.score_f = expected_objective(process.last_samples, process)


def _adapt_step_sizes(processes: list[SearchProcess], factor: float, bounds: np.ndarray) -> None:
    width = bounds[:, 1] - bounds[:, 0]
    for process in processes:
        process.cov_diag = np.clip(process.cov_diag * factor, (width * 1e-12) ** 2, width**2)


def calibrate(
    objective: Objective,
    config: NcsConfig,
    seed: int,
    pool: EvaluationPool | None = None,
) -> CalibrationResult:
    """Minimize ``objective`` over the box with the improved NCS."""
    config.validate()
    pool = pool or EvaluationPool()
    rng = np.random.default_rng(seed)
    bounds = config.bounds_array
    lam = config.num_processes
    g_max = config.max_iterations
    evaluator = _Evaluator(objective, rng, pool)

    logger.info(
        "NCS: %d processes x %d samples, %d iterations (seed=%d)",
        lam, config.samples_per_process, g_max, seed,
    )

    processes = init_processes(config, rng, evaluator)
    epsilon = config.epsilon0
    phi = 1.0
    trace = [
        TraceRow(0, evaluator.evals, evaluator.best_f, _mean_f(processes), epsilon, phi)
    ]
    epoch_successes = step_exponent = 0

    for G in range(1, g_max + 1):
        offspring = [
            SearchProcess(
                mean=reflect_into(p.mean + p.std * rng.standard_normal(p.mean.size), bounds),
                cov_diag=p.cov_diag.copy(),
            )
            for p in processes
        ]
        _score(offspring, rng, evaluator, config)

        replaced = improved = 0
        for i in range(lam):
            parent, child = processes[i], offspring[i]
            parent.score_d = diversity(i, processes, config.diversity)
            trial = processes.copy()
            trial[i] = child
            child.score_d = diversity(i, trial, config.diversity)

            parent_scores = (parent.score_f, parent.score_d)
            child_scores = (child.score_f, child.score_d)
            if child.score_f < parent.score_f:
                improved += 1
            if config.selection is SelectionRule.RATIO:
                decision = ratio_select(parent_scores, child_scores, G, g_max, rng)
            else:
                decision = select(
                    parent_scores, child_scores, G, g_max, phi, epsilon, rng,
                    config.case_mapping, config.beta_start, config.beta_end,
                )
            if decision is Decision.REPLACE:
                processes[i] = child
                replaced += 1

        epoch_successes += replaced if config.step_rule is StepRule.REPLACEMENT else improved
        if G % config.sigma_epoch == 0:
            rate = epoch_successes / (lam * config.sigma_epoch)
            direction = 1 if rate > config.success_target else -1
            _adapt_step_sizes(processes, config.sigma_factor ** (2 * direction), bounds)
            step_exponent += direction
            epoch_successes = 0

        trace.append(
            TraceRow(G, evaluator.evals, evaluator.best_f, _mean_f(processes), epsilon, phi,
                     replaced, config.sigma_factor**step_exponent)
        )
        phi = replaced / lam
        epsilon = update_epsilon(epsilon, phi, config.epsilon0, config.rho)

        logger.debug(
            "iteration %d: best=%.5f replaced=%d epsilon=%.4f", G, evaluator.best_f, replaced,
            epsilon,
        )

    logger.info("NCS finished: best=%.6f after %d evaluations", evaluator.best_f, evaluator.evals)
    return CalibrationResult(
        best_params=evaluator.best_x,
        best_value=evaluator.best_f,
        trace=trace,
        evals_used=evaluator.evals,
        seed=seed,
        best_eval_seed=evaluator.best_seed,
    )


def _mean_f(processes: Sequence[SearchProcess]) -> float:
    return float(np.mean([p.score_f for p in processes]))


def random_search(
    objective: Objective,
    bounds,
    budget: int,
    seed: int,
    pool: EvaluationPool | None = None,
    batch_size: int = 10,
) -> CalibrationResult:
    """Uniform i.i.d. sampling in the box; returns the best sample."""
    if budget < 1:
        raise BudgetError("budget must be >= 1")
    bounds = np.asarray(bounds, dtype=float)
    check_bounds(bounds)
    rng = np.random.default_rng(seed)
    evaluator = _Evaluator(objective, rng, pool or EvaluationPool())

    trace = []
    iteration = 0
    while evaluator.evals < budget:
        size = min(batch_size, budget - evaluator.evals)
        candidates = rng.uniform(bounds[:, 0], bounds[:, 1], size=(size, len(bounds)))
        values = evaluator(candidates)
        trace.append(
            TraceRow(iteration, evaluator.evals, evaluator.best_f, float(values.mean()),
                     math.nan, math.nan)
        )
        iteration += 1

    return CalibrationResult(
        best_params=evaluator.best_x,
        best_value=evaluator.best_f,
        trace=trace,
        evals_used=evaluator.evals,
        seed=seed,
        best_eval_seed=evaluator.best_seed,
    )
