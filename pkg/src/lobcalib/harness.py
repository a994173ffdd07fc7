"""Experiment orchestration: targets, calibration campaigns, comparisons and statistics."""

import hashlib
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata

from .config import ConfigError, ExperimentConfig, Optimizer
from .landscape import GridScan, MaskStatistics, grid_scan, mask_statistics, top_k_mask
from .ncs_calibrator import CalibrationResult, calibrate, random_search
from .objectives import (
    ObjectiveKind,
    ObjectiveTag,
    SimulationObjective,
    discrepancy,
    histogram,
    ks_critical_value,
    ks_statistic,
    log_returns,
    moments,
)
from .pgps_model import PARAM_NAMES, MidPriceSeries, PgpsParams, SimConfig, simulate
from .series_io import (
    load_series_csv,
    read_json,
    write_grid_csv,
    write_json,
    write_params_json,
    write_series_csv,
    write_trace_csv,
)
from .workers import EvaluationPool

logger = logging.getLogger(__name__)

EXACT_WILCOXON_MAX_SIZE = 12
WILCOXON_NOTE = "two-sided Wilcoxon rank-sum test pooled over repeated runs"


def run_seed(master_seed: int, index: int) -> int:
    """Seed of the index-th run, independent of how runs are scheduled."""
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, dtype=np.uint64)[0])


# ----------------- statistics -----------------


def wilcoxon_rank_sum(a, b) -> tuple[float, float]:
    """Mann-Whitney U of ``a`` against ``b`` and its two-sided p-value.

    Midranks handle ties. Small samples are tested by enumerating every
    labelling; larger ones use the tie-corrected normal approximation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 1 or b.size < 1:
        raise ValueError("both samples need at least one value")
    n1, n2 = a.size, b.size
    n = n1 + n2
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    offset = n1 * (n1 + 1) / 2
    u = float(ranks[:n1].sum() - offset)
    if np.all(pooled == pooled[0]):
        return u, 1.0

    center = n1 * n2 / 2
    observed = abs(u - center)
    if n <= EXACT_WILCOXON_MAX_SIZE:
        extreme = total = 0
        for labelling in itertools.combinations(range(n), n1):
            total += 1
            if abs(ranks[list(labelling)].sum() - offset - center) >= observed - 1e-9:
                extreme += 1
        return u, extreme / total

    _, counts = np.unique(pooled, return_counts=True)
    tie_term = np.sum(counts**3 - counts) / (n * (n - 1))
    sigma = math.sqrt(n1 * n2 / 12 * ((n + 1) - tie_term))
    p = 2 * norm.sf(observed / sigma)
    return u, float(min(1.0, p))


# ----------------- targets -----------------


def gen_synthetic_targets(
    count: int,
    ranges: dict[str, tuple[float, float]],
    sim: SimConfig,
    seed: int,
) -> list[tuple[PgpsParams, MidPriceSeries]]:
    """Draw ``count`` ground-truth parameter vectors and simulate their series."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    targets = []
    for k in range(count):
        params = PgpsParams.sample(rng, ranges)
        series = simulate(params, sim, run_seed(seed, k))
        logger.info("Target %d: %s", k, params)
        targets.append((params, series))
    return targets


def save_targets(targets: list[tuple[PgpsParams, MidPriceSeries]], out_dir: Path) -> list[Path]:
    paths = []
    for k, (params, series) in enumerate(targets):
        paths.append(write_series_csv(series, out_dir / f"target_{k}.csv", include_quotes=True))
        write_json({**params.to_dict(), "seed": series.seed}, out_dir / f"target_{k}.params.json")
    return paths


def load_target(path: str | Path, tick_size: float | None = None) -> MidPriceSeries:
    """Load a series; a ``<stem>.params.json`` sidecar supplies its ground truth."""
    path = Path(path)
    series = load_series_csv(path, tick_size)
    sidecar = path.with_suffix(".params.json")
    if sidecar.exists():
        truth = read_json(sidecar)
        series.params = PgpsParams.from_dict(truth)
        series.seed = truth.get("seed")
    return series


def resolve_target(cfg: ExperimentConfig) -> MidPriceSeries:
    if cfg.data.target_path:
        return load_target(cfg.data.target_path, cfg.data.tick_size)
    if cfg.data.target_params:
        params = PgpsParams.from_dict(cfg.data.target_params)
        return simulate(params, cfg.sim, cfg.master_seed)
    raise ConfigError("No target: set data.target_path or data.target_params")


def _sim_for(cfg: ExperimentConfig, target: MidPriceSeries) -> SimConfig:
    if len(target) != cfg.sim.horizon_T:
        logger.info("Using horizon_T=%d to match the target length", len(target))
        return replace(cfg.sim, horizon_T=len(target))
    return cfg.sim


# ----------------- calibration campaigns -----------------


@dataclass
class RunRecord:
    run_index: int
    seed: int
    best_value: float
    best_ks: float
    best_params: dict[str, float]
    evals_used: int
    best_eval_seed: int
    fingerprint: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunRecord":
        return cls(**data)


@dataclass
class ExperimentReport:
    objective: str
    optimizer: str
    master_seed: int
    runs: list[RunRecord]
    best_run: int
    mean_ks: float
    std_ks: float
    target_moments: dict[str, float | None]
    best_moments: dict[str, float | None]
    critical_value: float
    below_critical: bool
    config: dict[str, Any] = field(default_factory=dict)
    wilcoxon: dict[str, Any] = field(default_factory=dict)
    distributions: dict[str, Any] = field(default_factory=dict)
    notes: str = WILCOXON_NOTE

    @property
    def ks_values(self) -> list[float]:
        return [run.best_ks for run in self.runs]

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["runs"] = [run.to_dict() for run in self.runs]
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentReport":
        data = dict(data)
        data["runs"] = [RunRecord.from_dict(run) for run in data["runs"]]
        return cls(**data)


def calibrate_once(
    cfg: ExperimentConfig,
    objective: SimulationObjective,
    seed: int,
    pool: EvaluationPool,
) -> CalibrationResult:
    if cfg.optimizer is Optimizer.RANDOM:
        return random_search(objective, cfg.ncs.bounds_array, cfg.budget, seed, pool)
    return calibrate(objective, cfg.ncs, seed, pool)


def _run_path(runs_dir: Path, index: int) -> Path:
    return runs_dir / f"run_{index}.json"


def campaign_fingerprint(cfg: ExperimentConfig, target: MidPriceSeries) -> str:
    """Digest of everything that decides a run's result besides its seed.

    Output location, worker count and the number of repeats are left out, so
    a campaign can be resumed elsewhere, faster, or extended.
    """
    settings = cfg.to_dict()
    for key in ("mode", "output_dir", "threads", "repeats"):
        settings["experiment"].pop(key)
    del settings["landscape"], settings["data"]
    digest = hashlib.sha256(json.dumps(settings, sort_keys=True).encode())
    digest.update(np.ascontiguousarray(target.values, dtype=float).tobytes())
    return digest.hexdigest()[:16]


def distribution_summary(
    target: MidPriceSeries, best: MidPriceSeries, bins: int = 50
) -> dict[str, Any]:
    """Mid-price histograms on shared bins and log-return statistics, target vs best."""
    low = float(min(target.values.min(), best.values.min()))
    high = float(max(target.values.max(), best.values.max()))
    target_counts, edges = histogram(target.values, bins, (low, high if high > low else low + 1))
    best_counts, _ = histogram(best.values, bins, (edges[0], edges[-1]))
    summary: dict[str, Any] = {
        "histogram": {
            "edges": edges.tolist(),
            "target_counts": target_counts.tolist(),
            "best_counts": best_counts.tolist(),
        }
    }
    if len(target) > 2 and len(best) > 2:
        target_returns, best_returns = log_returns(target.values), log_returns(best.values)
        summary["log_returns"] = {
            "target_moments": moments(target_returns).to_dict(),
            "best_moments": moments(best_returns).to_dict(),
            "ks": ks_statistic(target_returns, best_returns),
        }
    return summary


def run_calibration_campaign(
    cfg: ExperimentConfig,
    target: MidPriceSeries | None = None,
    pool: EvaluationPool | None = None,
) -> ExperimentReport:
    """Calibrate ``cfg.repeats`` times and summarize the runs.

    Each finished run is stored as ``runs/run_<k>.json``; existing records
    with the expected seed are reused, so an interrupted campaign resumes.
    """
    cfg.validate()
    target = target if target is not None else resolve_target(cfg)
    sim = _sim_for(cfg, target)
    kind = ObjectiveKind.for_target(cfg.objective, target, cfg.stride)
    ks_kind = ObjectiveKind(ObjectiveTag.KS, stride=cfg.stride)
    objective = SimulationObjective(kind, target, sim)
    pool = pool or EvaluationPool()
    out = cfg.output_path
    runs_dir = out / "runs"

    fingerprint = campaign_fingerprint(cfg, target)

    runs: list[RunRecord] = []
    for k in range(cfg.repeats):
        seed = run_seed(cfg.master_seed, k)
        path = _run_path(runs_dir, k)
        if path.exists():
            record = RunRecord.from_dict(read_json(path))
            if record.seed == seed and record.fingerprint == fingerprint:
                logger.info("Reusing %s", path)
                runs.append(record)
                continue
            logger.warning("Ignoring %s: recorded seed or settings do not match", path)

        logger.info("Run %d/%d (seed=%d)", k + 1, cfg.repeats, seed)
        result = calibrate_once(cfg, objective, seed, pool)
        params = PgpsParams.from_vector(result.best_params)
        best_series = simulate(params, sim, result.best_eval_seed)
        record = RunRecord(
            run_index=k,
            seed=seed,
            best_value=result.best_value,
            best_ks=discrepancy(ks_kind, target, best_series),
            best_params=params.to_dict(),
            evals_used=result.evals_used,
            best_eval_seed=result.best_eval_seed,
            fingerprint=fingerprint,
        )
        write_json(record.to_dict(), path)
        write_trace_csv(result.trace, runs_dir / f"run_{k}_trace.csv")
        runs.append(record)

    best = min(runs, key=lambda r: (r.best_value, r.run_index))
    best_params = PgpsParams.from_dict(best.best_params)
    best_series = simulate(best_params, sim, best.best_eval_seed)
    target_sampled = target.downsample(cfg.stride)
    best_sampled = best_series.downsample(cfg.stride)
    target_values, best_values = target_sampled.values, best_sampled.values
    critical = ks_critical_value(len(target_values), len(best_values))
    ks_values = np.array([r.best_ks for r in runs])

    report = ExperimentReport(
        objective=str(cfg.objective),
        optimizer=str(cfg.optimizer),
        master_seed=cfg.master_seed,
        runs=runs,
        best_run=best.run_index,
        mean_ks=float(ks_values.mean()),
        std_ks=float(ks_values.std(ddof=1)) if len(runs) > 1 else 0.0,
        target_moments=moments(target_values).to_dict(),
        best_moments=moments(best_values).to_dict(),
        critical_value=critical,
        below_critical=bool(best.best_ks < critical),
        config=cfg.to_dict(),
        distributions=distribution_summary(target_sampled, best_sampled),
    )

    write_series_csv(best_series, out / "best_series.csv", include_quotes=True)
    write_json(
        {
            "best_params": best.best_params,
            "best_value": best.best_value,
            "config": cfg.to_dict(),
            "seed": cfg.master_seed,
        },
        out / "result.json",
    )
    write_json(report.to_dict(), out / "report.json")
    logger.info("Campaign done: mean K-S %.4f, best run %d", report.mean_ks, report.best_run)
    return report


# ----------------- objective comparison -----------------

COMPARISON_COLUMNS = [
    "instance",
    "ks_objective_ks_indicator",
    "ks_objective_msm_indicator",
    "msm_objective_ks_indicator",
    "msm_objective_msm_indicator",
]


def compare_objectives(
    instances: list[MidPriceSeries],
    cfg: ExperimentConfig,
    budget: int,
    seed: int,
    pool: EvaluationPool | None = None,
) -> pd.DataFrame:
    """Calibrate each target under K-S and under MSM, then score both results under both."""
    if not instances:
        raise ValueError("compare_objectives needs at least one instance")
    pool = pool or EvaluationPool()
    ncs = replace(cfg.ncs, budget_evals=budget)
    rows = []
    for k, target in enumerate(instances):
        sim = _sim_for(cfg, target)
        kinds = {tag: ObjectiveKind.for_target(tag, target, cfg.stride) for tag in ObjectiveTag}
        row: list[Any] = [k]
        for tag in (ObjectiveTag.KS, ObjectiveTag.MSM):
            objective = SimulationObjective(kinds[tag], target, sim)
            if cfg.optimizer is Optimizer.RANDOM:
                result = random_search(objective, ncs.bounds_array, budget, run_seed(seed, k), pool)
            else:
                result = calibrate(objective, ncs, run_seed(seed, k), pool)
            best = PgpsParams.from_vector(result.best_params)
            series = simulate(best, sim, result.best_eval_seed)
            row.extend(
                discrepancy(kinds[indicator], target, series)
                for indicator in (ObjectiveTag.KS, ObjectiveTag.MSM)
            )
        logger.info("Instance %d compared", k)
        rows.append(row)
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS)


# ----------------- landscape -----------------


def run_landscape(
    cfg: ExperimentConfig,
    target: MidPriceSeries,
    pool: EvaluationPool | None = None,
) -> tuple[GridScan, np.ndarray, MaskStatistics]:
    """Scan the configured parameter pair around the target's generating parameters."""
    if target.params is None:
        raise ConfigError("landscape scans need a target with known generating parameters")
    sim = _sim_for(cfg, target)
    kind = ObjectiveKind.for_target(cfg.objective, target, cfg.stride)
    scan = grid_scan(
        SimulationObjective(kind, target, sim),
        cfg.landscape.dims,
        target.params,
        cfg.landscape.resolution,
        target=target,
        seed=cfg.master_seed,
        bounds=dict(zip(PARAM_NAMES, cfg.ncs.bounds, strict=True)),
        pool=pool,
    )
    mask = top_k_mask(scan, cfg.landscape.top_k)
    statistics = mask_statistics(scan, mask)
    write_grid_csv(scan, mask, cfg.output_path / "grid.csv", statistics)
    return scan, mask, statistics


# ----------------- cross-campaign reports -----------------


def compare_reports(reports: dict[str, ExperimentReport]) -> dict[str, Any]:
    """Pairwise rank-sum tests and relative mean K-S improvement between result sets."""
    summary = {
        name: {
            "mean_ks": report.mean_ks,
            "std_ks": report.std_ks,
            "best_ks": min(report.ks_values),
            "worst_ks": max(report.ks_values),
        }
        for name, report in reports.items()
    }
    pairs = []
    for first, second in itertools.combinations(reports, 2):
        u, p = wilcoxon_rank_sum(reports[first].ks_values, reports[second].ks_values)
        reference = reports[second].mean_ks
        improvement = (reference - reports[first].mean_ks) / reference if reference else 0.0
        pairs.append(
            {"first": first, "second": second, "u": u, "p_value": p, "improvement": improvement}
        )
    return {"summary": summary, "wilcoxon": pairs, "notes": WILCOXON_NOTE}


def load_report(path: str | Path) -> ExperimentReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ExperimentReport.from_dict(read_json(path))


def write_ground_truth(params: PgpsParams, out_dir: Path) -> Path:
    return write_params_json(params, out_dir / "params.json")
