"""Tests for experiment orchestration and statistics."""

import itertools
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import mannwhitneyu

from lobcalib.config import ConfigError, DataConfig, ExperimentConfig, LandscapeConfig
from lobcalib.harness import (
    COMPARISON_COLUMNS,
    ExperimentReport,
    RunRecord,
    campaign_fingerprint,
    compare_objectives,
    compare_reports,
    gen_synthetic_targets,
    load_report,
    load_target,
    resolve_target,
    run_calibration_campaign,
    run_landscape,
    run_seed,
    save_targets,
    wilcoxon_rank_sum,
)
from lobcalib.ncs_calibrator import calibrate, random_search
from lobcalib.objectives import ObjectiveKind, SimulationObjective, moments
from lobcalib.pgps_model import DEFAULT_BOUNDS, MidPriceSeries, PgpsParams, SimConfig, simulate
from lobcalib.series_io import read_json, write_json
from lobcalib.workers import EvaluationPool

PARAMS = PgpsParams(alpha=0.15, mu=0.025, delta=0.025, delta_s=0.001, lambda0=150.0, c_lambda=20.0)
TINY = SimConfig(horizon_T=60, msd_samples=300)


def pair_count_u(a, b):
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def exhaustive_p(a, b):
    """Two-sided p over every relabelling of the pooled sample."""
    pooled = list(a) + list(b)
    n1 = len(a)
    center = len(a) * len(b) / 2
    observed = abs(pair_count_u(a, b) - center)
    extreme = total = 0
    for chosen in itertools.combinations(range(len(pooled)), n1):
        first = [pooled[k] for k in chosen]
        rest = [pooled[k] for k in range(len(pooled)) if k not in chosen]
        total += 1
        if abs(pair_count_u(first, rest) - center) >= observed:
            extreme += 1
    return extreme / total


def _cfg(tmpdir, **changes):
    cfg = ExperimentConfig(
        repeats=2,
        budget=40,
        output_dir=str(tmpdir),
        master_seed=11,
        sim=TINY,
        landscape=LandscapeConfig(resolution=3, top_k=2),
    )
    return replace(cfg, **changes)


def _report(name, ks_values):
    runs = [
        RunRecord(k, k, v, v, PARAMS.to_dict(), 40, k) for k, v in enumerate(ks_values)
    ]
    return ExperimentReport(
        objective="ks",
        optimizer=name,
        master_seed=0,
        runs=runs,
        best_run=int(np.argmin(ks_values)),
        mean_ks=float(np.mean(ks_values)),
        std_ks=float(np.std(ks_values, ddof=1)),
        target_moments={},
        best_moments={},
        critical_value=0.1,
        below_critical=True,
    )


class TestWilcoxon:
    def test_separated_samples(self):
        u, p = wilcoxon_rank_sum([1, 2, 3], [4, 5, 6])
        assert u == 0.0
        assert p == pytest.approx(0.1)

    def test_swap_is_symmetric(self):
        a, b = [1.0, 4.0, 2.5], [3.0, 5.0, 6.0, 7.0]
        u_ab, p_ab = wilcoxon_rank_sum(a, b)
        u_ba, p_ba = wilcoxon_rank_sum(b, a)
        assert u_ba == len(a) * len(b) - u_ab
        assert p_ba == pytest.approx(p_ab)

    def test_identical_samples(self):
        assert wilcoxon_rank_sum([1, 2, 3], [1, 2, 3])[1] == 1.0
        assert wilcoxon_rank_sum([2.0] * 8, [2.0] * 9)[1] == 1.0

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            wilcoxon_rank_sum([], [1.0])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n1 = int(rng.integers(1, 9))
            n2 = int(rng.integers(1, 11 - n1))
            a = rng.integers(0, 6, n1).astype(float)
            b = rng.integers(0, 6, n2).astype(float)
            u, p = wilcoxon_rank_sum(a, b)
            assert u == pair_count_u(a, b)
            assert p == exhaustive_p(a, b)

    def test_large_samples_use_normal_approximation(self):
        rng = np.random.default_rng(1)
        a = rng.integers(0, 20, 15).astype(float)
        b = rng.integers(5, 25, 12).astype(float)
        u, p = wilcoxon_rank_sum(a, b)
        reference = mannwhitneyu(a, b, alternative="two-sided", use_continuity=False,
                                 method="asymptotic")
        assert u == reference.statistic
        assert p == pytest.approx(reference.pvalue, rel=1e-9)


class TestTargets:
    def test_count_and_length(self):
        targets = gen_synthetic_targets(3, DEFAULT_BOUNDS, TINY, seed=0)
        assert len(targets) == 3
        for params, series in targets:
            assert len(series) == TINY.horizon_T
            assert series.params == params
            params.validate(DEFAULT_BOUNDS)

    def test_reproducible(self):
        (p1, s1), = gen_synthetic_targets(1, DEFAULT_BOUNDS, TINY, seed=4)
        (p2, s2), = gen_synthetic_targets(1, DEFAULT_BOUNDS, TINY, seed=4)
        assert p1 == p2
        np.testing.assert_array_equal(s1.values, s2.values)

    def test_count_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_synthetic_targets(0, DEFAULT_BOUNDS, TINY, seed=0)

    def test_saved_targets_keep_ground_truth(self):
        targets = gen_synthetic_targets(2, DEFAULT_BOUNDS, TINY, seed=2)
        with tempfile.TemporaryDirectory() as tmpdir:
            paths = save_targets(targets, Path(tmpdir))
            loaded = load_target(paths[1])
        assert loaded.params == targets[1][0]
        assert loaded.seed == targets[1][1].seed
        np.testing.assert_array_equal(loaded.values, targets[1][1].values)

    def test_resolve_from_params(self):
        cfg = ExperimentConfig(sim=TINY, data=DataConfig(target_params=PARAMS.to_dict()))
        target = resolve_target(cfg)
        assert target.params == PARAMS
        assert len(target) == TINY.horizon_T

    def test_resolve_without_target(self):
        with pytest.raises(ConfigError):
            resolve_target(ExperimentConfig())

    def test_run_seeds_distinct(self):
        seeds = {run_seed(0, k) for k in range(10)}
        assert len(seeds) == 10
        assert run_seed(0, 3) == run_seed(0, 3)


class TestCampaign:
    def test_records_and_summary(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            cfg = _cfg(tmpdir)
            report = run_calibration_campaign(cfg, target)
            out = Path(tmpdir)
            assert sorted(p.name for p in (out / "runs").glob("run_*.json")) == [
                "run_0.json", "run_1.json"
            ]
            assert (out / "best_series.csv").exists()
            assert read_json(out / "result.json")["seed"] == 11
            assert load_report(out) == report

        assert len(report.runs) == 2
        assert report.mean_ks == pytest.approx(np.mean(report.ks_values))
        assert report.runs[report.best_run].best_ks == min(report.ks_values)
        assert report.target_moments["excess_kurtosis"] is not None
        assert report.below_critical == (min(report.ks_values) < report.critical_value)
        assert len({run.seed for run in report.runs}) == 2

    def test_rerun_is_reproducible(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            a = run_calibration_campaign(_cfg(first), target).to_dict()
            b = run_calibration_campaign(_cfg(second), target).to_dict()
            assert (Path(first) / "best_series.csv").read_bytes() == (
                Path(second) / "best_series.csv"
            ).read_bytes()
        a.pop("config")
        b.pop("config")
        assert a == b

    def test_workers_do_not_change_report(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
            serial = run_calibration_campaign(_cfg(first), target)
            with EvaluationPool(2) as pool:
                parallel = run_calibration_campaign(_cfg(second, threads=2), target, pool)
        assert serial.ks_values == parallel.ks_values
        assert [r.best_params for r in serial.runs] == [r.best_params for r in parallel.runs]

    def test_resumes_from_run_records(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            cfg = _cfg(tmpdir)
            full = run_calibration_campaign(cfg, target)
            (Path(tmpdir) / "runs" / "run_1.json").unlink()
            resumed = run_calibration_campaign(cfg, target)
        assert resumed.to_dict() == full.to_dict()

    def test_stale_record_is_recomputed(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            cfg = _cfg(tmpdir, repeats=1)
            full = run_calibration_campaign(cfg, target)
            path = Path(tmpdir) / "runs" / "run_0.json"
            stale = read_json(path)
            stale.update(seed=1, best_value=-1.0)
            write_json(stale, path)
            again = run_calibration_campaign(cfg, target)
        assert again.runs == full.runs

    def test_report_carries_distributions(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            report = run_calibration_campaign(_cfg(tmpdir), target)
            saved = read_json(Path(tmpdir) / "report.json")
        hist = report.distributions["histogram"]
        assert len(hist["edges"]) == len(hist["target_counts"]) + 1
        assert sum(hist["target_counts"]) == len(target)
        assert sum(hist["best_counts"]) == len(target)
        returns = report.distributions["log_returns"]
        assert 0.0 <= returns["ks"] <= 1.0
        assert set(returns["target_moments"]) == set(report.target_moments)
        assert saved["distributions"] == report.distributions

    def test_stride_downsamples_report_series(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            report = run_calibration_campaign(_cfg(tmpdir, stride=3), target)
        assert sum(report.distributions["histogram"]["target_counts"]) == 20
        assert report.target_moments == moments(target.downsample(3).values).to_dict()

    def test_changed_settings_recompute_runs(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            first = run_calibration_campaign(_cfg(tmpdir, optimizer="random", budget=15), target)
            second = run_calibration_campaign(_cfg(tmpdir, optimizer="random", budget=25), target)
        assert all(run.evals_used == 15 for run in first.runs)
        assert all(run.evals_used == 25 for run in second.runs)
        assert first.runs[0].fingerprint != second.runs[0].fingerprint

    def test_changed_target_recomputes_runs(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            cfg = _cfg(tmpdir, repeats=1)
            first = run_calibration_campaign(cfg, simulate(PARAMS, TINY, seed=1))
            other = simulate(PARAMS, TINY, seed=2)
            second = run_calibration_campaign(cfg, other)
        assert second.runs[0].fingerprint == campaign_fingerprint(cfg, other)
        assert second.runs[0].fingerprint != first.runs[0].fingerprint

    def test_fingerprint_ignores_location_and_workers(self):
        target = simulate(PARAMS, TINY, seed=1)
        cfg = _cfg("a")
        assert campaign_fingerprint(cfg, target) == campaign_fingerprint(
            replace(cfg, output_dir="b", threads=4, repeats=9), target
        )
        assert campaign_fingerprint(cfg, target) != campaign_fingerprint(
            replace(cfg, budget=41), target
        )

    def test_random_search_campaign(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            report = run_calibration_campaign(_cfg(tmpdir, optimizer="random", budget=15), target)
        assert report.optimizer == "random"
        assert all(run.evals_used == 15 for run in report.runs)

    def test_target_length_sets_horizon(self):
        target = simulate(PARAMS, SimConfig(horizon_T=40, msd_samples=300), seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            report = run_calibration_campaign(_cfg(tmpdir, repeats=1), target)
        assert len(report.runs) == 1


class TestCompareObjectives:
    def test_table_layout(self):
        target = simulate(PARAMS, TINY, seed=1)
        table = compare_objectives([target], ExperimentConfig(sim=TINY), budget=20, seed=5)
        assert list(table.columns) == COMPARISON_COLUMNS
        assert len(table) == 1
        assert 0.0 <= table["ks_objective_ks_indicator"][0] <= 1.0
        assert 0.0 <= table["msm_objective_ks_indicator"][0] <= 1.0

    def test_own_indicator_is_calibrated_value(self):
        target = simulate(PARAMS, TINY, seed=1)
        cfg = ExperimentConfig(sim=TINY)
        table = compare_objectives([target], cfg, budget=20, seed=5)
        objective = SimulationObjective(ObjectiveKind.for_target("ks", target), target, TINY)
        result = calibrate(objective, replace(cfg.ncs, budget_evals=20), run_seed(5, 0))
        assert table["ks_objective_ks_indicator"][0] == result.best_value

    def test_stride_reaches_both_objectives(self):
        target = simulate(PARAMS, TINY, seed=1)
        cfg = ExperimentConfig(sim=TINY, stride=4)
        table = compare_objectives([target], cfg, budget=20, seed=5)
        objective = SimulationObjective(ObjectiveKind.for_target("ks", target, 4), target, TINY)
        result = calibrate(objective, replace(cfg.ncs, budget_evals=20), run_seed(5, 0))
        assert table["ks_objective_ks_indicator"][0] == result.best_value

    def test_needs_instances(self):
        with pytest.raises(ValueError):
            compare_objectives([], ExperimentConfig(sim=TINY), budget=20, seed=0)


class TestLandscape:
    def test_scan_written(self):
        target = simulate(PARAMS, TINY, seed=1)
        with tempfile.TemporaryDirectory() as tmpdir:
            scan, mask, stats = run_landscape(_cfg(tmpdir), target)
            assert (Path(tmpdir) / "grid.csv").exists()
            assert (Path(tmpdir) / "grid.json").exists()
        assert scan.shape == (3, 3)
        assert mask.sum() == 2
        assert stats.masked == 2
        assert scan.target_cell is not None

    def test_needs_generating_parameters(self):
        target = MidPriceSeries(values=simulate(PARAMS, TINY, seed=1).values)
        with tempfile.TemporaryDirectory() as tmpdir:
            with pytest.raises(ConfigError):
                run_landscape(_cfg(tmpdir), target)


class TestCompareReports:
    def test_pairwise_statistics(self):
        reports = {
            "ncs": _report("ncs", [0.02, 0.03, 0.025, 0.028]),
            "random": _report("random", [0.05, 0.06, 0.045, 0.07]),
        }
        comparison = compare_reports(reports)
        (pair,) = comparison["wilcoxon"]
        u, p = wilcoxon_rank_sum(reports["ncs"].ks_values, reports["random"].ks_values)
        assert (pair["first"], pair["second"]) == ("ncs", "random")
        assert pair["u"] == u == 0.0
        assert pair["p_value"] == p
        expected = (reports["random"].mean_ks - reports["ncs"].mean_ks) / reports["random"].mean_ks
        assert pair["improvement"] == pytest.approx(expected)
        assert comparison["summary"]["ncs"]["best_ks"] == 0.02
        assert "two-sided" in comparison["notes"]

    def test_three_sets_give_three_pairs(self):
        reports = {name: _report(name, [0.1, 0.2]) for name in ("a", "b", "c")}
        assert len(compare_reports(reports)["wilcoxon"]) == 3

    def test_report_file_roundtrip(self):
        report = _report("ncs", [0.02, 0.03])
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_json(report.to_dict(), Path(tmpdir) / "report.json")
            assert load_report(path) == report


# Desk-scale acceptance runs


def _desk_targets(count, seed):
    sim = SimConfig(horizon_T=600)
    return sim, gen_synthetic_targets(count, DEFAULT_BOUNDS, sim, seed)


@pytest.mark.slow
class TestDeskScale:
    def test_recoverability(self):
        sim, targets = _desk_targets(3, seed=100)
        below = 0
        for k, (_, target) in enumerate(targets):
            with tempfile.TemporaryDirectory() as tmpdir:
                cfg = replace(ExperimentConfig(sim=sim, repeats=5, budget=2000, master_seed=k),
                              output_dir=tmpdir)
                with EvaluationPool(4) as pool:
                    report = run_calibration_campaign(cfg, target, pool)
            assert report.mean_ks <= 0.10
            below += report.below_critical
        assert below >= 2

    def test_ncs_beats_random_search(self):
        sim, ((_, target),) = _desk_targets(1, seed=200)
        objective = SimulationObjective(ObjectiveKind("ks"), target, sim)
        config = ExperimentConfig(budget=2000).ncs
        with EvaluationPool(4) as pool:
            ncs = [calibrate(objective, config, s, pool).best_value for s in range(10)]
            rnd = [
                random_search(objective, config.bounds_array, 2000, s, pool).best_value
                for s in range(10)
            ]
        assert np.median(ncs) < np.median(rnd)
        assert wilcoxon_rank_sum(ncs, rnd)[1] < 0.05

    def test_ks_objective_beats_msm(self):
        sim, targets = _desk_targets(3, seed=300)
        with EvaluationPool(4) as pool:
            table = compare_objectives(
                [t for _, t in targets], ExperimentConfig(sim=sim), budget=2000, seed=0, pool=pool
            )
        assert (table["ks_objective_ks_indicator"] < table["msm_objective_ks_indicator"]).all()

    def test_higher_frequency_identifies_target(self):
        sim, ((params, target),) = _desk_targets(1, seed=400)
        stats = {}
        for stride in (1, 30):
            with tempfile.TemporaryDirectory() as tmpdir:
                cfg = ExperimentConfig(
                    sim=sim,
                    output_dir=tmpdir,
                    stride=stride,
                    landscape=LandscapeConfig(resolution=20, top_k=40),
                )
                with EvaluationPool(4) as pool:
                    _, _, stats[stride] = run_landscape(cfg, target, pool)
        assert stats[1].target_in_mask
        assert stats[30].tied_at_minimum >= stats[1].tied_at_minimum
