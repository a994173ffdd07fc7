"""Command-line interface for lobcalib."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, Mode, default_config_yaml, load_config
from .workers import EvaluationPool

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("common options")
    group.add_argument("-c", "--config", type=str, help="YAML experiment config file")
    group.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    group.add_argument("-o", "--out", type=str, help="Output directory (overrides the config)")
    group.add_argument("-j", "--threads", type=int, help="Worker processes for evaluations")
    group.add_argument(
        "--log-level",
        type=str,
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: WARNING)",
    )
    return common


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser for lobcalib."""
    parser = argparse.ArgumentParser(
        prog="lobcalib",
        description="Calibrate an agent-based limit order book simulator against mid-price data",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  lobcalib gen-targets --count 3 --seed 7 -o targets
      Synthesize 3 target series with their ground-truth parameters

  lobcalib calibrate --target targets/target_0.csv --repeats 5 --budget 2000 -j 8 -o run0
      Calibrate against a target with the improved NCS, 5 repeats

  lobcalib landscape --target targets/target_0.csv --resolution 20 --top-k 40
      Scan the lambda0 x c_lambda objective landscape

  lobcalib report run_ncs run_random -o comparison
      Compare two campaigns with rank-sum tests
""",
    )
    parser.add_argument("-v", "--version", action="version", version=f"%(prog)s {__version__}")

    common = _common_options()
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = sub.add_parser(
        "gen-targets", parents=[common], help="Synthesize targets from random parameters"
    )
    gen.add_argument("-n", "--count", type=int, help="Number of targets")

    sim = sub.add_parser("simulate", parents=[common], help="Simulate one mid-price series")
    sim.add_argument("-p", "--params", type=str, help="Parameter JSON file")
    sim.add_argument("-T", "--horizon", type=int, help="Number of time steps")

    cal = sub.add_parser("calibrate", parents=[common], help="Run a calibration campaign")
    _add_target_options(cal)
    cal.add_argument("--optimizer", type=str, choices=["ncs", "random"], help="Optimizer")
    cal.add_argument("-r", "--repeats", type=int, help="Independent calibration runs")
    cal.add_argument("-b", "--budget", type=int, help="Simulation evaluations per run")
    cal.add_argument("--pdf", action="store_true", help="Also write a PDF summary")

    land = sub.add_parser("landscape", parents=[common], help="Scan a 2-D objective landscape")
    _add_target_options(land)
    land.add_argument("--dims", type=str, nargs=2, metavar=("DIM1", "DIM2"), help="Scanned pair")
    land.add_argument("--resolution", type=int, help="Cells per axis")
    land.add_argument("-k", "--top-k", type=int, help="Size of the top-k mask")

    comp = sub.add_parser(
        "compare-objectives", parents=[common], help="Calibrate under K-S and MSM and cross-score"
    )
    comp.add_argument("targets", type=str, nargs="+", help="Target series CSV files")
    comp.add_argument("-b", "--budget", type=int, help="Simulation evaluations per calibration")

    rep = sub.add_parser("report", parents=[common], help="Compare finished campaigns")
    rep.add_argument("inputs", type=str, nargs="+", help="Campaign directories or report.json")

    conf = sub.add_parser("config", help="Print configuration")
    conf.add_argument("--defaults", action="store_true", help="Print the default config file")
    conf.add_argument("-c", "--config", type=str, help="YAML file to validate and print")

    return parser


def _add_target_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-t", "--target", type=str, help="Target series CSV file")
    parser.add_argument("--tick-size", type=float, help="Convert decimal prices to ticks")
    parser.add_argument("--objective", type=str, choices=["ks", "msm"], help="Objective")
    parser.add_argument("--stride", type=int, help="Compare every stride-th observation")


def validate_args(args: argparse.Namespace) -> list[str]:
    """Validate argument combinations and return list of errors."""
    errors = []
    for name in ("count", "horizon", "repeats", "budget", "resolution", "top_k", "stride"):
        value = getattr(args, name, None)
        if value is not None and value < 1:
            errors.append(f"--{name.replace('_', '-')} must be >= 1")
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        errors.append("--threads must be >= 1")
    if args.command == "config" and not args.defaults and not args.config:
        errors.append("config requires --defaults or --config")
    return errors


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config file and apply command-line overrides."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out, threads=args.threads)
    changes = {"mode": Mode(args.command)}

    for flag, key in (("objective", "objective"), ("optimizer", "optimizer"),
                      ("repeats", "repeats"), ("budget", "budget"), ("stride", "stride")):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value

    data = cfg.data
    if getattr(args, "target", None):
        data = replace(data, target_path=args.target)
    if getattr(args, "tick_size", None) is not None:
        data = replace(data, tick_size=args.tick_size)
    if getattr(args, "count", None) is not None:
        data = replace(data, count=args.count)
    changes["data"] = data

    landscape = cfg.landscape
    for flag in ("dims", "resolution", "top_k"):
        value = getattr(args, flag, None)
        if value is not None:
            landscape = replace(landscape, **{flag: value})
    changes["landscape"] = landscape

    if getattr(args, "horizon", None) is not None:
        changes["sim"] = replace(cfg.sim, horizon_T=args.horizon)

    cfg = replace(cfg, **changes)
    cfg.validate()
    return cfg


def _gen_targets(cfg: ExperimentConfig) -> None:
    from .harness import gen_synthetic_targets, save_targets

    print(f"Generating {cfg.data.count} targets (T={cfg.sim.horizon_T})...")
    targets = gen_synthetic_targets(cfg.data.count, cfg.data.ranges, cfg.sim, cfg.master_seed)
    for path in save_targets(targets, cfg.output_path):
        print(f"  -> {path}")


def _simulate(cfg: ExperimentConfig, params_path: str | None) -> None:
    from .harness import write_ground_truth
    from .lob_engine import OrderBook
    from .pgps_model import PgpsParams, simulate
    from .series_io import read_params_json, write_series_csv

    if params_path:
        params = read_params_json(params_path)
    elif cfg.data.target_params:
        params = PgpsParams.from_dict(cfg.data.target_params)
    else:
        raise ConfigError("simulate needs --params or data.target_params")
    params.validate()

    print(f"Simulating {cfg.sim.horizon_T} steps...")
    print(f"  Params: {params}")
    book = OrderBook()
    series = simulate(params, cfg.sim, cfg.master_seed, book)
    print(f"  -> {write_series_csv(series, cfg.output_path / 'series.csv', include_quotes=True)}")
    book_path = cfg.output_path / "book.csv"
    book_path.write_text(book.to_csv())
    print(f"  -> {book_path}")
    print(f"  -> {write_ground_truth(params, cfg.output_path)}")


def _calibrate(cfg: ExperimentConfig, pool, pdf: bool) -> None:
    from .harness import resolve_target, run_calibration_campaign

    target = resolve_target(cfg)
    print(f"Calibrating with {cfg.optimizer} on {cfg.objective}...")
    print(f"  Repeats: {cfg.repeats}, budget: {cfg.budget}")
    report = run_calibration_campaign(cfg, target, pool)
    print(f"  Mean K-S: {report.mean_ks:.5f} +- {report.std_ks:.5f}")
    print(f"  Best run: {report.best_run} (critical value {report.critical_value:.5f})")
    print(f"  -> {cfg.output_path / 'report.json'}")

    if pdf:
        from .pdf_report import export_report_pdf
        from .series_io import load_series_csv

        best = load_series_csv(cfg.output_path / "best_series.csv")
        pdf_path = export_report_pdf(report, cfg.output_path / "report", series=(target, best))
        print(f"  -> {pdf_path}")


def _landscape(cfg: ExperimentConfig, pool) -> None:
    from .harness import resolve_target, run_landscape

    target = resolve_target(cfg)
    dim_x, dim_y = cfg.landscape.dims
    res = cfg.landscape.resolution
    print(f"Scanning {dim_x} x {dim_y} at {res}x{res}...")
    scan, _, statistics = run_landscape(cfg, target, pool)
    print(f"  Minimum: {statistics.minimum:.5f} ({statistics.tied_at_minimum} cells tied)")
    if statistics.target_in_mask is not None:
        print(f"  Target cell {scan.target_cell} in top-{cfg.landscape.top_k}: "
              f"{statistics.target_in_mask}")
    print(f"  -> {cfg.output_path / 'grid.csv'}")


def _compare_objectives(cfg: ExperimentConfig, paths: list[str], pool) -> None:
    from .harness import compare_objectives, load_target

    instances = [load_target(path, cfg.data.tick_size) for path in paths]
    print(f"Comparing K-S and MSM on {len(instances)} instances...")
    table = compare_objectives(instances, cfg, cfg.budget, cfg.master_seed, pool)
    cfg.output_path.mkdir(parents=True, exist_ok=True)
    out = cfg.output_path / "objective_comparison.csv"
    table.to_csv(out, index=False, lineterminator="\n")
    print(f"  -> {out}")


def _report(cfg: ExperimentConfig, inputs: list[str]) -> None:
    from .harness import compare_reports, load_report
    from .pdf_report import export_report_pdf
    from .series_io import write_json

    reports = {Path(path).stem if path.endswith(".json") else Path(path).name: load_report(path)
               for path in inputs}
    print(f"Comparing {len(reports)} result sets...")
    comparison = compare_reports(reports)
    print(f"  -> {write_json(comparison, cfg.output_path / 'comparison.json')}")
    first = next(iter(reports.values()))
    pdf_path = export_report_pdf(
        first, cfg.output_path / "comparison", title="Calibration Comparison",
        comparison=comparison,
    )
    print(f"  -> {pdf_path}")


def run(args: argparse.Namespace) -> None:
    """Dispatch a parsed, validated command."""
    if args.command == "config":
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.config:
            cfg.validate()
        print(default_config_yaml() if args.defaults else cfg.to_yaml(), end="")
        return

    cfg = build_config(args)
    logger.info("Running %s with seed %d", cfg.mode, cfg.master_seed)
    if cfg.mode is Mode.GEN_TARGETS:
        _gen_targets(cfg)
    elif cfg.mode is Mode.SIMULATE:
        _simulate(cfg, args.params)
    elif cfg.mode is Mode.REPORT:
        _report(cfg, args.inputs)
    else:
        with EvaluationPool(cfg.threads) as pool:
            if cfg.mode is Mode.CALIBRATE:
                _calibrate(cfg, pool, args.pdf)
            elif cfg.mode is Mode.LANDSCAPE:
                _landscape(cfg, pool)
            else:
                _compare_objectives(cfg, args.targets, pool)
    print("Done!")


def main(argv: list[str] | None = None) -> int:
    """Main entry point for lobcalib CLI."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    errors = validate_args(args)
    if errors:
        for error in errors:
            print(f"Error: {error}", file=sys.stderr)
        return 1

    logging.basicConfig(level=getattr(args, "log_level", "WARNING"), format=LOG_FORMAT)

    try:
        run(args)
    except ConfigError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
