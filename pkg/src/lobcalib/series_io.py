"""CSV and JSON file formats for series, parameters, traces and grids."""

import json
import math
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from .landscape import GridScan, MaskStatistics
from .ncs_calibrator import TraceRow
from .pgps_model import MidPriceSeries, PgpsParams

SERIES_COLUMNS = ["t", "mid_price"]
QUOTE_COLUMNS = ["best_bid", "best_ask"]
TRACE_COLUMNS = [
    "iteration", "evals", "best_f", "mean_f", "epsilon_t", "phi_t", "replaced", "step_scale",
]
GRID_COLUMNS = ["i", "j", "value_dim1", "value_dim2", "objective", "in_top_k"]


class SeriesFormatError(ValueError):
    """Raised for malformed series files; messages name the 1-based file line."""


def _with_suffix(path: str | Path, suffix: str) -> Path:
    path = Path(path)
    if path.suffix.lower() != suffix:
        path = Path(str(path) + suffix)
    return path


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_to_builtin) + "\n"


def write_json(data: Any, output_path: str | Path) -> Path:
    output_path = _with_suffix(output_path, ".json")
    output_path.parent.mkdir(parents=True, exist_ok=True)
    output_path.write_text(dumps_json(data))
    return output_path


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def write_series_csv(
    series: MidPriceSeries, output_path: str | Path, include_quotes: bool = False
) -> Path:
    """Write ``t,mid_price`` rows, t starting at 1.

    Prices are written in their shortest round-trip form, so half ticks come out
    with one decimal and ingested decimals are kept exactly.

    With ``include_quotes`` the best bid and best ask columns are appended
    when the series carries them.
    """
    output_path = _with_suffix(output_path, ".csv")
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"t": np.arange(1, len(series) + 1), "mid_price": series.values})
    if include_quotes and series.best_bid is not None and series.best_ask is not None:
        frame["best_bid"] = series.best_bid
        frame["best_ask"] = series.best_ask
    frame.to_csv(output_path, index=False, lineterminator="\n")
    return output_path


def _parse_price(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def load_series_csv(path: str | Path, tick_size: float | None = None) -> MidPriceSeries:
    """Read a ``t,mid_price`` file, with ``best_bid,best_ask`` columns when present.

    With ``tick_size`` decimal prices are converted to integer ticks.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise SeriesFormatError(f"{path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise SeriesFormatError(f"{path}: empty file") from exc

    if list(frame.columns[:2]) != SERIES_COLUMNS:
        raise SeriesFormatError(f"{path}: line 1: expected header 't,mid_price'")

    steps = pd.to_numeric(frame["t"], errors="coerce")
    prices = frame["mid_price"].map(_parse_price)
    for k in range(len(frame)):
        line = k + 2
        if np.isnan(steps.iloc[k]):
            raise SeriesFormatError(f"{path}: line {line}: malformed t {frame['t'].iloc[k]!r}")
        if np.isnan(prices.iloc[k]):
            raise SeriesFormatError(
                f"{path}: line {line}: malformed price {frame['mid_price'].iloc[k]!r}"
            )
        if prices.iloc[k] <= 0:
            raise SeriesFormatError(f"{path}: line {line}: price must be positive")
        if k and steps.iloc[k] <= steps.iloc[k - 1]:
            raise SeriesFormatError(f"{path}: line {line}: rows are not in t order")
    if len(frame) < 2:
        raise SeriesFormatError(f"{path}: a series needs at least two rows")

    quotes = {}
    if set(QUOTE_COLUMNS) <= set(frame.columns):
        for name in QUOTE_COLUMNS:
            parsed = frame[name].map(_parse_price)
            bad = np.flatnonzero(np.isnan(parsed.to_numpy(dtype=float)))
            if bad.size:
                raise SeriesFormatError(f"{path}: line {bad[0] + 2}: malformed {name}")
            quotes[name] = parsed.to_numpy(dtype=float)

    values = prices.to_numpy(dtype=float)
    if tick_size is not None:
        if tick_size <= 0:
            raise SeriesFormatError("tick_size must be positive")
        values = np.maximum(np.round(values / tick_size), 1.0)
        quotes = {name: np.round(q / tick_size) for name, q in quotes.items()}
    return MidPriceSeries(values=values, **quotes)


def write_params_json(params: PgpsParams, output_path: str | Path) -> Path:
    return write_json(params.to_dict(), output_path)


def read_params_json(path: str | Path) -> PgpsParams:
    return PgpsParams.from_dict(read_json(path))


def write_trace_csv(trace: list[TraceRow], output_path: str | Path) -> Path:
    output_path = _with_suffix(output_path, ".csv")
    output_path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [[getattr(row, c) for c in TRACE_COLUMNS] for row in trace], columns=TRACE_COLUMNS
    )
    frame.to_csv(output_path, index=False, lineterminator="\n")
    return output_path


def write_grid_csv(
    scan: GridScan,
    mask: np.ndarray,
    output_path: str | Path,
    statistics: MaskStatistics | None = None,
) -> Path:
    """Write one row per grid cell plus a sidecar JSON describing the scan."""
    output_path = _with_suffix(output_path, ".csv")
    output_path.parent.mkdir(parents=True, exist_ok=True)
    axis_x, axis_y = scan.axis_values
    rows = [
        [i, j, axis_x[i], axis_y[j], scan.cells[i, j], bool(mask[i, j])]
        for i in range(scan.cells.shape[0])
        for j in range(scan.cells.shape[1])
    ]
    pd.DataFrame(rows, columns=GRID_COLUMNS).to_csv(output_path, index=False, lineterminator="\n")

    sidecar = {
        "dims": list(scan.dims),
        "resolution": scan.cells.shape[0],
        "fixed": scan.fixed.to_dict(),
        "target_cell": list(scan.target_cell) if scan.target_cell is not None else None,
        "errors": {f"{i},{j}": message for (i, j), message in sorted(scan.errors.items())},
    }
    if statistics is not None:
        sidecar["mask"] = asdict(statistics)
    write_json(sidecar, output_path.with_suffix(".json"))
    return output_path
