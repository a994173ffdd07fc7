"""Two-dimensional slices of the objective landscape and their top-k masks."""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .pgps_model import DEFAULT_BOUNDS, PARAM_NAMES, MidPriceSeries, PgpsParams
from .workers import EvaluationPool, guarded_call

logger = logging.getLogger(__name__)


class ScanError(ValueError):
    """Raised for an invalid scan request or mask size."""


@dataclass
class GridScan:
    dims: tuple[str, str]
    axis_values: tuple[np.ndarray, np.ndarray]
    cells: np.ndarray
    fixed: PgpsParams
    target_cell: tuple[int, int] | None = None
    errors: dict[tuple[int, int], str] = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape


@dataclass(frozen=True)
class MaskStatistics:
    masked: int
    minimum: float
    tied_at_minimum: int
    target_rank: int | None
    target_in_mask: bool | None


def grid_axis(low: float, high: float, resolution: int) -> np.ndarray:
    """Midpoints of ``resolution`` equal sub-intervals of [low, high]."""
    step = (high - low) / resolution
    return low + step * (np.arange(resolution) + 0.5)


def cell_seed(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1, dtype=np.uint64)[0])


def _evaluate_cell(objective, params: PgpsParams, seed: int) -> tuple[float, str | None]:
    return guarded_call(objective, params.to_vector(), seed)


def grid_scan(
    objective: Callable[[np.ndarray, int], float],
    pair: tuple[str, str],
    fixed: PgpsParams,
    resolution: int,
    target: MidPriceSeries | None = None,
    seed: int = 0,
    bounds: dict[str, tuple[float, float]] = DEFAULT_BOUNDS,
    pool: EvaluationPool | None = None,
) -> GridScan:
    """Evaluate ``objective`` on a resolution x resolution grid over two parameters.

    The remaining parameters are held at ``fixed``. A cell that fails to
    evaluate is stored as NaN and its error recorded.
    """
    dim_x, dim_y = pair
    if resolution < 2:
        raise ScanError("resolution must be >= 2")
    if dim_x == dim_y:
        raise ScanError("the two scanned dimensions must differ")
    for name in pair:
        if name not in PARAM_NAMES:
            raise ScanError(f"unknown parameter {name!r}")

    axis_x = grid_axis(*bounds[dim_x], resolution)
    axis_y = grid_axis(*bounds[dim_y], resolution)
    jobs = [
        (
            objective,
            fixed.with_values(**{dim_x: float(vx), dim_y: float(vy)}),
            cell_seed(seed, i, j),
        )
        for i, vx in enumerate(axis_x)
        for j, vy in enumerate(axis_y)
    ]
    logger.info("Scanning %s x %s at %dx%d", dim_x, dim_y, resolution, resolution)
    results = (pool or EvaluationPool()).starmap(_evaluate_cell, jobs)

    cells = np.empty((resolution, resolution))
    errors = {}
    for k, (value, error) in enumerate(results):
        i, j = divmod(k, resolution)
        cells[i, j] = value
        if error is not None:
            errors[(i, j)] = error
    if errors:
        logger.warning("%d grid cells failed to evaluate", len(errors))

    target_cell = None
    generating = target.params if target is not None else None
    if generating is not None:
        target_cell = (
            int(np.argmin(np.abs(axis_x - getattr(generating, dim_x)))),
            int(np.argmin(np.abs(axis_y - getattr(generating, dim_y)))),
        )

    return GridScan(
        dims=(dim_x, dim_y),
        axis_values=(axis_x, axis_y),
        cells=cells,
        fixed=fixed,
        target_cell=target_cell,
        errors=errors,
    )


def _priority(scan: GridScan) -> np.ndarray:
    flat = np.where(np.isnan(scan.cells), np.inf, scan.cells).ravel()
    return np.argsort(flat, kind="stable")


def top_k_mask(scan: GridScan, k: int) -> np.ndarray:
    """Mark exactly the k smallest cells; ties go to the earlier row-major cell."""
    if not 1 <= k <= scan.cells.size:
        raise ScanError(f"k must lie in [1, {scan.cells.size}], got {k}")
    mask = np.zeros(scan.cells.size, dtype=bool)
    mask[_priority(scan)[:k]] = True
    return mask.reshape(scan.cells.shape)


def mask_statistics(scan: GridScan, mask: np.ndarray) -> MaskStatistics:
    """Summarize how sharply a mask singles out the minimum region."""
    minimum = float(np.nanmin(scan.cells))
    tied = int(np.count_nonzero(scan.cells == minimum))
    target_rank = target_in_mask = None
    if scan.target_cell is not None:
        i, j = scan.target_cell
        flat_index = i * scan.cells.shape[1] + j
        target_rank = int(np.flatnonzero(_priority(scan) == flat_index)[0])
        target_in_mask = bool(mask[i, j])
    return MaskStatistics(
        masked=int(np.count_nonzero(mask)),
        minimum=minimum,
        tied_at_minimum=tied,
        target_rank=target_rank,
        target_in_mask=target_in_mask,
    )
