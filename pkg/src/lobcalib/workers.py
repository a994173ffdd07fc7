"""Order-preserving fan-out of independent evaluations over worker processes."""

import logging
import multiprocessing as mp
from collections.abc import Callable, Iterable, Sequence
from typing import Any

logger = logging.getLogger(__name__)


class EvaluationPool:
    """Run independent calls serially or on a process pool.

    Results always come back in submission order, so the number of workers
    never changes what callers compute from them.
    """

    def __init__(self, workers: int = 1) -> None:
        if workers < 1:
            raise ValueError("workers must be >= 1")
        self.workers = workers
        self._pool = None

    def __enter__(self) -> "EvaluationPool":
        if self.workers > 1:
            logger.info("Starting %d worker processes", self.workers)
            self._pool = mp.Pool(self.workers)
        return self

    def __exit__(self, *exc_info) -> None:
        if self._pool is not None:
            self._pool.close()
            self._pool.join()
            self._pool = None

    def starmap(self, fn: Callable[..., Any], items: Iterable[Sequence[Any]]) -> list[Any]:
        items = list(items)
        if self._pool is None or len(items) <= 1:
            return [fn(*item) for item in items]
        return self._pool.starmap(fn, items)


def guarded_call(fn: Callable[..., float], *args: Any) -> tuple[float, str | None]:
    """Call ``fn`` and return (value, None), or (nan, message) if it raised."""
    try:
        return float(fn(*args)), None
    except Exception as exc:
        return float("nan"), f"{type(exc).__name__}: {exc}"
