"""PGPS liquidity provider/taker simulator driving the order book."""

import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Protocol

import numpy as np

from .lob_engine import Order, OrderBook, Side

logger = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "mu", "delta", "delta_s", "lambda0", "c_lambda")

# Search ranges used to synthesize targets
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "alpha": (0.05, 0.20),
    "mu": (0.0, 0.05),
    "delta": (0.0, 0.05),
    "delta_s": (0.0, 0.005),
    "lambda0": (50.0, 300.0),
    "c_lambda": (1.0, 50.0),
}

MSD_FLOOR = 1e-12


class ParameterError(ValueError):
    """Raised for invalid simulator parameters or inputs."""


class UniformSource(Protocol):
    def random(self, size=None): ...


@dataclass(frozen=True)
class PgpsParams:
    """The six calibrated parameters w = [alpha, mu, delta, delta_s, lambda0, c_lambda]."""
    alpha: float
    mu: float
    delta: float
    delta_s: float
    lambda0: float
    c_lambda: float

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=float)

    @classmethod
    def from_vector(cls, x) -> "PgpsParams":
        values = [float(v) for v in x]
        if len(values) != len(PARAM_NAMES):
            raise ParameterError(f"Expected {len(PARAM_NAMES)} parameters, got {len(values)}")
        return cls(*values)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PgpsParams":
        missing = [name for name in PARAM_NAMES if name not in data]
        if missing:
            raise ParameterError(f"Missing parameters: {', '.join(missing)}")
        return cls(**{name: float(data[name]) for name in PARAM_NAMES})

    @classmethod
    def sample(
        cls, rng: np.random.Generator, bounds: dict[str, tuple[float, float]] = DEFAULT_BOUNDS
    ) -> "PgpsParams":
        """Draw each parameter uniformly within its bounds."""
        return cls(*(rng.uniform(*bounds[name]) for name in PARAM_NAMES))

    def with_values(self, **changes: float) -> "PgpsParams":
        return replace(self, **changes)

    def validate(self, bounds: dict[str, tuple[float, float]] | None = None) -> None:
        for name in ("alpha", "mu", "delta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must be a probability, got {value}")
        if self.delta_s < 0:
            raise ParameterError(f"delta_s must be >= 0, got {self.delta_s}")
        if self.lambda0 <= 0 or self.c_lambda <= 0:
            raise ParameterError("lambda0 and c_lambda must be positive")
        if bounds is not None:
            for name in PARAM_NAMES:
                low, high = bounds[name]
                if not low <= getattr(self, name) <= high:
                    raise ParameterError(f"{name}={getattr(self, name)} outside [{low}, {high}]")


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 125
    horizon_T: int = 3600
    initial_price: int = 7500
    msd_samples: int = 100_000
    seed: int = 0
    subtract_ask_offset: bool = False
    shuffle_agents: bool = False

    def validate(self) -> None:
        if self.n_agents < 1:
            raise ParameterError("n_agents must be >= 1")
        if self.horizon_T < 2:
            raise ParameterError("horizon_T must be >= 2")
        if self.msd_samples < 1:
            raise ParameterError("msd_samples must be >= 1")
        if self.initial_price < 2:
            raise ParameterError("initial_price must be >= 2 ticks")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TakerState:
    """Takers' buy probability and the normalizer of the depth formula."""
    q: float = 0.5
    msd: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ParameterError(f"q must lie in [0, 1], got {self.q}")
        if self.msd <= 0:
            raise ParameterError("invalid normalizer")


@dataclass
class MidPriceSeries:
    """A mid-price series and, for simulated data, how it was generated."""
    values: np.ndarray
    seed: int | None = None
    params: PgpsParams | None = None
    best_bid: np.ndarray | None = None
    best_ask: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ParameterError("Mid-price series must be one-dimensional")
        if np.any(self.values <= 0):
            raise ParameterError("Mid-price series must be strictly positive")

    def __len__(self) -> int:
        return len(self.values)

    def downsample(self, stride: int) -> "MidPriceSeries":
        """Keep every ``stride``-th observation (lower sampling frequency)."""
        if stride < 1:
            raise ParameterError("stride must be >= 1")
        return MidPriceSeries(
            values=self.values[::stride],
            seed=self.seed,
            params=self.params,
            best_bid=None if self.best_bid is None else self.best_bid[::stride],
            best_ask=None if self.best_ask is None else self.best_ask[::stride],
        )


def _q_step(q: float, delta_s: float, draw: float) -> float:
    toward = -1.0 if q > 0.5 else 1.0
    if draw < 0.5 + abs(q - 0.5):
        q += toward * delta_s
    else:
        q -= toward * delta_s
    return min(1.0, max(0.0, q))


def step_q_taker(q: float, delta_s: float, rng: UniformSource) -> float:
    """Advance the mean-reverting buy-probability walk by one step."""
    if not 0.0 <= q <= 1.0:
        raise ParameterError(f"q must lie in [0, 1], got {q}")
    return _q_step(q, delta_s, float(rng.random()))


def estimate_msd(
    delta_s: float, samples: int, rng: UniformSource, floor: float = MSD_FLOOR
) -> float:
    """Monte Carlo estimate of <(q - 0.5)^2> over a walk started at 0.5."""
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    if delta_s == 0:
        return floor
    draws = rng.random(samples)
    q = 0.5
    total = 0.0
    for draw in draws:
        q = _q_step(q, delta_s, draw)
        total += (q - 0.5) ** 2
    return max(total / samples, floor)


def lambda_depth(lambda0: float, c_lambda: float, q: float, msd: float) -> float:
    """Order placement depth: lambda0 * (1 + |q - 0.5| / sqrt(msd) * c_lambda)."""
    if msd <= 0:
        raise ParameterError("invalid normalizer")
    return lambda0 * (1.0 + abs(q - 0.5) / math.sqrt(msd) * c_lambda)


def limit_order_price(
    side: Side, p_a: int, p_b: int, lambda_t: float, u: float, subtract_ask_offset: bool = False
) -> int:
    """Price a provider's limit order at an exponential offset from the opposite quote.

    Bids sit below the best ask, asks above the best bid. With ``subtract_ask_offset``
    the ask offset is subtracted, which places asks at or below the best bid.
    """
    if not 0.0 < u < 1.0:
        raise ParameterError(f"u must lie in (0, 1), got {u}")
    if lambda_t <= 0:
        raise ParameterError("lambda_t must be positive")
    offset = math.floor(-lambda_t * math.log(u))
    if side is Side.BID:
        price = p_a - 1 - offset
    elif subtract_ask_offset:
        price = p_b + 1 - offset
    else:
        price = p_b + 1 + offset
    return max(1, price)


def _open_uniform(rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def _acting(rng: np.random.Generator, n: int, probability: float) -> int:
    if probability <= 0:
        return 0
    return int(np.count_nonzero(rng.random(n) < probability))


def simulate(
    params: PgpsParams,
    config: SimConfig,
    seed: int | None = None,
    book: OrderBook | None = None,
) -> MidPriceSeries:
    """Run the PGPS model for ``config.horizon_T`` steps and record the mid-price.

    Pass an empty ``book`` to inspect the final order book state afterwards.

    Each step: providers place limit orders, takers place market orders, then
    takers cancel, then the buy-probability walk advances and the mid-price is
    recorded. Output depends only on (params, config, seed).
    """
    config.validate()
    params.validate()
    seed = config.seed if seed is None else seed

    # Stream split order is fixed: providers, takers, walk, msd, schedule
    provider_rng, taker_rng, walk_rng, msd_rng, schedule_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)
    )
    msd = estimate_msd(params.delta_s, config.msd_samples, msd_rng)

    if book is None:
        book = OrderBook()
    elif len(book):
        raise ParameterError("simulate needs an empty order book")
    p0 = config.initial_price
    book.submit_limit(Order(id=0, side=Side.BID, price=p0 - 1, cancellable=False))
    book.submit_limit(Order(id=1, side=Side.ASK, price=p0 + 1, cancellable=False))
    next_id = 2

    n = config.n_agents
    horizon = config.horizon_T
    mids = np.empty(horizon)
    bids = np.empty(horizon)
    asks = np.empty(horizon)
    q = 0.5

    logger.debug("Simulating %s for %d steps (seed=%d, msd=%.3g)", params, horizon, seed, msd)

    for t in range(horizon):
        lam = lambda_depth(params.lambda0, params.c_lambda, q, msd)
        actions = (
            ["limit"] * _acting(provider_rng, n, params.alpha)
            + ["market"] * _acting(taker_rng, n, params.mu)
            + ["cancel"] * _acting(taker_rng, n, params.delta)
        )
        if config.shuffle_agents:
            actions = [actions[k] for k in schedule_rng.permutation(len(actions))]

        for action in actions:
            if action == "limit":
                side = Side.BID if provider_rng.random() < 0.5 else Side.ASK
                u = _open_uniform(provider_rng)
                price = limit_order_price(
                    side, book.last_ask, book.last_bid, lam, u, config.subtract_ask_offset
                )
                book.submit_limit(Order(id=next_id, side=side, price=price))
                next_id += 1
            elif action == "market":
                side = Side.BID if taker_rng.random() < q else Side.ASK
                book.submit_market(side, 1)
            else:
                pool = book.cancellable_count()
                if pool:
                    book.cancel(book.cancellable_id(int(taker_rng.integers(pool))))

        q = _q_step(q, params.delta_s, walk_rng.random())
        mids[t] = book.mid_price()
        bids[t] = book.last_bid
        asks[t] = book.last_ask

    return MidPriceSeries(values=mids, seed=seed, params=params, best_bid=bids, best_ask=asks)
