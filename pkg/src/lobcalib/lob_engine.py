"""Continuous double auction limit order book with price-time priority."""

import bisect
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from enum import StrEnum

import pandas as pd

logger = logging.getLogger(__name__)


class UninitializedBookError(ValueError):
    """Raised when a mid-price is requested before any two-sided quote existed."""


class Side(StrEnum):
    BID = "bid"
    ASK = "ask"

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


@dataclass(slots=True)
class Order:
    """A limit order.

    ``arrival_seq`` of 0 lets the book stamp the next sequence number.
    Non-cancellable orders never enter the cancellation pool.
    """
    id: int
    side: Side
    price: int
    volume: int = 1
    arrival_seq: int = 0
    cancellable: bool = True


@dataclass(frozen=True, slots=True)
class Trade:
    price: int
    volume: int
    maker_order_id: int


@dataclass
class MatchResult:
    trades: list[Trade] = field(default_factory=list)
    resting_id: int | None = None
    rejected: bool = False
    resting_volume: int = 0
    unfilled_volume: int = 0

    @property
    def traded_volume(self) -> int:
        return sum(t.volume for t in self.trades)


class OrderBook:
    """Price-time priority book for a single instrument.

    Each side maps an integer tick price to a FIFO queue of resting orders.
    Sorted price lists are kept ascending for both sides: the best bid is the
    last bid price, the best ask the first ask price.
    """

    def __init__(self) -> None:
        self._levels: dict[Side, dict[int, deque[Order]]] = {Side.BID: {}, Side.ASK: {}}
        self._prices: dict[Side, list[int]] = {Side.BID: [], Side.ASK: []}
        self._orders: dict[int, Order] = {}
        self._seen_ids: set[int] = set()
        self._seq = 0
        self._pool: list[int] = []
        self._pool_pos: dict[int, int] = {}
        self._last_twice_mid: int | None = None
        self.last_bid: int | None = None
        self.last_ask: int | None = None

    # ----------------- queries -----------------

    def __len__(self) -> int:
        return len(self._orders)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self._orders

    def best_bid(self) -> int | None:
        prices = self._prices[Side.BID]
        return prices[-1] if prices else None

    def best_ask(self) -> int | None:
        prices = self._prices[Side.ASK]
        return prices[0] if prices else None

    def best(self, side: Side) -> int | None:
        return self.best_bid() if side is Side.BID else self.best_ask()

    def order(self, order_id: int) -> Order | None:
        return self._orders.get(order_id)

    def depth(self, side: Side) -> list[tuple[int, int]]:
        """Return (price, total volume) per level, best level first."""
        prices = self._prices[side]
        ordered = reversed(prices) if side is Side.BID else iter(prices)
        return [(p, sum(o.volume for o in self._levels[side][p])) for p in ordered]

    def is_crossed(self) -> bool:
        bid, ask = self.best_bid(), self.best_ask()
        return bid is not None and ask is not None and bid >= ask

    def cancellable_count(self) -> int:
        return len(self._pool)

    def cancellable_id(self, k: int) -> int:
        """Return the k-th id of the cancellation pool (stable, deterministic order)."""
        return self._pool[k]

    def twice_mid(self) -> int:
        """Return twice the mid-price as an exact integer, carrying it forward."""
        if self._last_twice_mid is None:
            raise UninitializedBookError("uninitialized book")
        return self._last_twice_mid

    def mid_price(self) -> float:
        """Return the mid-price (exact: denominator is at most 2)."""
        return self.twice_mid() / 2

    # ----------------- order flow -----------------

    def submit_limit(self, order: Order) -> MatchResult:
        """Match a limit order against the opposite side, resting any remainder."""
        if order.volume < 1 or order.price < 1:
            raise ValueError(f"Malformed order {order.id}: price and volume must be >= 1")
        if order.id in self._seen_ids:
            logger.debug("Rejected duplicate order id %d", order.id)
            return MatchResult(rejected=True, unfilled_volume=order.volume)

        seq = self._stamp(order.arrival_seq)
        self._seen_ids.add(order.id)

        trades, remaining = self._match(order.side, order.volume, order.price)
        result = MatchResult(trades=trades)
        if remaining > 0:
            resting = replace(order, volume=remaining, arrival_seq=seq)
            self._insert(resting)
            result.resting_id = resting.id
            result.resting_volume = remaining
        self._refresh_quotes()
        return result

    def submit_market(self, side: Side, volume: int = 1) -> MatchResult:
        """Execute a market order from the opposite best level outward.

        Against an empty opposite side the order is rejected and the book is
        left untouched. Volume left once the opposite side is exhausted is
        reported as unfilled; market orders never rest.
        """
        if volume < 1:
            raise ValueError("Market order volume must be >= 1")
        if not self._prices[side.opposite]:
            return MatchResult(rejected=True, unfilled_volume=volume)

        self._seq += 1
        trades, remaining = self._match(side, volume, None)
        self._refresh_quotes()
        return MatchResult(trades=trades, unfilled_volume=remaining)

    def cancel(self, order_id: int) -> bool:
        """Remove a resting order. Returns False when the id is not resting."""
        order = self._orders.pop(order_id, None)
        if order is None:
            return False
        level = self._levels[order.side][order.price]
        for k, resting in enumerate(level):
            if resting.id == order_id:
                del level[k]
                break
        if not level:
            self._drop_level(order.side, order.price)
        self._pool_remove(order_id)
        self._refresh_quotes()
        return True

    # ----------------- serialization -----------------

    def snapshot(self) -> list[tuple[str, int, int, int]]:
        """Return resting orders as (side, price, volume, arrival_seq) in priority order."""
        rows = []
        for side in (Side.BID, Side.ASK):
            prices = self._prices[side]
            ordered = reversed(prices) if side is Side.BID else prices
            for price in ordered:
                rows.extend(
                    (side.value, o.price, o.volume, o.arrival_seq)
                    for o in self._levels[side][price]
                )
        return rows

    def to_csv(self) -> str:
        frame = pd.DataFrame(self.snapshot(), columns=["side", "price", "volume", "arrival_seq"])
        return frame.to_csv(index=False, lineterminator="\n")

    # ----------------- internals -----------------

    def _stamp(self, arrival_seq: int) -> int:
        if arrival_seq <= 0:
            self._seq += 1
        elif arrival_seq <= self._seq:
            raise ValueError(
                f"arrival_seq {arrival_seq} is not greater than the last sequence {self._seq}"
            )
        else:
            self._seq = arrival_seq
        return self._seq

    def _match(self, side: Side, volume: int, limit: int | None) -> tuple[list[Trade], int]:
        opposite = side.opposite
        prices = self._prices[opposite]
        levels = self._levels[opposite]
        trades: list[Trade] = []
        remaining = volume

        while remaining > 0 and prices:
            best = prices[-1] if opposite is Side.BID else prices[0]
            if limit is not None and (best > limit if side is Side.BID else best < limit):
                break
            level = levels[best]
            maker = level[0]
            qty = min(remaining, maker.volume)
            trades.append(Trade(price=best, volume=qty, maker_order_id=maker.id))
            remaining -= qty
            maker.volume -= qty
            if maker.volume == 0:
                level.popleft()
                del self._orders[maker.id]
                self._pool_remove(maker.id)
                if not level:
                    self._drop_level(opposite, best)

        return trades, remaining

    def _insert(self, order: Order) -> None:
        levels = self._levels[order.side]
        level = levels.get(order.price)
        if level is None:
            level = levels[order.price] = deque()
            bisect.insort(self._prices[order.side], order.price)
        level.append(order)
        self._orders[order.id] = order
        if order.cancellable:
            self._pool_pos[order.id] = len(self._pool)
            self._pool.append(order.id)

    def _drop_level(self, side: Side, price: int) -> None:
        del self._levels[side][price]
        prices = self._prices[side]
        del prices[bisect.bisect_left(prices, price)]

    def _pool_remove(self, order_id: int) -> None:
        pos = self._pool_pos.pop(order_id, None)
        if pos is None:
            return
        last = self._pool.pop()
        if last != order_id:
            self._pool[pos] = last
            self._pool_pos[last] = pos

    def _refresh_quotes(self) -> None:
        bid, ask = self.best_bid(), self.best_ask()
        if bid is not None and ask is not None:
            self._last_twice_mid = bid + ask
        if bid is not None:
            self.last_bid = bid
        if ask is not None:
            self.last_ask = ask
