"""Full-depth single-symbol limit order book built from ITCH events."""

from __future__ import annotations

import enum
from bisect import bisect_left, bisect_right, insort
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, NamedTuple


from .itch import Kind, MarketEvent

BUY = "B"
SELL = "S"

__all__ = [
    "BUY",
    "SELL",
    "MatchKind",
    "Trade",
    "Order",
    "Level",
    "BestLevel",
    "OrderBook",
    "BookUpdate",
    "SessionStats",
    "BookError",
    "Overdecrement",
    "DuplicateRef",
    "UndefinedRatio",
    "best_levels",
    "run_session",
    "cancellation_ratio",
]


class MatchKind(enum.Enum):
    BUY_AGGRESSOR = "buy"
    SELL_AGGRESSOR = "sell"
    UNKNOWN = "unknown"


class Trade(NamedTuple):
    time_ns: int
    price: int
    shares: int
    match_kind: MatchKind


@dataclass(slots=True, eq=True)
class Order:
    ref: int
    side: str
    price: int
    shares: int
    origination_ns: int
    touched_best: bool = False


class Level:
    """Orders resting at one price, in arrival order.

    ``age_sum`` is the running sum of ``shares * origination_ns`` so the
    size-weighted age of the level is ``now - age_sum / volume``.
    """

    __slots__ = ("price", "orders", "volume", "age_sum")

    def __init__(self, price: int):
        self.price = price
        self.orders: dict[int, Order] = {}
        self.volume = 0
        self.age_sum = 0

    def __repr__(self):
        return f"Level(price={self.price}, volume={self.volume}, orders={len(self.orders)})"


class BestLevel(NamedTuple):
    price: int
    volume: int
    orders: tuple[Order, ...]


class BookError(Exception):
    pass


class Overdecrement(BookError):
    """An execute or cancel removed more shares than the order had left."""


class DuplicateRef(BookError):
    """An add reused a reference that is still resting."""


class UndefinedRatio(ValueError):
    pass


@dataclass
class SessionStats:
    messages: int = 0
    adds: int = 0
    executions: int = 0
    cancels: int = 0
    deletes: int = 0
    replaces: int = 0
    hidden_trades: int = 0
    trades: int = 0
    traded_volume: int = 0
    unknown_refs: int = 0
    crossed_events: int = 0
    updates: int = 0
    # orders that stood at a best level at some point, by how they ended
    touched_executed: int = 0
    touched_cancelled: int = 0


_EXECUTED = 0
_CANCELLED = 1


_NO_TRADES: tuple = ()
_EXECUTED_KIND = Kind.ORDER_EXECUTED
# a trade against a resting buy was initiated by a seller, and vice versa
_AGGRESSOR = defaultdict(
    lambda: MatchKind.UNKNOWN,
    {BUY: MatchKind.SELL_AGGRESSOR, SELL: MatchKind.BUY_AGGRESSOR},
)


class _Side:
    __slots__ = ("is_buy", "levels", "prices", "best")

    def __init__(self, is_buy: bool):
        self.is_buy = is_buy
        self.levels: dict[int, Level] = {}
        self.prices: list[int] = []  # ascending
        self.best: Level | None = None

    def _refresh_best(self) -> Level | None:
        if not self.prices:
            self.best = None
        else:
            self.best = self.levels[self.prices[-1] if self.is_buy else self.prices[0]]
        return self.best

    def insert(self, order: Order) -> None:
        level = self.levels.get(order.price)
        if level is None:
            level = Level(order.price)
            self.levels[order.price] = level
            insort(self.prices, order.price)
            best = self.best
            if best is None or (order.price > best.price if self.is_buy else order.price < best.price):
                self.best = level
        level.orders[order.ref] = order
        level.volume += order.shares
        level.age_sum += order.shares * order.origination_ns
        if level is self.best:
            order.touched_best = True

    def reduce(self, order: Order, shares: int) -> bool:
        """Take ``shares`` off a resting order; True when the order is gone."""
        level = self.levels[order.price]
        order.shares -= shares
        level.volume -= shares
        level.age_sum -= shares * order.origination_ns
        if order.shares:
            return False
        del level.orders[order.ref]
        if not level.orders:
            del self.levels[order.price]
            prices = self.prices
            del prices[bisect_left(prices, order.price)]
            if level is self.best:
                new_best = self._refresh_best()
                if new_best is not None:
                    for o in new_best.orders.values():
                        o.touched_best = True
        return True

    def prices_within(self, limit: int) -> list[int]:
        """Level prices no more than ``limit`` away from the best, best first."""
        prices = self.prices
        if not prices:
            return []
        if self.is_buy:
            lo = bisect_left(prices, prices[-1] - limit)
            return prices[lo:][::-1]
        return prices[: bisect_right(prices, prices[0] + limit)]

    def iter_orders(self) -> Iterator[Order]:
        prices = reversed(self.prices) if self.is_buy else iter(self.prices)
        for p in prices:
            yield from self.levels[p].orders.values()

    def iter_levels(self) -> Iterator[Level]:
        prices = reversed(self.prices) if self.is_buy else iter(self.prices)
        for p in prices:
            yield self.levels[p]


class OrderBook:
    """Order book for one symbol.

    Feed it events with :meth:`apply_event`.  Events for refs the book has
    never seen are counted in ``stats.unknown_refs`` and skipped, so a
    capture that starts mid-session can still be replayed.
    """

    def __init__(self, symbol: str):
        self.symbol = symbol.rstrip(" ")
        self.buys = _Side(True)
        self.sells = _Side(False)
        self.index: dict[int, Order] = {}
        self.last_trade_price: int | None = None
        self.time_ns = 0
        self.stats = SessionStats()

    def side(self, side: str) -> _Side:
        return self.buys if side == BUY else self.sells

    @property
    def best_buy(self) -> Level | None:
        return self.buys.best

    @property
    def best_sell(self) -> Level | None:
        return self.sells.best

    def is_crossed(self) -> bool:
        b, s = self.buys.best, self.sells.best
        return b is not None and s is not None and b.price >= s.price

    def _add(self, ref: int, side: str, shares: int, price: int, now: int) -> None:
        if ref in self.index:
            raise DuplicateRef(f"order ref {ref} is already resting")
        if shares <= 0:
            raise BookError(f"add of {shares} shares for ref {ref}")
        order = Order(ref, side, price, shares, now)
        self.index[ref] = order
        (self.buys if side == BUY else self.sells).insert(order)

    def _take(self, order: Order, shares: int, how: int) -> None:
        if shares > order.shares:
            raise Overdecrement(
                f"ref {order.ref}: removing {shares} shares, only {order.shares} resting"
            )
        side = self.buys if order.side == BUY else self.sells
        if side.reduce(order, shares):
            del self.index[order.ref]
            self._terminated(order, how)

    def _terminated(self, order: Order, how: int) -> None:
        if order.touched_best:
            if how == _EXECUTED:
                self.stats.touched_executed += 1
            else:
                self.stats.touched_cancelled += 1

    def _remove(self, order: Order) -> None:
        side = self.buys if order.side == BUY else self.sells
        side.reduce(order, order.shares)
        del self.index[order.ref]
        self._terminated(order, _CANCELLED)

    def apply_event(self, event: MarketEvent) -> tuple[tuple[Trade, ...], bool]:
        """Apply one event; returns the trades it produced and whether the
        resting book changed."""
        self.stats.messages += 1
        self.time_ns = event.timestamp_ns
        handler = self._handlers.get(event.kind)
        if handler is None:
            return _NO_TRADES, False
        return handler(self, event)

    def _on_add(self, event: MarketEvent):
        if event.stock != self.symbol:
            return _NO_TRADES, False
        self.stats.adds += 1
        self._add(event.order_ref, event.side, event.shares, event.price, event.timestamp_ns)
        return _NO_TRADES, self._changed()

    def _on_execute(self, event: MarketEvent):
        order = self.index.get(event.order_ref)
        stats = self.stats
        if order is None:
            stats.unknown_refs += 1
            return _NO_TRADES, False
        stats.executions += 1
        shares = event.shares
        trades = _NO_TRADES
        if event.kind is _EXECUTED_KIND or event.printable:
            price = order.price if event.kind is _EXECUTED_KIND else event.price
            trades = (Trade(event.timestamp_ns, price, shares, _AGGRESSOR[order.side]),)
            self.last_trade_price = price
            stats.trades += 1
            stats.traded_volume += shares
        self._take(order, shares, _EXECUTED)
        return trades, self._changed()

    def _on_cancel(self, event: MarketEvent):
        order = self.index.get(event.order_ref)
        if order is None:
            self.stats.unknown_refs += 1
            return _NO_TRADES, False
        self.stats.cancels += 1
        self._take(order, event.shares, _CANCELLED)
        return _NO_TRADES, self._changed()

    def _on_delete(self, event: MarketEvent):
        order = self.index.get(event.order_ref)
        if order is None:
            self.stats.unknown_refs += 1
            return _NO_TRADES, False
        self.stats.deletes += 1
        self._remove(order)
        return _NO_TRADES, self._changed()

    def _on_replace(self, event: MarketEvent):
        order = self.index.get(event.order_ref)
        if order is None:
            self.stats.unknown_refs += 1
            return _NO_TRADES, False
        self.stats.replaces += 1
        # insert before removing so the half-done replace never exposes a
        # level as best that is not best once the event completes
        if event.new_ref == order.ref:
            self._remove(order)
            self._add(event.new_ref, order.side, event.shares, event.price, event.timestamp_ns)
        else:
            self._add(event.new_ref, order.side, event.shares, event.price, event.timestamp_ns)
            self._remove(order)
        return _NO_TRADES, self._changed()

    def _on_hidden(self, event: MarketEvent):
        if event.stock != self.symbol or event.shares <= 0:
            return _NO_TRADES, False
        stats = self.stats
        stats.hidden_trades += 1
        stats.trades += 1
        stats.traded_volume += event.shares
        self.last_trade_price = event.price
        return (Trade(event.timestamp_ns, event.price, event.shares, _AGGRESSOR[event.side]),), False

    def _changed(self) -> bool:
        b, s = self.buys.best, self.sells.best
        if b is not None and s is not None and b.price >= s.price:
            self.stats.crossed_events += 1
        return True

    _handlers = {
        Kind.ADD_ORDER: _on_add,
        Kind.ADD_ORDER_MPID: _on_add,
        Kind.ORDER_EXECUTED: _on_execute,
        Kind.ORDER_EXECUTED_WITH_PRICE: _on_execute,
        Kind.ORDER_CANCEL: _on_cancel,
        Kind.ORDER_DELETE: _on_delete,
        Kind.ORDER_REPLACE: _on_replace,
        Kind.NON_DISPLAYED_TRADE: _on_hidden,
    }

    def buy_orders(self) -> list[Order]:
        """Buy side in priority order (best price first, then arrival)."""
        return list(self.buys.iter_orders())

    def sell_orders(self) -> list[Order]:
        return list(self.sells.iter_orders())

    def levels(self, side: str) -> Iterator[Level]:
        return self.side(side).iter_levels()

    def audit(self) -> None:
        """Raise AssertionError if the index and the levels disagree."""
        seen: set[int] = set()
        for s, book_side in ((BUY, self.buys), (SELL, self.sells)):
            assert list(book_side.prices) == sorted(book_side.levels), "price list out of sync"
            for price, level in book_side.levels.items():
                assert level.orders, f"empty level {price}"
                assert level.price == price
                assert level.volume == sum(o.shares for o in level.orders.values())
                assert level.age_sum == sum(o.shares * o.origination_ns for o in level.orders.values())
                for ref, o in level.orders.items():
                    assert o.shares > 0 and o.side == s and o.price == price and o.ref == ref
                    assert ref not in seen, f"ref {ref} on two levels"
                    seen.add(ref)
                    assert self.index.get(ref) is o
            if book_side.prices:
                top = book_side.prices[-1] if book_side.is_buy else book_side.prices[0]
                assert book_side.best is book_side.levels[top]
            else:
                assert book_side.best is None
        assert seen == set(self.index)


def best_levels(book: OrderBook) -> tuple[BestLevel | None, BestLevel | None]:
    out = []
    for level in (book.buys.best, book.sells.best):
        if level is None:
            out.append(None)
        else:
            out.append(BestLevel(level.price, level.volume, tuple(level.orders.values())))
    return out[0], out[1]


@dataclass(slots=True)
class BookUpdate:
    """What a per-modification callback receives.

    ``buy_orders`` / ``sell_orders`` copy the book on first access; the
    live ``book`` is only valid inside the callback.
    """

    time_ns: int
    recent_trades: tuple[Trade, ...]
    book: OrderBook

    @property
    def buy_orders(self) -> list[Order]:
        return self.book.buy_orders()

    @property
    def sell_orders(self) -> list[Order]:
        return self.book.sell_orders()


def run_session(
    events: Iterable[MarketEvent],
    book: OrderBook,
    sink: Callable[[BookUpdate], None] | None = None,
) -> SessionStats:
    """Replay ``events`` into ``book``, calling ``sink`` after every event
    that changed the book or produced a trade."""
    stats = book.stats
    apply = book.apply_event
    for event in events:
        trades, changed = apply(event)
        if changed or trades:
            stats.updates += 1
            if sink is not None:
                sink(BookUpdate(event.timestamp_ns, trades, book))
    return stats


def cancellation_ratio(stats: SessionStats) -> float:
    """Share of orders that reached a best level and then ended by cancel,
    delete or replace rather than by execution."""
    total = stats.touched_executed + stats.touched_cancelled
    if total == 0:
        raise UndefinedRatio("no order that stood at a best level has terminated")
    return stats.touched_cancelled / total
