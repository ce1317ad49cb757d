"""Per-update book attributes, reported raw.

Nothing here divides by a volatility, a standard deviation or any other
scale estimate: spikes are the signal.  One-sided or empty books give
``None`` (rendered as ``nan``), which is distinct from a legitimate 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .book import BookUpdate, Level, Order
from .itch import NS_PER_SECOND, PRICE_SCALE

NS_PER_HOUR = 3_600 * NS_PER_SECOND

__all__ = [
    "AttributeSample",
    "decimal_hours",
    "midprice",
    "disbalance",
    "time_in_book",
    "level_time_in_book",
    "edge_prices",
    "sample",
]


def decimal_hours(time_ns: int) -> float:
    """Time of day as a decimal fraction of hours; 9.75 is 9:45am."""
    return time_ns / NS_PER_HOUR


def midprice(p_buy: int | None, p_sell: int | None) -> float | None:
    """Mean of best bid and offer, in dollars."""
    if p_buy is None or p_sell is None:
        return None
    return (p_buy + p_sell) / (2 * PRICE_SCALE)


def disbalance(v_best_buy: int, v_best_sell: int) -> float | None:
    """(V_sell - V_buy) / (V_sell + V_buy); positive when the offer is heavier."""
    total = v_best_sell + v_best_buy
    if total <= 0:
        return None
    return (v_best_sell - v_best_buy) / total


def time_in_book(orders: Iterable[Order], now_ns: int) -> float | None:
    """Size-weighted mean age in seconds of ``orders`` at ``now_ns``."""
    shares = 0
    weighted = 0
    for o in orders:
        shares += o.shares
        weighted += o.shares * (now_ns - o.origination_ns)
    if shares == 0:
        return None
    return weighted / shares / NS_PER_SECOND


def level_time_in_book(level: Level | None, now_ns: int) -> float | None:
    """:func:`time_in_book` of a whole level from its running sums, O(1)."""
    if level is None or level.volume == 0:
        return None
    return (now_ns * level.volume - level.age_sum) / level.volume / NS_PER_SECOND


def edge_prices(
    p_buy: int | None, p_sell: int | None, p_last: int | None
) -> tuple[float | None, float | None]:
    """(P_buy - P_last, P_sell - P_last) in dollars; None before any trade."""
    if p_last is None:
        return None, None
    buy = None if p_buy is None else (p_buy - p_last) / PRICE_SCALE
    sell = None if p_sell is None else (p_sell - p_last) / PRICE_SCALE
    return buy, sell


@dataclass(slots=True)
class AttributeSample:
    time_ns: int
    time_decimal_hours: float
    p_last: int | None
    p_buy: int | None
    p_sell: int | None
    p_buy_minus_last: float | None
    p_sell_minus_last: float | None
    v_best_buy: int
    v_best_sell: int
    eta_disbalance: float | None
    t_in_book_buy: float | None
    t_in_book_sell: float | None

    @property
    def midprice(self) -> float | None:
        return midprice(self.p_buy, self.p_sell)


def sample(update: BookUpdate) -> AttributeSample:
    book = update.book
    now = update.time_ns
    bb, bs = book.buys.best, book.sells.best
    p_buy = bb.price if bb is not None else None
    p_sell = bs.price if bs is not None else None
    v_buy = bb.volume if bb is not None else 0
    v_sell = bs.volume if bs is not None else 0
    d_buy, d_sell = edge_prices(p_buy, p_sell, book.last_trade_price)
    return AttributeSample(
        time_ns=now,
        time_decimal_hours=now / NS_PER_HOUR,
        p_last=book.last_trade_price,
        p_buy=p_buy,
        p_sell=p_sell,
        p_buy_minus_last=d_buy,
        p_sell_minus_last=d_sell,
        v_best_buy=v_buy,
        v_best_sell=v_sell,
        eta_disbalance=disbalance(v_buy, v_sell),
        t_in_book_buy=level_time_in_book(bb, now),
        t_in_book_sell=level_time_in_book(bs, now),
    )
