"""Synthetic trade flow with exogenous spikes, and ITCH streams realizing it.

The trade rate is a base level plus spikes that switch on instantly and
decay exponentially::

    rate(t) = lambda0 + sum_{onset_i <= t} A_i exp(-(t - onset_i) / theta_i)

Trades are sampled by thinning; :func:`iter_itch` wraps them in a
consistent stream of adds, cancels, deletes and replaces for one symbol.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .itch import NS_PER_SECOND, PRICE_SCALE, Kind, MarketEvent

__all__ = [
    "Spike",
    "SpikeProcess",
    "TradeLog",
    "BookParams",
    "random_spike_process",
    "gen_trades",
    "iter_itch",
    "gen_itch",
]


class Spike(NamedTuple):
    onset: float
    amplitude: float
    theta: float


@dataclass(frozen=True)
class SpikeProcess:
    lambda0: float = 1.0
    spikes: tuple[Spike, ...] = ()
    mean_size: float = 100.0
    size_dist: str = "fixed"  # or "geometric"

    def __post_init__(self):
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be non-negative")
        for sp in self.spikes:
            if sp.amplitude < 0 or not sp.theta > 0:
                raise ValueError(f"bad spike {sp}")
        if self.size_dist not in ("fixed", "geometric"):
            raise ValueError(f"unknown size distribution {self.size_dist!r}")
        if self.mean_size < 1:
            raise ValueError("mean_size must be at least 1")

    def rate(self, t):
        """Instantaneous trade rate (trades per second) at ``t`` seconds."""
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.lambda0))
        for onset, amp, theta in self.spikes:
            on = t >= onset
            out = out + np.where(on, amp * np.exp(-np.where(on, t - onset, 0.0) / theta), 0.0)
        return out

    def mean_count(self, t0: float, t1: float) -> float:
        """Expected number of trades in ``[t0, t1]``."""
        total = self.lambda0 * (t1 - t0)
        for onset, amp, theta in self.spikes:
            a = max(t0, onset)
            if a < t1:
                total += amp * theta * (np.exp(-(a - onset) / theta) - np.exp(-(t1 - onset) / theta))
        return float(total)


def random_spike_process(
    rng: np.random.Generator,
    horizon: float,
    n_spikes: int,
    lambda0: float = 1.0,
    amplitude: tuple[float, float] = (5.0, 50.0),
    theta: tuple[float, float] = (1.0, 1000.0),
    **kwargs,
) -> SpikeProcess:
    """Spikes with uniform onsets and amplitudes and log-uniform
    relaxation times."""
    onsets = np.sort(rng.uniform(0.0, horizon, n_spikes))
    amps = rng.uniform(*amplitude, n_spikes)
    thetas = np.exp(rng.uniform(np.log(theta[0]), np.log(theta[1]), n_spikes))
    spikes = tuple(Spike(float(s), float(a), float(th)) for s, a, th in zip(onsets, amps, thetas))
    return SpikeProcess(lambda0, spikes, **kwargs)


class TradeLog(NamedTuple):
    times: np.ndarray  # seconds from session start, ascending
    shares: np.ndarray

    @property
    def volume(self) -> int:
        return int(self.shares.sum())


def gen_trades(proc: SpikeProcess, horizon: float, seed: int) -> TradeLog:
    """Sample trade times on ``[0, horizon)`` by thinning.

    Between consecutive onsets the rate only decays, so its value at the
    start of each piece bounds it there.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    cuts = sorted({0.0, horizon, *(s.onset for s in proc.spikes if 0.0 < s.onset < horizon)})
    chunks = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        bound = float(proc.rate(a))
        if bound <= 0:
            continue
        n = rng.poisson(bound * (b - a))
        t = np.sort(rng.uniform(a, b, n))
        keep = rng.uniform(0.0, bound, n) < proc.rate(t)
        chunks.append(t[keep])
    times = np.concatenate(chunks) if chunks else np.empty(0)
    if proc.size_dist == "fixed":
        shares = np.full(len(times), int(round(proc.mean_size)), dtype=np.int64)
    else:
        shares = rng.geometric(1.0 / proc.mean_size, len(times)).astype(np.int64)
    return TradeLog(times, shares)


@dataclass(frozen=True)
class BookParams:
    """Background order flow around the trades.

    ``order_rate`` is the rate (events/s) of adds, cancels, deletes and
    replaces; the mix is set by the ``p_*`` weights.
    """

    symbol: str = "SYNTH"
    start_price: float = 100.0
    tick: float = 0.01
    start_seconds: int = 34_200  # 9:30am
    order_rate: float = 50.0
    initial_levels: int = 5
    p_add: float = 0.45
    p_delete: float = 0.3
    p_cancel: float = 0.1
    p_replace: float = 0.15
    p_mpid: float = 0.05
    p_hidden: float = 0.05
    p_with_price: float = 0.1
    depth_ticks: float = 4.0  # mean distance behind the best, ticks
    lot_mean: float = 2.0  # order size is 100 * geometric(lot_mean)
    max_orders: int = 5_000


class _Mirror:
    """Generator-side record of resting orders, enough to keep the stream
    valid; deliberately independent of the book engine."""

    def __init__(self):
        self.orders: dict[int, list] = {}  # ref -> [side, price, shares]
        self.refs: list[int] = []
        self.slot: dict[int, int] = {}
        self.levels = {"B": {}, "S": {}}  # price -> {ref: None} in arrival order
        self.volume = {"B": {}, "S": {}}
        self._best = {"B": None, "S": None}

    def add(self, ref, side, price, shares):
        self.orders[ref] = [side, price, shares]
        self.slot[ref] = len(self.refs)
        self.refs.append(ref)
        lv = self.levels[side]
        if price in lv:
            lv[price][ref] = None
            self.volume[side][price] += shares
        else:
            lv[price] = {ref: None}
            self.volume[side][price] = shares
            best = self._best[side]
            if best is None or (price > best if side == "B" else price < best):
                self._best[side] = price

    def take(self, ref, shares):
        o = self.orders[ref]
        o[2] -= shares
        self.volume[o[0]][o[1]] -= shares
        if o[2] == 0:
            self.remove(ref)

    def remove(self, ref):
        side, price, left = self.orders.pop(ref)
        i = self.slot.pop(ref)
        last = self.refs.pop()
        if last != ref:
            self.refs[i] = last
            self.slot[last] = i
        lv = self.levels[side]
        lvl = lv[price]
        del lvl[ref]
        self.volume[side][price] -= left
        if not lvl:
            del lv[price]
            del self.volume[side][price]
            if price == self._best[side]:
                self._best[side] = (max(lv) if side == "B" else min(lv)) if lv else None

    def best(self, side):
        return self._best[side]


def iter_itch(
    proc: SpikeProcess, params: BookParams, horizon: float, seed: int
) -> Iterator[MarketEvent]:
    """Yield a valid single-symbol event stream whose executions carry
    exactly the trades of ``gen_trades(proc, horizon, seed)``."""
    trades = gen_trades(proc, horizon, seed)
    rnd = random.Random(seed * 7919 + 17)
    bg_rng = np.random.default_rng([seed, 1])
    n_bg = bg_rng.poisson(params.order_rate * horizon) if params.order_rate > 0 else 0
    bg_times = np.sort(bg_rng.uniform(0.0, horizon, n_bg))

    t0 = params.start_seconds * NS_PER_SECOND
    tick = round(params.tick * PRICE_SCALE)
    sym = params.symbol
    mirror = _Mirror()
    next_ref = 1
    match = 1
    p_geo_depth = 1.0 / (1.0 + params.depth_ticks)
    p_geo_lot = 1.0 / params.lot_mean
    weights = (params.p_add, params.p_delete, params.p_cancel, params.p_replace)
    wsum = sum(weights)
    c_add = weights[0] / wsum
    c_del = c_add + weights[1] / wsum
    c_can = c_del + weights[2] / wsum
    anchor = round(params.start_price * PRICE_SCALE / tick) * tick

    def geometric(p):
        k = 1
        while rnd.random() >= p:
            k += 1
        return k

    def lot():
        if rnd.random() < 0.1:
            return rnd.randint(1, 99)
        return 100 * geometric(p_geo_lot)

    def passive_price(side):
        """A price that rests without crossing the other side."""
        best_b, best_s = mirror.best("B"), mirror.best("S")
        own = best_b if side == "B" else best_s
        other = best_s if side == "B" else best_b
        if own is None:
            if other is None:
                ref_px = anchor
                return ref_px - tick if side == "B" else ref_px + tick
            return other - tick * geometric(0.5) if side == "B" else other + tick * geometric(0.5)
        depth = geometric(p_geo_depth) - 1
        if depth == 0 and other is not None and abs(other - own) > tick and rnd.random() < 0.3:
            # improve inside the spread
            return own + tick if side == "B" else own - tick
        price = own - depth * tick if side == "B" else own + depth * tick
        return max(price, tick)

    def add_event(ts, side, price, shares):
        nonlocal next_ref
        ref = next_ref
        next_ref += 1
        mirror.add(ref, side, price, shares)
        if rnd.random() < params.p_mpid:
            return MarketEvent(Kind.ADD_ORDER_MPID, ts, ref, side, shares, sym, price, attribution="SYNT", type_code="F")
        return MarketEvent(Kind.ADD_ORDER, ts, ref, side, shares, sym, price, type_code="A")

    n_tr = len(trades.times)
    when = np.concatenate([bg_times, trades.times])
    order = np.argsort(when, kind="stable")
    stamps = (t0 + np.round(when[order] * NS_PER_SECOND)).astype(np.int64).tolist()
    is_trades = (order >= n_bg).tolist()
    which = np.where(order >= n_bg, order - n_bg, order).tolist()
    trade_shares = trades.shares.tolist()
    horizon_ns = round(horizon * NS_PER_SECOND)
    next_second = 0
    next_beat = t0
    last_ts = t0

    def heartbeat_until(ts):
        nonlocal next_second, next_beat
        limit = (ts - t0) // NS_PER_SECOND if ts is not None else horizon_ns // NS_PER_SECOND
        while next_second <= limit:
            yield MarketEvent(Kind.SECONDS, t0 + next_second * NS_PER_SECOND, type_code="T")
            next_second += 1
        next_beat = t0 + next_second * NS_PER_SECOND

    # opening book at the session start, so no trade is ever delayed by it
    if params.order_rate > 0 and params.initial_levels > 0:
        ts = t0
        yield from heartbeat_until(ts)
        for k in range(params.initial_levels):
            yield add_event(ts, "B", anchor - (k + 1) * tick, lot())
            yield add_event(ts, "S", anchor + (k + 1) * tick, lot())
        last_ts = ts

    for ts, is_trade, i in zip(stamps, is_trades, which):
        if ts < last_ts:
            ts = last_ts
        last_ts = ts
        if ts >= next_beat:
            yield from heartbeat_until(ts)
        if is_trade:
            shares = trade_shares[i]
            resting = "B" if rnd.random() < 0.5 else "S"
            if rnd.random() < params.p_hidden:
                best = mirror.best(resting)
                px = best if best is not None else anchor
                yield MarketEvent(Kind.NON_DISPLAYED_TRADE, ts, 0, resting, shares, sym, px, match, type_code="P")
                match += 1
                continue
            best = mirror.best(resting)
            level_volume = 0
            if best is not None:
                level_volume = mirror.volume[resting][best]
            if level_volume < shares:
                px = best if best is not None else passive_price(resting)
                yield add_event(ts, resting, px, shares - level_volume)
                best = px
            remaining = shares
            while remaining:
                ref = next(iter(mirror.levels[resting][best]))
                avail = mirror.orders[ref][2]
                x = min(avail, remaining)
                remaining -= x
                mirror.take(ref, x)
                if rnd.random() < params.p_with_price:
                    yield MarketEvent(Kind.ORDER_EXECUTED_WITH_PRICE, ts, ref, "", x, "", best, match, type_code="C")
                else:
                    yield MarketEvent(Kind.ORDER_EXECUTED, ts, ref, "", x, "", 0, match, type_code="E")
                match += 1
            continue

        u = rnd.random()
        n_rest = len(mirror.refs)
        if n_rest == 0 or (u < c_add and n_rest < params.max_orders):
            side = "B" if rnd.random() < 0.5 else "S"
            yield add_event(ts, side, passive_price(side), lot())
            continue
        ref = mirror.refs[rnd.randrange(n_rest)]
        side, price, left = mirror.orders[ref]
        if u < c_del or (u < c_add):
            mirror.remove(ref)
            yield MarketEvent(Kind.ORDER_DELETE, ts, ref, type_code="D")
        elif u < c_can:
            x = rnd.randint(1, left)
            mirror.take(ref, x)
            yield MarketEvent(Kind.ORDER_CANCEL, ts, ref, "", x, type_code="X")
        else:
            mirror.remove(ref)
            new_price = passive_price(side)
            new_ref = next_ref
            next_ref += 1
            shares = lot()
            mirror.add(new_ref, side, new_price, shares)
            yield MarketEvent(Kind.ORDER_REPLACE, ts, ref, "", shares, "", new_price, 0, new_ref, type_code="U")

    yield from heartbeat_until(None)


def gen_itch(proc: SpikeProcess, params: BookParams, horizon: float, seed: int) -> list[MarketEvent]:
    return list(iter_itch(proc, params, horizon, seed))
