"""``lobdyn`` command line: one CSV row per book modification.

    lobdyn dump S092012-v41.txt.gz AAPL -o book_aapl.csv
    lobdyn simulate --lambda0 2 --spike 600,40,60 --horizon 3600 --seed 7

Values are written raw; absent values (one-sided book, no trade yet,
failed estimate) are written as ``nan``.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Iterable, TextIO

import numpy as np

from .attributes import sample
from .book import BookError, BookUpdate, OrderBook, SessionStats, UndefinedRatio, cancellation_ratio, run_session
from .config import COLUMNS, SCHEMA_VERSION, RunConfig
from .edge import EmptySide, NonFiniteMoments, christoffel_volume, measure_from_book, radau_rule, rn_tau_at_edge
from .flow import FlowConfig, FlowState, SingularGram, SlidingWindowRate, i_extremal
from .itch import PRICE_SCALE, ItchError, MarketEvent, stream_events, write_itch
from .synth import BookParams, Spike, SpikeProcess, iter_itch, random_spike_process

log = logging.getLogger("lobdyn")

NAN = float("nan")


def _price(raw: int | None) -> str:
    return "nan" if raw is None else f"{raw / PRICE_SCALE:.4f}"


def _num(x) -> str:
    if x is None:
        return "nan"
    if isinstance(x, int):
        return str(x)
    return "nan" if math.isnan(x) else f"{x:.10g}"


def edge_estimates(book: OrderBook, side: str, now_ns: int, cfg: RunConfig, fallback_volume: int, fallback_age):
    """(christoffel volume, tau at edge) for one side, falling back to the
    raw best-level values when the quadrature or the Gram matrix fails."""
    try:
        measure = measure_from_book(book, side, now_ns, cfg.cutoff)
    except EmptySide:
        return None, None
    try:
        volume = christoffel_volume(radau_rule(measure, cfg.radau_nodes))
    except NonFiniteMoments:
        volume = float(fallback_volume)
    try:
        tau = rn_tau_at_edge(measure, cfg.edge_basis)
    except SingularGram:
        tau = fallback_age
    return volume, tau


class AttributeWriter:
    """Book-update sink that keeps the flow estimators current and writes
    one CSV row per update inside the configured time range."""

    def __init__(self, cfg: RunConfig, out: TextIO):
        self.cfg = cfg
        self.out = out
        self.flow: FlowState | None = None
        self.flow_config = FlowConfig(cfg.tau, cfg.n_basis)
        self.sliding = SlidingWindowRate(cfg.window)
        self.rows = 0
        self.updates = 0
        self.readings_failed = 0
        self._lo = -math.inf if cfg.t_from is None else cfg.t_from
        self._hi = math.inf if cfg.t_to is None else cfg.t_to

    def write_header(self) -> None:
        self.out.write(f"# schema={SCHEMA_VERSION}\n")
        self.out.write(",".join(COLUMNS) + "\n")

    def __call__(self, update: BookUpdate) -> None:
        now = update.time_ns
        if self.flow is None:
            self.flow = FlowState(self.flow_config, now)
        flow = self.flow
        flow.advance_to(now)
        for trade in update.recent_trades:
            flow.add_trade(trade.shares)
            self.sliding.add(trade.time_ns, trade.shares)
        self.updates += 1

        s = sample(update)
        if not self._lo <= s.time_decimal_hours <= self._hi:
            return
        i_slide = self.sliding.rate(now)
        try:
            reading = i_extremal(flow)
            i0, lam_lo, lam_hi, cmax = reading
        except SingularGram:
            self.readings_failed += 1
            i0, lam_lo, lam_hi, cmax = i_slide, NAN, NAN, NAN

        cfg = self.cfg
        if (self.rows % cfg.edge_every_n) == 0:
            vb, tb = edge_estimates(update.book, "B", now, cfg, s.v_best_buy, s.t_in_book_buy)
            vs, ts = edge_estimates(update.book, "S", now, cfg, s.v_best_sell, s.t_in_book_sell)
        else:
            vb = tb = vs = ts = None
        fields = (
            f"{s.time_decimal_hours:.9f}",
            str(now),
            _price(s.p_last),
            _price(s.p_buy),
            _price(s.p_sell),
            _num(s.p_buy_minus_last),
            _num(s.p_sell_minus_last),
            str(s.v_best_buy),
            str(s.v_best_sell),
            _num(s.eta_disbalance),
            _num(s.t_in_book_buy),
            _num(s.t_in_book_sell),
            _num(i_slide),
            _num(i0),
            _num(lam_lo),
            _num(lam_hi),
            _num(cmax),
            _num(vb),
            _num(vs),
            _num(tb),
            _num(ts),
        )
        self.out.write(",".join(fields) + "\n")
        self.rows += 1


def replay(events: Iterable[MarketEvent], cfg: RunConfig, out: TextIO) -> tuple[SessionStats, AttributeWriter]:
    book = OrderBook(cfg.symbol)
    writer = AttributeWriter(cfg, out)
    writer.write_header()
    stats = run_session(events, book, writer)
    return stats, writer


def write_rows(columns: dict[str, np.ndarray], out: TextIO) -> int:
    """CSV rows from a column table in the ``dump`` format; returns the count."""
    out.write(f"# schema={SCHEMA_VERSION}\n")
    out.write(",".join(COLUMNS) + "\n")
    cols = [columns[name] for name in COLUMNS]
    ints = {"t_ns", "v_best_buy", "v_best_sell"}
    prices = {"p_last", "p_buy", "p_sell"}
    fmt = []
    for name in COLUMNS:
        if name == "t_hours":
            fmt.append(lambda x: f"{x:.9f}")
        elif name in ints:
            fmt.append(lambda x: str(int(x)))
        elif name in prices:
            fmt.append(lambda x: "nan" if math.isnan(x) else f"{x:.4f}")
        else:
            fmt.append(lambda x: _num(float(x)))
    n = len(cols[0])
    for k in range(n):
        out.write(",".join(f(c[k]) for f, c in zip(fmt, cols)) + "\n")
    return n


def dump_fast(path: str, cfg: RunConfig, out: TextIO) -> int:
    from .fast import replay_file  # numba is slow to import, so only on request

    try:
        result = replay_file(path, cfg)
    except ItchError as exc:
        log.error("decode failed: %s", exc)
        return 2
    except BookError as exc:
        log.error("book corrupted: %s", exc)
        return 3
    rows = write_rows(result.columns, out)
    _summary(result.stats, rows, result.stats.updates, cfg.symbol)
    return 0


def _summary(stats: SessionStats, rows: int, updates: int, symbol: str) -> None:
    try:
        ratio = f"{cancellation_ratio(stats):.4f}"
    except UndefinedRatio:
        ratio = "undefined"
    log.info(
        "messages=%d updates=%d rows=%d trades=%d volume=%d adds=%d executions=%d cancels=%d "
        "deletes=%d replaces=%d hidden=%d unknown_refs=%d crossed=%d cancellation_ratio=%s",
        stats.messages, stats.updates, rows, stats.trades, stats.traded_volume, stats.adds,
        stats.executions, stats.cancels, stats.deletes, stats.replaces, stats.hidden_trades,
        stats.unknown_refs, stats.crossed_events, ratio,
    )
    if updates and stats.unknown_refs == 0 and stats.adds == 0:
        log.warning("symbol %r never appeared in the input", symbol)


def dump_attributes(path: str, cfg: RunConfig, out: TextIO) -> int:
    try:
        stats, writer = replay(stream_events(path, {cfg.symbol}), cfg, out)
    except ItchError as exc:
        log.error("decode failed: %s", exc)
        return 2
    except BookError as exc:
        log.error("book corrupted: %s", exc)
        return 3
    if stats.adds == 0:
        log.warning("no orders for symbol %r in %s", cfg.symbol, path)
    _summary(stats, writer.rows, writer.updates, cfg.symbol)
    return 0


def simulate(proc: SpikeProcess, params: BookParams, horizon: float, seed: int, cfg: RunConfig,
             out: TextIO, itch_out: str | None = None) -> int:
    if itch_out:
        n = write_itch(itch_out, iter_itch(proc, params, horizon, seed))
        log.info("wrote %d messages to %s", n, itch_out)
    cfg.symbol = params.symbol
    try:
        stats, writer = replay(iter_itch(proc, params, horizon, seed), cfg, out)
    except BookError as exc:
        log.error("book corrupted: %s", exc)
        return 3
    _summary(stats, writer.rows, writer.updates, cfg.symbol)
    return 0


def _spike(text: str) -> Spike:
    try:
        onset, amp, theta = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ONSET,AMPLITUDE,THETA, got {text!r}")
    return Spike(onset, amp, theta)


def _analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=128.0, help="flow time scale, seconds")
    p.add_argument("--n-basis", type=int, default=7, help="Legendre basis size for the flow estimate")
    p.add_argument("--cutoff", type=float, default=1.0, help="book depth used at the edge, dollars")
    p.add_argument("--radau-nodes", type=int, default=10)
    p.add_argument("--edge-basis", type=int, default=4, help="basis size for tau at the edge")
    p.add_argument("--window", type=float, default=64.0, help="sliding window, seconds")
    p.add_argument("--from", dest="t_from", type=float, help="first decimal hour to emit")
    p.add_argument("--to", dest="t_to", type=float, help="last decimal hour to emit")
    p.add_argument("--edge-every-n", type=int, default=1, help="run the edge quadrature every n rows")
    p.add_argument("-o", "--output", help="CSV path (default: standard output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobdyn", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dump", help="replay an ITCH 4.1 capture for one symbol")
    d.add_argument("input")
    d.add_argument("symbol")
    d.add_argument("--fast", action="store_true", help="use the compiled replay kernel")
    _analysis_flags(d)

    s = sub.add_parser("simulate", help="replay a synthetic spike-driven stream")
    s.add_argument("--lambda0", type=float, default=1.0, help="base trade rate, trades/s")
    s.add_argument("--spike", type=_spike, action="append", default=[], metavar="ONSET,AMP,THETA")
    s.add_argument("--random-spikes", type=int, default=0, help="add N random spikes")
    s.add_argument("--horizon", type=float, default=3600.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mean-size", type=float, default=100.0)
    s.add_argument("--size-dist", choices=("fixed", "geometric"), default="fixed")
    s.add_argument("--order-rate", type=float, default=50.0, help="background order events/s")
    s.add_argument("--symbol", default="SYNTH")
    s.add_argument("--itch-out", help="also write the stream as an ITCH 4.1 capture")
    _analysis_flags(s)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(name)s: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    cfg = RunConfig(
        symbol=getattr(args, "symbol", ""),
        tau=args.tau,
        n_basis=args.n_basis,
        cutoff=args.cutoff,
        radau_nodes=args.radau_nodes,
        edge_basis=args.edge_basis,
        window=args.window,
        t_from=args.t_from,
        t_to=args.t_to,
        edge_every_n=args.edge_every_n,
    )
    out = open(args.output, "w", encoding="utf-8", newline="") if args.output else sys.stdout
    try:
        if args.command == "dump":
            dump = dump_fast if args.fast else dump_attributes
            return dump(args.input, cfg, out)
        spikes = list(args.spike)
        if args.random_spikes:
            extra = random_spike_process(np.random.default_rng(args.seed), args.horizon, args.random_spikes)
            spikes += list(extra.spikes)
        proc = SpikeProcess(args.lambda0, tuple(sorted(spikes)), args.mean_size, args.size_dist)
        params = BookParams(symbol=args.symbol, order_rate=args.order_rate)
        return simulate(proc, params, args.horizon, args.seed, cfg, out, args.itch_out)
    finally:
        if out is not sys.stdout:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
