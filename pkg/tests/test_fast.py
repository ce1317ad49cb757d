import csv
import dataclasses
import io

import numpy as np
import pytest

from lobdyn.basis import SingularGram, check_gram, log_gram
from lobdyn.book import DuplicateRef, Overdecrement
from lobdyn.cli import main, replay
from lobdyn.config import COLUMNS, RunConfig
from lobdyn.fast import gram_threshold, replay_bytes, replay_file
from lobdyn.itch import (
    Kind,
    LengthMismatch,
    MarketEvent,
    TruncatedFrame,
    encode_frame,
    encode_message,
    filter_symbols,
    iter_decoded,
)
from lobdyn.synth import BookParams, Spike, SpikeProcess, gen_itch

TAU = 16.0


def wire(events):
    return b"".join(encode_frame(encode_message(e)) for e in events)


def reference_rows(events, cfg):
    buf = io.StringIO()
    stats, writer = replay(events, cfg, buf)
    lines = buf.getvalue().splitlines()[1:]
    rows = list(csv.DictReader(lines))
    table = {name: np.array([float(r[name]) for r in rows]) for name in COLUMNS}
    return stats, writer, table


def same(a, b, rel, abs_=0.0):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    assert np.array_equal(np.isnan(a), np.isnan(b))
    ok = ~np.isnan(a)
    assert np.allclose(b[ok], a[ok], rtol=rel, atol=abs_)


@pytest.fixture(scope="module")
def stream():
    proc = SpikeProcess(2.0, (Spike(60.0, 20.0, 20.0),), mean_size=100, size_dist="geometric")
    return gen_itch(proc, BookParams(order_rate=40), 180.0, seed=4)


@pytest.fixture(scope="module")
def reference(stream):
    return reference_rows(stream, RunConfig(symbol="SYNTH", tau=TAU, edge_every_n=3))


def split(data, size):
    return [data[k : k + size] for k in range(0, len(data), size)]


@pytest.mark.parametrize("chunking", ["whole", "halves", "odd"])
def test_matches_reference_replay(stream, reference, chunking):
    stats, writer, ref = reference
    data = wire(stream)
    chunks = {"whole": [data], "halves": split(data, len(data) // 2 + 1), "odd": split(data, 997)}[chunking]
    got = replay_bytes(chunks, RunConfig(symbol="SYNTH", tau=TAU, edge_every_n=3))
    assert got.stats == stats
    assert got.readings_failed == writer.readings_failed
    assert got.rows == writer.rows
    cols = got.columns
    assert np.array_equal(cols["t_ns"], ref["t_ns"].astype(np.int64))
    for name in ("v_best_buy", "v_best_sell", "p_last", "p_buy", "p_sell", "p_buy_minus_last", "p_sell_minus_last"):
        same(ref[name], cols[name], 0, 1e-9)
    # the CSV keeps ten significant digits
    for name in ("eta_disbalance", "i_sliding", "v_christoffel_buy", "v_christoffel_sell"):
        same(ref[name], cols[name], 1e-9)
    for name in ("t_book_buy_s", "t_book_sell_s", "tau_edge_buy", "tau_edge_sell"):
        same(ref[name], cols[name], 1e-7, 1e-8)
    # flow readings once the history is long enough for a well-conditioned Gram
    late = ref["t_ns"] - ref["t_ns"][0] >= 2 * TAU * 1e9
    assert late.sum() > 1000
    same(ref["i_now"][late], cols["i_now"][late], 1e-7, 1e-9)
    # the eigen-readings are only taken on the rows that also run the edge
    heavy = late & (np.arange(got.rows) % 3 == 0)
    for name in ("lambda_min", "lambda_max", "c_max_sq"):
        same(ref[name][heavy], cols[name][heavy], 1e-7, 1e-9)
    # earlier readings lose digits with the Gram conditioning near the threshold
    depth = (ref["t_ns"] - ref["t_ns"][0]) / 1e9 / TAU
    for lo, hi, rel in ((0.0, 1.0, 1e-2), (1.0, 2.0, 1e-5)):
        band = (depth >= lo) & (depth < hi)
        same(ref["i_now"][band], cols["i_now"][band], rel, 1e-9)


def test_heavy_columns_are_throttled(stream):
    got = replay_bytes([wire(stream)], RunConfig(symbol="SYNTH", tau=TAU, edge_every_n=7))
    cols = got.columns
    light = np.arange(got.rows) % 7 != 0
    for name in ("v_christoffel_buy", "tau_edge_sell", "c_max_sq"):
        assert np.all(np.isnan(cols[name][light]))
    # with no flow the bounds are exactly zero and cost nothing
    flowing = light & (cols["i_now"] != 0)
    assert flowing.any() and np.all(np.isnan(cols["lambda_max"][flowing]))
    assert np.all(cols["lambda_min"][light & (cols["i_now"] == 0)] == 0)
    assert not np.any(np.isnan(cols["i_now"]))


def shifted(events, offset, symbol):
    out = []
    for e in events:
        if e.kind in (Kind.SECONDS, Kind.SYSTEM_EVENT):
            continue
        out.append(dataclasses.replace(
            e,
            order_ref=e.order_ref + offset if e.order_ref else 0,
            new_ref=e.new_ref + offset if e.new_ref else 0,
            stock=symbol if e.stock else "",
        ))
    return out


def test_multi_symbol_filter_and_growth():
    # enough resting orders to force several array doublings
    proc = SpikeProcess(1.0, mean_size=50)
    mine = gen_itch(proc, BookParams(order_rate=400), 40.0, seed=1)
    other = shifted(gen_itch(proc, BookParams(order_rate=400), 40.0, seed=2), 10**12, "OTHER")
    events = sorted(mine + other, key=lambda e: (e.timestamp_ns, e.kind is not Kind.SECONDS))
    cfg = RunConfig(symbol="SYNTH", edge_every_n=50)
    stats, writer, ref = reference_rows(filter_symbols(events, {"SYNTH"}), cfg)
    got = replay_bytes(split(wire(events), 1 << 15), cfg)
    assert got.stats == stats
    assert np.array_equal(got.columns["v_best_sell"], ref["v_best_sell"].astype(np.int64))
    same(ref["p_buy"], got.columns["p_buy"], 0, 1e-9)
    assert stats.adds > 4096


def test_empty_and_heartbeat_only():
    got = replay_bytes([], RunConfig(symbol="SYNTH"))
    assert got.rows == 0 and got.stats.messages == 0
    beats = [MarketEvent(Kind.SECONDS, s * 10**9, type_code="T") for s in range(5)]
    got = replay_bytes([wire(beats)], RunConfig(symbol="SYNTH"))
    assert got.rows == 0 and got.stats.messages == 5


def reference_error(data):
    with pytest.raises(Exception) as info:
        for _ in iter_decoded(io.BytesIO(data)):
            pass
    return info.value


@pytest.mark.parametrize("tail,kind", [
    (b"\x00\x14A\x00\x00", TruncatedFrame),
    (b"\x00\x00", LengthMismatch),
    (b"\x00\x03A\x00\x00", LengthMismatch),
])
def test_decode_errors_report_reference_offsets(stream, tail, kind):
    data = wire(stream[:300]) + tail
    expected = reference_error(data)
    assert isinstance(expected, kind)
    for size in (len(data), 1000):
        with pytest.raises(kind) as info:
            replay_bytes(split(data, size), RunConfig(symbol="SYNTH"))
        assert info.value.offset == expected.offset == len(data) - len(tail)


def test_book_errors():
    add = MarketEvent(Kind.ADD_ORDER, 10**9, 7, "B", 100, "SYNTH", 100000, type_code="A")
    with pytest.raises(DuplicateRef):
        replay_bytes([wire([add, add])], RunConfig(symbol="SYNTH"))
    over = MarketEvent(Kind.ORDER_CANCEL, 2 * 10**9, 7, shares=101, type_code="X")
    with pytest.raises(Overdecrement):
        replay_bytes([wire([add, over])], RunConfig(symbol="SYNTH"))


def test_gram_threshold_brackets_the_check():
    last = 0.0
    for n in (2, 4, 7, 12):
        d = gram_threshold(n, 128.0)
        with pytest.raises(SingularGram):
            check_gram(128.0 * log_gram(n, d))
        check_gram(128.0 * log_gram(n, d * 1.001))
        assert d > last
        last = d


def test_cli_fast_engine(synthetic_itch, tmp_path):
    slow, quick = tmp_path / "slow.csv", tmp_path / "fast.csv"
    assert main(["-q", "dump", str(synthetic_itch), "SYNTH", "-o", str(slow), "--edge-every-n", "4"]) == 0
    assert main(["-q", "dump", str(synthetic_itch), "SYNTH", "-o", str(quick), "--edge-every-n", "4",
                 "--fast"]) == 0
    a = slow.read_text().splitlines()
    b = quick.read_text().splitlines()
    assert a[:2] == b[:2] and len(a) == len(b)
    book_cols = [COLUMNS.index(c) for c in ("t_hours", "t_ns", "p_last", "p_buy", "p_sell", "v_best_buy",
                                            "v_best_sell", "i_sliding")]
    for x, y in zip(a[2:], b[2:]):
        fx, fy = x.split(","), y.split(",")
        assert [fx[k] for k in book_cols] == [fy[k] for k in book_cols]
    assert replay_file(synthetic_itch, RunConfig(symbol="SYNTH")).rows == len(a) - 2
