import numpy as np
import pytest

from lobdyn.itch import NS_PER_SECOND, decode_message, encode_message
from lobdyn.synth import BookParams, Spike, SpikeProcess, gen_itch, gen_trades, random_spike_process

from oracles import NaiveBook, poisson_band


def test_process_validation():
    with pytest.raises(ValueError):
        SpikeProcess(-1.0)
    with pytest.raises(ValueError):
        SpikeProcess(1.0, (Spike(0, 1, 0),))
    with pytest.raises(ValueError):
        SpikeProcess(size_dist="pareto")
    with pytest.raises(ValueError):
        gen_trades(SpikeProcess(), 0.0, 0)


def test_rate_and_mean_count_examples():
    proc = SpikeProcess(2.0, (Spike(10.0, 6.0, 5.0),))
    assert proc.rate(9.99) == 2.0
    assert proc.rate(10.0) == 8.0
    assert proc.rate(15.0) == pytest.approx(2.0 + 6.0 / np.e)
    assert proc.mean_count(0, 10) == 20.0
    # full spike integrates to amplitude * theta
    assert proc.mean_count(0, 1e6) == pytest.approx(2e6 + 30.0)


def test_zero_rate_yields_nothing():
    log = gen_trades(SpikeProcess(0.0), 1000.0, 1)
    assert len(log.times) == 0 and log.volume == 0


@pytest.mark.parametrize("seed", range(5))
def test_constant_rate_counts(seed):
    log = gen_trades(SpikeProcess(3.0, mean_size=1), 2000.0, seed)
    lo, hi = poisson_band(6000.0)
    assert lo <= len(log.times) <= hi
    assert np.all(np.diff(log.times) >= 0) and log.times.min() >= 0 and log.times.max() < 2000.0
    assert np.all(log.shares == 1)


def test_geometric_sizes():
    log = gen_trades(SpikeProcess(50.0, mean_size=40.0, size_dist="geometric"), 2000.0, 3)
    n = len(log.shares)
    sd = np.sqrt((1 - 1 / 40) * 40**2 / n)
    assert abs(log.shares.mean() - 40.0) <= 4 * sd
    assert log.shares.min() >= 1


@pytest.mark.parametrize("seed", range(3))
def test_spiky_bin_counts_within_poisson_band(seed):
    rng = np.random.default_rng(seed)
    proc = random_spike_process(rng, 3600.0, 6)
    log = gen_trades(proc, 3600.0, seed)
    edges = np.arange(0.0, 3600.0 + 1e-9, 30.0)
    counts, _ = np.histogram(log.times, edges)
    inside = 0
    for k, c in enumerate(counts):
        lo, hi = poisson_band(proc.mean_count(edges[k], edges[k + 1]))
        inside += lo <= c <= hi
    assert inside >= 0.95 * len(counts)


def stream_for(seed, rate=1.0, horizon=300.0, order_rate=60.0):
    proc = SpikeProcess(rate, (Spike(100.0, 15.0, 30.0),), mean_size=120, size_dist="geometric")
    return proc, gen_itch(proc, BookParams(order_rate=order_rate), horizon, seed)


@pytest.mark.parametrize("seed", range(4))
def test_stream_is_valid_and_realizes_trades(seed):
    proc, events = stream_for(seed)
    naive = NaiveBook("SYNTH")
    last = 0
    for ev in events:
        assert ev.timestamp_ns >= last
        last = ev.timestamp_ns
        naive.apply(ev)
    assert naive.unknown == 0
    for side in "BS":
        assert all(o[2] > 0 for o in naive.orders.values() if o[0] == side)
    # no crossed book at the end
    b, s = naive.best_price("B"), naive.best_price("S")
    assert b is None or s is None or b < s
    trades = gen_trades(proc, 300.0, seed)
    assert sum(t[2] for t in naive.trades) == trades.volume
    stamps = sorted({t[0] for t in naive.trades})
    expected = sorted({34_200 * NS_PER_SECOND + round(t * NS_PER_SECOND) for t in trades.times})
    assert stamps == expected


def test_stream_is_deterministic_and_round_trips():
    _, a = stream_for(7)
    _, b = stream_for(7)
    wire_a = b"".join(encode_message(e) for e in a)
    assert wire_a == b"".join(encode_message(e) for e in b)
    _, c = stream_for(8)
    assert wire_a != b"".join(encode_message(e) for e in c)
    base = 0
    for e in a:
        back = decode_message(encode_message(e), base)
        if e.type_code == "T":
            base = back.timestamp_ns // NS_PER_SECOND
        assert back == e


def test_no_flow_gives_heartbeats_only():
    proc = SpikeProcess(0.0)
    events = gen_itch(proc, BookParams(order_rate=0.0), 30.0, 1)
    assert events and all(e.type_code == "T" for e in events)
    assert len(events) == 31
