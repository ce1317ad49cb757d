import gzip
import io
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lobdyn.itch import (
    MESSAGE_LENGTHS,
    Kind,
    LengthMismatch,
    MarketEvent,
    TruncatedFrame,
    decode_message,
    encode_frame,
    encode_message,
    iter_frames,
    read_frame,
    stream_events,
    write_itch,
)


def test_read_frame_single():
    stream = io.BytesIO(bytes([0x00, 0x01, 0x53]))
    assert read_frame(stream) == b"S"
    assert stream.tell() == 3
    assert read_frame(stream) is None


def test_read_frame_empty():
    assert read_frame(io.BytesIO(b"")) is None


@pytest.mark.parametrize("raw", [b"\x00", b"\x00\x05ab"])
def test_read_frame_truncated(raw):
    with pytest.raises(TruncatedFrame):
        read_frame(io.BytesIO(raw))


def test_seconds_message():
    ev = decode_message(b"T" + struct.pack(">I", 35100), 0)
    assert ev.kind is Kind.SECONDS
    assert ev.timestamp_ns == 35100 * 10**9
    assert ev.timestamp_ns / 3.6e12 == 9.75


def test_add_golden_bytes():
    payload = b"A" + struct.pack(">IQcI8sI", 123, 1, b"B", 100, b"AAPL    ", 7000000)
    assert len(payload) == MESSAGE_LENGTHS["A"] == 30
    ev = decode_message(payload, 35100)
    assert ev.kind is Kind.ADD_ORDER
    assert (ev.order_ref, ev.side, ev.shares, ev.stock, ev.price) == (1, "B", 100, "AAPL", 7000000)
    assert ev.price / 10000 == 700.0
    assert ev.timestamp_ns == 35100 * 10**9 + 123
    assert encode_message(ev) == payload


def test_unknown_type_is_other():
    ev = decode_message(b"Z" + struct.pack(">I", 7) + b"xyz", 2)
    assert ev.kind is Kind.OTHER
    assert ev.timestamp_ns == 2 * 10**9 + 7


def test_length_mismatch():
    payload = b"D" + struct.pack(">IQ", 1, 2) + b"\x00"
    with pytest.raises(LengthMismatch):
        decode_message(payload, 0)


def test_truncated_file_reports_offset(tmp_path):
    good = encode_frame(b"T" + struct.pack(">I", 1))
    path = tmp_path / "cut.itch.gz"
    with gzip.open(path, "wb") as f:
        f.write(good + good + b"\x00\x0d" + b"D\x00")
    with pytest.raises(TruncatedFrame) as err:
        list(stream_events(path))
    assert err.value.offset == 2 * len(good)


def test_mismatch_in_file_reports_offset(tmp_path):
    good = encode_frame(b"T" + struct.pack(">I", 1))
    bad = encode_frame(b"X" + struct.pack(">IQ", 1, 2))
    path = tmp_path / "bad.itch"
    path.write_bytes(good + bad)
    with pytest.raises(LengthMismatch) as err:
        list(stream_events(path))
    assert err.value.offset == len(good)


u32 = st.integers(0, 2**32 - 1)
u64 = st.integers(0, 2**64 - 1)
side = st.sampled_from("BS")
alpha8 = st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ.", min_size=1, max_size=8)


@st.composite
def payloads(draw):
    code = draw(st.sampled_from(sorted(MESSAGE_LENGTHS)))
    ns = draw(st.integers(0, 999_999_999))
    c = lambda s: s.encode()  # noqa: E731
    pad = lambda s, n: s.encode().ljust(n)  # noqa: E731
    if code == "T":
        body = struct.pack(">I", draw(u32))
    elif code == "S":
        body = struct.pack(">Ic", ns, c(draw(st.sampled_from("OSQMEC"))))
    elif code in "AF":
        body = struct.pack(">IQcI8sI", ns, draw(u64), c(draw(side)), draw(u32), pad(draw(alpha8), 8), draw(u32))
        if code == "F":
            body += pad(draw(st.text("ABCDEFGHIJKLMNOPQRSTUVWXYZ", min_size=1, max_size=4)), 4)
    elif code == "E":
        body = struct.pack(">IQIQ", ns, draw(u64), draw(u32), draw(u64))
    elif code == "C":
        body = struct.pack(">IQIQcI", ns, draw(u64), draw(u32), draw(u64), c(draw(st.sampled_from("YN"))), draw(u32))
    elif code == "X":
        body = struct.pack(">IQI", ns, draw(u64), draw(u32))
    elif code == "D":
        body = struct.pack(">IQ", ns, draw(u64))
    elif code == "U":
        body = struct.pack(">IQQII", ns, draw(u64), draw(u64), draw(u32), draw(u32))
    else:
        body = struct.pack(">IQcI8sIQ", ns, draw(u64), c(draw(side)), draw(u32), pad(draw(alpha8), 8), draw(u32), draw(u64))
    return code.encode() + body


@given(payloads(), st.integers(0, 86400))
@settings(max_examples=500)
def test_round_trip(payload, base):
    assert encode_message(decode_message(payload, base)) == payload


def _mixed_events():
    t = 34200
    evs = [MarketEvent(Kind.SECONDS, t * 10**9, type_code="T")]
    ref = 0
    for i in range(60):
        ref += 1
        stock = "AAPL" if i % 3 else "MSFT"
        ts = t * 10**9 + 1000 * i
        evs.append(MarketEvent(Kind.ADD_ORDER, ts, ref, "B" if i % 2 else "S", 100, stock, 1000000 + i, type_code="A"))
        if i % 4 == 0:
            evs.append(MarketEvent(Kind.ORDER_EXECUTED, ts + 1, ref, shares=10, match_number=i, type_code="E"))
        if i % 5 == 0:
            evs.append(MarketEvent(Kind.ORDER_REPLACE, ts + 2, ref, shares=50, price=999000, new_ref=10_000 + i, type_code="U"))
            evs.append(MarketEvent(Kind.ORDER_DELETE, ts + 3, 10_000 + i, type_code="D"))
        elif i % 7 == 0:
            evs.append(MarketEvent(Kind.ORDER_CANCEL, ts + 2, ref, shares=5, type_code="X"))
    evs.append(MarketEvent(Kind.NON_DISPLAYED_TRADE, t * 10**9 + 10**8, 0, "B", 30, "MSFT", 1000000, 99, type_code="P"))
    evs.append(MarketEvent(Kind.NON_DISPLAYED_TRADE, t * 10**9 + 10**8, 0, "S", 40, "AAPL", 1000000, 98, type_code="P"))
    return evs


def _brute_filter(events, symbol):
    """Second pass over the full decoded stream: collect every ref that
    ever belongs to the symbol, then keep events touching those refs."""
    refs = set()
    changed = True
    while changed:
        changed = False
        for ev in events:
            if ev.type_code in "AF" and ev.stock == symbol and ev.order_ref not in refs:
                refs.add(ev.order_ref)
                changed = True
            if ev.type_code == "U" and ev.order_ref in refs and ev.new_ref not in refs:
                refs.add(ev.new_ref)
                changed = True
    out = []
    for ev in events:
        if ev.type_code in "AFP":
            if ev.stock == symbol:
                out.append(ev)
        elif ev.type_code in "ECXDU":
            if ev.order_ref in refs:
                out.append(ev)
        else:
            out.append(ev)
    return out


def test_symbol_filter_matches_brute_force(tmp_path):
    path = tmp_path / "mixed.itch.gz"
    n = write_itch(path, _mixed_events())
    full = list(stream_events(path))
    assert len(full) == n
    got = list(stream_events(path, {"AAPL"}))
    assert got == _brute_filter(full, "AAPL")
    assert not any(ev.stock == "MSFT" for ev in got)
    assert any(ev.kind is Kind.ORDER_EXECUTED for ev in got)


def test_filter_seconds_only(tmp_path):
    path = tmp_path / "t.itch.gz"
    write_itch(path, [MarketEvent(Kind.SECONDS, s * 10**9, type_code="T") for s in range(5)])
    got = list(stream_events(path, {"AAPL"}))
    assert [ev.kind for ev in got] == [Kind.SECONDS] * 5


def test_plain_and_gzip_agree(tmp_path):
    evs = _mixed_events()
    write_itch(tmp_path / "a.gz", evs)
    write_itch(tmp_path / "a.raw", evs, compress=False)
    assert list(stream_events(tmp_path / "a.gz")) == list(stream_events(tmp_path / "a.raw"))


def test_timestamps_monotone_from_synthetic(synthetic_itch):
    ts = [ev.timestamp_ns for ev in stream_events(synthetic_itch)]
    assert all(a <= b for a, b in zip(ts, ts[1:]))


def test_frames_straddling_chunks():
    evs = _mixed_events()
    data = b"".join(encode_frame(encode_message(ev)) for ev in evs)
    frames = list(iter_frames(io.BytesIO(data), chunk_size=7))
    assert [p for _, p in frames] == [encode_message(ev) for ev in evs]
    offsets = [off for off, _ in frames]
    assert offsets[0] == 0 and offsets[1] == 2 + len(frames[0][1])
