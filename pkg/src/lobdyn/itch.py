"""NASDAQ TotalView-ITCH 4.1 capture decoding.

Capture files are gzip streams of length-prefixed frames::

    repeat { u16 big-endian length, payload[length] }

The first payload byte is the message type.  Every message other than
``'T'`` (Timestamp - Seconds) carries a u32 nanoseconds-within-second
field right after the type byte; the absolute time of such a message is
the last ``'T'`` value plus those nanoseconds.
"""

from __future__ import annotations

import enum
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

NS_PER_SECOND = 1_000_000_000
PRICE_SCALE = 10_000

__all__ = [
    "Kind",
    "MarketEvent",
    "ItchError",
    "TruncatedFrame",
    "LengthMismatch",
    "MESSAGE_LENGTHS",
    "dollars",
    "read_frame",
    "iter_frames",
    "decode_message",
    "encode_message",
    "encode_frame",
    "iter_decoded",
    "stream_events",
    "filter_symbols",
    "write_itch",
]


class Kind(enum.Enum):
    SYSTEM_EVENT = "S"
    SECONDS = "T"
    ADD_ORDER = "A"
    ADD_ORDER_MPID = "F"
    ORDER_EXECUTED = "E"
    ORDER_EXECUTED_WITH_PRICE = "C"
    ORDER_CANCEL = "X"
    ORDER_DELETE = "D"
    ORDER_REPLACE = "U"
    NON_DISPLAYED_TRADE = "P"
    OTHER = "?"


@dataclass(slots=True)
class MarketEvent:
    """One decoded ITCH message.

    Prices are raw integers in 1/10000 USD.  ``stock`` is stored with the
    space padding stripped.  For replaces ``order_ref`` is the old
    reference and ``new_ref`` the new one.  ``type_code`` keeps the raw
    message type so unknown messages can still be identified.
    """

    kind: Kind
    timestamp_ns: int
    order_ref: int = 0
    side: str = ""
    shares: int = 0
    stock: str = ""
    price: int = 0
    match_number: int = 0
    new_ref: int = 0
    printable: bool = True
    attribution: str = ""
    event_code: str = ""
    type_code: str = ""

    @property
    def old_ref(self) -> int:
        return self.order_ref

    @property
    def is_order_level(self) -> bool:
        return self.kind in _ORDER_KINDS


_ORDER_KINDS = frozenset(
    {
        Kind.ADD_ORDER,
        Kind.ADD_ORDER_MPID,
        Kind.ORDER_EXECUTED,
        Kind.ORDER_EXECUTED_WITH_PRICE,
        Kind.ORDER_CANCEL,
        Kind.ORDER_DELETE,
        Kind.ORDER_REPLACE,
        Kind.NON_DISPLAYED_TRADE,
    }
)


class ItchError(Exception):
    """Corrupt or desynchronized capture.  ``offset`` is the byte offset
    of the offending frame in the decompressed stream, when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TruncatedFrame(ItchError):
    pass


class LengthMismatch(ItchError):
    pass


def dollars(raw: int) -> float:
    return raw / PRICE_SCALE


# Field layouts after the type byte; all big-endian.
_LAYOUTS = {
    "T": struct.Struct(">I"),
    "S": struct.Struct(">Ic"),
    "A": struct.Struct(">IQcI8sI"),
    "F": struct.Struct(">IQcI8sI4s"),
    "E": struct.Struct(">IQIQ"),
    "C": struct.Struct(">IQIQcI"),
    "X": struct.Struct(">IQI"),
    "D": struct.Struct(">IQ"),
    "U": struct.Struct(">IQQII"),
    "P": struct.Struct(">IQcI8sIQ"),
}
MESSAGE_LENGTHS = {code: 1 + s.size for code, s in _LAYOUTS.items()}
_NS_ONLY = struct.Struct(">I")


def _text(raw: bytes) -> str:
    return raw.decode("ascii").rstrip(" ")


def _decode_fields(code: str, fields: tuple, base_ns: int) -> MarketEvent:
    ts = base_ns + fields[0]
    if code == "A":
        _, ref, side, shares, stock, price = fields
        return MarketEvent(Kind.ADD_ORDER, ts, ref, side.decode(), shares, _text(stock), price, type_code=code)
    if code == "E":
        _, ref, shares, match = fields
        return MarketEvent(Kind.ORDER_EXECUTED, ts, ref, "", shares, "", 0, match, type_code=code)
    if code == "X":
        _, ref, shares = fields
        return MarketEvent(Kind.ORDER_CANCEL, ts, ref, "", shares, type_code=code)
    if code == "D":
        return MarketEvent(Kind.ORDER_DELETE, ts, fields[1], type_code=code)
    if code == "U":
        _, old, new, shares, price = fields
        return MarketEvent(Kind.ORDER_REPLACE, ts, old, "", shares, "", price, 0, new, type_code=code)
    if code == "C":
        _, ref, shares, match, printable, price = fields
        return MarketEvent(
            Kind.ORDER_EXECUTED_WITH_PRICE, ts, ref, "", shares, "", price, match,
            printable=printable != b"N", type_code=code,
        )
    if code == "F":
        _, ref, side, shares, stock, price, mpid = fields
        return MarketEvent(
            Kind.ADD_ORDER_MPID, ts, ref, side.decode(), shares, _text(stock), price,
            attribution=_text(mpid), type_code=code,
        )
    if code == "P":
        _, ref, side, shares, stock, price, match = fields
        return MarketEvent(
            Kind.NON_DISPLAYED_TRADE, ts, ref, side.decode(), shares, _text(stock), price, match, type_code=code
        )
    # 'S'
    return MarketEvent(Kind.SYSTEM_EVENT, ts, event_code=fields[1].decode(), type_code=code)


def decode_message(payload: bytes, seconds_base: int, offset: int | None = None) -> MarketEvent:
    """Decode one payload; ``seconds_base`` is the value of the most recent
    ``'T'`` message.  Unknown types decode to ``Kind.OTHER``."""
    if not payload:
        raise LengthMismatch("empty payload", offset)
    code = chr(payload[0])
    layout = _LAYOUTS.get(code)
    if layout is None:
        ns = _NS_ONLY.unpack_from(payload, 1)[0] if len(payload) >= 5 else 0
        return MarketEvent(Kind.OTHER, seconds_base * NS_PER_SECOND + ns, type_code=code)
    if len(payload) != layout.size + 1:
        raise LengthMismatch(
            f"message '{code}' has {len(payload)} bytes, expected {layout.size + 1}", offset
        )
    fields = layout.unpack_from(payload, 1)
    if code == "T":
        return MarketEvent(Kind.SECONDS, fields[0] * NS_PER_SECOND, type_code=code)
    return _decode_fields(code, fields, seconds_base * NS_PER_SECOND)


def _alpha(text: str, width: int) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{text!r} does not fit in {width} characters")
    return raw.ljust(width, b" ")


def encode_message(event: MarketEvent) -> bytes:
    """Inverse of :func:`decode_message` for the supported message types."""
    kind = event.kind
    code = kind.value
    if kind is Kind.OTHER:
        raise ValueError("cannot encode an unknown message type")
    layout = _LAYOUTS[code]
    if kind is Kind.SECONDS:
        return b"T" + layout.pack(event.timestamp_ns // NS_PER_SECOND)
    ns = event.timestamp_ns % NS_PER_SECOND
    side = event.side.encode("ascii")
    if kind is Kind.SYSTEM_EVENT:
        fields = (ns, event.event_code.encode("ascii"))
    elif kind is Kind.ADD_ORDER:
        fields = (ns, event.order_ref, side, event.shares, _alpha(event.stock, 8), event.price)
    elif kind is Kind.ADD_ORDER_MPID:
        fields = (
            ns, event.order_ref, side, event.shares, _alpha(event.stock, 8), event.price,
            _alpha(event.attribution, 4),
        )
    elif kind is Kind.ORDER_EXECUTED:
        fields = (ns, event.order_ref, event.shares, event.match_number)
    elif kind is Kind.ORDER_EXECUTED_WITH_PRICE:
        fields = (
            ns, event.order_ref, event.shares, event.match_number,
            b"Y" if event.printable else b"N", event.price,
        )
    elif kind is Kind.ORDER_CANCEL:
        fields = (ns, event.order_ref, event.shares)
    elif kind is Kind.ORDER_DELETE:
        fields = (ns, event.order_ref)
    elif kind is Kind.ORDER_REPLACE:
        fields = (ns, event.order_ref, event.new_ref, event.shares, event.price)
    else:
        fields = (
            ns, event.order_ref, side, event.shares, _alpha(event.stock, 8), event.price,
            event.match_number,
        )
    return code.encode("ascii") + layout.pack(*fields)


def encode_frame(payload: bytes) -> bytes:
    if not 1 <= len(payload) <= 0xFFFF:
        raise ValueError("payload length must be in [1, 65535]")
    return len(payload).to_bytes(2, "big") + payload


def read_frame(stream: BinaryIO) -> bytes | None:
    """Next payload from ``stream`` or ``None`` at a clean end of stream."""
    head = stream.read(2)
    if not head:
        return None
    if len(head) < 2:
        raise TruncatedFrame("stream ended inside a length prefix")
    length = int.from_bytes(head, "big")
    if length == 0:
        raise LengthMismatch("zero-length frame")
    payload = stream.read(length)
    if len(payload) != length:
        raise TruncatedFrame(f"frame declares {length} bytes, only {len(payload)} present")
    return payload


def iter_frames(stream: BinaryIO, chunk_size: int = 1 << 22) -> Iterator[tuple[int, bytes]]:
    """Yield ``(offset, payload)`` pairs, reading the stream in large chunks."""
    buf = b""
    pos = 0
    consumed = 0  # absolute offset of buf[0]
    while True:
        chunk = stream.read(chunk_size)
        if chunk:
            buf = buf[pos:] + chunk
            consumed += pos
            pos = 0
        end = len(buf)
        while pos + 2 <= end:
            length = (buf[pos] << 8) | buf[pos + 1]
            stop = pos + 2 + length
            if stop > end:
                break
            if length == 0:
                raise LengthMismatch("zero-length frame", consumed + pos)
            yield consumed + pos, buf[pos + 2 : stop]
            pos = stop
        if not chunk:
            if pos != end:
                raise TruncatedFrame("stream ended mid-frame", consumed + pos)
            return


def _open(path: str | Path) -> BinaryIO:
    path = Path(path)
    with path.open("rb") as probe:
        magic = probe.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return path.open("rb")


def iter_decoded(stream: BinaryIO) -> Iterator[MarketEvent]:
    """Decode every frame of an uncompressed stream, in file order."""
    base = 0
    layouts = _LAYOUTS
    ns_only = _NS_ONLY
    other = Kind.OTHER
    for offset, payload in iter_frames(stream):
        code = chr(payload[0])
        layout = layouts.get(code)
        if layout is None:
            ns = ns_only.unpack_from(payload, 1)[0] if len(payload) >= 5 else 0
            yield MarketEvent(other, base * NS_PER_SECOND + ns, type_code=code)
            continue
        if len(payload) != layout.size + 1:
            raise LengthMismatch(
                f"message '{code}' has {len(payload)} bytes, expected {layout.size + 1}", offset
            )
        fields = layout.unpack_from(payload, 1)
        if code == "T":
            base = fields[0]
            yield MarketEvent(Kind.SECONDS, base * NS_PER_SECOND, type_code=code)
        else:
            yield _decode_fields(code, fields, base * NS_PER_SECOND)


def filter_symbols(events: Iterable[MarketEvent], symbols: Iterable[str]) -> Iterator[MarketEvent]:
    """Keep non-order events plus order events routable to ``symbols``.

    Executions, cancels, deletes and replaces carry no symbol, so the
    reference bound by the originating add is remembered for the whole
    run (replaces bind the new reference too).
    """
    wanted = {s.rstrip(" ") for s in symbols}
    refs: set[int] = set()
    add_kinds = (Kind.ADD_ORDER, Kind.ADD_ORDER_MPID)
    for ev in events:
        kind = ev.kind
        if kind in add_kinds:
            if ev.stock in wanted:
                refs.add(ev.order_ref)
                yield ev
        elif kind is Kind.NON_DISPLAYED_TRADE:
            if ev.stock in wanted:
                yield ev
        elif kind is Kind.ORDER_REPLACE:
            if ev.order_ref in refs:
                refs.add(ev.new_ref)
                yield ev
        elif kind in _ORDER_KINDS:
            if ev.order_ref in refs:
                yield ev
        else:
            yield ev


def stream_events(path: str | Path, symbols: Iterable[str] | None = None) -> Iterator[MarketEvent]:
    """Decode an ITCH 4.1 capture (gzip or plain) lazily.

    With ``symbols`` given, order-level events are passed only when they
    belong to one of the symbols; seconds, system and other messages
    always pass.
    """
    with _open(path) as stream:
        events = iter_decoded(stream)
        if symbols is not None:
            events = filter_symbols(events, symbols)
        yield from events


def write_itch(path: str | Path, events: Iterable[MarketEvent], compress: bool = True) -> int:
    """Write events as a length-prefixed capture; returns the frame count."""
    opener = gzip.open if compress else open
    count = 0
    with opener(path, "wb") as out:
        batch = []
        for ev in events:
            batch.append(encode_frame(encode_message(ev)))
            count += 1
            if len(batch) >= 65536:
                out.write(b"".join(batch))
                batch.clear()
        out.write(b"".join(batch))
    return count
