"""Event-camera data types, stream parsing/serialization, and voxelization.

An event is a timestamped polarity spike (t, x, y, p) with t in integer
microseconds and p in {-1, +1}. Streams are stored struct-of-arrays and are
immutable once constructed; all operations here are pure functions.

Two on-disk formats are supported (see docs/formats.md):

* ``text_csv`` -- header line ``# evstereo v1 width=<W> height=<H>`` followed
  by one ``t_us,x,y,p`` record per line. Polarity 0 is accepted on ingest and
  mapped to -1.
* ``binary_le`` -- 16-byte header (magic ``EVS1``, u32 width, u32 height,
  u32 count) followed by 16-byte little-endian records
  (u64 t, u16 x, u16 y, i8 p, 3 pad bytes). Polarity 0 maps to -1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

TEXT_MAGIC = "# evstereo v1"
BINARY_MAGIC = b"EVS1"
_BINARY_HEADER = struct.Struct("<4sIII")
_BINARY_RECORD = struct.Struct("<QHHb3x")

_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")]
)


class EventFormatError(ValueError):
    """Malformed event file; carries the offending line number or byte offset."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    polarity: int


@dataclass(frozen=True)
class EventStream:
    """Time-sorted event arrays plus the sensor geometry they live on.

    ``t`` is int64 microseconds (non-decreasing), ``x``/``y`` int32 pixel
    coordinates inside [0, width) x [0, height), ``polarity`` int8 in {-1, +1}.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int32)
        y = np.ascontiguousarray(self.y, dtype=np.int32)
        p = np.ascontiguousarray(self.polarity, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("event arrays must be 1-D and equally sized")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if t.size:
            if np.any(np.diff(t) < 0):
                raise ValueError("event timestamps must be non-decreasing")
            if np.any(t < 0):
                raise ValueError("event timestamps must be non-negative")
            if np.any((x < 0) | (x >= self.width) | (y < 0) | (y >= self.height)):
                raise ValueError("event coordinates outside sensor bounds")
            if np.any((p != 1) & (p != -1)):
                raise ValueError("polarity must be -1 or +1")
        for arr in (t, x, y, p):
            arr.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "polarity", p)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy(), width, height)

    @classmethod
    def from_arrays(cls, t, x, y, polarity, width, height, sort: bool = True) -> "EventStream":
        """Build a stream, stably sorting by t when ``sort`` is set."""
        t = np.asarray(t, dtype=np.int64)
        if sort and t.size and np.any(np.diff(t) < 0):
            order = np.argsort(t, kind="stable")
            return cls(
                t[order],
                np.asarray(x)[order],
                np.asarray(y)[order],
                np.asarray(polarity)[order],
                width,
                height,
            )
        return cls(t, np.asarray(x), np.asarray(y), np.asarray(polarity), width, height)

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.polarity[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.polarity, other.polarity)
        )

    def slice_time(self, t0: int, t1: int) -> "EventStream":
        """Events with t in the closed window [t0, t1]."""
        keep = (self.t >= t0) & (self.t <= t1)
        return EventStream(
            self.t[keep], self.x[keep], self.y[keep], self.polarity[keep],
            self.width, self.height,
        )

    def density(self) -> np.ndarray:
        """Per-pixel event count, H x W float64."""
        out = np.zeros((self.height, self.width), dtype=np.float64)
        np.add.at(out, (self.y, self.x), 1.0)
        return out


@dataclass(frozen=True)
class VoxelGrid:
    """B x H x W signed polarity accumulation over a time window [t0, t1]."""

    data: np.ndarray
    t0: int
    t1: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("voxel data must be B x H x W")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _map_polarity(p: np.ndarray, where: str) -> np.ndarray:
    """Apply the 0 -> -1 ingest mapping; reject anything else outside {-1,1}."""
    p = p.astype(np.int64)
    bad = (p != -1) & (p != 0) & (p != 1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise EventFormatError(f"{where}: polarity {p[bad][0]} at record {idx} not in {{-1,0,1}}")
    return np.where(p == 0, -1, p).astype(np.int8)


def parse_events(data: bytes, fmt: str) -> EventStream:
    """Parse ``text_csv`` or ``binary_le`` bytes into a time-sorted stream.

    Unsorted input is accepted and stably sorted. Malformed records raise
    EventFormatError with the line number (text) or byte offset (binary).
    """
    if fmt == "text_csv":
        return _parse_text(data)
    if fmt == "binary_le":
        return _parse_binary(data)
    raise ValueError(f"unknown event format: {fmt!r}")


def _parse_text(data: bytes) -> EventStream:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise EventFormatError(f"text_csv: not valid UTF-8 ({e})") from None
    lines = text.split("\n")
    if not lines or not lines[0].startswith(TEXT_MAGIC):
        raise EventFormatError("text_csv: missing 'evstereo v1' header on line 1")
    header = lines[0]
    try:
        fields = dict(tok.split("=") for tok in header[len(TEXT_MAGIC):].split())
        width = int(fields["width"])
        height = int(fields["height"])
    except (ValueError, KeyError):
        raise EventFormatError("text_csv: header must carry width=<W> height=<H>") from None
    t_list, x_list, y_list, p_list = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"text_csv: line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            t_list.append(int(parts[0]))
            x_list.append(int(parts[1]))
            y_list.append(int(parts[2]))
            p_list.append(int(parts[3]))
        except ValueError:
            raise EventFormatError(f"text_csv: line {lineno}: non-integer field") from None
    p = _map_polarity(np.asarray(p_list, dtype=np.int64), "text_csv")
    try:
        return EventStream.from_arrays(
            np.asarray(t_list, dtype=np.int64),
            np.asarray(x_list, dtype=np.int64),
            np.asarray(y_list, dtype=np.int64),
            p, width, height,
        )
    except ValueError as e:
        raise EventFormatError(f"text_csv: {e}") from None


def _parse_binary(data: bytes) -> EventStream:
    if len(data) < _BINARY_HEADER.size:
        raise EventFormatError("binary_le: truncated header at offset 0")
    magic, width, height, count = _BINARY_HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise EventFormatError("binary_le: bad magic at offset 0")
    expected = _BINARY_HEADER.size + count * _BINARY_RECORD.size
    if len(data) != expected:
        raise EventFormatError(
            f"binary_le: expected {expected} bytes for {count} records, got {len(data)}"
        )
    records = np.frombuffer(data, dtype=_RECORD_DTYPE, count=count, offset=_BINARY_HEADER.size)
    p = _map_polarity(records["p"].astype(np.int64), "binary_le")
    try:
        return EventStream.from_arrays(
            records["t"].astype(np.int64),
            records["x"].astype(np.int64),
            records["y"].astype(np.int64),
            p, int(width), int(height),
        )
    except ValueError as e:
        raise EventFormatError(f"binary_le: {e}") from None


def write_events(stream: EventStream, fmt: str) -> bytes:
    """Serialize a stream; parse(write(s)) == s exactly for both formats."""
    if fmt == "text_csv":
        out = [f"{TEXT_MAGIC} width={stream.width} height={stream.height}"]
        for i in range(len(stream)):
            out.append(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.polarity[i]}")
        return ("\n".join(out) + "\n").encode("utf-8")
    if fmt == "binary_le":
        buf = bytearray(_BINARY_HEADER.pack(BINARY_MAGIC, stream.width, stream.height, len(stream)))
        rec = np.zeros(len(stream), dtype=_RECORD_DTYPE)
        rec["t"] = stream.t
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["p"] = stream.polarity
        buf.extend(rec.tobytes())
        return bytes(buf)
    raise ValueError(f"unknown event format: {fmt!r}")


def voxelize(stream: EventStream, bins: int, window: tuple[int, int]) -> VoxelGrid:
    """Bin events into B temporal slices with linear two-bin weight splitting.

    Bin coordinate b(t) = (B-1) * (t - t0) / (t1 - t0); each event's polarity
    splits between floor(b) and floor(b)+1 with weights (1-frac, frac). The
    window is closed on both ends; events outside contribute nothing.
    """
    t0, t1 = window
    if t0 >= t1:
        raise ValueError(f"empty voxel window: t0={t0} >= t1={t1}")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    data = np.zeros((bins, stream.height, stream.width), dtype=np.float64)
    sel = stream.slice_time(t0, t1)
    if len(sel):
        if bins == 1:
            b = np.zeros(len(sel), dtype=np.float64)
        else:
            b = (bins - 1) * (sel.t - t0).astype(np.float64) / float(t1 - t0)
        lo = np.floor(b).astype(np.int64)
        frac = b - lo
        pol = sel.polarity.astype(np.float64)
        np.add.at(data, (lo, sel.y, sel.x), pol * (1.0 - frac))
        hi_ok = frac > 0
        if np.any(hi_ok):
            np.add.at(
                data,
                (lo[hi_ok] + 1, sel.y[hi_ok], sel.x[hi_ok]),
                pol[hi_ok] * frac[hi_ok],
            )
    return VoxelGrid(data, t0, t1)
