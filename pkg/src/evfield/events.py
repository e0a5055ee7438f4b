"""Event stream container, frame accumulation, and binary event file I/O.

An event stream is stored column-wise (t, x, y, polarity) for vectorised
slicing and accumulation.  Timestamps are float64 seconds and must be
non-decreasing; polarity is strictly +1/-1.  The contrast threshold C rides
along with the stream because accumulated frames are only meaningful in
units of C.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"EVT1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdQ")  # magic, version, width, height, contrast, count
_RECORD_DTYPE = np.dtype([
    ("t", "<f8"),
    ("x", "<u2"),
    ("y", "<u2"),
    ("polarity", "<i1"),
    ("pad", "<u1", (3,)),
])
assert _RECORD_DTYPE.itemsize == 16


class EventFormatError(ValueError):
    """Malformed event file."""


@dataclass(frozen=True)
class Event:
    t: float
    x: int
    y: int
    polarity: int


class EventStream:
    """Time-ordered polarity events on a fixed sensor grid."""

    def __init__(self, t, x, y, polarity, width: int, height: int, contrast: float):
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.uint16)
        y = np.asarray(y, dtype=np.uint16)
        polarity = np.asarray(polarity, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == polarity.shape) or t.ndim != 1:
            raise ValueError("event columns must be 1-D and equal length")
        if width <= 0 or height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if not contrast > 0.0:
            raise ValueError("contrast threshold must be positive")
        if t.size:
            if not np.all(np.isfinite(t)):
                raise ValueError("timestamps must be finite")
            bad = np.flatnonzero(np.diff(t) < 0.0)
            if bad.size:
                raise ValueError(f"timestamps decrease at event {bad[0] + 1}")
            if np.any(x >= width) or np.any(y >= height):
                raise ValueError("event coordinates outside sensor")
            if not np.all(np.abs(polarity) == 1):
                raise ValueError("polarity must be +1 or -1")
        self.t = t
        self.x = x
        self.y = y
        self.polarity = polarity
        self.width = int(width)
        self.height = int(height)
        self.contrast = float(contrast)

    @property
    def n_events(self) -> int:
        return self.t.size

    def __len__(self) -> int:
        return self.t.size

    def __getitem__(self, i: int) -> Event:
        return Event(float(self.t[i]), int(self.x[i]), int(self.y[i]),
                     int(self.polarity[i]))

    def __iter__(self):
        for i in range(self.t.size):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.contrast == other.contrast
                and np.array_equal(self.t, other.t)
                and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y)
                and np.array_equal(self.polarity, other.polarity))

    def __repr__(self):
        return (f"EventStream({self.n_events} events, {self.width}x{self.height}, "
                f"C={self.contrast})")


@dataclass(frozen=True)
class EventFrame:
    """Signed accumulation of events over a half-open time window.

    ``values`` is counts * C in log-intensity units; ``counts`` keeps the raw
    signed integer tally so exactness checks never depend on float rounding.
    """

    values: np.ndarray    # (H, W) float64
    counts: np.ndarray    # (H, W) int64
    window: tuple
    width: int
    height: int


def _window_slice(stream: EventStream, t0: float, t1: float) -> slice:
    if not t1 > t0:
        raise ValueError(f"empty or inverted window [{t0}, {t1})")
    lo = np.searchsorted(stream.t, t0, side="left")
    hi = np.searchsorted(stream.t, t1, side="left")
    return slice(lo, hi)


def window(stream: EventStream, t0: float, t1: float) -> EventStream:
    """Events with t0 <= t < t1, metadata preserved."""
    s = _window_slice(stream, t0, t1)
    return EventStream(stream.t[s], stream.x[s], stream.y[s], stream.polarity[s],
                       stream.width, stream.height, stream.contrast)


def accumulate_event_frame(stream: EventStream, t0: float, t1: float) -> EventFrame:
    """Per-pixel C * (sum of polarities) over [t0, t1)."""
    s = _window_slice(stream, t0, t1)
    pid = stream.y[s].astype(np.int64) * stream.width + stream.x[s].astype(np.int64)
    pol = stream.polarity[s]
    n = stream.width * stream.height
    pos = np.bincount(pid[pol > 0], minlength=n)
    neg = np.bincount(pid[pol < 0], minlength=n)
    counts = (pos - neg).reshape(stream.height, stream.width)
    return EventFrame(values=counts * stream.contrast, counts=counts,
                      window=(float(t0), float(t1)),
                      width=stream.width, height=stream.height)


def save_events(stream: EventStream, path) -> None:
    rec = np.zeros(stream.n_events, dtype=_RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["polarity"] = stream.polarity
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, stream.width, stream.height,
                             stream.contrast, stream.n_events))
        f.write(rec.tobytes())


def load_events(path) -> EventStream:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise EventFormatError(f"file too short for header ({len(raw)} bytes)")
    magic, version, width, height, contrast, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise EventFormatError(f"unsupported version {version} at byte 4")
    body = raw[_HEADER.size:]
    expect = count * _RECORD_DTYPE.itemsize
    if len(body) != expect:
        raise EventFormatError(
            f"truncated records: expected {expect} bytes after byte {_HEADER.size}, "
            f"got {len(body)}")
    rec = np.frombuffer(body, dtype=_RECORD_DTYPE)
    t = rec["t"]
    bad = np.flatnonzero(np.diff(t) < 0.0)
    if bad.size:
        offset = _HEADER.size + int(bad[0] + 1) * _RECORD_DTYPE.itemsize
        raise EventFormatError(f"timestamps decrease at byte {offset}")
    try:
        return EventStream(t, rec["x"], rec["y"], rec["polarity"],
                           width, height, contrast)
    except ValueError as e:
        raise EventFormatError(str(e)) from e
