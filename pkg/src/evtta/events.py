"""Event data model, file formats, slicing and flip augmentations.

Streams are stored column-wise (``x``, ``y``, ``t``, ``p`` numpy arrays) so
that slicing and representation building stay vectorized. Arrays are
marked read-only on construction; every operation returns a new stream.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

CSV_HEADER = "x,y,t,p"
BINARY_MAGIC = b"EVT0"
_HEADER = struct.Struct("<4sHHQ")
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])


class EventFormatError(ValueError):
    """Raised when event file content does not match its declared format."""


class EventValidationError(ValueError):
    """Raised when an event violates the stream's resolution or polarity rules."""


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """A time-ordered sequence of events at a declared ``(H, W)`` resolution.

    ``window`` optionally records the ``(t_start, t_end)`` interval the
    stream was cut from; time-surface representations use its end as the
    reference time. Without it the event timestamp range is used.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    resolution: tuple[int, int]
    label: Optional[int] = None
    window: Optional[tuple[int, int]] = None
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, np.int64))
        object.__setattr__(self, "y", _frozen(self.y, np.int64))
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        object.__setattr__(self, "resolution", (int(self.resolution[0]), int(self.resolution[1])))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise EventValidationError("x, y, t, p must have equal length")
        if not self._validated:
            self.validate()

    # construction helpers -------------------------------------------------

    @classmethod
    def empty(cls, resolution, label=None, window=None) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, resolution, label, window)

    @classmethod
    def from_events(cls, events: Sequence[Event], resolution, label=None) -> "EventStream":
        if not events:
            return cls.empty(resolution, label)
        arr = np.array([(e.x, e.y, e.t, e.p) for e in events], dtype=np.int64)
        order = np.argsort(arr[:, 2], kind="stable")
        arr = arr[order]
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], resolution, label)

    def _derive(self, x, y, t, p, window=None, label="keep") -> "EventStream":
        # caller guarantees validity (subset or bijective remap of a valid stream)
        return EventStream(
            x, y, t, p, self.resolution,
            self.label if label == "keep" else label,
            window, _validated=True,
        )

    def validate(self) -> None:
        H, W = self.resolution
        if H <= 0 or W <= 0:
            raise EventValidationError(f"invalid resolution {self.resolution}")
        if len(self.t) == 0:
            return
        bad = np.flatnonzero((self.x < 0) | (self.x >= W) | (self.y < 0) | (self.y >= H))
        if bad.size:
            i = int(bad[0])
            raise EventValidationError(
                f"event {i} at ({self.x[i]}, {self.y[i]}) outside resolution {self.resolution}"
            )
        bad = np.flatnonzero((self.p != 1) & (self.p != -1))
        if bad.size:
            raise EventValidationError(f"event {int(bad[0])} has polarity {self.p[bad[0]]}, expected -1 or +1")
        if self.t.min() < 0:
            raise EventValidationError("timestamps must be non-negative")
        if np.any(np.diff(self.t) < 0):
            raise EventValidationError("events must be sorted by timestamp")

    # accessors ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    @property
    def t_min(self) -> int:
        return int(self.t[0]) if len(self) else 0

    @property
    def t_max(self) -> int:
        return int(self.t[-1]) if len(self) else 0

    @property
    def duration(self) -> int:
        return self.t_max - self.t_min

    @property
    def time_range(self) -> tuple[int, int]:
        """The window if one was recorded, else the event timestamp range."""
        return self.window if self.window is not None else (self.t_min, self.t_max)

    def equals(self, other: "EventStream") -> bool:
        return (
            self.resolution == other.resolution
            and self.label == other.label
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def select(self, mask: np.ndarray) -> "EventStream":
        return self._derive(self.x[mask], self.y[mask], self.t[mask], self.p[mask], self.window)

    def time_slice(self, start: int, end: int) -> "EventStream":
        """Events with ``start <= t <= end`` (both ends inclusive)."""
        lo = int(np.searchsorted(self.t, start, side="left"))
        hi = int(np.searchsorted(self.t, end, side="right"))
        return self._derive(self.x[lo:hi], self.y[lo:hi], self.t[lo:hi], self.p[lo:hi], (int(start), int(end)))


@dataclass(frozen=True)
class SliceSet:
    slices: tuple[EventStream, ...]
    window_length: int
    anchor_index: int = 0
    starts: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= self.anchor_index < len(self.slices):
            raise ValueError(f"anchor_index {self.anchor_index} out of range for {len(self.slices)} slices")

    @property
    def K(self) -> int:
        return len(self.slices)

    @property
    def anchor(self) -> EventStream:
        return self.slices[self.anchor_index]

    def with_anchor(self, index: int) -> "SliceSet":
        return SliceSet(self.slices, self.window_length, index, self.starts)


class BurstPolarity(str, Enum):
    NONE = "none"
    POS = "pos"
    NEG = "neg"

    @property
    def sign(self) -> int:
        return {"none": 0, "pos": 1, "neg": -1}[self.value]


@dataclass(frozen=True)
class ShiftSpec:
    """Domain shift applied by the synthetic generator."""

    speed_factor: float = 1.0
    burst_polarity: BurstPolarity = BurstPolarity.NONE
    burst_rate: float = 0.0
    drop_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "burst_polarity", BurstPolarity(self.burst_polarity))
        if not self.speed_factor > 0:
            raise ValueError("speed_factor must be positive")
        if self.burst_rate < 0:
            raise ValueError("burst_rate must be non-negative")
        if not 0 <= self.drop_rate < 1:
            raise ValueError("drop_rate must lie in [0, 1)")

    @property
    def is_identity(self) -> bool:
        return (
            self.speed_factor == 1.0
            and (self.burst_polarity is BurstPolarity.NONE or self.burst_rate == 0)
            and self.drop_rate == 0
        )

    def to_dict(self) -> dict:
        return {
            "speed_factor": self.speed_factor,
            "burst_polarity": self.burst_polarity.value,
            "burst_rate": self.burst_rate,
            "drop_rate": self.drop_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftSpec":
        return cls(**d)


# --------------------------------------------------------------------------
# file formats


def parse_events(data: bytes, fmt: str = "binary", resolution=None, label=None) -> EventStream:
    """Parse raw file content into a sorted, validated stream.

    ``fmt`` is ``"csv"`` or ``"binary"``. CSV carries no resolution, so one
    must be supplied; for the binary format ``resolution`` is taken from the
    header (and checked against the argument when both are given).
    """
    if fmt == "csv":
        if resolution is None:
            raise ValueError("CSV input requires an explicit resolution")
        x, y, t, p = _parse_csv(data)
    elif fmt in ("binary", "packed-binary", "bin"):
        header_res, (x, y, t, p) = _parse_binary(data)
        if resolution is not None and tuple(resolution) != header_res:
            raise EventValidationError(f"header resolution {header_res} differs from expected {tuple(resolution)}")
        resolution = header_res
    else:
        raise ValueError(f"unknown event format {fmt!r}")
    order = np.argsort(t, kind="stable")
    return EventStream(x[order], y[order], t[order], p[order], resolution, label)


def _parse_csv(data: bytes):
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if lineno == 1 and s.replace(" ", "") == CSV_HEADER:
            continue
        parts = s.split(",")
        if len(parts) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(parts)}: {s!r}")
        try:
            rows.append([int(v) for v in parts])
        except ValueError as exc:
            raise EventFormatError(f"line {lineno}: non-integer field in {s!r}") from exc
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def _parse_binary(data: bytes):
    if len(data) < _HEADER.size:
        raise EventFormatError(f"byte 0: truncated header ({len(data)} < {_HEADER.size} bytes)")
    magic, H, W, count = _HEADER.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise EventFormatError(f"byte 0: bad magic {magic!r}, expected {BINARY_MAGIC!r}")
    expected = _HEADER.size + count * _RECORD.itemsize
    if len(data) != expected:
        # report the offset of the first incomplete record
        complete = (len(data) - _HEADER.size) // _RECORD.itemsize
        off = _HEADER.size + min(complete, count) * _RECORD.itemsize
        raise EventFormatError(
            f"byte {off}: payload length {len(data) - _HEADER.size} does not hold {count} records"
        )
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=_HEADER.size)
    t = rec["t"].astype(np.uint64)
    if count and t.max() > np.iinfo(np.int64).max:
        raise EventValidationError("timestamp exceeds int64 range")
    return (H, W), (rec["x"].astype(np.int64), rec["y"].astype(np.int64), t.astype(np.int64), rec["p"].astype(np.int64))


def to_csv(stream: EventStream) -> bytes:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for x, y, t, p in zip(stream.x, stream.y, stream.t, stream.p):
        buf.write(f"{x},{y},{t},{p}\n")
    return buf.getvalue().encode("utf-8")


def to_binary(stream: EventStream) -> bytes:
    H, W = stream.resolution
    rec = np.empty(len(stream), dtype=_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    return _HEADER.pack(BINARY_MAGIC, H, W, len(stream)) + rec.tobytes()


# --------------------------------------------------------------------------
# slicing and flips


def random_slices(stream: EventStream, K: int, window: int, seed=None) -> SliceSet:
    """Cut ``K`` equal-length windows with uniform random start offsets.

    Windows are closed intervals ``[s, s + window]`` and may overlap.
    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    window = int(window)
    if window < 0:
        raise ValueError("window must be non-negative")
    if stream.duration < window:
        raise ValueError(
            f"stream duration {stream.duration}us is shorter than window {window}us; shrink the window"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    starts = rng.integers(stream.t_min, stream.t_max - window, size=K, endpoint=True)
    slices = tuple(stream.time_slice(int(s), int(s) + window) for s in starts)
    return SliceSet(slices, window, 0, tuple(int(s) for s in starts))


def latest_window(stream: EventStream, window: int) -> EventStream:
    """The final ``window`` microseconds of the stream (the whole stream if shorter)."""
    end = stream.t_max
    return stream.time_slice(end - int(window), end)


def flip_horizontal(stream: EventStream) -> EventStream:
    W = stream.resolution[1]
    return stream._derive(W - 1 - stream.x, stream.y, stream.t, stream.p, stream.window)


def flip_polarity(stream: EventStream) -> EventStream:
    return stream._derive(stream.x, stream.y, stream.t, -stream.p, stream.window)


def flip_temporal(stream: EventStream) -> EventStream:
    """Reverse time: ``t -> t_max - t + t_min``, reordered so t stays sorted."""
    if len(stream) == 0:
        return stream
    lo, hi = stream.t_min, stream.t_max
    t = (hi + lo - stream.t)[::-1]
    window = None
    if stream.window is not None:
        a, b = stream.window
        window = (hi + lo - b, hi + lo - a)
    return stream._derive(stream.x[::-1], stream.y[::-1], t, stream.p[::-1], window)
