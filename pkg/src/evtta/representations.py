"""Two-channel image-like event representations.

Channel 0 holds positive events, channel 1 negative events. All kinds keep
per-pixel, per-polarity state; the timestamp-based kinds only look at the
latest event at each pixel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .events import EventStream

POS, NEG = 0, 1
_REP_HEADER = struct.Struct("<4sBHH")
REP_MAGIC = b"REP0"


class RepKind(str, Enum):
    BINARY_EVENT_IMAGE = "binary_event_image"
    EVENT_HISTOGRAM = "event_histogram"
    TIMESTAMP_IMAGE = "timestamp_image"
    TIME_SURFACE = "time_surface"
    SORTED_TIME_SURFACE = "sorted_time_surface"
    DIST = "dist"

    @classmethod
    def parse(cls, value) -> "RepKind":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("-", "_")
        aliases = {"binary": cls.BINARY_EVENT_IMAGE, "histogram": cls.EVENT_HISTOGRAM,
                   "timestamp": cls.TIMESTAMP_IMAGE, "sorted": cls.SORTED_TIME_SURFACE}
        if v in aliases:
            return aliases[v]
        try:
            return cls(v)
        except ValueError:
            raise ValueError(f"unknown representation kind {value!r}") from None


ALL_KINDS = tuple(RepKind)


@dataclass(frozen=True)
class RepParams:
    """Kind parameters; ``tau=None`` means one third of the stream's window."""

    tau: float | None = None
    radius: int = 1
    min_neighbors: int = 2

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.min_neighbors < 0:
            raise ValueError("min_neighbors must be >= 0")


@dataclass(frozen=True, eq=False)
class RepTensor:
    data: np.ndarray  # (H, W, 2) float64
    kind: RepKind
    resolution: tuple[int, int]

    @property
    def pos(self) -> np.ndarray:
        return self.data[..., POS]

    @property
    def neg(self) -> np.ndarray:
        return self.data[..., NEG]

    def to_bytes(self) -> bytes:
        H, W = self.resolution
        kind_id = ALL_KINDS.index(self.kind)
        return _REP_HEADER.pack(REP_MAGIC, kind_id, H, W) + np.ascontiguousarray(self.data, dtype="<f4").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "RepTensor":
        magic, kind_id, H, W = _REP_HEADER.unpack_from(blob, 0)
        if magic != REP_MAGIC:
            raise ValueError(f"bad representation magic {magic!r}")
        n = H * W * 2
        payload = blob[_REP_HEADER.size:]
        if len(payload) != 4 * n:
            raise ValueError(f"expected {4 * n} payload bytes, got {len(payload)}")
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(H, W, 2)
        return cls(data, ALL_KINDS[kind_id], (H, W))


def _channel_index(stream: EventStream) -> np.ndarray:
    return np.where(stream.p > 0, POS, NEG)


def _latest_times(stream: EventStream) -> np.ndarray:
    """Latest timestamp per (y, x, channel); -1 where no event."""
    H, W = stream.resolution
    last = np.full(H * W * 2, -1, dtype=np.int64)
    flat = (stream.y * W + stream.x) * 2 + _channel_index(stream)
    np.maximum.at(last, flat, stream.t)
    return last.reshape(H, W, 2)


def _sorted_surface(last: np.ndarray) -> np.ndarray:
    H, W, _ = last.shape
    out = np.zeros((H, W, 2))
    flat_pix = np.arange(H * W)
    for c in (POS, NEG):
        tl = last[..., c].reshape(-1)
        active = np.flatnonzero(tl >= 0)
        if active.size == 0:
            continue
        # ascending t_last, ties by row-major pixel index i.e. (y, x)
        order = np.lexsort((flat_pix[active], tl[active]))
        ranks = np.empty(active.size)
        ranks[order] = np.arange(1, active.size + 1)
        plane = np.zeros(H * W)
        plane[active] = ranks / active.size
        out[..., c] = plane.reshape(H, W)
    return out


def _neighbor_counts(active: np.ndarray, radius: int) -> np.ndarray:
    """Active (pixel, channel) pairs in the (2r+1)^2 box around each pixel, excluding it."""
    both = active.sum(axis=-1).astype(np.int64)
    size = 2 * radius + 1
    box = ndimage.convolve(both, np.ones((size, size), dtype=np.int64), mode="constant", cval=0)
    return box - both


def build(stream: EventStream, kind, params: RepParams | None = None) -> RepTensor:
    """Aggregate ``stream`` into an ``(H, W, 2)`` representation of ``kind``."""
    kind = RepKind.parse(kind)
    params = params or RepParams()
    H, W = stream.resolution
    data = np.zeros((H, W, 2))
    if len(stream) == 0:
        return RepTensor(data, kind, (H, W))

    if kind in (RepKind.BINARY_EVENT_IMAGE, RepKind.EVENT_HISTOGRAM):
        flat = (stream.y * W + stream.x) * 2 + _channel_index(stream)
        counts = np.bincount(flat, minlength=H * W * 2).astype(np.float64).reshape(H, W, 2)
        data = counts if kind is RepKind.EVENT_HISTOGRAM else (counts > 0).astype(np.float64)
        return RepTensor(data, kind, (H, W))

    last = _latest_times(stream)
    active = last >= 0
    if kind is RepKind.TIMESTAMP_IMAGE:
        span = stream.t_max - stream.t_min
        if span == 0:
            data = active.astype(np.float64)
        else:
            data = np.where(active, (last - stream.t_min) / span, 0.0)
    elif kind is RepKind.TIME_SURFACE:
        t0, t_ref = stream.time_range
        tau = params.tau if params.tau is not None else max(t_ref - t0, 1) / 3.0
        data = np.where(active, np.exp(-(t_ref - last) / tau), 0.0)
    elif kind is RepKind.SORTED_TIME_SURFACE:
        data = _sorted_surface(last)
    elif kind is RepKind.DIST:
        data = _sorted_surface(last)
        sparse = _neighbor_counts(active, params.radius) < params.min_neighbors
        data[sparse] = 0.0
    else:  # pragma: no cover - exhaustive over RepKind
        raise ValueError(f"unknown representation kind {kind!r}")
    return RepTensor(data, kind, (H, W))


def build_array(streams, kind, params: RepParams | None = None) -> np.ndarray:
    """Stack representations of several streams into an ``(N, H, W, 2)`` array."""
    return np.stack([build(s, kind, params).data for s in streams])


def rep_stats(rep) -> tuple[int, int]:
    """Active pixel counts ``(N_pos, N_neg)``; works on single tensors or batches."""
    data = rep.data if isinstance(rep, RepTensor) else np.asarray(rep)
    nz = data != 0
    n_pos = np.count_nonzero(nz[..., POS], axis=(-2, -1))
    n_neg = np.count_nonzero(nz[..., NEG], axis=(-2, -1))
    if np.ndim(n_pos) == 0:
        return int(n_pos), int(n_neg)
    return n_pos, n_neg
