"""Synthetic desk-scale event scenes with controllable domain shift.

Each class is a bright line-drawn shape (bar, cross, square, ...) drifting on
a small circular trajectory, the way a display-and-moving-camera recording
looks. A pixel switching on emits a positive event and switching off emits a
negative one, so a moving stroke leaves overlapping positive and negative
footprints.
"""

from __future__ import annotations

import numpy as np

from .events import BurstPolarity, EventStream, ShiftSpec

NUM_CLASSES = 10
DEFAULT_RESOLUTION = (32, 32)
DEFAULT_DURATION = 100_000
_STEP_US = 500
_HALF_WIDTH = 0.5
_FINE = 8  # occupancy grid samples per pixel
_SIZE_RANGE = (0.26, 0.34)  # shape half-extent as a fraction of min(H, W)

_sq = [(-0.7, -0.7), (0.7, -0.7), (0.7, 0.7), (-0.7, 0.7)]
_tri = [(0.0, -0.8), (0.8, 0.6), (-0.8, 0.6)]

# segments ((x0, y0), (x1, y1)) in a unit frame; circles (radius,)
SHAPES: dict[int, dict] = {
    0: {"name": "hbar", "segments": [((-1, 0), (1, 0))]},
    1: {"name": "vbar", "segments": [((0, -1), (0, 1))]},
    2: {"name": "slash", "segments": [((-0.75, 0.75), (0.75, -0.75))]},
    3: {"name": "backslash", "segments": [((-0.75, -0.75), (0.75, 0.75))]},
    4: {"name": "plus", "segments": [((-0.8, 0), (0.8, 0)), ((0, -0.8), (0, 0.8))]},
    5: {"name": "cross", "segments": [((-0.6, -0.6), (0.6, 0.6)), ((-0.6, 0.6), (0.6, -0.6))]},
    6: {"name": "square", "segments": [(_sq[i], _sq[(i + 1) % 4]) for i in range(4)]},
    7: {"name": "triangle", "segments": [(_tri[i], _tri[(i + 1) % 3]) for i in range(3)]},
    8: {"name": "circle", "circles": [0.75]},
    9: {"name": "corner", "segments": [((-0.7, -0.8), (-0.7, 0.7)), ((-0.7, 0.7), (0.8, 0.7))]},
}


def _segment_distance(px, py, x0, y0, x1, y1):
    dx, dy = x1 - x0, y1 - y0
    denom = dx * dx + dy * dy
    u = np.clip(((px - x0) * dx + (py - y0) * dy) / denom, 0.0, 1.0)
    return np.hypot(px - (x0 + u * dx), py - (y0 + u * dy))


def _occupancy_grid(segments, circles):
    """Occupancy of the shape on a fine local grid centred on its origin."""
    extent = max([abs(c) for seg in segments for pt in seg for c in pt] + list(circles) + [0.0]) + 1.0
    n = int(np.ceil(2 * extent * _FINE)) + 1
    u = np.arange(n) / _FINE - extent
    py, px = np.meshgrid(u, u, indexing="ij")
    dist = np.full(px.shape, np.inf)
    for (x0, y0), (x1, y1) in segments:
        dist = np.minimum(dist, _segment_distance(px, py, x0, y0, x1, y1))
    for r in circles:
        dist = np.minimum(dist, np.abs(np.hypot(px, py) - r))
    return dist <= _HALF_WIDTH, extent


def _render(segments, circles, centers, resolution):
    """Boolean occupancy masks, shape (frames, H, W), for a shape at each center."""
    H, W = resolution
    grid, extent = _occupancy_grid(segments, circles)
    n = grid.shape[0]
    iu = np.rint((np.arange(W)[None, :] - centers[:, :1] + extent) * _FINE).astype(np.int64)  # (F, W)
    iv = np.rint((np.arange(H)[None, :] - centers[:, 1:] + extent) * _FINE).astype(np.int64)  # (F, H)
    ok_u, ok_v = (iu >= 0) & (iu < n), (iv >= 0) & (iv < n)
    masks = grid[np.clip(iv, 0, n - 1)[:, :, None], np.clip(iu, 0, n - 1)[:, None, :]]
    return masks & ok_v[:, :, None] & ok_u[:, None, :]


def _trajectory(rng, resolution, duration):
    H, W = resolution
    times = np.arange(0, duration + 1, _STEP_US, dtype=np.int64)
    c0 = np.array([(W - 1) / 2, (H - 1) / 2]) + rng.uniform(-3, 3, size=2)
    radius = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    direction = rng.choice([-1.0, 1.0])
    period = rng.uniform(80_000, 120_000)
    ang = phase + direction * 2 * np.pi * times / period
    centers = c0 + radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return times, centers


def _edge_events(masks, times, rng):
    """Emit events for every pixel whose occupancy flips between frames."""
    change = masks[1:].astype(np.int8) - masks[:-1].astype(np.int8)
    f, y, x = np.nonzero(change)
    p = change[f, y, x].astype(np.int64)
    t = times[f] + rng.integers(0, _STEP_US, size=len(f))
    order = np.argsort(t, kind="stable")
    return x[order], y[order], t[order], p[order]


def _scaled(shape, scale, rotation):
    c, s = np.cos(rotation), np.sin(rotation)

    def tf(pt):
        x, y = pt
        return (scale * (c * x - s * y), scale * (s * x + c * y))

    segs = [(tf(a), tf(b)) for a, b in shape.get("segments", [])]
    circles = [scale * r for r in shape.get("circles", [])]
    return segs, circles


def _apply_shift(stream: EventStream, shift: ShiftSpec, rng) -> EventStream:
    x, y, t, p = stream.x, stream.y, stream.t, stream.p
    lo, hi = stream.window
    if shift.speed_factor != 1.0:
        t = lo + np.floor((t - lo) / shift.speed_factor).astype(np.int64)
        hi = lo + int(np.floor((hi - lo) / shift.speed_factor))
    if shift.drop_rate > 0:
        keep = rng.random(len(t)) >= shift.drop_rate
        x, y, t, p = x[keep], y[keep], t[keep], p[keep]
    out = EventStream(x, y, t, p, stream.resolution, stream.label, (lo, hi), _validated=True)
    if shift.burst_polarity is not BurstPolarity.NONE and shift.burst_rate > 0:
        return inject_noise_burst(out, shift.burst_polarity, shift.burst_rate, rng)
    return out, np.zeros(len(out), dtype=bool)


def _render_stream(segments, circles, shift, resolution, duration, rng, label, return_noise_mask):
    times, centers = _trajectory(rng, resolution, duration)
    masks = _render(segments, circles, centers, resolution)
    x, y, t, p = _edge_events(masks, times, rng)
    base = EventStream(x, y, t, p, resolution, label, (0, int(duration)), _validated=True)
    out, noise = _apply_shift(base, shift, rng)
    return (out, noise) if return_noise_mask else out


def synth_scene(class_id: int, shift: ShiftSpec | None = None, resolution=DEFAULT_RESOLUTION,
                duration: int = DEFAULT_DURATION, seed=None, return_noise_mask: bool = False):
    """Render a labelled stream of class ``class_id`` under ``shift``.

    Deterministic given ``seed``. Shift order: time compression, Bernoulli
    event dropping, then noise-burst injection over the compressed window.
    With ``return_noise_mask`` the result is ``(stream, injected_mask)``.
    """
    if class_id not in SHAPES:
        raise ValueError(f"class_id must be in 0..{NUM_CLASSES - 1}, got {class_id}")
    shift = shift or ShiftSpec()
    rng = np.random.default_rng(seed)
    H, W = resolution
    size = min(H, W) * rng.uniform(*_SIZE_RANGE)
    segs, circles = _scaled(SHAPES[class_id], size, rng.normal(0.0, 0.05))
    return _render_stream(segs, circles, shift, resolution, duration, rng, class_id, return_noise_mask)


def synth_angle_scene(angle: float, shift: ShiftSpec | None = None, resolution=DEFAULT_RESOLUTION,
                      duration: int = DEFAULT_DURATION, seed=None, return_noise_mask: bool = False):
    """A single drifting bar tilted by ``angle`` radians; the regression target."""
    shift = shift or ShiftSpec()
    rng = np.random.default_rng(seed)
    H, W = resolution
    size = min(H, W) * rng.uniform(*_SIZE_RANGE)
    segs, circles = _scaled(SHAPES[0], size, angle)
    return _render_stream(segs, circles, shift, resolution, duration, rng, None, return_noise_mask)


def inject_noise_burst(stream: EventStream, polarity, rate: float, seed=None):
    """Add uniform single-polarity noise; return ``(stream, injected_mask)``.

    ``rate`` is the expected number of injected events per pixel over the
    stream's time range, so the injected count is Poisson(rate * H * W).
    """
    if rate < 0:
        raise ValueError("rate must be non-negative")
    sign = BurstPolarity(polarity).sign if not isinstance(polarity, int) else int(polarity)
    if rate == 0 or sign == 0:
        return stream, np.zeros(len(stream), dtype=bool)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    H, W = stream.resolution
    lo, hi = stream.time_range
    n = int(rng.poisson(rate * H * W))
    nx = rng.integers(0, W, size=n)
    ny = rng.integers(0, H, size=n)
    nt = rng.integers(max(lo, 0), max(hi, lo, 0), size=n, endpoint=True)
    x = np.concatenate([stream.x, nx])
    y = np.concatenate([stream.y, ny])
    t = np.concatenate([stream.t, nt])
    p = np.concatenate([stream.p, np.full(n, sign, dtype=np.int64)])
    mask = np.concatenate([np.zeros(len(stream), dtype=bool), np.ones(n, dtype=bool)])
    order = np.argsort(t, kind="stable")
    out = EventStream(x[order], y[order], t[order], p[order], stream.resolution, stream.label,
                      stream.window, _validated=True)
    return out, mask[order]
