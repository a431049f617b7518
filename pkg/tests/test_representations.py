import math

import numpy as np
import pytest
from hypothesis import given

from conftest import random_stream, streams
from evtta.events import EventStream, ShiftSpec, flip_horizontal, flip_polarity, latest_window
from evtta.representations import (
    ALL_KINDS,
    RepKind,
    RepParams,
    RepTensor,
    build,
    build_array,
    rep_stats,
)
from evtta.synth import synth_scene


def one_event(x, y, t, p, res=(6, 6)):
    return EventStream([x], [y], [t], [p], res)


def test_single_event_binary_image():
    r = build(one_event(2, 3, 100, 1), RepKind.BINARY_EVENT_IMAGE)
    assert r.data.shape == (6, 6, 2)
    assert r.data.sum() == 1
    assert r.pos[3, 2] == 1  # row y=3, column x=2


def test_histogram_counts_repeated_events():
    s = EventStream([1, 1, 1], [4, 4, 4], [0, 5, 9], [-1, -1, -1], (6, 6))
    r = build(s, RepKind.EVENT_HISTOGRAM)
    assert r.neg[4, 1] == 3
    assert r.data.sum() == 3


def test_sorted_time_surface_two_pixels():
    s = EventStream([0, 3], [0, 2], [10, 20], [1, 1], (4, 4))
    r = build(s, RepKind.SORTED_TIME_SURFACE)
    assert r.pos[0, 0] == 0.5
    assert r.pos[2, 3] == 1.0
    assert np.count_nonzero(r.data) == 2


def test_time_surface_values():
    s = EventStream([0, 1], [0, 0], [0, 3000], [1, 1], (2, 2), window=(0, 3000))
    r = build(s, RepKind.TIME_SURFACE, RepParams(tau=3000.0))
    assert r.pos[0, 1] == 1.0
    assert r.pos[0, 0] == pytest.approx(math.exp(-1), abs=1e-12)


def test_time_surface_default_tau_is_third_of_window():
    s = EventStream([0, 1], [0, 0], [0, 9000], [1, 1], (2, 2), window=(0, 9000))
    assert build(s, RepKind.TIME_SURFACE).pos[0, 0] == pytest.approx(math.exp(-3))


def test_timestamp_image_normalisation_and_degenerate_span():
    s = EventStream([0, 1, 2], [0, 0, 0], [100, 150, 200], [1, -1, 1], (1, 3))
    r = build(s, RepKind.TIMESTAMP_IMAGE)
    assert r.pos[0, 2] == 1.0 and r.neg[0, 1] == 0.5 and r.pos[0, 0] == 0.0
    same = EventStream([0, 2], [0, 0], [7, 7], [1, -1], (1, 3))
    d = build(same, RepKind.TIMESTAMP_IMAGE)
    assert d.pos[0, 0] == 1.0 and d.neg[0, 2] == 1.0 and d.data.sum() == 2


def test_timestamp_uses_latest_event_per_pixel():
    s = EventStream([0, 0, 1], [0, 0, 0], [0, 80, 100], [1, 1, 1], (1, 2))
    assert build(s, RepKind.TIMESTAMP_IMAGE).pos[0, 0] == pytest.approx(0.8)


def test_dist_zeroes_isolated_pixels():
    # a 2x2 block of active pixels plus one isolated pixel far away
    xs, ys = [0, 1, 0, 1, 6], [0, 0, 1, 1, 6]
    s = EventStream(xs, ys, [1, 2, 3, 4, 5], [1, 1, -1, 1, 1], (8, 8))
    sts = build(s, RepKind.SORTED_TIME_SURFACE)
    dist = build(s, RepKind.DIST, RepParams(radius=1, min_neighbors=2))
    assert sts.pos[6, 6] > 0 and dist.pos[6, 6] == 0
    block = np.s_[0:2, 0:2]
    assert np.array_equal(dist.data[block], sts.data[block])


def test_dist_with_zero_threshold_equals_sorted_surface(rng):
    s = random_stream(rng, 80)
    np.testing.assert_array_equal(build(s, "dist", RepParams(min_neighbors=0)).data, build(s, "sorted").data)


def test_empty_stream_gives_zeros():
    for kind in ALL_KINDS:
        r = build(EventStream.empty((3, 5)), kind)
        assert r.data.shape == (3, 5, 2) and not r.data.any()


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        build(EventStream.empty((2, 2)), "voxel_grid")


def test_params_validation():
    with pytest.raises(ValueError):
        RepParams(tau=0)
    with pytest.raises(ValueError):
        RepParams(radius=0)
    with pytest.raises(ValueError):
        RepParams(min_neighbors=-1)


def test_kind_aliases():
    assert RepKind.parse("binary") is RepKind.BINARY_EVENT_IMAGE
    assert RepKind.parse("time-surface") is RepKind.TIME_SURFACE
    assert RepKind.parse(RepKind.DIST) is RepKind.DIST


def test_rep_stats_examples():
    assert rep_stats(RepTensor(np.zeros((4, 4, 2)), RepKind.BINARY_EVENT_IMAGE, (4, 4))) == (0, 0)
    assert rep_stats(build(one_event(1, 1, 5, 1), "binary")) == (1, 0)


def test_rep_stats_batch(rng):
    ss = [random_stream(rng, 40) for _ in range(3)]
    batch = build_array(ss, "histogram")
    n_pos, n_neg = rep_stats(batch)
    assert list(zip(n_pos, n_neg)) == [rep_stats(build(s, "histogram")) for s in ss]


def test_rep_stats_match_injection_mask():
    s, mask = synth_scene(6, ShiftSpec(1.0, "neg", 2.0), seed=8, return_noise_mask=True)
    n_pos, n_neg = rep_stats(build(s, "binary"))
    assert n_neg > 1.5 * n_pos
    noise_pixels = {(int(y), int(x)) for x, y in zip(s.x[mask], s.y[mask])}
    signal_neg = {(int(y), int(x)) for x, y, p, m in zip(s.x, s.y, s.p, mask) if p < 0 and not m}
    assert n_neg == len(noise_pixels | signal_neg)


def test_rep_tensor_bytes_round_trip(rng):
    r = build(random_stream(rng, 50), "time_surface")
    back = RepTensor.from_bytes(r.to_bytes())
    assert back.kind is r.kind and back.resolution == r.resolution
    np.testing.assert_allclose(back.data, r.data, rtol=1e-6)


# invariants ----------------------------------------------------------------------


@given(streams())
def test_histogram_sums_match_polarity_counts(s):
    r = build(s, "histogram")
    assert r.pos.sum() == np.sum(s.p == 1)
    assert r.neg.sum() == np.sum(s.p == -1)


@given(streams())
def test_value_ranges(s):
    b = build(s, "binary").data
    assert set(np.unique(b)) <= {0.0, 1.0}
    for kind in (RepKind.TIMESTAMP_IMAGE, RepKind.TIME_SURFACE, RepKind.SORTED_TIME_SURFACE, RepKind.DIST):
        d = build(s, kind).data
        assert np.all(np.isfinite(d)) and d.min() >= 0 and d.max() <= 1


@given(streams(min_events=1))
def test_sorted_surface_values_are_rank_fractions(s):
    r = build(s, "sorted")
    for ch in (0, 1):
        vals = np.sort(r.data[..., ch][r.data[..., ch] > 0])
        n = vals.size
        np.testing.assert_allclose(vals, np.arange(1, n + 1) / max(n, 1))


@given(streams())
def test_flip_horizontal_mirrors_counting_kinds(s):
    for kind in (RepKind.BINARY_EVENT_IMAGE, RepKind.EVENT_HISTOGRAM):
        np.testing.assert_array_equal(build(flip_horizontal(s), kind).data, build(s, kind).data[:, ::-1, :])


@given(streams())
def test_flip_polarity_swaps_channels(s):
    for kind in ALL_KINDS:
        np.testing.assert_array_equal(build(flip_polarity(s), kind).data, build(s, kind).data[..., ::-1])


def test_latest_window_time_surface_reference(rng):
    s = random_stream(rng, 300)
    w = latest_window(s, 10_000)
    r = build(w, "time_surface")
    # the newest event sits at the window end and scores exactly 1
    assert r.data.max() == 1.0
