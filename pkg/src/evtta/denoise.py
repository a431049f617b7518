"""Polarity-burst detection and spatial-consistency masking.

A burst is detected by transforming the per-sample ratio of active positive
to active negative pixels with source-domain statistics so that it should be
standard normal, then z-testing the batch mean against a threshold offset.
Bursty channels are cleaned by dropping pixels that have no opposite-polarity
activity nearby.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .representations import NEG, POS, RepTensor, rep_stats


class FormulaMode(str, Enum):
    AS_PRINTED = "as-printed"
    GEARY_HINKLEY = "geary-hinkley"


class Verdict(str, Enum):
    CLEAN = "clean"
    POS_BURST = "pos_burst"
    NEG_BURST = "neg_burst"


@dataclass(frozen=True)
class RatioStats:
    mu_pos: float
    mu_neg: float
    sigma_pos: float
    sigma_neg: float
    rho: float

    def __post_init__(self):
        if not (self.sigma_pos > 0 and self.sigma_neg > 0):
            raise ValueError("ratio statistics need positive standard deviations")
        if not abs(self.rho) <= 1:
            raise ValueError(f"correlation {self.rho} outside [-1, 1]")
        if not self.mu_neg > 0:
            raise ValueError("mu_neg must be positive")

    def to_json(self) -> str:
        # repr-precision floats so a reload is bit-equal
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RatioStats":
        d = json.loads(text)
        return cls(**{k: float(d[k]) for k in ("mu_pos", "mu_neg", "sigma_pos", "sigma_neg", "rho")})


@dataclass(frozen=True)
class HypothesisConfig:
    mu_thres: float = 0.25
    cdf_hi: float = 0.9
    formula_mode: FormulaMode = FormulaMode.GEARY_HINKLEY

    def __post_init__(self):
        object.__setattr__(self, "formula_mode", FormulaMode(self.formula_mode))
        if not self.mu_thres > 0:
            raise ValueError("mu_thres must be positive")
        if not 0.5 < self.cdf_hi < 1:
            raise ValueError("cdf_hi must lie in (0.5, 1)")

    @property
    def cdf_lo(self) -> float:
        return 1.0 - self.cdf_hi


@dataclass(frozen=True)
class BurstVerdict:
    verdict: Verdict
    z_statistic: float
    batch_mean: float = float("nan")
    batch_std: float = float("nan")

    @property
    def noisy_channel(self) -> str | None:
        return {Verdict.POS_BURST: "pos", Verdict.NEG_BURST: "neg"}.get(self.verdict)


def std_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _counts(source) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(source, tuple) and len(source) == 2 and not isinstance(source[0], RepTensor):
        return np.asarray(source[0], dtype=np.float64), np.asarray(source[1], dtype=np.float64)
    if isinstance(source, np.ndarray):
        n_pos, n_neg = rep_stats(source)
    else:
        pairs = np.array([rep_stats(r) for r in source], dtype=np.float64).reshape(-1, 2)
        n_pos, n_neg = pairs[:, 0], pairs[:, 1]
    return np.asarray(n_pos, dtype=np.float64), np.asarray(n_neg, dtype=np.float64)


def fit_ratio_stats(source) -> RatioStats:
    """Fit count statistics from source representations.

    ``source`` is a sequence of RepTensors, an ``(N, H, W, 2)`` array, or a
    pair of count arrays ``(n_pos, n_neg)``.
    """
    n_pos, n_neg = _counts(source)
    if n_pos.size < 2:
        raise ValueError(f"need at least 2 source samples, got {n_pos.size}")
    if np.any(n_neg <= 0):
        raise ValueError("every source sample must contain negative events")
    s_pos, s_neg = n_pos.std(ddof=1), n_neg.std(ddof=1)
    if s_pos == 0 or s_neg == 0:
        raise ValueError("zero variance in source counts; cannot fit ratio statistics")
    rho = float(np.corrcoef(n_pos, n_neg)[0, 1])
    return RatioStats(float(n_pos.mean()), float(n_neg.mean()), float(s_pos), float(s_neg),
                      float(np.clip(rho, -1.0, 1.0)))


def _radicand(r, stats: RatioStats, mode: FormulaMode):
    cross = 2 * stats.rho * stats.sigma_pos * stats.sigma_neg * r
    if mode is FormulaMode.AS_PRINTED:
        return stats.sigma_pos ** 2 * r ** 2 - cross + stats.sigma_neg ** 2 * r ** 2
    return stats.sigma_pos ** 2 - cross + stats.sigma_neg ** 2 * r ** 2


def transform_ratio(R, stats: RatioStats, mode=FormulaMode.GEARY_HINKLEY):
    """Map ``R = N_pos / N_neg`` to an (ideally) standard normal statistic."""
    mode = FormulaMode(mode)
    R = np.asarray(R, dtype=np.float64)
    rad = _radicand(R, stats, mode)
    if np.any(rad <= 0):
        raise ValueError(f"non-positive radicand for {stats} in {mode.value} mode")
    out = (stats.mu_neg * R - stats.mu_pos) / np.sqrt(rad)
    return float(out) if out.ndim == 0 else out


def transform_counts(n_pos, n_neg, stats: RatioStats, mode=FormulaMode.GEARY_HINKLEY):
    """``transform_ratio(n_pos / n_neg)`` evaluated without dividing.

    Numerator and denominator are both scaled by ``n_neg`` (the radicand
    by its square), which leaves the value unchanged and stays finite when
    ``n_neg`` is zero. An anchor with no activity at all maps to 0.
    """
    mode = FormulaMode(mode)
    a = np.asarray(n_pos, dtype=np.float64)
    b = np.asarray(n_neg, dtype=np.float64)
    cross = 2 * stats.rho * stats.sigma_pos * stats.sigma_neg * a * b
    if mode is FormulaMode.AS_PRINTED:
        rad = (stats.sigma_pos ** 2 + stats.sigma_neg ** 2) * a ** 2 - cross
    else:
        rad = stats.sigma_pos ** 2 * b ** 2 - cross + stats.sigma_neg ** 2 * a ** 2
    num = stats.mu_neg * a - stats.mu_pos * b
    empty = (a == 0) & (b == 0)
    if np.any((rad <= 0) & ~empty):
        raise ValueError(f"non-positive radicand for {stats} in {mode.value} mode")
    out = np.where(empty, 0.0, num / np.sqrt(np.where(empty, 1.0, rad)))
    return float(out) if out.ndim == 0 else out


def z_test(values, config: HypothesisConfig = HypothesisConfig()) -> BurstVerdict:
    """One-tailed z-tests of the batch mean of transformed ratios against +/- mu_thres."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ValueError(f"burst test needs a batch of at least 2, got {n}")
    mean, std = float(v.mean()), float(v.std(ddof=1))
    if std == 0:
        raise ValueError("zero batch standard deviation of transformed ratios")
    z_pos = math.sqrt(n) * abs(mean - config.mu_thres) / std
    z_neg = math.sqrt(n) * abs(mean + config.mu_thres) / std
    if mean > config.mu_thres and std_normal_cdf(z_pos) > config.cdf_hi:
        return BurstVerdict(Verdict.POS_BURST, z_pos, mean, std)
    if mean < -config.mu_thres and std_normal_cdf(z_neg) > config.cdf_hi:
        return BurstVerdict(Verdict.NEG_BURST, z_neg, mean, std)
    z = math.sqrt(n) * mean / std
    return BurstVerdict(Verdict.CLEAN, z, mean, std)


def detect_burst(anchors, stats: RatioStats, config: HypothesisConfig = HypothesisConfig()) -> BurstVerdict:
    """Decide whether a batch of anchor representations carries a polarity burst."""
    n_pos, n_neg = _counts(anchors)
    return z_test(transform_counts(n_pos, n_neg, stats, config.formula_mode), config)


def _as_data(rep):
    return (rep.data, True) if isinstance(rep, RepTensor) else (np.asarray(rep), False)


def spatial_mask(rep, noisy_channel: str, radius: int = 1):
    """Zero noisy-channel pixels with no opposite-channel activity within ``radius``.

    Accepts a RepTensor, an ``(H, W, 2)`` array or an ``(N, H, W, 2)`` batch.
    Distance is Chebyshev, so radius 1 is the 8-neighbourhood plus the pixel itself.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    data, wrapped = _as_data(rep)
    noisy = {"pos": POS, "neg": NEG}[noisy_channel]
    other = NEG if noisy == POS else POS
    support = data[..., other] != 0
    size = [1] * (support.ndim - 2) + [2 * radius + 1, 2 * radius + 1]
    near = ndimage.maximum_filter(support, size=size, mode="constant", cval=False)
    out = data.copy()
    out[..., noisy] = np.where(near, data[..., noisy], 0.0)
    return RepTensor(out, rep.kind, rep.resolution) if wrapped else out


def conditional_denoise(anchors, stats: RatioStats, config: HypothesisConfig = HypothesisConfig(),
                        radius: int = 1):
    """Mask the bursty channel of every anchor when the batch test fires.

    ``anchors`` is an ``(N, H, W, 2)`` array or a list of RepTensors; returns
    ``(denoised, verdict)`` in the same container type. A clean batch is
    returned as the identical object.
    """
    verdict = detect_burst(anchors, stats, config)
    if verdict.verdict is Verdict.CLEAN:
        return anchors, verdict
    channel = verdict.noisy_channel
    if isinstance(anchors, np.ndarray):
        return spatial_mask(anchors, channel, radius), verdict
    return [spatial_mask(a, channel, radius) for a in anchors], verdict
