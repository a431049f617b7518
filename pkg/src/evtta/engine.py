"""Test-time adaptation loop: slicing, anchor choice, conditional denoising,
consistency losses, BN-only Adam steps, and the offline/online protocols.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from . import losses as L
from .denoise import FormulaMode, HypothesisConfig, RatioStats, Verdict, conditional_denoise
from .events import EventStream, latest_window, random_slices
from .nn import AdamState, Model, adam_step
from .representations import RepKind, RepParams, build

log = logging.getLogger(__name__)


class BaselineMode(str, Enum):
    EVTTA = "evtta"
    TENT = "tent"
    NONE = "none"


class AnchorPolicy(str, Enum):
    RANDOM = "random"
    MIN_ENTROPY = "min_entropy"
    MAJORITY_VOTE = "majority_vote"


class Protocol(str, Enum):
    OFFLINE = "offline"
    ONLINE = "online"


@dataclass(frozen=True)
class AdaptConfig:
    K: int = 4
    window: int = 10_000
    anchor_policy: AnchorPolicy = AnchorPolicy.RANDOM
    inconsistency_policy: L.InconsistencyPolicy = L.InconsistencyPolicy.IGNORE
    baseline_mode: BaselineMode = BaselineMode.EVTTA
    denoise: bool = True
    lr: float = 1e-3
    batch_size: int = 128
    seed: int = 0
    protocol: Protocol = Protocol.OFFLINE
    representation: RepKind = RepKind.TIMESTAMP_IMAGE
    rep_params: RepParams = field(default_factory=RepParams)
    hypothesis: HypothesisConfig = field(default_factory=HypothesisConfig)
    denoise_radius: int = 1
    similarity_loss: bool = True

    def __post_init__(self):
        for name, enum in (("anchor_policy", AnchorPolicy), ("inconsistency_policy", L.InconsistencyPolicy),
                           ("baseline_mode", BaselineMode), ("protocol", Protocol)):
            object.__setattr__(self, name, enum(getattr(self, name)))
        object.__setattr__(self, "representation", RepKind.parse(self.representation))
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    def with_(self, **kw) -> "AdaptConfig":
        return replace(self, **kw)


@dataclass
class LossReport:
    l_ps: float = 0.0
    l_se: float = 0.0
    total: float = 0.0
    consistent_fraction: float = 0.0
    verdict: Verdict = Verdict.CLEAN
    anchor_predictions: Optional[np.ndarray] = None
    denoised_anchors: Optional[np.ndarray] = None


@dataclass
class RunResult:
    model: Model
    accuracy: float = float("nan")
    rmse: float = float("nan")
    metrics: list[dict] = field(default_factory=list)

    def __iter__(self):
        # unpacks as (model, score) like the functional signatures
        yield self.model
        yield self.rmse if np.isnan(self.accuracy) else self.accuracy


METRIC_COLUMNS = ("batch_index", "l_ps", "l_se", "total", "consistent_fraction", "burst_verdict", "running_accuracy")


def batch_indices(n: int, batch_size: int) -> list[np.ndarray]:
    """Contiguous batches; a trailing single sample joins the previous batch."""
    bounds = list(range(0, n, batch_size)) + [n]
    batches = [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    if len(batches) > 1 and len(batches[-1]) < 2:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def choose_anchor(outputs: np.ndarray, policy: AnchorPolicy, rng: np.random.Generator) -> int:
    """Pick the anchor slice for one sample from its ``(K, C)`` predictions."""
    K = len(outputs)
    if policy is AnchorPolicy.RANDOM:
        return int(rng.integers(K))
    if policy is AnchorPolicy.MIN_ENTROPY:
        return int(np.argmin([L.entropy(p / p.sum()) for p in outputs]))
    votes = outputs.argmax(axis=1)
    labels, counts = np.unique(votes, return_counts=True)
    winner = labels[np.argmax(counts)]  # ties go to the smallest label
    return int(np.flatnonzero(votes == winner)[0])


class Adapter:
    """Holds the model, optimizer state and RNG across adaptation batches."""

    def __init__(self, model: Model, config: AdaptConfig, stats: RatioStats | None = None):
        self.model = model
        self.config = config
        self.stats = stats
        self.state = AdamState.for_model(model, "bn", config.lr)
        self.rng = np.random.default_rng(config.seed)

    @property
    def adaptive(self) -> bool:
        return self.config.baseline_mode is not BaselineMode.NONE

    @property
    def denoising(self) -> bool:
        return self.config.denoise and self.stats is not None

    def _rep(self, stream: EventStream) -> np.ndarray:
        return build(stream, self.config.representation, self.config.rep_params).data

    def _denoise(self, anchors: np.ndarray):
        if not self.denoising or len(anchors) < 2:
            return anchors, Verdict.CLEAN
        out, verdict = conditional_denoise(anchors, self.stats, self.config.hypothesis, self.config.denoise_radius)
        return out, verdict.verdict

    def slice_reps(self, streams: Sequence[EventStream]) -> np.ndarray:
        cfg = self.config
        return np.stack([
            np.stack([self._rep(s) for s in random_slices(stream, cfg.K, cfg.window, self.rng).slices])
            for stream in streams
        ])

    def pick_anchors(self, reps: np.ndarray) -> np.ndarray:
        N, K = reps.shape[:2]
        policy = self.config.anchor_policy
        if policy is AnchorPolicy.RANDOM or self.config.baseline_mode is BaselineMode.TENT:
            return self.rng.integers(K, size=N)
        self.model.train()
        outs = self.model.forward(reps.reshape(N * K, *reps.shape[2:]), update_stats=False).reshape(N, K, -1)
        if self.model.head == "gaussian":
            # lowest predicted variance plays the role of lowest entropy
            return outs[..., 1].argmin(axis=1) if policy is AnchorPolicy.MIN_ENTROPY else self.rng.integers(K, size=N)
        return np.array([choose_anchor(o, policy, self.rng) for o in outs])

    def step(self, streams: Sequence[EventStream]) -> LossReport:
        """One loss evaluation and one BN-only Adam step on a batch of streams."""
        cfg = self.config
        if not self.adaptive:
            return LossReport()
        reps = self.slice_reps(streams)
        N, K = reps.shape[:2]
        anchors = self.pick_anchors(reps)
        rows = np.arange(N)
        clean, verdict = self._denoise(reps[rows, anchors])
        reps[rows, anchors] = clean

        self.model.train()
        if cfg.baseline_mode is BaselineMode.TENT:
            out = self.model.forward(clean)
            pred = out.copy()
            report, grad = self._tent_loss(out)
        else:
            # the sample's prediction comes from its anchor normalised with anchor-batch
            # statistics, like scoring; the K-slice pass mixes in the undenoised slices
            pred = self.model.forward(clean, update_stats=False)
            out = self.model.forward(reps.reshape(N * K, *reps.shape[2:])).reshape(N, K, -1)
            report, grad = self._consistency_loss(out, anchors)
            grad = grad.reshape(N * K, -1)
        grads = self.model.backward(grad)
        adam_step(self.model, grads, self.state, "bn")
        report.verdict = verdict
        report.anchor_predictions = pred
        report.denoised_anchors = clean
        return report

    def _tent_loss(self, out):
        N = len(out)
        if self.model.head == "gaussian":
            vals = [L.gaussian_entropy(o) for o in out]
            grad = np.array([L.gaussian_entropy_grad(o) for o in out]) / N
        else:
            vals = [L.entropy(p / p.sum()) for p in out]
            grad = L.entropy_grad(out) / N
        l_se = float(np.mean(vals))
        return LossReport(0.0, l_se, l_se, 1.0), grad

    def _consistency_loss(self, out, anchors):
        cfg = self.config
        N = len(out)
        gaussian = self.model.head == "gaussian"
        grad = np.zeros_like(out)
        ps_total = se_total = 0.0
        n_consistent = 0
        for i in range(N):
            a = int(anchors[i])
            o = out[i]
            if gaussian:
                ps = L.gaussian_similarity_loss(o, a) if cfg.similarity_loss else 0.0
                g = L.gaussian_similarity_grad(o, a) if cfg.similarity_loss else np.zeros_like(o)
                consistent = L.variance_consistency(o, a)
                if consistent:
                    se, g_se = L.gaussian_entropy(o[a]), L.gaussian_entropy_grad(o[a])
                elif cfg.inconsistency_policy is L.InconsistencyPolicy.MAXIMIZE:
                    se, g_se = -L.gaussian_entropy(o[a]), -L.gaussian_entropy_grad(o[a])
                else:
                    se, g_se = 0.0, np.zeros(2)
            else:
                ps = L.prediction_similarity_loss(o, a) if cfg.similarity_loss else 0.0
                g = L.prediction_similarity_grad(o, a) if cfg.similarity_loss else np.zeros_like(o)
                vote = L.consistency_vote(o, a)
                consistent = vote.consistent
                pa = o[a] / o[a].sum()
                se = L.selective_entropy_loss(pa, vote, cfg.inconsistency_policy)
                g_se = L.selective_entropy_grad(o[a], vote, cfg.inconsistency_policy)
            g[a] = g[a] + g_se
            grad[i] = g
            ps_total += ps
            se_total += se
            n_consistent += int(consistent)
        l_ps, l_se = ps_total / N, se_total / N
        return LossReport(l_ps, l_se, l_ps + l_se, n_consistent / N), grad / N

    def score(self, streams: Sequence[EventStream]) -> np.ndarray:
        """Outputs for the latest window of each stream, without adapting.

        Adapted models normalise with the batch's own statistics and see
        conditionally denoised inputs; the no-adaptation baseline runs in
        eval mode on raw inputs.
        """
        reps = np.stack([self._rep(latest_window(s, self.config.window)) for s in streams])
        if not self.adaptive:
            self.model.eval()
            return self.model.forward(reps, update_stats=False)
        reps, _ = self._denoise(reps)
        self.model.train()
        return self.model.forward(reps, update_stats=False)


def adapt_batch(model: Model, streams: Sequence[EventStream], config: AdaptConfig,
                stats: RatioStats | None = None, adapter: Adapter | None = None):
    """Single adaptation step; returns ``(model, LossReport)``.

    Pass a persistent ``adapter`` to keep Adam moments and the RNG across
    calls; without one a fresh optimizer state is created.
    """
    adapter = adapter or Adapter(model, config, stats)
    return adapter.model, adapter.step(streams)


def _labels(streams, labels):
    if labels is not None:
        return np.asarray(labels)
    if any(s.label is None for s in streams):
        raise ValueError("streams carry no labels and none were given")
    return np.array([s.label for s in streams])


def _order(n, config):
    return np.random.default_rng([config.seed, 0x5EED]).permutation(n)


def _metric_row(i, report: LossReport, correct, seen):
    return {"batch_index": i, "l_ps": report.l_ps, "l_se": report.l_se, "total": report.total,
            "consistent_fraction": report.consistent_fraction, "burst_verdict": report.verdict.value,
            "running_accuracy": correct / max(seen, 1)}


def evaluate(model: Model, streams, config: AdaptConfig, labels=None, stats=None) -> float:
    """Plain accuracy of ``model`` on the latest window of every stream."""
    y = _labels(streams, labels)
    adapter = Adapter(model, config.with_(baseline_mode=BaselineMode.NONE), stats)
    order = _order(len(streams), config)
    correct = 0
    for idx in batch_indices(len(order), config.batch_size):
        out = adapter.score([streams[j] for j in order[idx]])
        correct += int(np.sum(out.argmax(axis=1) == y[order[idx]]))
    return correct / len(streams)


def run_offline(model: Model, streams, config: AdaptConfig, stats=None, labels=None,
                eval_streams=None, eval_labels=None) -> RunResult:
    """Adapt over the whole target set once, then score it with the updated parameters.

    With ``eval_streams`` the adapted model scores that set instead of the
    adaptation set.
    """
    if len(streams) == 0:
        raise ValueError("empty target dataset")
    y = _labels(streams, labels)
    adapter = Adapter(model.copy(), config, stats)
    order = _order(len(streams), config)
    metrics, correct, seen = [], 0, 0
    for i, idx in enumerate(batch_indices(len(order), config.batch_size)):
        report = adapter.step([streams[j] for j in order[idx]])
        if report.anchor_predictions is not None:
            correct += int(np.sum(report.anchor_predictions.argmax(axis=1) == y[order[idx]]))
            seen += len(idx)
        metrics.append(_metric_row(i, report, correct, seen))
    if eval_streams is None:
        eval_streams, y_eval = streams, y
    else:
        y_eval = _labels(eval_streams, eval_labels)
    order = _order(len(eval_streams), config)
    correct = 0
    for idx in batch_indices(len(order), config.batch_size):
        out = adapter.score([eval_streams[j] for j in order[idx]])
        correct += int(np.sum(out.argmax(axis=1) == y_eval[order[idx]]))
    return RunResult(adapter.model, correct / len(eval_streams), metrics=metrics)


def run_online(model: Model, streams, config: AdaptConfig, stats=None, labels=None) -> RunResult:
    """Score each batch with the current parameters, then adapt on it; single pass."""
    if len(streams) == 0:
        raise ValueError("empty target dataset")
    y = _labels(streams, labels)
    adapter = Adapter(model.copy(), config, stats)
    order = _order(len(streams), config)
    metrics, correct, seen = [], 0, 0
    for i, idx in enumerate(batch_indices(len(order), config.batch_size)):
        batch = [streams[j] for j in order[idx]]
        if adapter.adaptive:
            report = adapter.step(batch)
            pred = report.anchor_predictions.argmax(axis=1)
        else:
            report = LossReport()
            pred = adapter.score(batch).argmax(axis=1)
        correct += int(np.sum(pred == y[order[idx]]))
        seen += len(idx)
        metrics.append(_metric_row(i, report, correct, seen))
    return RunResult(adapter.model, correct / len(streams), metrics=metrics)


def run(model: Model, streams, config: AdaptConfig, stats=None, labels=None) -> RunResult:
    fn = run_online if config.protocol is Protocol.ONLINE else run_offline
    return fn(model, streams, config, stats, labels)


def adapt_regression(model: Model, streams, targets, config: AdaptConfig, stats=None) -> RunResult:
    """Offline adaptation of a Gaussian-head regressor; reports RMSE of the mean."""
    if model.head != "gaussian":
        raise ValueError("adapt_regression needs a model with a Gaussian head")
    if len(streams) == 0:
        raise ValueError("empty target dataset")
    targets = np.asarray(targets, dtype=np.float64)
    adapter = Adapter(model.copy(), config, stats)
    order = _order(len(streams), config)
    batches = batch_indices(len(order), config.batch_size)
    metrics = []
    for i, idx in enumerate(batches):
        report = adapter.step([streams[j] for j in order[idx]])
        metrics.append(_metric_row(i, report, 0, 0))
    sq = 0.0
    for idx in batches:
        out = adapter.score([streams[j] for j in order[idx]])
        sq += float(np.sum((out[:, 0] - targets[order[idx]]) ** 2))
    return RunResult(adapter.model, rmse=float(np.sqrt(sq / len(streams))), metrics=metrics)
