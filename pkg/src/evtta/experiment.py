"""Experiment plumbing: configs, synthetic datasets on disk, source training,
adaptation grids, sample-count sweeps and denoiser evaluation.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .denoise import (
    FormulaMode,
    HypothesisConfig,
    RatioStats,
    Verdict,
    detect_burst,
    fit_ratio_stats,
    spatial_mask,
)
from .engine import METRIC_COLUMNS, AdaptConfig, BaselineMode, Protocol, adapt_regression, evaluate, run, run_offline
from .events import BurstPolarity, EventStream, ShiftSpec, latest_window, parse_events, random_slices, to_binary
from .nn import Model, build_classifier, build_regressor, train_source
from .representations import RepKind, RepParams, build, build_array, rep_stats
from .synth import DEFAULT_DURATION, DEFAULT_RESOLUTION, NUM_CLASSES, synth_angle_scene, synth_scene

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Preset:
    lr: float
    batch_size: int


PRESETS = {
    "large": Preset(0.00025, 64),
    "small": Preset(0.001, 128),
    "regression": Preset(0.000025, 64),
}

# speed x4 plus a negative burst that roughly triples the active negative pixels
DEFAULT_TARGET_SHIFT = ShiftSpec(speed_factor=4.0, burst_polarity=BurstPolarity.NEG, burst_rate=1.5)

SPLITS = ("source_train", "source_val", "target")
_SPLIT_CODE = {"source_train": 0, "source_val": 1, "target": 2}
ANGLE_RANGE = (-np.pi / 3, np.pi / 3)


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "classification"
    representation: RepKind = RepKind.TIMESTAMP_IMAGE
    rep_params: RepParams = field(default_factory=RepParams)
    widths: tuple[int, ...] = (16, 32)
    num_classes: int = NUM_CLASSES
    resolution: tuple[int, int] = DEFAULT_RESOLUTION
    duration: int = DEFAULT_DURATION
    train_per_class: int = 200
    val_per_class: int = 30
    target_per_class: int = 50
    source_shift: ShiftSpec = field(default_factory=ShiftSpec)
    target_shift: ShiftSpec = DEFAULT_TARGET_SHIFT
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    preset: str = "small"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    data_seed: int = 0
    train_epochs: int = 12
    train_lr: float = 1e-2
    train_cosine: bool = True
    train_batch_size: int = 64
    views_per_stream: int = 2
    baselines: tuple[str, ...] = ("none", "tent", "evtta")
    protocols: tuple[str, ...] = ("offline", "online")
    limit_samples: Optional[int] = None
    output_dir: str = "runs"

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"task must be classification or regression, got {self.task!r}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        object.__setattr__(self, "representation", RepKind.parse(self.representation))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        object.__setattr__(self, "baselines", tuple(BaselineMode(b).value for b in self.baselines))
        object.__setattr__(self, "protocols", tuple(Protocol(p).value for p in self.protocols))
        if self.limit_samples is not None and self.limit_samples < 1:
            raise ValueError("limit_samples must be positive")

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def adapt_config(self, seed: int = 0, **kw) -> AdaptConfig:
        """The adaptation config with the preset's lr and batch size applied."""
        p = PRESETS[self.preset]
        return self.adapt.with_(lr=p.lr, batch_size=p.batch_size, seed=seed, representation=self.representation,
                                rep_params=self.rep_params, **kw)

    def to_dict(self) -> dict:
        a = self.adapt
        return {
            "task": self.task,
            "representation": self.representation.value,
            "rep_params": asdict(self.rep_params),
            "widths": list(self.widths),
            "num_classes": self.num_classes,
            "resolution": list(self.resolution),
            "duration": self.duration,
            "train_per_class": self.train_per_class,
            "val_per_class": self.val_per_class,
            "target_per_class": self.target_per_class,
            "source_shift": self.source_shift.to_dict(),
            "target_shift": self.target_shift.to_dict(),
            "adapt": {
                "K": a.K, "window": a.window, "anchor_policy": a.anchor_policy.value,
                "inconsistency_policy": a.inconsistency_policy.value, "denoise": a.denoise,
                "formula_mode": a.hypothesis.formula_mode.value, "mu_thres": a.hypothesis.mu_thres,
                "cdf_hi": a.hypothesis.cdf_hi, "denoise_radius": a.denoise_radius,
            },
            "preset": self.preset,
            "seeds": list(self.seeds),
            "data_seed": self.data_seed,
            "train_epochs": self.train_epochs,
            "train_lr": self.train_lr,
            "train_cosine": self.train_cosine,
            "train_batch_size": self.train_batch_size,
            "views_per_stream": self.views_per_stream,
            "baselines": list(self.baselines),
            "protocols": list(self.protocols),
            "limit_samples": self.limit_samples,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "rep_params" in d:
            d["rep_params"] = RepParams(**d["rep_params"])
        for key in ("source_shift", "target_shift"):
            if key in d:
                d[key] = ShiftSpec.from_dict(d[key])
        if "adapt" in d:
            d["adapt"] = _adapt_from_dict(d["adapt"])
        for key in ("widths", "resolution", "seeds", "baselines", "protocols"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read config {path}: {exc}") from exc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path


def _adapt_from_dict(d: dict) -> AdaptConfig:
    d = dict(d)
    hyp = HypothesisConfig(
        mu_thres=d.pop("mu_thres", 0.25),
        cdf_hi=d.pop("cdf_hi", 0.9),
        formula_mode=FormulaMode(d.pop("formula_mode", FormulaMode.GEARY_HINKLEY.value)),
    )
    allowed = {"K", "window", "anchor_policy", "inconsistency_policy", "denoise", "denoise_radius",
               "baseline_mode", "protocol", "similarity_loss"}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown adapt keys: {sorted(unknown)}")
    return AdaptConfig(hypothesis=hyp, **d)


# datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    """Streams of one split plus labels or regression targets and noise masks."""

    streams: list[EventStream]
    labels: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None
    noise_masks: Optional[list[np.ndarray]] = None
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    def __len__(self):
        return len(self.streams)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            [self.streams[i] for i in idx],
            None if self.labels is None else self.labels[idx],
            None if self.targets is None else self.targets[idx],
            None if self.noise_masks is None else [self.noise_masks[i] for i in idx],
            self.shift,
        )


def _split_shift(config: ExperimentConfig, split: str) -> ShiftSpec:
    return config.target_shift if split == "target" else config.source_shift


def _split_count(config: ExperimentConfig, split: str) -> int:
    return {"source_train": config.train_per_class, "source_val": config.val_per_class,
            "target": config.target_per_class}[split]


def generate_split(config: ExperimentConfig, split: str, shift: ShiftSpec | None = None) -> Dataset:
    """Deterministically synthesise one split; each stream has its own seed."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    shift = shift or _split_shift(config, split)
    per_class = _split_count(config, split)
    code = _SPLIT_CODE[split]
    streams, masks, labels, targets = [], [], [], []
    if config.task == "classification":
        for c in range(config.num_classes):
            for i in range(per_class):
                s, m = synth_scene(c, shift, config.resolution, config.duration,
                                   seed=[config.data_seed, code, c, i], return_noise_mask=True)
                streams.append(s)
                masks.append(m)
                labels.append(c)
        return Dataset(streams, np.array(labels, dtype=np.int64), None, masks, shift)
    n = per_class * config.num_classes
    angles = np.random.default_rng([config.data_seed, code, 0xA6]).uniform(*ANGLE_RANGE, size=n)
    for i, a in enumerate(angles):
        s, m = synth_angle_scene(float(a), shift, config.resolution, config.duration,
                                 seed=[config.data_seed, code, 0, i], return_noise_mask=True)
        streams.append(s)
        masks.append(m)
        targets.append(a)
    return Dataset(streams, None, np.array(targets), masks, shift)


def write_dataset(ds: Dataset, directory) -> Path:
    """Write packed-binary event files, bit-packed noise masks and ``manifest.json``."""
    directory = Path(directory)
    try:
        (directory / "events").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {directory}: {exc}") from exc
    entries = []
    for i, stream in enumerate(ds.streams):
        name = f"events/{i:06d}.evt"
        blob = to_binary(stream)
        (directory / name).write_bytes(blob)
        entry = {"file": name, "sha256": hashlib.sha256(blob).hexdigest(), "window": list(stream.window)}
        if ds.labels is not None:
            entry["label"] = int(ds.labels[i])
        if ds.targets is not None:
            entry["target"] = float(ds.targets[i])
        if ds.noise_masks is not None:
            mask_name = f"events/{i:06d}.mask"
            (directory / mask_name).write_bytes(np.packbits(ds.noise_masks[i]).tobytes())
            entry["noise_mask"] = mask_name
        entries.append(entry)
    manifest = {"count": len(entries), "shift": ds.shift.to_dict(), "entries": entries}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"no dataset at {directory} (missing {manifest_path.name}); run gen-data first")
    manifest = json.loads(manifest_path.read_text())
    streams, labels, targets, masks = [], [], [], []
    for e in manifest["entries"]:
        path = directory / e["file"]
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise DatasetError(f"cannot read {path}: {exc}") from exc
        s = parse_events(blob, "binary", label=e.get("label"))
        streams.append(replace(s, window=tuple(e["window"])))
        if "label" in e:
            labels.append(e["label"])
        if "target" in e:
            targets.append(e["target"])
        if "noise_mask" in e:
            bits = np.frombuffer((directory / e["noise_mask"]).read_bytes(), dtype=np.uint8)
            masks.append(np.unpackbits(bits)[:len(s)].astype(bool))
    return Dataset(
        streams,
        np.array(labels, dtype=np.int64) if labels else None,
        np.array(targets) if targets else None,
        masks if masks else None,
        ShiftSpec.from_dict(manifest["shift"]),
    )


def limit(ds: Dataset, n: int | None, data_seed: int = 0) -> Dataset:
    """A stratified-random subset of ``n`` samples, kept in dataset order."""
    if n is None or n == len(ds):
        return ds
    if n < 1:
        raise ValueError("sample count must be positive")
    if n > len(ds):
        raise ValueError(f"sample count {n} exceeds the {len(ds)} available samples")
    perm = np.random.default_rng([data_seed, 0xC0DE]).permutation(len(ds))
    return ds.subset(np.sort(perm[:n]))


# source training --------------------------------------------------------------


@dataclass
class SourceModel:
    model: Model
    stats: RatioStats
    val_metric: float


def source_views(config: ExperimentConfig, ds: Dataset):
    """Random training windows per stream plus the matching labels or targets."""
    rng = np.random.default_rng([config.data_seed, 0x7EA1])
    window = config.adapt.window
    xs, ys = [], []
    truth = ds.labels if ds.labels is not None else ds.targets
    for s, y in zip(ds.streams, truth):
        for w in random_slices(s, max(config.views_per_stream, 2), window, rng).slices[:config.views_per_stream]:
            xs.append(build(w, config.representation, config.rep_params).data)
            ys.append(y)
    return np.stack(xs), np.asarray(ys)


def eval_inputs(config: ExperimentConfig, ds: Dataset) -> np.ndarray:
    window = config.adapt.window
    return build_array([latest_window(s, window) for s in ds.streams], config.representation, config.rep_params)


def train_source_model(config: ExperimentConfig, train: Dataset, val: Dataset, seed: int = 0) -> SourceModel:
    """Train on source windows and fit polarity-ratio statistics on them."""
    x, y = source_views(config, train)
    xv = eval_inputs(config, val)
    if config.task == "classification":
        model = build_classifier(config.num_classes, config.resolution, widths=config.widths, seed=seed)
        yv = val.labels
    else:
        model = build_regressor(config.resolution, widths=config.widths, seed=seed)
        yv = val.targets
    res = train_source(model, x, y, epochs=config.train_epochs, lr=config.train_lr,
                       batch_size=config.train_batch_size, seed=seed, val=(xv, yv), cosine=config.train_cosine)
    # one anchor-sized window per training stream; windows whose representation
    # kept no negative pixel carry no ratio and are left out
    anchors = x[::config.views_per_stream]
    n_pos, n_neg = rep_stats(anchors)
    stats = fit_ratio_stats((n_pos[n_neg > 0], n_neg[n_neg > 0]))
    return SourceModel(res.model.eval(), stats, res.val_metric)


# adaptation grid --------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    presets: dict
    source_val: Optional[float] = None
    accuracy: dict = field(default_factory=dict)  # baseline -> protocol -> [per seed]
    rmse: dict = field(default_factory=dict)  # baseline -> [per seed]
    denoise: Optional[dict] = None
    skipped: list = field(default_factory=list)
    wall_clock: float = 0.0

    def mean(self, baseline: str, protocol: str = "offline") -> float:
        return float(np.mean(self.accuracy[baseline][protocol]))

    def to_dict(self) -> dict:
        return {"config": self.config, "presets": self.presets, "source_val": self.source_val,
                "accuracy": self.accuracy, "rmse": self.rmse, "denoise": self.denoise,
                "skipped": self.skipped, "wall_clock": self.wall_clock}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _presets_dict() -> dict:
    return {k: asdict(v) for k, v in PRESETS.items()}


def _cells(config: ExperimentConfig):
    for seed in config.seeds:
        for baseline in config.baselines:
            for protocol in config.protocols:
                yield seed, baseline, protocol


def cell_config(config: ExperimentConfig, seed: int, baseline: str, protocol: str = "offline") -> AdaptConfig:
    """Adaptation settings of one grid cell; the tent baseline runs without the denoiser (plain entropy minimisation)."""
    cfg = config.adapt_config(seed, baseline_mode=baseline, protocol=protocol)
    return cfg.with_(denoise=False) if cfg.baseline_mode is BaselineMode.TENT else cfg


def _run_cell(config, model, stats, ds, seed, baseline, protocol):
    cfg = cell_config(config, seed, baseline, protocol)
    if config.task == "regression":
        if protocol == Protocol.ONLINE.value:
            return None, []
        res = adapt_regression(model, ds.streams, ds.targets, cfg, stats)
        return res.rmse, res.metrics
    if baseline == BaselineMode.NONE.value:
        return evaluate(model, ds.streams, cfg, ds.labels), []
    res = run(model, ds.streams, cfg, stats, ds.labels)
    return res.accuracy, res.metrics


def run_grid(config: ExperimentConfig, model: Model, stats: RatioStats | None, target: Dataset,
             source_val: float | None = None, threads: int = 1):
    """Run every (seed, baseline, protocol) cell; returns ``(RunReport, metric rows)``.

    Cells are independent (each adapts its own model copy), so they may run
    on worker threads; results are assembled in a fixed order.
    """
    start = time.perf_counter()
    ds = limit(target, config.limit_samples, config.data_seed)
    cells = list(_cells(config))
    args = [(config, model, stats, ds, *cell) for cell in cells]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _run_cell(*a), args))
    else:
        results = [_run_cell(*a) for a in args]
    report = RunReport(config.to_dict(), _presets_dict(), source_val)
    rows = []
    for (seed, baseline, protocol), (score, metrics) in zip(cells, results):
        if score is None:
            report.skipped.append({"seed": seed, "baseline": baseline, "protocol": protocol,
                                   "reason": "online protocol not defined for regression"})
            continue
        if config.task == "regression":
            report.rmse.setdefault(baseline, []).append(score)
        else:
            report.accuracy.setdefault(baseline, {}).setdefault(protocol, []).append(score)
        for m in metrics:
            rows.append({"seed": seed, "baseline": baseline, "protocol": protocol, **m})
    report.wall_clock = time.perf_counter() - start
    return report, rows


METRICS_HEADER = ("seed", "baseline", "protocol") + METRIC_COLUMNS


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_HEADER, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# sample-count sweep -------------------------------------------------------------


def sweep_samples(config: ExperimentConfig, model: Model, stats, target: Dataset, counts: Sequence[int],
                  baseline: str = "evtta", protocol: str = "offline") -> list[dict]:
    """Adapt on stratified subsets of ``counts`` samples, then score the full target.

    Returns one row per (count, seed).
    """
    counts = [int(c) for c in counts]
    for c in counts:
        if c < 1:
            raise ValueError(f"sample counts must be positive, got {c}")
        if c > len(target):
            raise ValueError(f"sample count {c} exceeds the {len(target)} available samples")
    if protocol != Protocol.OFFLINE.value or config.task != "classification":
        raise ValueError("the sample-count sweep supports offline classification runs only")
    rows = []
    for c in counts:
        ds = limit(target, c, config.data_seed)
        for seed in config.seeds:
            cfg = cell_config(config, seed, baseline, protocol)
            if baseline == BaselineMode.NONE.value:
                score = evaluate(model, target.streams, cfg, target.labels)
            else:
                score = run_offline(model, ds.streams, cfg, stats, ds.labels, target.streams, target.labels).accuracy
            rows.append({"count": c, "seed": seed, "accuracy": score})
    return rows


def sweep_summary(rows) -> list[dict]:
    counts = sorted({r["count"] for r in rows})
    return [{"count": c, "mean_accuracy": float(np.mean([r["accuracy"] for r in rows if r["count"] == c])),
             "seeds": sum(r["count"] == c for r in rows)} for c in counts]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=("count", "mean_accuracy", "seeds"), lineterminator="\n")
    writer.writeheader()
    for r in sweep_summary(rows):
        writer.writerow({**r, "mean_accuracy": repr(r["mean_accuracy"])})
    return buf.getvalue()


# denoiser evaluation ------------------------------------------------------------


def window_pixel_truth(stream: EventStream, noise_mask: np.ndarray, polarity: int):
    """Per-pixel ``(signal, noise_only)`` boolean maps for one polarity.

    A pixel counts as signal if any of its events of that polarity is real,
    and as noise only if all of them were injected.
    """
    H, W = stream.resolution
    sel = stream.p == polarity
    any_ev = np.zeros((H, W), dtype=bool)
    real = np.zeros((H, W), dtype=bool)
    any_ev[stream.y[sel], stream.x[sel]] = True
    keep = sel & ~noise_mask
    real[stream.y[keep], stream.x[keep]] = True
    return real, any_ev & ~real


def _window_with_mask(stream: EventStream, mask: np.ndarray, window: int):
    lo = stream.t_max - window
    sel = (stream.t >= lo) & (stream.t <= stream.t_max)
    return stream.select(sel), mask[sel]


@dataclass
class PixelScores:
    noise_pixels: int = 0
    noise_removed: int = 0
    signal_pixels: int = 0
    signal_kept: int = 0
    removed_total: int = 0

    def add(self, other: "PixelScores"):
        for k in asdict(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    @property
    def recall(self) -> float:
        return self.noise_removed / self.noise_pixels if self.noise_pixels else float("nan")

    @property
    def retention(self) -> float:
        return self.signal_kept / self.signal_pixels if self.signal_pixels else float("nan")

    @property
    def precision(self) -> float:
        return self.noise_removed / self.removed_total if self.removed_total else float("nan")


def mask_scores(stream: EventStream, noise_mask: np.ndarray, noisy_channel: str, radius: int = 1) -> PixelScores:
    """Score the spatial mask on one window against its injection labels."""
    sign = BurstPolarity(noisy_channel).sign
    ch = 0 if sign > 0 else 1
    rep = build(stream, RepKind.BINARY_EVENT_IMAGE).data
    kept = spatial_mask(rep, noisy_channel, radius)[..., ch] != 0
    signal, noise = window_pixel_truth(stream, noise_mask, sign)
    removed = (rep[..., ch] != 0) & ~kept
    return PixelScores(int(noise.sum()), int((noise & removed).sum()), int(signal.sum()),
                       int((signal & kept).sum()), int(removed.sum()))


def denoise_eval(config: ExperimentConfig, stats: RatioStats, target: Dataset) -> dict:
    """Pixel-level mask quality and batch-level burst-detection confusion."""
    if target.noise_masks is None:
        raise DatasetError("target dataset has no injection masks; regenerate it with gen-data")
    window = config.adapt.window
    polarity = target.shift.burst_polarity
    truth = {BurstPolarity.NONE: Verdict.CLEAN, BurstPolarity.POS: Verdict.POS_BURST,
             BurstPolarity.NEG: Verdict.NEG_BURST}[polarity]
    pairs = [_window_with_mask(s, m, window) for s, m in zip(target.streams, target.noise_masks)]
    scores = PixelScores()
    if polarity is not BurstPolarity.NONE:
        for w, m in pairs:
            scores.add(mask_scores(w, m, polarity.value, config.adapt.denoise_radius))
    reps = build_array([w for w, _ in pairs], config.representation, config.rep_params)
    batch = PRESETS[config.preset].batch_size
    order = np.random.default_rng([config.data_seed, 0x5EED]).permutation(len(reps))
    detection = {}
    for mode in FormulaMode:
        hyp = replace(config.adapt.hypothesis, formula_mode=mode)
        counts = {v.value: 0 for v in Verdict}
        try:
            for i in range(0, len(order), batch):
                idx = order[i:i + batch]
                if len(idx) < 2:
                    continue
                counts[detect_burst(reps[idx], stats, hyp).verdict.value] += 1
        except ValueError as exc:
            # the as-printed radicand can go negative; report it instead of aborting the comparison
            detection[mode.value] = {"error": str(exc)}
            continue
        total = sum(counts.values())
        detection[mode.value] = {"verdicts": counts, "batches": total,
                                 "correct_fraction": counts[truth.value] / total if total else float("nan")}
    return {
        "expected_verdict": truth.value,
        "pixels": {**asdict(scores), "recall": scores.recall, "precision": scores.precision,
                   "signal_retention": scores.retention},
        "detection": detection,
    }
