import json
from collections import Counter

import numpy as np
import pytest

from evtta.cli import main
from evtta.denoise import RatioStats
from evtta.engine import AdaptConfig, evaluate
from evtta.events import ShiftSpec
from evtta.experiment import (
    PRESETS,
    DatasetError,
    ExperimentConfig,
    generate_split,
    limit,
    mask_scores,
    read_dataset,
    run_grid,
    sweep_samples,
    train_source_model,
    write_dataset,
)
from evtta.synth import synth_scene

TINY = dict(num_classes=3, train_per_class=6, val_per_class=3, target_per_class=4, widths=(4, 8),
            train_epochs=1, seeds=(0, 1), preset="large")


def tiny(**kw):
    return ExperimentConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def tiny_source():
    config = tiny()
    train, val = generate_split(config, "source_train"), generate_split(config, "source_val")
    return config, train_source_model(config, train, val), generate_split(config, "target")


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "config.json"
    tiny(output_dir=str(root / "out")).save(config_path)
    base = ["--config", str(config_path)]
    assert main(base + ["gen-data"]) == 0
    assert main(base + ["train-source"]) == 0
    return root, base


# config ------------------------------------------------------------------------


def test_presets_values():
    assert PRESETS["large"].lr == 0.00025 and PRESETS["large"].batch_size == 64
    assert PRESETS["small"].lr == 0.001 and PRESETS["small"].batch_size == 128
    assert PRESETS["regression"].lr == 0.000025 and PRESETS["regression"].batch_size == 64


def test_config_round_trip(tmp_path):
    c = tiny(adapt=AdaptConfig(K=3, anchor_policy="min_entropy", denoise=False), limit_samples=7)
    back = ExperimentConfig.load(c.save(tmp_path / "c.json"))
    assert back == c


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        tiny(seeds=())
    with pytest.raises(ValueError):
        tiny(preset="huge")
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(DatasetError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_adapt_config_applies_preset():
    a = tiny(preset="small").adapt_config(seed=3)
    assert (a.lr, a.batch_size, a.seed) == (0.001, 128, 3)


# datasets ----------------------------------------------------------------------


def test_gen_data_cardinality_and_checksums(tmp_path):
    config = tiny()
    ds = generate_split(config, "source_train")
    write_dataset(ds, tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["count"] == 18 == len(manifest["entries"])
    assert len(list((tmp_path / "a" / "events").glob("*.evt"))) == 18
    write_dataset(generate_split(config, "source_train"), tmp_path / "b")
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_identity_target_differs_only_by_seed(tmp_path):
    config = tiny(target_shift=ShiftSpec(), target_per_class=6)
    src, tgt = generate_split(config, "source_train"), generate_split(config, "target")
    write_dataset(src, tmp_path / "s")
    write_dataset(tgt, tmp_path / "t")
    ms = json.loads((tmp_path / "s" / "manifest.json").read_text())
    mt = json.loads((tmp_path / "t" / "manifest.json").read_text())
    assert {e["sha256"] for e in ms["entries"]}.isdisjoint(e["sha256"] for e in mt["entries"])
    assert Counter(src.labels.tolist()) == Counter(tgt.labels.tolist())
    assert mt["shift"] == ShiftSpec().to_dict()


def test_dataset_round_trip(tmp_path):
    ds = generate_split(tiny(), "target")
    back = read_dataset(write_dataset(ds, tmp_path / "t"))
    assert all(a.equals(b) and a.window == b.window for a, b in zip(ds.streams, back.streams))
    assert np.array_equal(ds.labels, back.labels)
    assert all(np.array_equal(a, b) for a, b in zip(ds.noise_masks, back.noise_masks))
    assert back.shift == ds.shift


def test_regression_split_has_targets():
    ds = generate_split(tiny(task="regression"), "target")
    assert ds.labels is None and len(ds.targets) == 12
    assert np.all(np.abs(ds.targets) <= np.pi / 3)


def test_missing_dataset_is_actionable(tmp_path):
    with pytest.raises(DatasetError, match="gen-data"):
        read_dataset(tmp_path / "nothing")


def test_limit_is_stratified_subset():
    ds = generate_split(tiny(), "target")
    sub = limit(ds, 5)
    assert len(sub) == 5 and limit(ds, len(ds)) is ds
    assert np.all(np.diff([ds.streams.index(s) for s in sub.streams]) > 0)
    with pytest.raises(ValueError):
        limit(ds, 0)
    with pytest.raises(ValueError):
        limit(ds, len(ds) + 1)


# source and grid ------------------------------------------------------------------


def test_source_model_and_stats(tiny_source):
    _, src, _ = tiny_source
    assert 0 <= src.val_metric <= 1
    assert RatioStats.from_json(src.stats.to_json()) == src.stats


def test_grid_complete_and_none_equals_eval(tiny_source):
    config, src, target = tiny_source
    report, rows = run_grid(config, src.model, src.stats, target, src.val_metric)
    for b in config.baselines:
        for p in config.protocols:
            assert len(report.accuracy[b][p]) == len(config.seeds)
    for seed, acc in zip(config.seeds, report.accuracy["none"]["offline"]):
        assert acc == evaluate(src.model, target.streams, config.adapt_config(seed), target.labels)
    assert report.presets["large"] == {"lr": 0.00025, "batch_size": 64}
    assert {r["baseline"] for r in rows} == {"tent", "evtta"}


def test_grid_threads_do_not_change_results(tiny_source):
    config, src, target = tiny_source
    a, _ = run_grid(config, src.model, src.stats, target, threads=1)
    b, _ = run_grid(config, src.model, src.stats, target, threads=3)
    assert a.accuracy == b.accuracy


def test_regression_grid_marks_online_skipped():
    config = tiny(task="regression", preset="regression", baselines=("none", "evtta"), seeds=(0,))
    src = train_source_model(config, generate_split(config, "source_train"), generate_split(config, "source_val"))
    report, _ = run_grid(config, src.model, src.stats, generate_split(config, "target"))
    assert set(report.rmse) == {"none", "evtta"}
    assert len(report.skipped) == 2 and all(s["protocol"] == "online" for s in report.skipped)


def test_sweep_validation_and_degenerate_case(tiny_source):
    config, src, target = tiny_source
    with pytest.raises(ValueError):
        sweep_samples(config, src.model, src.stats, target, [0])
    with pytest.raises(ValueError):
        sweep_samples(config, src.model, src.stats, target, [len(target) + 1])
    rows = sweep_samples(config, src.model, src.stats, target, [len(target)])
    report, _ = run_grid(config.with_(baselines=("evtta",), protocols=("offline",)), src.model, src.stats, target)
    assert [r["accuracy"] for r in rows] == report.accuracy["evtta"]["offline"]


def test_mask_scores_on_known_injection():
    s, m = synth_scene(3, ShiftSpec(1.0, "neg", 1.0), seed=4, return_noise_mask=True)
    sc = mask_scores(s, m, "neg")
    assert sc.noise_pixels > 0 and sc.signal_pixels > 0
    assert 0 <= sc.recall <= 1 and 0 <= sc.retention <= 1 and 0 <= sc.precision <= 1


# CLI ---------------------------------------------------------------------------


def test_cli_outputs(cli_run, capsys):
    root, base = cli_run
    out = root / "out"
    assert (out / "source_timestamp_image.json").is_file()
    stats = (out / "source_timestamp_image.stats.json").read_text()
    assert RatioStats.from_json(stats).to_json() == stats
    assert main(base + ["adapt", "--threads", "2"]) == 0
    first = json.loads((out / "report.json").read_text())
    csv_first = (out / "report_metrics.csv").read_text()
    assert main(base + ["adapt"]) == 0
    second = json.loads((out / "report.json").read_text())
    first.pop("wall_clock"), second.pop("wall_clock")
    assert first == second
    assert csv_first == (out / "report_metrics.csv").read_text()
    assert first["presets"]["small"] == {"lr": 0.001, "batch_size": 128}
    assert csv_first.splitlines()[0].startswith("seed,baseline,protocol,batch_index")


def test_cli_flags_override_config(cli_run):
    root, base = cli_run
    assert main(base + ["--seed", "7", "--baseline", "tent", "--limit-samples", "6", "--denoise-mode", "off",
                        "adapt"]) == 0
    report = json.loads((root / "out" / "report.json").read_text())
    assert report["config"]["seeds"] == [7]
    assert list(report["accuracy"]) == ["tent"]
    assert report["config"]["limit_samples"] == 6 and report["config"]["adapt"]["denoise"] is False


def test_cli_sweep_and_denoise_eval(cli_run, capsys):
    root, base = cli_run
    assert main(base + ["sweep-samples", "--counts", "6,12"]) == 0
    lines = (root / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "count,mean_accuracy,seeds" and len(lines) == 3
    assert main(base + ["sweep-samples", "--counts", "0"]) == 2
    assert "positive" in capsys.readouterr().err
    assert main(base + ["denoise-eval", "--denoise-mode", "as-printed"]) == 0
    result = json.loads((root / "out" / "denoise.json").read_text())
    assert set(result["detection"]) == {"as-printed", "geary-hinkley"}
    assert result["expected_verdict"] == "neg_burst"


def test_cli_missing_data_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("EVTTA_DATA_DIR", raising=False)
    code = main(["--out", str(tmp_path), "--data-dir", str(tmp_path / "none"), "train-source"])
    assert code == 2
    err = capsys.readouterr().err
    assert "gen-data" in err and str(tmp_path / "none") in err


def test_cli_data_dir_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("EVTTA_DATA_DIR", str(tmp_path / "env_data"))
    config_path = tmp_path / "c.json"
    tiny(output_dir=str(tmp_path / "o")).save(config_path)
    assert main(["--config", str(config_path), "gen-data"]) == 0
    assert (tmp_path / "env_data" / "target" / "manifest.json").is_file()
