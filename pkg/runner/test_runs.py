"""
Tests for run configs, run directories, sweeps and the CLI
"""
import json
from pathlib import Path

import pytest
import torch
import yaml

from config.settings import DEFAULT_SETTINGS, deep_merge
from imaging.corruptions import CORRUPTION_TYPES, CorruptedDatasetManifest
from ops.errors import ConfigError, DataError, DivergenceError
from runner import main, runs
from stimuli.ingest import ingest_image_folder
from stimuli.types import ImageDataset, VideoDataset


@pytest.fixture
def settings(tmp_path):
    return deep_merge(
        DEFAULT_SETTINGS,
        {
            "paths": {
                "runs_root": str(tmp_path / "runs"),
                "data_root": str(tmp_path / "data"),
                "logs_dir": str(tmp_path / "logs"),
                "fixtures_dir": str(tmp_path / "fixtures"),
            },
            "desk": {
                "resolution": 16,
                "total_epochs": 3,
                "batch_size": 8,
                "frames_per_video": 4,
                "test_frames_per_video": 2,
                "window": 1,
            },
            "distillation": {"local_crops": 2, "out_dim": 32},
            "fisher": {"probe_batches": 1},
            "probe": {"epochs": 3, "batch_size": 64},
            "synthetic": {
                "rotation": {"n_classes": 2, "videos_per_class": 2, "frames_per_video": 6, "test_fraction": 0.5},
                "depth": {"n_train": 16, "n_test": 8},
                "cue_conflict": {"n": 6},
                "silhouettes": {"n": 4},
            },
            "corruptions": {"severities": [1, 2], "workers": 1},
        },
    )


def tiny_run(settings, **fields) -> runs.RunConfig:
    return runs.validate_run_config({**runs.run_defaults(settings), "diet": "tdiet", **fields})


# ---------------------------------------------------------------- run config


def test_invalid_config_lists_every_problem():
    with pytest.raises(ConfigError) as info:
        runs.validate_run_config({"diet": "bogus", "total_epochs": 0, "batch_size": 1, "colour": True})
    problems = info.value.problems
    assert len(problems) == 4
    assert any("unknown diet 'bogus'" in p for p in problems)
    assert any(p.startswith("total_epochs") for p in problems)
    assert any(p.startswith("colour") for p in problems)


def test_diet_names_are_normalized():
    config = runs.validate_run_config({"diet": "CATDiet", "baseline": "REV"})
    assert config.diet == "catdiet"
    assert config.condition == "catdiet-rev"
    assert config.run_name == "catdiet-rev-s0"
    assert runs.validate_run_config({"diet": "schedules/mine.json"}).condition == "mine"


def test_run_config_precedence(tmp_path, settings):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump({"diet": "adiet", "total_epochs": 12, "seed": 1}))
    config = runs.load_run_config(
        path,
        settings,
        env={"DEVDIET_RUN__SEED": "3"},
        overrides=runs.parse_overrides(["total_epochs=14"]),
    )
    assert config.diet == "adiet"
    assert config.total_epochs == 14
    assert config.seed == 3
    assert config.batch_size == 8
    assert config.output_root == settings["paths"]["runs_root"]


def test_run_config_file_errors(tmp_path, settings):
    with pytest.raises(ConfigError, match="not found"):
        runs.load_run_config(tmp_path / "missing.yaml", settings, env={})
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        runs.load_run_config(path, settings, env={})
    with pytest.raises(ConfigError, match="key=value"):
        runs.parse_overrides(["diet"])


# ---------------------------------------------------------------- run directories


def test_run_dirs_are_append_only(tmp_path):
    first = runs.new_run_dir(tmp_path, "tdiet-s0")
    second = runs.new_run_dir(tmp_path, "tdiet-s0")
    third = runs.new_run_dir(tmp_path, "tdiet-s0")
    assert [p.name for p in (first, second, third)] == ["tdiet-s0", "tdiet-s0-2", "tdiet-s0-3"]


def test_pretrain_writes_complete_manifest(settings):
    config = tiny_run(settings, keep_epoch_checkpoints=True)
    manifest = runs.run_pretrain(config, settings)

    assert manifest.status == "complete"
    assert manifest.final_loss is not None
    rows = (manifest.path / manifest.metrics).read_text().splitlines()
    assert len(rows) == config.total_epochs
    assert manifest.epoch_checkpoints() == [0, 1, 2]
    assert len(manifest.schedule_table) == config.total_epochs

    loaded = runs.RunManifest.load(manifest.path)
    assert loaded.run_config == config
    assert loaded.config_hash == manifest.config_hash
    loaded.verify()
    assert yaml.safe_load((manifest.path / runs.CONFIG_NAME).read_text())["diet"] == "tdiet"

    model = runs.load_encoder(loaded)
    saved = torch.load(loaded.checkpoint(), map_location="cpu", weights_only=False)["model"]
    for key, value in model.state_dict().items():
        assert torch.equal(value, saved[key])


def test_second_pretrain_gets_its_own_directory(settings):
    config = tiny_run(settings, total_epochs=1)
    a = runs.run_pretrain(config, settings)
    b = runs.run_pretrain(config, settings)
    assert a.run_dir != b.run_dir
    assert b.run_id == f"{config.run_name}-2"


def test_phase2_temperature_comes_from_settings(settings):
    settings = deep_merge(settings, {"contrastive": {"phase2_temperature": 0.2}})
    manifest = runs.run_pretrain(tiny_run(settings, total_epochs=1), settings)
    assert [row["temperature"] for row in manifest.schedule_table] == [0.2]


def test_tampered_checkpoint_fails_verification(settings):
    manifest = runs.run_pretrain(tiny_run(settings, total_epochs=1), settings)
    with manifest.checkpoint().open("ab") as f:
        f.write(b"\0")
    with pytest.raises(DataError, match="recorded hash"):
        runs.RunManifest.load(manifest.path).verify()


def test_resume_requires_the_same_config(settings):
    manifest = runs.run_pretrain(tiny_run(settings, total_epochs=1), settings)
    with pytest.raises(ConfigError, match="different config"):
        runs.run_pretrain(tiny_run(settings, total_epochs=2), settings, resume_dir=manifest.path)


def test_nan_weights_mark_the_run_diverged(settings, monkeypatch):
    def poison_weights(trainer, row):
        with torch.no_grad():
            for p in trainer.state.model.parameters():
                p.fill_(float("nan"))

    monkeypatch.setattr(runs, "_save_epoch_snapshot", poison_weights)
    config = tiny_run(settings, keep_epoch_checkpoints=True)
    with pytest.raises(DivergenceError) as info:
        runs.run_pretrain(config, settings)
    assert info.value.last_good_checkpoint is not None
    manifest = runs.RunManifest.load(Path(config.output_root) / config.run_name)
    assert manifest.status == "diverged"
    assert "epoch 1" in manifest.error


# ---------------------------------------------------------------- datasets


def test_synth_writes_and_refuses_to_overwrite(settings, tmp_path):
    root = tmp_path / "data"
    (out,) = runs.synth("silhouette", settings, root)
    assert out.name == "silhouettes"
    dataset = ingest_image_folder(out)
    assert isinstance(dataset, ImageDataset)
    assert len(dataset) == 4
    with pytest.raises(ConfigError, match="--force"):
        runs.synth("silhouettes", settings, root)
    runs.synth("silhouettes", settings, root, force=True)

    train, test = runs.synth("depth", settings, root)
    assert len(ingest_image_folder(train)) == 16
    assert len(ingest_image_folder(test)) == 8
    (cue,) = runs.synth("cueconflict", settings, root)
    assert cue.name == "cue_conflict"
    assert all(r.extra["shape_label"] != r.extra["texture_label"] for r in ingest_image_folder(cue))
    (cliff,) = runs.synth("cliff", settings, root)
    views = ingest_image_folder(cliff)
    assert [r.label for r in views] == [1, 1, 1]
    assert all(r.extra["kind"] == "cliff_view" for r in views)
    assert len(runs.cliff_views(root, 0, 16, settings)) == 3
    (rotation,) = runs.synth("rotation", settings, root)
    assert isinstance(ingest_image_folder(rotation), VideoDataset)
    with pytest.raises(ConfigError, match="Unknown synthetic set"):
        runs.synth("teapots", settings, root)


def test_corrupt_uses_held_out_frames(settings, tmp_path):
    root = tmp_path / "data"
    (rotation,) = runs.synth("rotation", settings, root)
    videos = ingest_image_folder(rotation)
    assert isinstance(videos, VideoDataset)
    manifest = runs.corrupt(settings, types=["brightness"], severities=[1, 2], data_root=root)
    reread = CorruptedDatasetManifest.read(root / "corrupted")
    n_test = len(videos.split("test"))
    assert len(manifest.rows) == len(reread.rows) == 2 * 2 * n_test
    test_ids = {clip.id for clip in videos.split("test").clips}
    assert {row["image_id"].split("#")[0] for row in reread.rows} == test_ids


def test_eval_names_the_command_for_a_missing_dataset(settings, tmp_path):
    manifest = runs.run_pretrain(tiny_run(settings, total_epochs=1), settings)
    with pytest.raises(DataError, match="devdiet synth depth"):
        runs.run_eval(manifest.path, ["depth"], settings, tmp_path / "empty")
    with pytest.raises(ConfigError, match="Unknown benchmarks"):
        runs.run_eval(manifest.path, ["vibes"], settings)


def test_eval_outputs_are_replaced_only_with_force(settings, tmp_path):
    manifest = runs.run_pretrain(tiny_run(settings, total_epochs=1), settings)
    with pytest.raises(DataError):
        runs.run_eval(manifest.path, ["depth"], settings, tmp_path / "empty")
    assert not (manifest.path / "eval").exists()

    first = runs.run_eval(manifest.path, ["acc"], settings)
    report = manifest.path / "eval" / "report.json"
    written = report.read_text()
    with pytest.raises(ConfigError, match="--force"):
        runs.run_eval(manifest.path, ["acc"], settings)
    assert report.read_text() == written
    assert runs.run_eval(manifest.path, ["acc"], settings, force=True).acc == first.acc
    assert not (manifest.path / "eval.partial").exists()

    acc = runs.run_probe(manifest.path, settings)
    assert acc == pytest.approx(first.acc)
    assert (manifest.path / "probe" / "class_probe.pt").exists()
    with pytest.raises(ConfigError, match="--force"):
        runs.run_probe(manifest.path, settings)


@pytest.mark.slow
def test_full_eval_against_a_frozen_baseline(settings, tmp_path):
    root = tmp_path / "data"
    for kind in runs.SYNTH_KINDS:
        runs.synth(kind, settings, root)
    runs.corrupt(settings, types=["brightness", "fog"], severities=[1, 2], data_root=root)
    manifest = runs.run_pretrain(tiny_run(settings, dataset=str(root / "rotation")), settings)

    with pytest.raises(ConfigError, match="devdiet baseline"):
        runs.run_eval(manifest.path, ["mce"], settings, root)
    reference = runs.run_baseline(settings, seed=0, data_root=root)
    assert reference.model_id.startswith("std-reference-s0@")
    with pytest.raises(ConfigError, match="--force"):
        runs.run_baseline(settings, seed=0, data_root=root)

    report = runs.run_eval(manifest.path, runs.BENCHMARKS, settings, root)
    assert 0.0 <= report.acc <= 1.0
    assert set(report.ce_per_type) == {"brightness", "fog"}
    assert 0.0 <= report.depth_acc <= 1.0
    assert len(report.cliff["rows"]) == 3
    assert report.cliff_answers.count("/") == 2
    assert len(report.fim_curve) == 3
    saved = json.loads((manifest.path / "eval" / "report.json").read_text())
    assert saved["model_id"] == manifest.run_id
    assert (manifest.path / "eval" / "report.md").read_text().count(manifest.run_id) >= 1


def test_fixtures_dir_is_taken_from_the_repository():
    assert runs.fixtures_dir(DEFAULT_SETTINGS) == runs.REPO_ROOT / "evaluation" / "fixtures"
    assert runs.fixtures_dir({"paths": {"fixtures_dir": "/srv/fixtures"}}) == Path("/srv/fixtures")


def test_committed_baseline_covers_the_corruption_registry():
    committed = runs.REPO_ROOT / "evaluation" / "fixtures" / runs.BASELINE_TABLE_NAME
    if not committed.exists():
        pytest.skip("reference table not generated yet; run 'devdiet baseline'")
    table = runs.load_baseline_table(DEFAULT_SETTINGS)
    assert table.types == list(CORRUPTION_TYPES)
    assert all(table.severities(c) == [1, 2, 3, 4, 5] for c in table.types)
    assert all(table.aggregate(c) > 0.0 for c in table.types)
    assert table.model_id.startswith("std-reference-s0@")
    assert table.dataset_id


# ---------------------------------------------------------------- sweeps


def test_expand_sweep_rejects_bad_axes(settings):
    template = tiny_run(settings)
    configs = runs.expand_sweep(template, {"diet": ["tdiet", "std"], "learner": ["contrastive"]}, [0, 1])
    assert [(c.diet, c.seed) for c in configs] == [("tdiet", 0), ("tdiet", 1), ("std", 0), ("std", 1)]
    with pytest.raises(ConfigError, match="Unknown sweep axes"):
        runs.expand_sweep(template, {"colour": ["red"]}, [0])
    with pytest.raises(ConfigError, match="bogus"):
        runs.expand_sweep(template, {"diet": ["bogus"]}, [0])


def test_failing_sweep_run_does_not_stop_the_others(settings):
    template = tiny_run(settings, total_epochs=2, name="grid")
    result = runs.run_sweep(template, {"diet": ["catdiet", "tdiet"]}, seeds=[0], benchmarks=(), settings=settings)

    status = {r["run"]: r["status"] for r in result.runs}
    assert status == {"catdiet-s0": "failed", "tdiet-s0": "ok"}
    assert "ScheduleError" in result.failures[0]["error"]
    assert "## Temporality" in result.table
    assert "## Combination" in result.table
    assert "| catdiet | 0 | n/a | n/a | n/a | n/a | failed |" in result.table
    assert "- catdiet-s0:" in result.table
    saved = json.loads((result.sweep_dir / "sweep.json").read_text())
    assert len(saved) == 2
    assert (result.sweep_dir / "comparison.md").read_text() == result.table


def test_panels_put_the_reference_everywhere(settings):
    ok = {"status": "ok", "report": {"acc": 0.5, "mce": 90.0, "shape_bias": None, "depth_acc": 0.6}}
    sweep = [
        {**ok, "config": tiny_run(settings, diet="std").model_dump()},
        {**ok, "config": tiny_run(settings, diet="cdiet").model_dump()},
        {**ok, "config": tiny_run(settings, diet="tdiet", baseline="nonsmooth").model_dump()},
    ]
    panels = {p["name"]: [r["condition"] for r in p["rows"]] for p in runs.comparison_panels(sweep, ["diet"])}
    assert panels["Color"] == ["std", "cdiet"]
    assert panels["Temporality"] == ["std", "tdiet-nonsmooth"]
    assert panels["Acuity"] == ["std"]
    row = runs.comparison_panels(sweep[:1], ["diet"])[0]["rows"][0]
    assert row["acc"] == (50.0, 0.0)
    assert row["shape_bias"] is None


# ---------------------------------------------------------------- command line


def test_cli_exit_codes(settings, tmp_path, capsys):
    settings_file = tmp_path / "devdiet.yaml"
    settings_file.write_text(yaml.safe_dump(settings))
    base = ["--settings", str(settings_file)]

    assert main.main(base + ["pretrain", "--set", "diet=bogus"]) == 2
    assert main.main(base + ["eval", str(tmp_path / "nowhere")]) == 3
    assert main.main(base + ["synth", "silhouettes"]) == 0
    assert capsys.readouterr().out.strip().endswith("silhouettes")
    assert main.main(base + ["synth", "silhouettes"]) == 2
    assert main.main(base + ["corrupt", "--severities", "9"]) == 2
    assert main.main(base + ["synth", "cliff"]) == 0
    assert capsys.readouterr().out.strip().endswith("cliff")
    assert (tmp_path / "logs" / "synth.log").exists()


def test_cli_seed_ranges():
    assert main._seeds("0-4") == [0, 1, 2, 3, 4]
    assert main._seeds("1,3") == [1, 3]
