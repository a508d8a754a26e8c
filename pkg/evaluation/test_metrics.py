"""
Tests for the benchmark metrics and report rendering
"""
import numpy as np
import pytest
import torch
import torch.nn as nn

from evaluation.metrics import (
    ErrorTable,
    corruption_errors,
    depth_accuracy,
    depth_accuracy_curve,
    error_table_from_rows,
    mce,
    mean_and_se,
    shape_bias,
    shape_bias_from_rows,
    visual_cliff_table,
)
from evaluation.probe import LabeledImages, LinearProbe, ProbeConfig, read_predictions
from evaluation.report import EvalReport, load_report, plot_curve, render_comparison, render_markdown, save_report
from imaging.corruptions import build_corrupted_set
from ops.errors import IncompleteGridError, UndefinedMetricError
from stimuli.generators import gen_cliff_views
from stimuli.types import ImageDataset, ImageRecord


class ChannelMeans(nn.Module):
    def forward(self, x):
        return x.mean(dim=(2, 3))


def fixed_probe(weight, bias=None):
    weight = torch.as_tensor(weight, dtype=torch.float32)
    bias = torch.zeros(weight.shape[0]) if bias is None else torch.as_tensor(bias, dtype=torch.float32)
    return LinearProbe(weight=weight, bias=bias, epochs=0, train_accuracy=0.0)


RED_VS_GREEN = fixed_probe([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]])


def color_dataset():
    records = []
    for i in range(4):
        red = np.zeros((16, 16, 3), dtype=np.uint8)
        red[..., 0], red[..., 1], red[..., 2] = 150, 25, 25
        green = np.zeros((16, 16, 3), dtype=np.uint8)
        green[..., 0], green[..., 1], green[..., 2] = 25, 150, 25
        records.append(ImageRecord(f"red-{i}", 0, array=red, split="test"))
        records.append(ImageRecord(f"green-{i}", 1, array=green, split="test"))
    return ImageDataset("colors", tuple(records), ("red", "green"))


def table(grid, model_id="m"):
    return ErrorTable(grid, "synthetic", model_id)


# ---------------------------------------------------------------- mCE


def test_mce_of_baseline_against_itself_is_100():
    base = table({"fog": {1: 0.2, 2: 0.4}, "snow": {1: 0.1, 2: 0.5}})
    value, per_type = mce(base, base)
    assert value == pytest.approx(100.0)
    assert per_type == {"fog": pytest.approx(1.0), "snow": pytest.approx(1.0)}


def test_mce_of_halved_errors_is_50():
    base = table({"fog": {1: 0.2, 2: 0.4}, "snow": {1: 0.1, 2: 0.5}})
    half = table({c: {s: e / 2 for s, e in row.items()} for c, row in base.grid.items()})
    assert mce(half, base)[0] == pytest.approx(50.0)


def test_mce_two_type_fixture():
    model = table({"fog": {1: 0.1, 2: 0.2}, "snow": {1: 0.3, 2: 0.3}})
    baseline = table({"fog": {1: 0.3, 2: 0.3}, "snow": {1: 0.2, 2: 0.2}})
    value, per_type = mce(model, baseline)
    assert per_type["fog"] == pytest.approx(0.5)
    assert per_type["snow"] == pytest.approx(1.5)
    assert value == pytest.approx(100.0)


def test_mce_scale_consistency_and_monotonicity():
    rng = np.random.default_rng(0)
    types = ["fog", "snow", "frost"]
    for _ in range(1000):
        model_grid = {c: {s: float(rng.uniform(0.05, 0.5)) for s in range(1, 6)} for c in types}
        base_grid = {c: {s: float(rng.uniform(0.05, 0.5)) for s in range(1, 6)} for c in types}
        value = mce(table(model_grid), table(base_grid))[0]

        k = float(rng.uniform(0.2, 1.9))
        scaled = mce(
            table({c: {s: e * k for s, e in row.items()} for c, row in model_grid.items()}),
            table({c: {s: e * k for s, e in row.items()} for c, row in base_grid.items()}),
        )[0]
        assert scaled == pytest.approx(value, rel=1e-9)

        c, s = types[rng.integers(3)], int(rng.integers(1, 6))
        bumped = {t: dict(row) for t, row in model_grid.items()}
        bumped[c][s] += float(rng.uniform(1e-3, 0.4))
        assert mce(table(bumped), table(base_grid))[0] > value


def test_mce_errors():
    model = table({"fog": {1: 0.2}})
    with pytest.raises(UndefinedMetricError):
        mce(model, table({"fog": {1: 0.0}}))
    with pytest.raises(IncompleteGridError):
        mce(model, table({"snow": {1: 0.2}}))
    with pytest.raises(IncompleteGridError):
        mce(model, table({"fog": {1: 0.2, 2: 0.3}}))
    with pytest.raises(ValueError):
        table({"fog": {1: 1.2}})


def test_error_table_save_load(tmp_path):
    original = table({"fog": {1: 0.25, 3: 0.5}})
    loaded = ErrorTable.load(original.save(tmp_path / "baseline.json"))
    assert loaded.grid == original.grid
    with pytest.raises(IncompleteGridError):
        loaded.require(["fog"], [1, 2])


# ---------------------------------------------------------------- corruption errors


@pytest.fixture(scope="module")
def color_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("corrupted")
    return build_corrupted_set(color_dataset(), ["brightness", "contrast"], [1, 2], seed=0, out_dir=out)


def test_perfect_classifier_has_zero_error(color_manifest, tmp_path):
    path = tmp_path / "corruption.jsonl"
    errors = corruption_errors(RED_VS_GREEN, ChannelMeans(), color_manifest, predictions_path=path)
    assert errors.grid == {"brightness": {1: 0.0, 2: 0.0}, "contrast": {1: 0.0, 2: 0.0}}
    assert len(read_predictions(path)) == 8 * 2 * 2


def test_missing_severity_is_an_incomplete_grid(color_manifest):
    with pytest.raises(IncompleteGridError, match="severity 3"):
        corruption_errors(RED_VS_GREEN, ChannelMeans(), color_manifest, severities=[1, 2, 3])


def test_error_table_matches_prediction_recount(color_manifest, tmp_path):
    always_red = fixed_probe([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], bias=[1.0, 0.0])
    path = tmp_path / "always_red.jsonl"
    errors = corruption_errors(always_red, ChannelMeans(), color_manifest, predictions_path=path)
    rows = read_predictions(path)
    assert error_table_from_rows(rows).grid == errors.grid
    for c in errors.types:
        wrong = sum(1 for row in rows if row["type"] == c and row["argmax"] != row["label"])
        assert errors.aggregate(c) == pytest.approx(wrong / 8)


# ---------------------------------------------------------------- shape bias


def test_shape_bias_counts():
    shape = [0] * 10
    texture = [1] * 10
    assert shape_bias(shape, shape, texture) == 1.0
    preds = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
    assert shape_bias(preds, shape, texture) == 0.5
    with pytest.raises(UndefinedMetricError):
        shape_bias([2] * 10, shape, texture)
    with pytest.raises(ValueError):
        shape_bias([0], [1], [1])


def test_shape_bias_union_policy():
    shape, texture = [0, 0, 0, 0], [1, 1, 1, 1]
    mine = [0, 1, 2, 2]
    other = [2, 2, 0, 3]
    assert shape_bias(mine, shape, texture, "union", group=[mine]) == shape_bias(mine, shape, texture)
    assert shape_bias(mine, shape, texture, "union", group=[other]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        shape_bias(mine, shape, texture, "pooled")


def test_shape_bias_from_prediction_rows():
    rows = [
        {"image_id": "a", "argmax": 0, "shape_label": 0, "texture_label": 1},
        {"image_id": "b", "argmax": 1, "shape_label": 0, "texture_label": 1},
        {"image_id": "c", "argmax": 2, "shape_label": 2, "texture_label": 0},
    ]
    assert shape_bias_from_rows(rows) == pytest.approx(2 / 3)


# ---------------------------------------------------------------- depth and cliff


def depth_features(n=20):
    labels = [i % 2 for i in range(n)]
    features = torch.tensor([[1.0 if y else -1.0, 0.3] for y in labels])
    return LabeledImages([f"d-{i}" for i in range(n)], features, labels)


def test_depth_accuracy_chance_and_perfect(tmp_path):
    data = depth_features()
    constant = fixed_probe([[0.0, 0.0], [0.0, 0.0]], bias=[1.0, 0.0])
    perfect = fixed_probe([[-1.0, 0.0], [1.0, 0.0]])
    assert depth_accuracy(constant, nn.Flatten(), data) == 0.5
    assert depth_accuracy(perfect, nn.Flatten(), data, tmp_path / "depth.jsonl") == 1.0
    assert len(read_predictions(tmp_path / "depth.jsonl")) == 20


def test_depth_curve_has_one_point_per_checkpoint():
    data = depth_features()
    series = [(5, nn.Flatten()), (0, nn.Flatten()), (2, nn.Flatten())]
    curve = depth_accuracy_curve(series, data, data, config=ProbeConfig(epochs=100, lr=5e-2))
    assert [epoch for epoch, _ in curve] == [0, 2, 5]
    assert all(acc == 1.0 for _, acc in curve)


@pytest.fixture(scope="module")
def cliff_views():
    return gen_cliff_views(seed=0, resolution=16)


def test_cliff_table_perfect_and_inverted(cliff_views):
    always_yes = fixed_probe([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], bias=[0.0, 1.0])
    always_no = fixed_probe([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], bias=[1.0, 0.0])
    good = visual_cliff_table(always_yes, ChannelMeans(), cliff_views)
    assert good.answers == ("yes", "yes", "yes")
    assert good.all_correct
    bad = visual_cliff_table(always_no, ChannelMeans(), cliff_views)
    assert bad.answers == ("no", "no", "no")
    assert not any(row["correct"] for row in bad.rows)
    assert len(bad.rows) == 3
    assert "| catdiet |" in good.format_row("catdiet")


def test_mean_and_standard_error():
    assert mean_and_se([2.0]) == (2.0, 0.0)
    mean, se = mean_and_se([1.0, 2.0, 3.0])
    assert mean == pytest.approx(2.0)
    assert se == pytest.approx(1.0 / np.sqrt(3))


# ---------------------------------------------------------------- reports


def sample_report():
    return EvalReport(
        model_id="catdiet-s0",
        acc=0.724,
        mce=72.3,
        ce_per_type={"fog": 0.8, "snow": 0.646},
        shape_bias=0.61,
        depth_acc=0.5,
        cliff={"rows": [{"view": 1, "answer": "yes", "truth": "yes", "correct": True}], "all_correct": True},
        fim_curve=[(0, 1.0), (1, 2.5)],
    )


def test_report_json_is_reproducible(tmp_path):
    report = sample_report()
    first = save_report(report, tmp_path / "a" / "report.json").read_bytes()
    second = save_report(load_report(tmp_path / "a" / "report.json"), tmp_path / "b" / "report.json").read_bytes()
    assert first == second
    assert load_report(tmp_path / "a" / "report.json") == report


def test_markdown_report_lists_every_metric():
    text = render_markdown([sample_report()])
    assert "| catdiet-s0 | 72.4 | 72.3 | 61.0 | n/a | 50.0 | yes |" in text
    assert "| fog | 80.0 |" in text


def test_comparison_table_marks_failures():
    panels = [
        {
            "name": "Color",
            "rows": [
                {"condition": "cdiet", "n": 3, "acc": (50.0, 1.2), "mce": (90.0, 2.0), "shape_bias": None, "depth_acc": None, "status": "ok"},
                {"condition": "cdiet-shf", "n": 0, "acc": None, "mce": None, "shape_bias": None, "depth_acc": None, "status": "failed"},
            ],
        }
    ]
    text = render_comparison(panels, 3, failures=[{"run": "cdiet-shf-s0", "error": "boom"}])
    assert "| cdiet | 3 | 50.0 ± 1.2 | 90.0 ± 2.0 | n/a | n/a | ok |" in text
    assert "- cdiet-shf-s0: boom" in text


def test_svg_figures_are_byte_identical(tmp_path):
    points = [(0, 1.0), (1, 3.0), (2, 2.0)]
    a = plot_curve(points, tmp_path / "a.svg", "FIM trace", phase_boundary=1).read_bytes()
    b = plot_curve(points, tmp_path / "b.svg", "FIM trace", phase_boundary=1).read_bytes()
    assert a == b
