"""
Tests for the corruption suite and corrupted-set builder
"""
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np
import pytest
import torch
from PIL import Image as PILImage

from imaging.corruptions import (
    CORRUPTION_TYPES,
    FAMILIES,
    CorruptedDatasetManifest,
    CorruptionSpec,
    build_corrupted_set,
    corrupt,
    parse_severities,
    parse_types,
)
from imaging.transforms import to_grayscale
from ops.errors import ConfigError, RegistryError


def fixture_image(seed=0, size=48):
    """Smooth gradients plus a checker so every operator has structure to act on"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    checker = ((np.floor(yy * 6) + np.floor(xx * 6)) % 2) * 0.3
    base = np.stack([0.2 + 0.5 * xx, 0.3 + 0.4 * yy, 0.25 + checker], axis=0)
    base += rng.normal(scale=0.02, size=base.shape)
    return torch.from_numpy(np.clip(base, 0, 1)).float()


def psnr(a, b):
    mse = torch.mean((a - b) ** 2).item()
    return 10 * np.log10(1.0 / mse)


@dataclass
class Record:
    id: str
    label: int
    seed: int

    def image(self):
        return fixture_image(self.seed, size=32)


def test_registry_has_fifteen_types_in_four_families():
    assert len(CORRUPTION_TYPES) == 15
    assert set(FAMILIES) == {"noise", "blur", "weather", "digital"}


def test_spec_validation():
    with pytest.raises(RegistryError):
        CorruptionSpec("rain", 1)
    with pytest.raises(LookupError):
        CorruptionSpec("rain", 1)
    with pytest.raises(ValueError):
        CorruptionSpec("fog", 6)
    with pytest.raises(ValueError):
        CorruptionSpec("fog", 0)


@pytest.mark.parametrize("name", CORRUPTION_TYPES)
def test_every_type_changes_image_and_is_deterministic(name):
    image = fixture_image(1)
    spec = CorruptionSpec(name, 1, seed=17)
    out = corrupt(image, spec)
    assert out.shape == image.shape
    assert 0.0 <= out.min().item() and out.max().item() <= 1.0
    assert not torch.equal(out, image)
    assert torch.equal(corrupt(image, spec), out)


def test_brightness_increases_mean_luminance():
    image = fixture_image(2)
    means = [to_grayscale(corrupt(image, CorruptionSpec("brightness", sev))).mean().item() for sev in range(1, 6)]
    assert all(a < b for a, b in zip(means, means[1:]))


@pytest.mark.parametrize("name", FAMILIES["noise"])
def test_noise_distance_monotone_in_severity(name):
    for seed in range(3):
        image = fixture_image(seed)
        distances = [torch.norm(corrupt(image, CorruptionSpec(name, sev, seed=seed)) - image).item() for sev in range(1, 6)]
        assert all(a <= b for a, b in zip(distances, distances[1:]))


def test_jpeg_quality_ordering_and_decode():
    image = fixture_image(3)
    low = corrupt(image, CorruptionSpec("jpeg", 5))
    high = corrupt(image, CorruptionSpec("jpeg", 1))
    assert psnr(image, low) < psnr(image, high)

    array = (np.clip(image.double().permute(1, 2, 0).numpy(), 0, 1) * 255).round().astype(np.uint8)
    buffer = io.BytesIO()
    PILImage.fromarray(array).save(buffer, format="JPEG", quality=7)
    buffer.seek(0)
    decoded = np.asarray(PILImage.open(buffer).convert("RGB"), dtype=np.float64) / 255.0
    assert np.allclose(low.permute(1, 2, 0).numpy(), decoded, atol=1e-6)


def test_parse_helpers():
    assert parse_types("all") == list(CORRUPTION_TYPES)
    assert parse_types("noise,fog") == ["gaussian_noise", "shot_noise", "impulse_noise", "fog"]
    assert parse_severities("1-5") == [1, 2, 3, 4, 5]
    assert parse_severities("1,3,5") == [1, 3, 5]
    with pytest.raises(ConfigError, match="1..5"):
        parse_severities("0-2")
    with pytest.raises(ConfigError):
        parse_severities("high")
    with pytest.raises(RegistryError):
        parse_types("hail")


def fast_types():
    return [t for t in CORRUPTION_TYPES if t != "glass_blur"]


def test_build_corrupted_set_counts(tmp_path):
    records = [Record(f"img-{i:02d}", i % 3, i) for i in range(10)]
    manifest = build_corrupted_set(records, list(CORRUPTION_TYPES), [1, 2, 3, 4, 5], 7, tmp_path / "full", workers=4)
    assert len(manifest.rows) == 750
    assert len({(r["image_id"], r["type"], r["severity"]) for r in manifest.rows}) == 750
    subset = build_corrupted_set(records, list(CORRUPTION_TYPES), [1, 3, 5], 7, tmp_path / "subset", workers=2)
    assert len(subset.rows) == 450


def test_regeneration_is_order_and_worker_independent(tmp_path):
    records = [Record(f"img-{i}", i % 2, i) for i in range(4)]
    first = build_corrupted_set(records, fast_types(), [2], 11, tmp_path / "a", workers=1)
    second = build_corrupted_set(list(reversed(records)), fast_types(), [2], 11, tmp_path / "b", workers=3)
    assert [r["sha256"] for r in first.rows] == [r["sha256"] for r in second.rows]
    for row in first.rows:
        digest = hashlib.sha256((tmp_path / "a" / row["path"]).read_bytes()).hexdigest()
        assert digest == row["sha256"]


def test_manifest_files_round_trip(tmp_path):
    records = [Record("only", 1, 0)]
    built = build_corrupted_set(records, ["fog", "contrast"], [1, 2], 3, tmp_path)
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 4
    assert set(json.loads(lines[0])) == {"image_id", "type", "severity", "seed", "path", "sha256", "label"}
    loaded = CorruptedDatasetManifest.read(tmp_path)
    assert loaded.rows == built.rows
    assert loaded.cells() == {("fog", 1), ("fog", 2), ("contrast", 1), ("contrast", 2)}
