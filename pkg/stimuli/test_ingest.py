"""
Tests for dataset ingestion from manifests and folder layouts
"""
import json

import numpy as np
import pytest
from PIL import Image as PILImage

from ops.errors import IngestionError
from stimuli.ingest import ingest_image_folder, save_image_dataset, save_video_dataset
from stimuli.types import ImageDataset, ImageRecord, VideoClip, VideoDataset


def write_png(path, value):
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(np.full((4, 4, 3), value, dtype=np.uint8)).save(path)


def test_empty_folder_gives_empty_dataset(tmp_path, caplog):
    dataset = ingest_image_folder(tmp_path)
    assert len(dataset) == 0
    assert "[WARN]" in caplog.text


def test_missing_root_and_manifest(tmp_path):
    with pytest.raises(IngestionError) as err:
        ingest_image_folder(tmp_path / "nope")
    assert "nope" in str(err.value)
    with pytest.raises(IngestionError):
        ingest_image_folder(tmp_path, manifest=tmp_path / "missing.jsonl")


def test_manifest_referencing_missing_file(tmp_path):
    (tmp_path / "manifest.jsonl").write_text(json.dumps({"id": "a", "label": 0, "path": "a.png"}) + "\n")
    with pytest.raises(IngestionError) as err:
        ingest_image_folder(tmp_path)
    assert err.value.path == tmp_path / "a.png"
    assert "a.png" in str(err.value)


def test_malformed_manifest_line(tmp_path):
    (tmp_path / "manifest.jsonl").write_text('{"id": "a", "path": "a.png"}\n{broken\n')
    with pytest.raises(IngestionError) as err:
        ingest_image_folder(tmp_path)
    assert "line 2" in str(err.value)


def test_co3d_style_layout_gives_ordered_clips(tmp_path):
    for v in range(10):
        category = "chair" if v < 5 else "mug"
        for k in (0, 1, 2, 10):
            write_png(tmp_path / category / f"seq{v}" / f"frame{k}.png", k * 20)
    dataset = ingest_image_folder(tmp_path, test_fraction=0.2, seed=1)
    assert isinstance(dataset, VideoDataset)
    assert len(dataset) == 10
    assert dataset.classes == ("chair", "mug")
    for clip in dataset:
        assert list(clip.frames[:, 0, 0, 0]) == [0, 20, 40, 200]
        assert all(b > a for a, b in zip(clip.times, clip.times[1:]))
    assert sum(c.split == "test" for c in dataset) == 2


def test_flat_image_layout(tmp_path):
    write_png(tmp_path / "cat" / "1.png", 10)
    write_png(tmp_path / "dog" / "2.png", 30)
    dataset = ingest_image_folder(tmp_path)
    assert isinstance(dataset, ImageDataset)
    assert [(r.id, r.label) for r in dataset] == [("cat/1", 0), ("dog/2", 1)]
    assert dataset.records[1].image()[0, 0, 0].item() == pytest.approx(30 / 255)


def test_video_manifest_round_trip(tmp_path):
    frames = np.random.default_rng(0).integers(0, 255, size=(3, 5, 5, 3), dtype=np.uint8)
    clips = tuple(VideoClip(f"v{i}", frames, [0.0, 120.0, 240.0], label=i, split="test" if i else "train") for i in range(2))
    save_video_dataset(VideoDataset("rot", clips, ("a", "b")), tmp_path)
    loaded = ingest_image_folder(tmp_path)
    assert loaded.name == "rot" and loaded.classes == ("a", "b")
    assert [c.id for c in loaded] == ["v0", "v1"]
    assert np.array_equal(loaded.clips[1].frames, frames)
    assert loaded.clips[1].times == (0.0, 120.0, 240.0)
    assert [c.split for c in loaded] == ["train", "test"]


def test_image_manifest_keeps_extra_labels(tmp_path):
    array = np.zeros((4, 4, 3), dtype=np.uint8)
    record = ImageRecord("cue-0", 2, array=array, split="test", extra={"shape_label": 2, "texture_label": 0})
    save_image_dataset(ImageDataset("cue", (record,), ("a", "b", "c")), tmp_path)
    loaded = ingest_image_folder(tmp_path)
    assert loaded.records[0].extra == {"shape_label": 2, "texture_label": 0}
    assert loaded.records[0].label == 2
