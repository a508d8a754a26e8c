"""
Dataset ingestion - JSON-lines manifests and folder layouts on disk

Manifest rows: {id, label, split, frame_paths[] | path, azimuth[]}.
Paths are relative to the dataset root.
"""
import json
import logging
import re
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from PIL import Image as PILImage

from imaging.transforms import save_image
from ops.errors import IngestionError
from stimuli.sampling import split_instances
from stimuli.types import ImageDataset, ImageRecord, VideoClip, VideoDataset

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
INFO_NAME = "dataset.json"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}

Dataset = Union[ImageDataset, VideoDataset]


def _natural_key(path: Path):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", path.name)]


def _read_array(path: Path) -> np.ndarray:
    if not path.is_file():
        raise IngestionError("Missing image file", path)
    try:
        with PILImage.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except OSError as e:
        raise IngestionError(f"Unreadable image ({e})", path) from e


def _write_info(root: Path, dataset: Dataset, kind: str):
    info = {"name": dataset.name, "kind": kind, "classes": list(dataset.classes)}
    (root / INFO_NAME).write_text(json.dumps(info, indent=2))


def save_video_dataset(dataset: VideoDataset, root: Path) -> Path:
    """Write <id>/<k>.png frames plus manifest.jsonl; returns the manifest path"""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for clip in dataset.clips:
        paths = []
        for k in range(len(clip)):
            rel = f"{clip.id}/{k:03d}.png"
            save_image(clip.frames[k], root / rel)
            paths.append(rel)
        row = {"id": clip.id, "label": clip.label, "split": clip.split, "frame_paths": paths, "azimuth": list(clip.times)}
        lines.append(json.dumps(row))
    manifest = root / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    _write_info(root, dataset, "video")
    logger.info(f"[OK] Wrote {len(dataset)} clips to {root}")
    return manifest


def save_image_dataset(dataset: ImageDataset, root: Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for record in dataset.records:
        rel = f"{record.id}.png"
        save_image(record.array if record.array is not None else _read_array(record.path), root / rel)
        row = {"id": record.id, "label": record.label, "split": record.split, "path": rel}
        if record.extra:
            row["extra"] = record.extra
        lines.append(json.dumps(row))
    manifest = root / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    _write_info(root, dataset, "image")
    logger.info(f"[OK] Wrote {len(dataset)} images to {root}")
    return manifest


def _read_manifest(root: Path, manifest: Path) -> Dataset:
    rows = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise IngestionError(f"Malformed manifest line {lineno} ({e.msg})", manifest) from e
        if not isinstance(row, dict) or "id" not in row or ("path" not in row and "frame_paths" not in row):
            raise IngestionError(f"Manifest line {lineno} needs 'id' and 'path' or 'frame_paths'", manifest)
        rows.append(row)

    info_path = root / INFO_NAME
    info = json.loads(info_path.read_text()) if info_path.exists() else {}
    name = info.get("name", root.name)

    kinds = {"frame_paths" in row for row in rows}
    if len(kinds) > 1:
        raise IngestionError("Manifest mixes video rows and image rows", manifest)

    if rows and "frame_paths" in rows[0]:
        clips = []
        for row in rows:
            frames = np.stack([_read_array(root / p) for p in row["frame_paths"]])
            times = row.get("azimuth") or list(range(len(frames)))
            try:
                clips.append(VideoClip(row["id"], frames, times, label=row.get("label"), split=row.get("split", "train")))
            except ValueError as e:
                raise IngestionError(str(e), manifest) from e
        classes = tuple(info.get("classes") or sorted({str(c.label) for c in clips}))
        return VideoDataset(name, tuple(clips), classes)

    records = []
    for row in rows:
        path = root / row["path"]
        if not path.is_file():
            raise IngestionError("Missing image file", path)
        records.append(
            ImageRecord(row["id"], row.get("label"), path=path, split=row.get("split", "train"), extra=row.get("extra", {}))
        )
    classes = tuple(info.get("classes") or sorted({str(r.label) for r in records}))
    return ImageDataset(name, tuple(records), classes)


def _images_in(folder: Path) -> List[Path]:
    return sorted((p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_natural_key)


def _infer_layout(root: Path, test_fraction: float, seed) -> Dataset:
    """
    root/<class>/<video>/<frames> gives videos; root/<class>/<images>
    gives images. Class indices follow sorted folder names.
    """
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        logger.warning(f"[WARN] No class folders under {root}, returning an empty dataset")
        return ImageDataset(root.name, (), ())
    classes = tuple(p.name for p in class_dirs)

    video_dirs = [(label, v) for label, c in enumerate(class_dirs) for v in sorted(c.iterdir()) if v.is_dir()]
    if video_dirs:
        ids = [f"{class_dirs[label].name}/{v.name}" for label, v in video_dirs]
        splits = split_instances(ids, [label for label, _ in video_dirs], test_fraction, seed)
        clips = []
        for clip_id, (label, folder) in zip(ids, video_dirs):
            paths = _images_in(folder)
            if len(paths) < 2:
                logger.warning(f"[WARN] Skipping {folder}: fewer than 2 frames")
                continue
            frames = np.stack([_read_array(p) for p in paths])
            clips.append(VideoClip(clip_id, frames, range(len(frames)), label=label, split=splits[clip_id]))
        return VideoDataset(root.name, tuple(clips), classes)

    images = [(label, p) for label, c in enumerate(class_dirs) for p in _images_in(c)]
    ids = [f"{class_dirs[label].name}/{p.stem}" for label, p in images]
    splits = split_instances(ids, [label for label, _ in images], test_fraction, seed)
    records = tuple(
        ImageRecord(image_id, label, path=path, split=splits[image_id]) for image_id, (label, path) in zip(ids, images)
    )
    if not records:
        logger.warning(f"[WARN] No images found under {root}")
    return ImageDataset(root.name, records, classes)


def ingest_image_folder(
    root: Path, manifest: Optional[Path] = None, test_fraction: float = 0.0, seed=0
) -> Dataset:
    """
    Read a dataset from disk.

    Uses the given manifest, else root/manifest.jsonl, else infers the
    class-folder layout. An empty folder yields an empty dataset.

    Raises:
        IngestionError: missing root or file, malformed manifest
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError("Dataset root not found", root)
    if manifest is not None and not Path(manifest).is_file():
        raise IngestionError("Manifest not found", manifest)
    manifest = Path(manifest) if manifest else root / MANIFEST_NAME
    if manifest.exists():
        dataset = _read_manifest(root, manifest)
    elif not any(root.iterdir()):
        logger.warning(f"[WARN] Empty dataset folder {root}")
        return ImageDataset(root.name, (), ())
    else:
        dataset = _infer_layout(root, test_fraction, seed)
    logger.info(f"[OK] Ingested {len(dataset)} items from {root}")
    return dataset
