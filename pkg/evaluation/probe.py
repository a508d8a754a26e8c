"""
Linear probing - frozen-encoder embeddings, multinomial logistic probe,
prediction files and top-1 accuracy
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.optim import AdamW
from torch.optim.lr_scheduler import CosineAnnealingLR

from ops.errors import DataError, DevDietError, UndefinedMetricError
from ops.seeding import derive_seed
from stimuli.sampling import sample_test_frames, sample_training_frames
from stimuli.types import ImageDataset, VideoDataset

logger = logging.getLogger(__name__)


@dataclass
class ProbeConfig:
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256

    @classmethod
    def from_settings(cls, settings: dict) -> "ProbeConfig":
        probe = settings.get("probe", {})
        return cls(
            epochs=probe.get("epochs", cls.epochs),
            lr=probe.get("lr", cls.lr),
            weight_decay=probe.get("weight_decay", cls.weight_decay),
            batch_size=probe.get("batch_size", cls.batch_size),
        )


@dataclass
class LabeledImages:
    """Images with integer labels and per-image metadata for prediction files"""

    ids: List[str]
    images: torch.Tensor
    labels: torch.Tensor
    extra: List[dict] = field(default_factory=list)

    def __post_init__(self):
        self.labels = torch.as_tensor(self.labels, dtype=torch.long)
        if not (len(self.ids) == len(self.images) == len(self.labels)):
            raise ValueError(f"{len(self.ids)} ids, {len(self.images)} images and {len(self.labels)} labels")
        if not self.extra:
            self.extra = [{} for _ in self.ids]

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def from_pairs(cls, pairs: Sequence, prefix: str = "img") -> "LabeledImages":
        """(image, label) pairs, e.g. from gen_depth_scene or gen_cliff_views"""
        ids = [f"{prefix}-{i:04d}" for i in range(len(pairs))]
        return cls(ids, torch.stack([image for image, _ in pairs]), [label for _, label in pairs])


def images_from_dataset(dataset: ImageDataset, split: Optional[str] = None) -> LabeledImages:
    records = list(dataset.split(split) if split else dataset)
    if not records:
        raise DataError(f"Dataset '{dataset.name}' has no images" + (f" in split '{split}'" if split else ""))
    return LabeledImages(
        ids=[r.id for r in records],
        images=torch.stack([r.image() for r in records]),
        labels=[r.label for r in records],
        extra=[dict(r.extra) for r in records],
    )


def frames_from_videos(
    dataset: VideoDataset, split: str, frames_per_video: int = 10, test_frames: int = 2, seed: int = 0
) -> LabeledImages:
    """
    Probe frames for one split.

    Training clips contribute their evenly spaced training frames; test
    clips contribute test_frames random frames each.
    """
    clips = dataset.split(split).clips
    if not clips:
        raise DataError(f"Dataset '{dataset.name}' has no clips in split '{split}'")
    ids, images, labels = [], [], []
    for clip in clips:
        if clip.label is None:
            raise DataError(f"Clip {clip.id} has no label")
        if split == "test":
            refs = sample_test_frames(clip, test_frames, seed)
        else:
            refs = sample_training_frames(clip, frames_per_video)
        for ref in refs:
            ids.append(ref.frame_id)
            images.append(clip.frame(ref.index))
            labels.append(clip.label)
    return LabeledImages(ids, torch.stack(images), labels)


def encoder_hash(encoder: nn.Module) -> str:
    """SHA-256 over parameters and buffers, in state-dict order"""
    digest = hashlib.sha256()
    for name, tensor in encoder.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@torch.no_grad()
def embed(encoder: nn.Module, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """Backbone features of a frozen encoder (falls back to forward())"""
    was_training = encoder.training
    encoder.eval()
    forward = encoder.features if hasattr(encoder, "features") else encoder
    try:
        chunks = [forward(images[i : i + batch_size]).flatten(1) for i in range(0, len(images), batch_size)]
    finally:
        encoder.train(was_training)
    return torch.cat(chunks).float()


@dataclass
class LinearProbe:
    weight: torch.Tensor
    bias: torch.Tensor
    epochs: int
    train_accuracy: float
    encoder_hash: str = ""
    seed: int = 0

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        return features @ self.weight.T + self.bias

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "weight": self.weight,
                "bias": self.bias,
                "epochs": self.epochs,
                "train_accuracy": self.train_accuracy,
                "encoder_hash": self.encoder_hash,
                "seed": self.seed,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path: Path) -> "LinearProbe":
        return cls(**torch.load(path, map_location="cpu", weights_only=True))


def fit_probe(
    encoder: nn.Module, data: LabeledImages, k: int, seed: int = 0, config: Optional[ProbeConfig] = None
) -> LinearProbe:
    """
    Train a k-way logistic-regression probe on frozen embeddings.

    Args:
        encoder: frozen encoder; never updated
        data: labeled training images
        k: number of classes (labels 0..k-1)
        seed: controls initialization and minibatch order
        config: optimizer settings (AdamW, cosine decay)

    Returns:
        LinearProbe

    Raises:
        DataError: a class has no training images
    """
    config = config or ProbeConfig()
    if k < 2:
        raise ValueError(f"A probe needs k >= 2 classes, got {k}")
    missing = sorted(set(range(k)) - set(data.labels.tolist()))
    if missing:
        raise DataError(f"Classes absent from the probe training set: {missing}")
    if data.labels.max().item() >= k or data.labels.min().item() < 0:
        raise DataError(f"Labels must lie in [0, {k}), got range [{data.labels.min()}, {data.labels.max()}]")

    before = encoder_hash(encoder)
    features = embed(encoder, data.images, config.batch_size)
    labels = data.labels

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "probe-init"))
        head = nn.Linear(features.shape[1], k)
    order = torch.Generator().manual_seed(derive_seed(seed, "probe-order"))
    optimizer = AdamW(head.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    steps_per_epoch = -(-len(features) // config.batch_size)
    scheduler = CosineAnnealingLR(optimizer, T_max=max(1, config.epochs * steps_per_epoch))

    for _ in range(config.epochs):
        perm = torch.randperm(len(features), generator=order)
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss = F.cross_entropy(head(features[idx]), labels[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()

    if encoder_hash(encoder) != before:
        raise DevDietError("Encoder parameters changed during probe training")

    with torch.no_grad():
        train_acc = (head(features).argmax(1) == labels).float().mean().item()
    logger.info(f"[OK] Probe trained: {k} classes, {len(features)} images, train acc {train_acc:.3f}")
    return LinearProbe(
        weight=head.weight.detach().clone(),
        bias=head.bias.detach().clone(),
        epochs=config.epochs,
        train_accuracy=train_acc,
        encoder_hash=before,
        seed=seed,
    )


def predict(probe: LinearProbe, encoder: nn.Module, data: LabeledImages, batch_size: int = 256) -> List[dict]:
    """Prediction rows {image_id, logits, argmax, label, ...extra}"""
    logits = probe.logits(embed(encoder, data.images, batch_size))
    rows = []
    for image_id, row_logits, label, extra in zip(data.ids, logits, data.labels.tolist(), data.extra):
        rows.append(
            {
                "image_id": image_id,
                "logits": [round(float(v), 6) for v in row_logits],
                "argmax": int(row_logits.argmax()),
                "label": int(label),
                **extra,
            }
        )
    return rows


def write_predictions(rows: Sequence[dict], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def read_predictions(path: Path) -> List[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Prediction file not found: {path}")
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def accuracy_from_rows(rows: Sequence[dict], label_key: str = "label") -> float:
    if not rows:
        raise UndefinedMetricError("Accuracy over zero predictions is undefined")
    correct = sum(1 for row in rows if row["argmax"] == row[label_key])
    return correct / len(rows)


def top1_accuracy(
    probe: LinearProbe, encoder: nn.Module, data: LabeledImages, predictions_path: Optional[Path] = None
) -> float:
    """Fraction of argmax-correct predictions; rows persisted when a path is given"""
    rows = predict(probe, encoder, data)
    if predictions_path is not None:
        write_predictions(rows, predictions_path)
    return accuracy_from_rows(rows)
