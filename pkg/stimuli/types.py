"""
Stimulus types - video clips, positive groups, scene specs and datasets
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from imaging.transforms import AugmentedViews, from_uint8, load_image
from ops.errors import DegenerateSceneError

MIN_GAP_FRACTION = 0.05
SCENE_KINDS = ("depth_order", "cliff_view")


@dataclass(frozen=True)
class FrameRef:
    """One frame of one clip, addressed by index"""

    clip_id: str
    index: int
    t: float

    @property
    def frame_id(self) -> str:
        return f"{self.clip_id}#{self.index}"


@dataclass(frozen=True, eq=False)
class VideoClip:
    """
    Ordered frames of one object-centric video.

    frames is a uint8 array (T, H, W, 3); times holds the per-frame
    timestamp (seconds) or azimuth (degrees) and must increase strictly.
    """

    id: str
    frames: np.ndarray
    times: Tuple[float, ...]
    label: Optional[int] = None
    split: str = "train"

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 4 or frames.shape[-1] != 3:
            raise ValueError(f"{self.id}: frames must be (T, H, W, 3), got {frames.shape}")
        if frames.dtype != np.uint8:
            raise ValueError(f"{self.id}: frames must be uint8, got {frames.dtype}")
        if len(frames) < 2:
            raise ValueError(f"{self.id}: a clip needs at least 2 frames, got {len(frames)}")
        times = tuple(float(t) for t in self.times)
        if len(times) != len(frames):
            raise ValueError(f"{self.id}: {len(times)} timestamps for {len(frames)} frames")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"{self.id}: timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "times", times)

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> torch.Tensor:
        return from_uint8(self.frames[index])

    def ref(self, index: int) -> FrameRef:
        return FrameRef(self.id, index, self.times[index])


@dataclass(frozen=True)
class EgoStream:
    """Long egocentric recording sampled at a fixed rate"""

    id: str
    frames: np.ndarray
    fps: float

    @property
    def duration(self) -> float:
        return len(self.frames) / self.fps


@dataclass
class PositiveGroup:
    """Temporally adjacent frames whose augmented views are mutual positives"""

    group_id: int
    members: List[FrameRef]
    views: List[AugmentedViews] = field(default_factory=list)

    @property
    def member_ids(self) -> List[str]:
        return [m.frame_id for m in self.members]


@dataclass(frozen=True)
class SceneSpec:
    """
    Arrow and ball placed in front of a camera.

    The label is derived from the stored positions: arrow_closer is True
    when the arrow is strictly nearer to the camera. Near ties (gap below
    min_gap_fraction of the larger distance) are rejected.
    """

    seed: int
    arrow: Tuple[float, float, float]
    ball: Tuple[float, float, float]
    camera_position: Tuple[float, float, float]
    camera_target: Tuple[float, float, float]
    fov_deg: float = 60.0
    kind: str = "depth_order"
    min_gap_fraction: float = MIN_GAP_FRACTION

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"Unknown scene kind {self.kind!r}; expected one of {SCENE_KINDS}")
        for name in ("arrow", "ball", "camera_position", "camera_target"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        near, far = sorted((self.arrow_distance, self.ball_distance))
        if far - near < self.min_gap_fraction * far:
            raise DegenerateSceneError(
                f"Arrow and ball distances too close ({self.arrow_distance:.3f} m vs {self.ball_distance:.3f} m)"
            )

    @property
    def arrow_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.arrow, self.camera_position)))

    @property
    def ball_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.ball, self.camera_position)))

    @property
    def arrow_closer(self) -> bool:
        return self.arrow_distance < self.ball_distance

    @property
    def label(self) -> int:
        """1 = yes (arrow closer), 0 = no"""
        return int(self.arrow_closer)

    def mirrored(self) -> "SceneSpec":
        """Swap the arrow and ball distances along their rays"""
        cam = np.asarray(self.camera_position)
        arrow_dir = np.subtract(self.arrow, cam) / self.arrow_distance
        ball_dir = np.subtract(self.ball, cam) / self.ball_distance
        return SceneSpec(
            seed=self.seed,
            arrow=tuple(cam + arrow_dir * self.ball_distance),
            ball=tuple(cam + ball_dir * self.arrow_distance),
            camera_position=self.camera_position,
            camera_target=self.camera_target,
            fov_deg=self.fov_deg,
            kind=self.kind,
            min_gap_fraction=self.min_gap_fraction,
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "arrow": list(self.arrow),
            "ball": list(self.ball),
            "camera_position": list(self.camera_position),
            "camera_target": list(self.camera_target),
            "fov_deg": self.fov_deg,
            "kind": self.kind,
            "label": self.label,
        }


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """A single labelled image held in memory or on disk"""

    id: str
    label: int
    array: Optional[np.ndarray] = None
    path: Optional[Path] = None
    split: str = "train"
    extra: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.array is None and self.path is None:
            raise ValueError(f"{self.id}: an image record needs an array or a path")

    def image(self) -> torch.Tensor:
        if self.array is not None:
            return from_uint8(self.array)
        return load_image(self.path)


@dataclass(frozen=True, eq=False)
class ImageDataset:
    name: str
    records: Tuple[ImageRecord, ...]
    classes: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, name: str) -> "ImageDataset":
        return ImageDataset(self.name, tuple(r for r in self.records if r.split == name), self.classes)


@dataclass(frozen=True, eq=False)
class VideoDataset:
    name: str
    clips: Tuple[VideoClip, ...]
    classes: Tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)

    def split(self, name: str) -> "VideoDataset":
        return VideoDataset(self.name, tuple(c for c in self.clips if c.split == name), self.classes)

    def by_id(self) -> Dict[str, VideoClip]:
        return {c.id: c for c in self.clips}


def stack_images(images: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.stack(list(images)) if images else torch.empty(0, 3, 0, 0)
