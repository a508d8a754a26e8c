"""
Frame sampling protocols and positive-group construction
"""
import logging
from typing import Dict, Iterable, List, Sequence

import numpy as np

from ops.errors import SamplingError
from ops.seeding import derive_seed, numpy_rng
from stimuli.types import EgoStream, FrameRef, PositiveGroup, VideoClip

logger = logging.getLogger(__name__)


def _check_length(clip: VideoClip, k: int):
    if k < 1:
        raise SamplingError(f"k must be positive, got {k}")
    if len(clip) < k:
        raise SamplingError(f"Clip {clip.id} has {len(clip)} frames, {k} requested")


def training_indices(n_frames: int, k: int) -> List[int]:
    """floor(i * T / k) for i < k: evenly spaced, strictly increasing"""
    return [(i * n_frames) // k for i in range(k)]


def sample_training_frames(clip: VideoClip, k: int = 10, seed=None) -> List[FrameRef]:
    """
    k frames at uniform index spacing spanning the clip.

    The spacing is deterministic; seed is accepted so both samplers share
    one signature.
    """
    _check_length(clip, k)
    return [clip.ref(i) for i in training_indices(len(clip), k)]


def sample_test_frames(clip: VideoClip, k: int = 2, seed=0) -> List[FrameRef]:
    """k distinct frames drawn uniformly without replacement, in clip order"""
    _check_length(clip, k)
    rng = numpy_rng(derive_seed(seed, clip.id, "test-frames"))
    picked = sorted(int(i) for i in rng.choice(len(clip), size=k, replace=False))
    return [clip.ref(i) for i in picked]


def subsample_egocentric(
    stream: EgoStream, clip_seconds: float = 2.0, stride_seconds: float = 120.0, fps: float = 5.0
) -> List[VideoClip]:
    """
    Cut one clip_seconds clip at every stride boundary, resampled to fps.

    Trailing partial clips are dropped; a stream shorter than one clip
    yields an empty list.
    """
    n_per_clip = int(round(clip_seconds * fps))
    clips = []
    start = 0.0
    while start + clip_seconds <= stream.duration + 1e-9:
        times = [start + j / fps for j in range(n_per_clip)]
        indices = [min(int(round(t * stream.fps)), len(stream.frames) - 1) for t in times]
        clips.append(
            VideoClip(
                id=f"{stream.id}@{int(round(start))}s",
                frames=np.asarray(stream.frames)[indices],
                times=tuple(times),
            )
        )
        start += stride_seconds
    logger.debug(f"Stream {stream.id}: {len(clips)} clips of {n_per_clip} frames")
    return clips


def make_positive_groups(frames: Sequence[FrameRef], window: int = 1, start_id: int = 0) -> List[PositiveGroup]:
    """
    Greedy groups of window+1 consecutive sampled frames.

    Groups never span two clips; window=0 gives singletons.
    """
    if window < 0:
        raise ValueError(f"window must be >= 0, got {window}")
    groups: List[PositiveGroup] = []
    current: List[FrameRef] = []
    for ref in frames:
        if current and (len(current) == window + 1 or current[-1].clip_id != ref.clip_id):
            groups.append(PositiveGroup(start_id + len(groups), current))
            current = []
        current.append(ref)
    if current:
        groups.append(PositiveGroup(start_id + len(groups), current))
    return groups


def group_index(groups: Iterable[PositiveGroup]) -> Dict[str, int]:
    """frame id -> group id; a frame in two groups is an error"""
    index: Dict[str, int] = {}
    for group in groups:
        for frame_id in group.member_ids:
            if frame_id in index:
                raise ValueError(f"Frame {frame_id} appears in groups {index[frame_id]} and {group.group_id}")
            index[frame_id] = group.group_id
    return index


def split_instances(ids: Sequence[str], labels: Sequence[int], test_fraction: float, seed) -> Dict[str, str]:
    """
    Assign whole instances to train or test, stratified by label.

    Returns instance id -> "train" | "test".
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in [0, 1), got {test_fraction}")
    by_label: Dict[int, List[str]] = {}
    for instance_id, label in zip(ids, labels):
        by_label.setdefault(label, []).append(instance_id)
    splits = {}
    for label, members in sorted(by_label.items(), key=lambda kv: str(kv[0])):
        rng = numpy_rng(derive_seed(seed, "split", label))
        order = rng.permutation(len(members))
        n_test = int(round(test_fraction * len(members)))
        for rank, idx in enumerate(order):
            splits[members[idx]] = "test" if rank < n_test else "train"
    return splits
