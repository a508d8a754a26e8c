"""
Training batches - whole-clip packing, positive groups and per-frame views
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import torch

from curriculum.schedules import TrainingPlan, build_tdiet
from imaging.transforms import N_LOCAL_VIEWS, REFERENCE_RESOLUTION, AugmentedViews, diet_views, sdiet_views
from learner.losses import EmbeddingBatch
from ops.seeding import derive_seed, numpy_rng
from stimuli.sampling import make_positive_groups, sample_training_frames
from stimuli.types import FrameRef, PositiveGroup, VideoClip, VideoDataset

logger = logging.getLogger(__name__)


@dataclass
class TrainingBatch:
    """
    Views of every frame in a batch, split by crop size.

    Global views come first in view-id order, local views after them.
    """

    global_views: torch.Tensor
    global_groups: torch.Tensor
    local_views: Optional[torch.Tensor]
    local_groups: Optional[torch.Tensor]
    groups: List[PositiveGroup]
    params: List[dict]
    epoch: int
    phase: int
    stage: Optional[int]

    @property
    def n_global(self) -> int:
        return len(self.global_views)

    @property
    def n_local(self) -> int:
        return 0 if self.local_views is None else len(self.local_views)

    def global_rows(self, outputs: torch.Tensor) -> EmbeddingBatch:
        return EmbeddingBatch(outputs, self.global_groups, ("global",) * self.n_global, torch.arange(self.n_global))

    def student_rows(self, global_out: torch.Tensor, local_out: Optional[torch.Tensor]) -> EmbeddingBatch:
        if local_out is None:
            return self.global_rows(global_out)
        kinds = ("global",) * self.n_global + ("local",) * self.n_local
        return EmbeddingBatch(
            torch.cat([global_out, local_out]),
            torch.cat([self.global_groups, self.local_groups]),
            kinds,
            torch.arange(self.n_global + self.n_local),
        )


def clips_per_batch(batch_size: int, frames_per_video: int) -> int:
    """Whole clips per batch, at least two so cross-video negatives exist"""
    return max(2, batch_size // frames_per_video)


def _frame_views(
    clip: VideoClip, ref: FrameRef, plan: TrainingPlan, epoch: int, seed, n_local: int, identity: bool
) -> AugmentedViews:
    image = clip.frame(ref.index)
    view_seed = derive_seed(seed, "views", epoch, ref.frame_id)
    if identity:
        stage = build_tdiet(1).stages[0]
    else:
        stage = plan.draw_stage(epoch, numpy_rng(derive_seed(seed, "stage", epoch, ref.frame_id)))
    if stage is None:
        return sdiet_views(image, plan.learner_kind, view_seed, ref.frame_id, n_local)
    return diet_views(image, stage, plan.learner_kind, view_seed, ref.frame_id, n_local, REFERENCE_RESOLUTION)


def build_batch(
    clips: Sequence[VideoClip],
    plan: TrainingPlan,
    epoch: int,
    seed,
    frames_per_video: int,
    n_local: int = N_LOCAL_VIEWS,
    workers: int = 1,
    identity: bool = False,
) -> TrainingBatch:
    """
    Sample frames from each clip, group adjacent frames and render views.

    identity replaces the plan's augmentation with the identity diet
    (crops and flips only), used for the Fisher probe set.
    """
    by_id = {clip.id: clip for clip in clips}
    refs: List[FrameRef] = []
    for clip in clips:
        refs.extend(sample_training_frames(clip, frames_per_video, seed))
    groups = make_positive_groups(refs, plan.group_window)
    owner = {frame_id: g.group_id for g in groups for frame_id in g.member_ids}

    def render(ref):
        return _frame_views(by_id[ref.clip_id], ref, plan, epoch, seed, n_local, identity)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rendered = list(pool.map(render, refs))
    else:
        rendered = [render(ref) for ref in refs]

    globals_, global_groups, locals_, local_groups, params = [], [], [], [], []
    for ref, views in zip(refs, rendered):
        for view, record, is_global in zip(views.views, views.params, views.is_global):
            if is_global:
                globals_.append(view)
                global_groups.append(owner[ref.frame_id])
            else:
                locals_.append(view)
                local_groups.append(owner[ref.frame_id])
            params.append({"frame_id": ref.frame_id, **record.to_dict()})

    return TrainingBatch(
        global_views=torch.stack(globals_),
        global_groups=torch.tensor(global_groups, dtype=torch.long),
        local_views=torch.stack(locals_) if locals_ else None,
        local_groups=torch.tensor(local_groups, dtype=torch.long) if locals_ else None,
        groups=groups,
        params=params,
        epoch=epoch,
        phase=plan.phase_at(epoch),
        stage=None if identity else plan.stage_number(epoch),
    )


def train_clips(dataset: VideoDataset) -> List[VideoClip]:
    clips = list(dataset.split("train").clips)
    return clips if clips else list(dataset.clips)


def epoch_batches(
    dataset: VideoDataset,
    plan: TrainingPlan,
    epoch: int,
    seed,
    batch_size: int = 64,
    frames_per_video: int = 10,
    n_local: int = N_LOCAL_VIEWS,
    workers: int = 1,
) -> Iterator[TrainingBatch]:
    """Batches for one epoch; clip order is reshuffled per epoch from the seed"""
    clips = train_clips(dataset)
    if not clips:
        raise ValueError(f"Dataset '{dataset.name}' has no clips to train on")
    order = numpy_rng(derive_seed(seed, "epoch-order", epoch)).permutation(len(clips))
    per_batch = clips_per_batch(batch_size, frames_per_video)
    for start in range(0, len(order), per_batch):
        chunk = [clips[i] for i in order[start : start + per_batch]]
        yield build_batch(chunk, plan, epoch, seed, frames_per_video, n_local, workers)


def n_batches(dataset: VideoDataset, batch_size: int, frames_per_video: int) -> int:
    per_batch = clips_per_batch(batch_size, frames_per_video)
    return -(-len(train_clips(dataset)) // per_batch)


def probe_batches(
    dataset: VideoDataset,
    plan: TrainingPlan,
    seed,
    count: int = 8,
    batch_size: int = 64,
    frames_per_video: int = 10,
    n_local: int = N_LOCAL_VIEWS,
) -> List[TrainingBatch]:
    """
    Fixed Fisher probe set: identity-diet views of held-out clips.

    Falls back to training clips when the dataset has no test split.
    """
    clips = list(dataset.split("test").clips) or list(dataset.clips)
    probe_seed = derive_seed(seed, "fim-probe")
    order = numpy_rng(probe_seed).permutation(len(clips))
    per_batch = clips_per_batch(batch_size, frames_per_video)
    batches = []
    for b in range(count):
        chunk = [clips[order[(b * per_batch + j) % len(order)]] for j in range(min(per_batch, len(order)))]
        batches.append(build_batch(chunk, plan, 0, derive_seed(probe_seed, b), frames_per_video, n_local, identity=True))
    return batches
