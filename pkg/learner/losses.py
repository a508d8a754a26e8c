"""
Temporal-positive objectives - contrastive (multi-positive InfoNCE) and
self-distillation over groups of adjacent frames
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from ops.errors import NumericError

logger = logging.getLogger(__name__)

AGGREGATIONS = ("mean_log_ratio", "log_mean_ratio")


@dataclass
class EmbeddingBatch:
    """
    Encoder outputs with positive-group structure.

    view_ids identify a rendered view so a teacher row can be matched to
    the student row of the same view.
    """

    embeddings: torch.Tensor
    group_ids: torch.Tensor
    view_kinds: Tuple[str, ...] = ()
    view_ids: Optional[torch.Tensor] = None
    frame_ids: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        n = len(self.embeddings)
        self.group_ids = torch.as_tensor(self.group_ids, dtype=torch.long, device=self.embeddings.device)
        if self.group_ids.shape != (n,):
            raise ValueError(f"group_ids must have shape ({n},), got {tuple(self.group_ids.shape)}")
        if not self.view_kinds:
            self.view_kinds = ("global",) * n
        if len(self.view_kinds) != n:
            raise ValueError(f"{len(self.view_kinds)} view kinds for {n} rows")
        if self.view_ids is None:
            self.view_ids = torch.arange(n, device=self.embeddings.device)
        self.view_ids = torch.as_tensor(self.view_ids, dtype=torch.long, device=self.embeddings.device)

    def __len__(self) -> int:
        return len(self.embeddings)


def _check_finite(tensor: torch.Tensor, what: str):
    if not torch.isfinite(tensor).all():
        raise NumericError(f"Non-finite values in {what}")


def contrastive_tdiet_loss(
    batch: EmbeddingBatch, temperature: float, aggregation: str = "mean_log_ratio"
) -> torch.Tensor:
    """
    Multi-positive InfoNCE: positives share a group id, every other row is a negative.

    mean_log_ratio averages log-softmax terms over the positives;
    log_mean_ratio averages the probabilities inside the log. Both equal
    the two-view loss when each anchor has one positive.

    Args:
        batch: embeddings (N, D) with group ids
        temperature: softmax temperature
        aggregation: "mean_log_ratio" or "log_mean_ratio"

    Returns:
        Scalar loss (mean over anchors with at least one positive)
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"Unknown aggregation '{aggregation}'; expected one of {AGGREGATIONS}")
    if len(batch) < 2:
        raise ValueError(f"Contrastive loss needs at least 2 rows, got {len(batch)}")
    _check_finite(batch.embeddings, "embeddings")

    z = F.normalize(batch.embeddings, dim=1)
    logits = z @ z.T / temperature
    n = len(z)
    self_mask = torch.eye(n, dtype=torch.bool, device=z.device)
    pos_mask = (batch.group_ids[:, None] == batch.group_ids[None, :]) & ~self_mask
    counts = pos_mask.sum(dim=1)
    anchors = counts > 0
    if not anchors.any():
        logger.warning("[WARN] Contrastive batch has no positive pairs, loss set to 0")
        return batch.embeddings.sum() * 0.0

    log_denom = torch.logsumexp(logits.masked_fill(self_mask, float("-inf")), dim=1)
    if aggregation == "mean_log_ratio":
        log_prob = logits - log_denom[:, None]
        per_anchor = -(log_prob * pos_mask).sum(dim=1)[anchors] / counts[anchors]
    else:
        log_pos = torch.logsumexp(logits.masked_fill(~pos_mask, float("-inf")), dim=1)
        per_anchor = -(log_pos - torch.log(counts.clamp(min=1).to(logits.dtype)) - log_denom)[anchors]
    return per_anchor.mean()


def distillation_tdiet_loss(
    student: EmbeddingBatch,
    teacher: EmbeddingBatch,
    student_temperature: float,
    teacher_temperature: float,
    center: torch.Tensor,
    center_momentum: float = 0.9,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Cross-entropy from centered, sharpened teacher outputs to student outputs.

    Every (teacher global view, student view) pair inside one group
    contributes, except a view paired with itself. Teacher probabilities
    carry no gradient.

    Returns:
        (loss, updated center)
    """
    if len(teacher) == 0:
        raise ValueError("Distillation loss needs at least one teacher row")
    if any(kind != "global" for kind in teacher.view_kinds):
        raise ValueError("Teacher rows must be global views")
    _check_finite(student.embeddings, "student outputs")
    _check_finite(teacher.embeddings, "teacher outputs")

    teacher_logits = teacher.embeddings.detach()
    teacher_probs = F.softmax((teacher_logits - center) / teacher_temperature, dim=-1)
    student_logp = F.log_softmax(student.embeddings / student_temperature, dim=-1)

    same_group = teacher.group_ids[:, None] == student.group_ids[None, :]
    pair_mask = same_group & (teacher.view_ids[:, None] != student.view_ids[None, :])

    orphan = ~torch.isin(student.group_ids, teacher.group_ids)
    if orphan.any():
        skipped = sorted(set(student.group_ids[orphan].tolist()))
        logger.warning(f"[WARN] Groups without a teacher global view skipped: {skipped}")

    batch_center = teacher_logits.mean(dim=0, keepdim=True)
    new_center = center * center_momentum + batch_center * (1.0 - center_momentum)

    if not pair_mask.any():
        logger.warning("[WARN] Distillation batch has no teacher/student pairs, loss set to 0")
        return student.embeddings.sum() * 0.0, new_center

    cross_entropy = -(teacher_probs @ student_logp.T)
    return cross_entropy[pair_mask].mean(), new_center
