"""
Teacher momentum - EMA parameter update and the per-phase cosine ramp
"""
import math

import torch
import torch.nn as nn


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, momentum: float) -> nn.Module:
    """
    teacher <- m * teacher + (1 - m) * student, parameter by parameter.

    Raises:
        ValueError: momentum outside [0, 1] or mismatched parameter shapes
    """
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise ValueError("Teacher and student have different parameter names")
    for name, t in t_params.items():
        s = s_params[name]
        if t.shape != s.shape:
            raise ValueError(f"Shape mismatch for {name}: teacher {tuple(t.shape)} vs student {tuple(s.shape)}")
        if momentum == 1.0:
            continue
        t.mul_(momentum).add_(s.detach(), alpha=1.0 - momentum)
    return teacher


def momentum_at(step_in_phase: int, phase_steps: int, start: float = 0.996, end: float = 1.0) -> float:
    """
    Cosine ramp from start to end across one phase.

    step_in_phase restarts at 0 when Phase 2 begins, which puts the
    momentum back at start.
    """
    if phase_steps <= 1:
        return start
    progress = min(max(step_in_phase / (phase_steps - 1), 0.0), 1.0)
    return end - (end - start) * (math.cos(math.pi * progress) + 1.0) / 2.0
