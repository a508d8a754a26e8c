"""
Plasticity tracking - empirical Fisher information trace
"""
import copy
import logging
from typing import Callable, Sequence

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)


def fim_trace(
    model: nn.Module,
    loss_fn: Callable[[nn.Module, object], torch.Tensor],
    batches: Sequence,
    seed: int = 0,
) -> float:
    """
    Mean over batches of the summed squared loss gradients.

    Runs on a copy of the model, so parameters, buffers and gradients of
    the caller's model are untouched.

    Args:
        model: network whose parameters are probed
        loss_fn: loss_fn(model, batch) -> scalar loss
        batches: fixed probe batches
        seed: torch seed for any stochastic layers

    Returns:
        Non-negative trace estimate
    """
    if len(batches) == 0:
        raise ValueError("fim_trace needs at least one batch")
    probe = copy.deepcopy(model)
    probe.eval()
    params = [p for p in probe.parameters() if p.requires_grad]
    total = 0.0
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for batch in batches:
            probe.zero_grad(set_to_none=True)
            loss = loss_fn(probe, batch)
            grads = torch.autograd.grad(loss, params, allow_unused=True)
            total += sum(float((g.detach().double() ** 2).sum()) for g in grads if g is not None)
    trace = total / len(batches)
    logger.debug(f"FIM trace {trace:.6g} over {len(batches)} batches")
    return trace
