"""
Tests for the contrastive and distillation objectives
"""
import math

import pytest
import torch
import torch.nn.functional as F

from learner.losses import EmbeddingBatch, contrastive_tdiet_loss, distillation_tdiet_loss
from ops.errors import NumericError


def two_view_oracle(z, temperature):
    """Brute-force NT-Xent over rows paired (0,1), (2,3), ..."""
    z = [v / v.norm() for v in z]
    n = len(z)
    total = 0.0
    for i in range(n):
        partner = i ^ 1
        numerator = math.exp(float(z[i] @ z[partner]) / temperature)
        denominator = sum(math.exp(float(z[i] @ z[a]) / temperature) for a in range(n) if a != i)
        total += -math.log(numerator / denominator)
    return total / n


def central_differences(fn, params, eps=1e-6):
    grads = torch.zeros_like(params)
    flat = params.view(-1)
    for i in range(flat.numel()):
        original = flat[i].item()
        flat[i] = original + eps
        plus = fn(params).item()
        flat[i] = original - eps
        minus = fn(params).item()
        flat[i] = original
        grads.view(-1)[i] = (plus - minus) / (2 * eps)
    return grads


def test_single_pair_loss_is_zero():
    batch = EmbeddingBatch(torch.randn(2, 8), [0, 0])
    assert contrastive_tdiet_loss(batch, 0.5).item() == pytest.approx(0.0, abs=1e-7)


def test_orthogonal_pairs_closed_form():
    e1, e2 = torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])
    batch = EmbeddingBatch(torch.stack([e1, e1, e2, e2]), [0, 0, 1, 1])
    expected = math.log(1 + 2 * math.exp(-2))
    assert contrastive_tdiet_loss(batch, 0.5).item() == pytest.approx(expected, abs=1e-6)
    assert expected == pytest.approx(0.2395, abs=1e-4)


def test_permutation_invariance():
    torch.manual_seed(0)
    z = torch.randn(12, 16)
    groups = torch.tensor([0, 0, 0, 1, 1, 2, 2, 2, 2, 3, 3, 4])
    base = contrastive_tdiet_loss(EmbeddingBatch(z, groups), 0.2)
    perm = torch.randperm(12)
    shuffled = contrastive_tdiet_loss(EmbeddingBatch(z[perm], groups[perm]), 0.2)
    assert shuffled.item() == pytest.approx(base.item(), abs=1e-6)


@pytest.mark.parametrize("n_frames", [1, 2, 5, 8])
def test_same_frame_groups_match_two_view_oracle(n_frames):
    torch.manual_seed(n_frames)
    z = torch.randn(2 * n_frames, 6, dtype=torch.float64)
    groups = torch.arange(n_frames).repeat_interleave(2)
    loss = contrastive_tdiet_loss(EmbeddingBatch(z, groups), 0.3)
    assert loss.item() == pytest.approx(two_view_oracle(z, 0.3), abs=1e-6)
    alt = contrastive_tdiet_loss(EmbeddingBatch(z, groups), 0.3, aggregation="log_mean_ratio")
    assert alt.item() == pytest.approx(loss.item(), abs=1e-9)


def test_scale_invariance():
    torch.manual_seed(1)
    z = torch.randn(8, 4)
    groups = [0, 0, 1, 1, 2, 2, 2, 3]
    a = contrastive_tdiet_loss(EmbeddingBatch(z, groups), 0.1)
    b = contrastive_tdiet_loss(EmbeddingBatch(7.5 * z, groups), 0.1)
    assert a.item() == pytest.approx(b.item(), abs=1e-5)


def test_no_positives_gives_zero_and_warns(caplog):
    z = torch.randn(4, 3, requires_grad=True)
    loss = contrastive_tdiet_loss(EmbeddingBatch(z, [0, 1, 2, 3]), 0.1)
    assert loss.item() == 0.0
    loss.backward()
    assert "no positive pairs" in caplog.text


def test_non_finite_and_argument_errors():
    z = torch.randn(4, 3)
    z[1, 0] = float("nan")
    with pytest.raises(NumericError):
        contrastive_tdiet_loss(EmbeddingBatch(z, [0, 0, 1, 1]), 0.1)
    with pytest.raises(ValueError):
        contrastive_tdiet_loss(EmbeddingBatch(torch.randn(1, 3), [0]), 0.1)
    with pytest.raises(ValueError):
        contrastive_tdiet_loss(EmbeddingBatch(torch.randn(2, 3), [0, 0]), 0.0)
    with pytest.raises(ValueError):
        EmbeddingBatch(torch.randn(3, 3), [0, 0])


@pytest.mark.parametrize("aggregation", ["mean_log_ratio", "log_mean_ratio"])
def test_contrastive_gradient_matches_finite_differences(aggregation):
    torch.manual_seed(2)
    inputs = torch.randn(6, 5, dtype=torch.float64)
    groups = torch.tensor([0, 0, 0, 1, 1, 2])
    weight = torch.randn(2, 5, dtype=torch.float64)

    def loss_of(w):
        return contrastive_tdiet_loss(EmbeddingBatch(inputs @ w.T, groups), 0.5, aggregation)

    w = weight.clone().requires_grad_(True)
    loss_of(w).backward()
    numeric = central_differences(loss_of, weight.clone())
    assert torch.allclose(w.grad, numeric, rtol=1e-4, atol=1e-8)


def distill_batches(student_logits, teacher_logits, groups, n_global):
    student = EmbeddingBatch(
        student_logits,
        groups,
        ("global",) * n_global + ("local",) * (len(groups) - n_global),
    )
    teacher = EmbeddingBatch(teacher_logits, groups[:n_global], ("global",) * n_global)
    return student, teacher


def test_distillation_equal_outputs_give_teacher_entropy():
    logits = torch.tensor([[1.0, 0.2, -0.5, 0.3]]).repeat(2, 1)
    groups = torch.tensor([0, 0])
    student, teacher = distill_batches(logits, logits.clone(), groups, 2)
    loss, _ = distillation_tdiet_loss(student, teacher, 0.1, 0.1, torch.zeros(1, 4))
    p = F.softmax(logits[0] / 0.1, dim=-1)
    entropy = -(p * p.log()).sum()
    assert loss.item() == pytest.approx(entropy.item(), abs=1e-5)


def test_distillation_pair_enumeration():
    torch.manual_seed(3)
    s, t = torch.randn(2, 5), torch.randn(2, 5)
    groups = torch.tensor([0, 0])
    student, teacher = distill_batches(s, t, groups, 2)
    loss, _ = distillation_tdiet_loss(student, teacher, 0.1, 0.04, torch.zeros(1, 5))
    pt = F.softmax(t / 0.04, dim=-1)
    ls = F.log_softmax(s / 0.1, dim=-1)
    pairs = [-(pt[0] * ls[1]).sum(), -(pt[1] * ls[0]).sum()]
    assert loss.item() == pytest.approx(sum(pairs).item() / 2, abs=1e-5)


def test_distillation_pairs_span_group_with_local_views():
    torch.manual_seed(4)
    groups = torch.tensor([0, 0, 1, 1, 0, 0, 1, 1])
    n_global = 4
    s, t = torch.randn(8, 6), torch.randn(4, 6)
    student, teacher = distill_batches(s, t, groups, n_global)
    loss, _ = distillation_tdiet_loss(student, teacher, 0.1, 0.04, torch.zeros(1, 6))
    pt = F.softmax(t / 0.04, dim=-1)
    ls = F.log_softmax(s / 0.1, dim=-1)
    terms = [-(pt[i] * ls[j]).sum() for i in range(4) for j in range(8) if groups[i] == groups[j] and i != j]
    assert len(terms) == 2 * 2 * 4 - 4
    assert loss.item() == pytest.approx(torch.stack(terms).mean().item(), abs=1e-5)


def test_distillation_center_shift_invariance_and_update():
    torch.manual_seed(5)
    s, t = torch.randn(4, 6), torch.randn(2, 6)
    groups = torch.tensor([0, 0, 0, 0])
    student, teacher = distill_batches(s, t, groups, 2)
    center = torch.randn(1, 6)
    a, new_center = distillation_tdiet_loss(student, teacher, 0.1, 0.04, center)
    b, _ = distillation_tdiet_loss(student, teacher, 0.1, 0.04, center + 3.0)
    assert a.item() == pytest.approx(b.item(), abs=1e-6)
    assert torch.allclose(new_center, 0.9 * center + 0.1 * t.mean(0, keepdim=True))


def test_distillation_teacher_gets_no_gradient_and_orphans_warn(caplog):
    s = torch.randn(4, 3, requires_grad=True)
    t = torch.randn(2, 3, requires_grad=True)
    student = EmbeddingBatch(s, [0, 0, 1, 1])
    teacher = EmbeddingBatch(t, [0, 0], view_ids=[0, 1])
    loss, _ = distillation_tdiet_loss(student, teacher, 0.1, 0.04, torch.zeros(1, 3))
    loss.backward()
    assert t.grad is None
    assert s.grad[2:].abs().sum().item() == 0.0
    assert "without a teacher global view" in caplog.text


def test_distillation_gradient_matches_finite_differences():
    torch.manual_seed(6)
    inputs = torch.randn(6, 5, dtype=torch.float64)
    teacher_logits = torch.randn(2, 2, dtype=torch.float64)
    groups = torch.tensor([0, 0, 0, 0, 0, 0])
    weight = torch.randn(2, 5, dtype=torch.float64)

    def loss_of(w):
        student, teacher = distill_batches(inputs @ w.T, teacher_logits, groups, 2)
        return distillation_tdiet_loss(student, teacher, 0.5, 0.2, torch.zeros(1, 2, dtype=torch.float64))[0]

    w = weight.clone().requires_grad_(True)
    loss_of(w).backward()
    numeric = central_differences(loss_of, weight.clone())
    assert torch.allclose(w.grad, numeric, rtol=1e-4, atol=1e-8)
