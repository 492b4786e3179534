import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pianoskill.model import BranchId, BranchOutputs, ModelOutputs, expected_level
from pianoskill.objective import TERMS, LossWeights, cross_entropy, reg_distance, total_loss
from pianoskill.validation import ValidationError


def outputs_from_logits(logits_by_branch):
    return ModelOutputs(
        branches={b: BranchOutputs(logits=l, predicted_level=expected_level(l)) for b, l in logits_by_branch.items()}
    )


def uniform_outputs(batch=3, level=5.5):
    z = torch.zeros(batch, 10, dtype=torch.float64)
    lv = torch.full((batch,), level, dtype=torch.float64)
    return ModelOutputs(branches={b: BranchOutputs(z, lv) for b in BranchId})


def test_reg_distance_examples():
    t = torch.tensor([5])
    assert reg_distance(torch.tensor([5.0]), t).item() == 0.0
    assert reg_distance(torch.tensor([6.0]), t).item() == 2.0
    assert reg_distance(torch.tensor([2.0]), t).item() == 12.0


@given(st.integers(1, 10), st.floats(0, 9), st.floats(0, 9))
def test_reg_distance_is_ordinal(t, d1, d2):
    if abs(d1 - d2) < 1e-6:
        return
    near, far = sorted((d1, d2))
    target = torch.tensor([t])
    p = lambda d: torch.tensor([t + d], dtype=torch.float64)  # noqa: E731
    assert reg_distance(p(near), target) < reg_distance(p(far), target)


def test_cross_entropy_uniform_and_targets():
    z = torch.zeros(4, 10, dtype=torch.float64)
    assert cross_entropy(z, torch.tensor([1, 4, 7, 10])).item() == pytest.approx(math.log(10), abs=1e-12)
    with pytest.raises(ValidationError):
        cross_entropy(z, torch.tensor([0, 1, 2, 3]))
    with pytest.raises(ValidationError):
        cross_entropy(z, torch.tensor([11, 1, 2, 3]))


def test_closed_form_total():
    out = uniform_outputs()
    loss = total_loss(out, torch.tensor([5, 5, 5]))
    expected = 3 * math.log(10) + 0.1 * 3 * (0.5 + 0.25)
    assert abs(loss.total.item() - expected) < 1e-9


def test_inactive_terms_vanish():
    out = uniform_outputs()
    loss = total_loss(out, torch.tensor([5, 5, 5]), active={BranchId.V})
    assert loss.total.item() == pytest.approx(math.log(10) + 0.1 * 0.75, abs=1e-12)
    f = loss.as_floats()
    assert set(f) == set(TERMS) | {"total"}
    assert f["ce_a"] == f["reg_a"] == f["ce_m"] == f["reg_m"] == 0.0


def test_zero_weights_and_missing_branch():
    out = uniform_outputs()
    assert total_loss(out, torch.tensor([5, 5, 5]), LossWeights(0, 0, 0, 0, 0, 0)).total.item() == 0.0
    partial = ModelOutputs(branches={BranchId.V: out[BranchId.V]})
    with pytest.raises(ValidationError):
        total_loss(partial, torch.tensor([5, 5, 5]), active={"V", "A"})
    with pytest.raises(ValidationError):
        LossWeights(alpha1=-1)


def test_perfect_prediction_is_near_zero():
    t = torch.tensor([1, 4, 10])
    logits = torch.full((3, 10), -50.0, dtype=torch.float64)
    logits[torch.arange(3), t - 1] = 50.0
    loss = total_loss(outputs_from_logits({b: logits for b in BranchId}), t)
    assert loss.total.item() < 1e-6


def test_weight_linearity():
    torch.manual_seed(0)
    out = outputs_from_logits({b: torch.randn(4, 10, dtype=torch.float64) for b in BranchId})
    t = torch.tensor([2, 3, 9, 5])
    base = total_loss(out, t)
    doubled = total_loss(out, t, LossWeights(alpha2=0.2))
    assert (doubled.total - base.total).item() == pytest.approx(0.1 * base.reg_v.item(), rel=1e-12)


@given(st.integers(0, 10_000))
def test_non_negative(seed):
    g = torch.Generator().manual_seed(seed)
    out = outputs_from_logits({b: 5 * torch.randn(3, 10, generator=g, dtype=torch.float64) for b in BranchId})
    t = torch.randint(1, 11, (3,), generator=g)
    assert total_loss(out, t).total.item() >= 0


def test_mean_reduction_is_batch_size_invariant():
    torch.manual_seed(2)
    l = torch.randn(2, 10, dtype=torch.float64)
    t = torch.tensor([3, 8])
    one = total_loss(outputs_from_logits({BranchId.V: l}), t).total
    two = total_loss(outputs_from_logits({BranchId.V: l.repeat(2, 1)}), t.repeat(2)).total
    assert one.item() == pytest.approx(two.item(), rel=1e-14)


def test_logit_gradient_matches_finite_differences():
    torch.manual_seed(5)
    logits = {b: torch.randn(3, 10, dtype=torch.float64, requires_grad=True) for b in BranchId}
    t = torch.tensor([1, 6, 10])

    def f():
        return total_loss(outputs_from_logits(logits), t).total

    f().backward()
    eps = 1e-6
    for b, l in logits.items():
        numeric = torch.zeros_like(l)
        with torch.no_grad():
            for idx in range(l.numel()):
                flat = l.view(-1)
                old = flat[idx].item()
                flat[idx] = old + eps
                up = f().item()
                flat[idx] = old - eps
                down = f().item()
                flat[idx] = old
                numeric.view(-1)[idx] = (up - down) / (2 * eps)
        torch.testing.assert_close(l.grad, numeric, rtol=1e-4, atol=1e-8)


def test_breakdown_json():
    loss = total_loss(uniform_outputs(), torch.tensor([5, 5, 5]))
    line = loss.to_json(step=3)
    assert '"step": 3' in line and '"ce_v"' in line and "\n" not in line
