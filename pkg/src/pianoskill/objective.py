"""Per-branch classification + ordinal distance objective.

For each active branch ``b`` the loss is ``w_ce[b] * CE + w_reg[b] * (|p - t| + (p - t)^2)``
where ``p`` is the branch's predicted level and ``t`` the true player level.
Batch terms are means over the batch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from .model import BranchId, ModelOutputs
from .validation import ValidationError

TERMS = ("ce_v", "reg_v", "ce_a", "reg_a", "ce_m", "reg_m")


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.1
    beta1: float = 1.0
    beta2: float = 0.1
    gamma1: float = 1.0
    gamma2: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValidationError(f"loss weights must be >= 0, got {value}", "LossWeights", name)

    def for_branch(self, branch: BranchId) -> tuple[float, float]:
        return {
            BranchId.V: (self.alpha1, self.alpha2),
            BranchId.A: (self.beta1, self.beta2),
            BranchId.M: (self.gamma1, self.gamma2),
        }[branch]


@dataclass
class LossBreakdown:
    ce_v: torch.Tensor
    reg_v: torch.Tensor
    ce_a: torch.Tensor
    reg_a: torch.Tensor
    ce_m: torch.Tensor
    reg_m: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in (*TERMS, "total")}

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **self.as_floats()})


def _check_targets(target: torch.Tensor) -> torch.Tensor:
    target = torch.as_tensor(target)
    if target.dtype.is_floating_point or target.dtype == torch.bool:
        raise ValidationError("player levels must be integers", "target")
    if target.numel() and (target.min() < 1 or target.max() > 10):
        raise ValidationError("player levels must lie in 1-10", "target")
    return target


def cross_entropy(logits: torch.Tensor, target) -> torch.Tensor:
    """Mean of ``-log softmax(logits)[target]`` with targets as 1-based levels."""
    target = _check_targets(target)
    if logits.ndim == 1:
        logits, target = logits[None], target.reshape(1)
    return F.cross_entropy(logits, target.long().to(logits.device) - 1)


def reg_distance(predicted_level: torch.Tensor, target) -> torch.Tensor:
    """Mean of ``|p - t| + (p - t)^2`` in raw level units."""
    target = _check_targets(target)
    predicted_level = torch.as_tensor(predicted_level)
    diff = predicted_level - target.to(predicted_level.dtype if predicted_level.is_floating_point() else torch.float64)
    return (diff.abs() + diff * diff).mean()


def total_loss(outputs: ModelOutputs, target, weights: LossWeights = LossWeights(), active=None) -> LossBreakdown:
    """Weighted sum over ``active`` branches; terms of inactive branches are exactly 0."""
    active = set(outputs.branches) if active is None else {BranchId(b) for b in active}
    missing = [b.value for b in active if b not in outputs.branches]
    if missing:
        raise ValidationError(f"no outputs for active branches {sorted(missing)}", "outputs")
    target = _check_targets(target)

    ref = next(iter(outputs.branches.values())).logits if outputs.branches else torch.zeros(())
    zero = torch.zeros((), dtype=ref.dtype, device=ref.device)
    terms = {}
    for branch, suffix in ((BranchId.V, "v"), (BranchId.A, "a"), (BranchId.M, "m")):
        if branch in active:
            out = outputs.branches[branch]
            terms[f"ce_{suffix}"] = cross_entropy(out.logits, target)
            terms[f"reg_{suffix}"] = reg_distance(out.predicted_level, target)
        else:
            terms[f"ce_{suffix}"] = zero
            terms[f"reg_{suffix}"] = zero

    w = weights
    total = w.alpha1 * terms["ce_v"]
    total = total + w.alpha2 * terms["reg_v"]
    total = total + w.beta1 * terms["ce_a"]
    total = total + w.beta2 * terms["reg_a"]
    total = total + w.gamma1 * terms["ce_m"]
    total = total + w.gamma2 * terms["reg_m"]
    return LossBreakdown(total=total, **terms)
