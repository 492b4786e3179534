"""Training loop, checkpoints and the single-batch overfit harness."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import yaml

from .audio import MelSpectrogramParams
from .datamodel import DatasetManifest, Split
from .dataset import ClipLoader, SampleRef, make_samples, sample_rng
from .model import BranchId, ModelConfig, Modality, PianoSkillNet, load_aural_pretrained, load_visual_pretrained
from .objective import TERMS, LossBreakdown, LossWeights, total_loss
from .sampling import SamplingScheme
from .validation import ValidationError
from .vision import VisionConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pianoskill-checkpoint/1"

PRESETS = {
    "full": {},
    "desk": {"width_factor": 0.25, "epochs": 20},
}


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, step: int, branch: str, term: str, value: float):
        self.epoch, self.step, self.branch, self.term = epoch, step, branch, term
        super().__init__(f"non-finite loss at epoch {epoch} step {step}: branch {branch} term {term} = {value}")


class OverfitError(TrainingError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 4
    modality: Modality = Modality.MMDL
    scheme: SamplingScheme = SamplingScheme.UNIFORM
    seed: int = 0
    width_factor: float = 1.0
    flip_prob: float = 0.5
    level_head: str = "expectation"
    holdout_fraction: float = 0.0
    workers: int = 0
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    visual_pretrained: str | None = None
    aural_pretrained: str | None = None
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.modality = Modality(self.modality)
        self.scheme = SamplingScheme.parse(self.scheme)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.adam_betas = tuple(self.adam_betas)
        if not self.learning_rate >= 0:
            raise ValidationError(f"must be >= 0, got {self.learning_rate}", "TrainConfig", "learning_rate")
        for name in ("epochs", "batch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ValidationError(f"must be a positive integer, got {value!r}", "TrainConfig", name)
        if not 0 < self.width_factor <= 1:
            raise ValidationError(f"must be in (0, 1], got {self.width_factor}", "TrainConfig", "width_factor")
        if not 0 <= self.flip_prob <= 1:
            raise ValidationError(f"must be in [0, 1], got {self.flip_prob}", "TrainConfig", "flip_prob")
        if not 0 <= self.holdout_fraction < 1:
            raise ValidationError(f"must be in [0, 1), got {self.holdout_fraction}", "TrainConfig", "holdout_fraction")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", "preset")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}", "TrainConfig")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        preset = data.pop("preset", None)
        if preset is not None:
            return cls.preset(preset, **data)
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modality"] = self.modality.value
        d["scheme"] = self.scheme.value
        d["adam_betas"] = list(self.adam_betas)
        return d

    def model_config(self) -> ModelConfig:
        return ModelConfig(width_factor=self.width_factor, modality=self.modality, level_head=self.level_head)

    def vision_config(self) -> VisionConfig:
        return VisionConfig(flip_prob=self.flip_prob)


@dataclass
class TrainResult:
    model: PianoSkillNet
    config: TrainConfig
    steps: list[dict]
    epochs: list[dict]
    final_checkpoint: Path | None = None
    best_checkpoint: Path | None = None

    @property
    def final_loss(self) -> float:
        return self.epochs[-1]["total"]


def build_model(config: TrainConfig) -> PianoSkillNet:
    torch.manual_seed(config.seed)
    model = PianoSkillNet(config.model_config())
    if config.visual_pretrained and model.visual is not None:
        load_visual_pretrained(model.visual, config.visual_pretrained)
    if config.aural_pretrained and model.aural is not None:
        load_aural_pretrained(model.aural, config.aural_pretrained)
    return model


def save_checkpoint(path: str | Path, model: PianoSkillNet, train_config: TrainConfig | None = None, **meta) -> Path:
    """Atomically write model weights plus the configs needed to rebuild it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "meta": meta,
        "state_dict": model.state_dict(),
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("not a pianoskill checkpoint", str(path))
    return payload


def load_checkpoint(path: str | Path) -> tuple[PianoSkillNet, dict]:
    payload = read_checkpoint(path)
    model = PianoSkillNet(ModelConfig(**payload["model_config"]))
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ValidationError(f"checkpoint does not match its model config: {exc}", str(path)) from None
    model.eval()
    return model, payload


def _check_media(samples: list[SampleRef]) -> None:
    seen = set()
    for ref in samples:
        if ref.record.id in seen:
            continue
        seen.add(ref.record.id)
        for path, what in ((ref.video_path, "video"), (ref.audio_path, "audio")):
            if not path.exists():
                raise TrainingError(f"{ref.record.id}: {what} media not found at {path}")


def _forward(model: PianoSkillNet, batch: dict, modality: Modality):
    return model(video=batch.get("video"), audio=batch.get("audio"), mode=modality)


def _check_finite(breakdown: LossBreakdown, epoch: int, step: int) -> None:
    for term in TERMS:
        value = float(getattr(breakdown, term).detach())
        if not np.isfinite(value):
            raise NonFiniteLossError(epoch, step, term[-1].upper(), term, value)
    value = float(breakdown.total.detach())
    if not np.isfinite(value):
        raise NonFiniteLossError(epoch, step, "total", "total", value)


def fusion_isolation_probe(model: PianoSkillNet, outputs, target, weights: LossWeights) -> None:
    """Assert the fusion loss sends no gradient into backbones or unimodal heads."""
    fused_only = total_loss(outputs, target, LossWeights(0, 0, 0, 0, weights.gamma1, weights.gamma2), {BranchId.M})
    guarded = [
        (n, p) for n, p in model.named_parameters() if p.requires_grad and not n.startswith("head_m.")
    ]
    grads = torch.autograd.grad(fused_only.total, [p for _, p in guarded], retain_graph=True, allow_unused=True)
    for (name, _), g in zip(guarded, grads):
        if g is not None and bool(torch.any(g != 0)):
            raise TrainingError(f"fusion loss leaked gradient into {name}")


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _holdout_split(samples: list[SampleRef], fraction: float, seed: int) -> tuple[list[SampleRef], list[SampleRef]]:
    if fraction <= 0:
        return samples, []
    ids = sorted({s.record.id for s in samples})
    rng = np.random.default_rng([seed, 1_000_003])
    n_val = max(1, int(round(fraction * len(ids))))
    val_ids = set(rng.permutation(ids)[:n_val].tolist())
    return [s for s in samples if s.record.id not in val_ids], [s for s in samples if s.record.id in val_ids]


def train(
    manifest: DatasetManifest,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    samples: list[SampleRef] | None = None,
    loader: ClipLoader | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train on the manifest's train split; writes ``final.pt``, ``best.pt`` and ``train_log.jsonl`` to ``out_dir``.

    ``samples`` overrides the split/scheme selection (used by the estimator API).
    """
    if samples is None:
        samples = make_samples(manifest, config.scheme, Split.TRAIN)
    if not samples:
        raise ValidationError("no training samples (empty train split or performances shorter than 160 frames)", "manifest")
    _check_media(samples)
    loader = loader or ClipLoader(vision=config.vision_config(), mel=MelSpectrogramParams(), workers=config.workers)
    train_refs, val_refs = _holdout_split(samples, config.holdout_fraction, config.seed)

    model = build_model(config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.jsonl", "w")

    steps: list[dict] = []
    epochs: list[dict] = []
    best_acc = -1.0
    best_path = None
    t0 = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = _epoch_order(len(train_refs), config.seed, epoch)
            sums = dict.fromkeys((*TERMS, "total"), 0.0)
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                refs = [train_refs[i] for i in idx]
                rngs = [sample_rng(config.seed, epoch, int(i)) for i in idx]
                batch = loader.load_batch(refs, config.modality, augment=True, rngs=rngs)
                outputs = _forward(model, batch, config.modality)
                losses = total_loss(outputs, batch["level"], config.weights, config.modality.branches)
                _check_finite(losses, epoch, step)
                if step == 0 and config.modality is Modality.MMDL:
                    fusion_isolation_probe(model, outputs, batch["level"], config.weights)
                optimizer.zero_grad(set_to_none=True)
                losses.total.backward()
                optimizer.step()

                row = {"epoch": epoch, "step": step, **losses.as_floats(), "wall_time": round(time.perf_counter() - t0, 3)}
                steps.append(row)
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                if on_step:
                    on_step(row)
                for k in sums:
                    sums[k] += row[k]
                n_batches += 1
                step += 1
            summary = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
            if val_refs:
                from .evalharness import predict_refs

                preds = predict_refs(model, val_refs, loader, config.modality, config.batch_size)
                truth = np.array([r.level for r in val_refs])
                acc = float(np.mean(preds[config.modality.primary_branch].argmax(1) + 1 == truth) * 100)
                summary["val_accuracy"] = acc
                if acc > best_acc and out_dir is not None:
                    best_acc = acc
                    best_path = save_checkpoint(out_dir / "best.pt", model, config, epoch=epoch, val_accuracy=acc)
            epochs.append(summary)
            log.info("epoch %d: total %.5f", epoch, summary["total"])
            if log_fh:
                log_fh.write(json.dumps({"summary": summary}) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()

    model.eval()
    final_path = None
    if out_dir is not None:
        final_path = save_checkpoint(out_dir / "final.pt", model, config, epoch=config.epochs)
        if best_path is None:
            best_path = save_checkpoint(out_dir / "best.pt", model, config, epoch=config.epochs)
    return TrainResult(model, config, steps, epochs, final_path, best_path)


@dataclass
class OverfitResult:
    losses: list[dict]
    reached: bool
    threshold: float

    @property
    def steps(self) -> int:
        return len(self.losses)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]["total"]


def overfit_single_batch(
    manifest: DatasetManifest,
    config: TrainConfig,
    max_steps: int = 500,
    threshold: float = 0.05,
    raise_on_failure: bool = True,
    samples: list[SampleRef] | None = None,
) -> OverfitResult:
    """Repeatedly fit one fixed batch of ``batch_size`` train samples without augmentation.

    Stops as soon as the total loss drops below ``threshold``. A failure to
    get there within ``max_steps`` usually means a wiring bug.
    """
    if samples is None:
        samples = make_samples(manifest, config.scheme, Split.TRAIN)
    if not samples:
        raise ValidationError("no training samples", "manifest")
    _check_media(samples)
    loader = ClipLoader(vision=config.vision_config(), workers=config.workers)
    # Interleave performances so the fixed batch mixes levels where possible.
    order = sorted(range(len(samples)), key=lambda i: (samples[i].spec.sample_index, i))
    refs = [samples[i] for i in order[: config.batch_size]]
    batch = loader.load_batch(refs, config.modality, augment=False)
    model = build_model(config)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas, eps=config.adam_eps
    )
    history = []
    reached = False
    for step in range(max_steps):
        outputs = _forward(model, batch, config.modality)
        losses = total_loss(outputs, batch["level"], config.weights, config.modality.branches)
        _check_finite(losses, 0, step)
        history.append({"step": step, **losses.as_floats()})
        if history[-1]["total"] < threshold:
            reached = True
            break
        optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        optimizer.step()
    if not reached and raise_on_failure:
        raise OverfitError(
            f"loss {history[-1]['total']:.4f} still above {threshold} after {max_steps} steps ({config.modality.value})"
        )
    return OverfitResult(history, reached, threshold)
