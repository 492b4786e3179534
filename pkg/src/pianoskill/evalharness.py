"""Accuracy evaluation and the modality x sampling-scheme comparison grid."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .datamodel import DatasetManifest, Split
from .dataset import ClipLoader, SampleRef, make_samples
from .model import BranchId, Modality, PianoSkillNet
from .sampling import SamplingScheme
from .trainer import TrainConfig, load_checkpoint, train
from .validation import ValidationError

N_CLASSES = 10
ROW_LABELS = {Modality.VIDEO: "Video", Modality.AUDIO: "Audio", Modality.MMDL: "MMDL"}
COLUMN_LABELS = {SamplingScheme.CONTIGUOUS: "Contiguous", SamplingScheme.UNIFORM: "Uniformly Dist."}


@torch.no_grad()
def predict_refs(
    model: PianoSkillNet,
    refs: list[SampleRef],
    loader: ClipLoader,
    modality: Modality | str | None = None,
    batch_size: int = 4,
) -> dict[BranchId, np.ndarray]:
    """Per-branch logits, each of shape (len(refs), 10), with the model in eval mode."""
    modality = model.config.modality if modality is None else Modality(modality)
    was_training = model.training
    model.eval()
    chunks: dict[BranchId, list[np.ndarray]] = defaultdict(list)
    try:
        for start in range(0, len(refs), batch_size):
            batch = loader.load_batch(refs[start : start + batch_size], modality, augment=False)
            out = model(video=batch.get("video"), audio=batch.get("audio"), mode=modality)
            for branch, bo in out.branches.items():
                chunks[branch].append(bo.logits.double().numpy())
    finally:
        model.train(was_training)
    return {b: np.concatenate(v) for b, v in chunks.items()}


@dataclass
class BranchReport:
    accuracy: float  # percent, per sample
    confusion: list[list[int]]  # rows: true level 1..10, columns: predicted level
    performance_accuracy: float  # percent, majority vote over each performance's samples

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class EvalReport:
    n_samples: int
    scheme: str
    branches: dict[str, BranchReport] = field(default_factory=dict)
    per_performance: list[dict] = field(default_factory=list)

    def accuracy(self, branch: BranchId | str) -> float:
        return self.branches[BranchId(branch).value].accuracy

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "scheme": self.scheme,
            "branches": {k: v.to_dict() for k, v in self.branches.items()},
            "per_performance": self.per_performance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format(self) -> str:
        lines = [f"samples: {self.n_samples} ({self.scheme})", f"{'branch':<8}{'sample acc %':>14}{'perf acc %':>12}"]
        for name, rep in self.branches.items():
            lines.append(f"{name:<8}{rep.accuracy:>14.2f}{rep.performance_accuracy:>12.2f}")
        return "\n".join(lines)


def build_report(logits: dict[BranchId, np.ndarray], refs: list[SampleRef], scheme: str) -> EvalReport:
    """Score per-branch logits against the references' true levels."""
    truth = np.array([r.level for r in refs], dtype=int)
    report = EvalReport(n_samples=len(refs), scheme=scheme)
    by_perf: dict[str, list[int]] = defaultdict(list)
    for i, r in enumerate(refs):
        by_perf[r.record.id].append(i)
    preds = {b: np.asarray(l).argmax(axis=1) + 1 for b, l in logits.items()}
    for branch in sorted(logits, key=lambda b: b.value):
        pred = preds[branch]
        confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
        np.add.at(confusion, (truth - 1, pred - 1), 1)
        votes_right = 0
        for idx in by_perf.values():
            # ties resolve to the lowest level, deterministically
            counts = Counter(pred[idx].tolist())
            top = max(counts.values())
            vote = min(k for k, c in counts.items() if c == top)
            votes_right += int(vote == truth[idx[0]])
        report.branches[branch.value] = BranchReport(
            accuracy=round(100.0 * float(np.mean(pred == truth)), 2) if len(refs) else 0.0,
            confusion=confusion.tolist(),
            performance_accuracy=round(100.0 * votes_right / len(by_perf), 2) if by_perf else 0.0,
        )
    for pid, idx in by_perf.items():
        entry = {"id": pid, "level": int(truth[idx[0]]), "samples": len(idx)}
        for branch in sorted(logits, key=lambda b: b.value):
            entry[f"correct_{branch.value}"] = int(np.sum(preds[branch][idx] == truth[idx]))
        report.per_performance.append(entry)
    return report


def evaluate(
    checkpoint: str | Path | PianoSkillNet,
    manifest: DatasetManifest,
    scheme: SamplingScheme | str | None = None,
    split: Split | str = Split.TEST,
    loader: ClipLoader | None = None,
    batch_size: int = 4,
) -> EvalReport:
    """Per-sample accuracy of every branch the checkpoint carries, on one split."""
    model = load_checkpoint(checkpoint)[0] if not isinstance(checkpoint, PianoSkillNet) else checkpoint
    scheme = manifest.scheme if scheme is None else SamplingScheme.parse(scheme)
    refs = make_samples(manifest, scheme, split)
    if not refs:
        raise ValidationError(f"no {Split(split).value} samples to evaluate", "manifest")
    loader = loader or ClipLoader()
    logits = predict_refs(model, refs, loader, model.config.modality, batch_size)
    return build_report(logits, refs, scheme.value)


@dataclass
class GridReport:
    cells: dict[tuple[str, str], float]  # (modality, scheme) -> primary-branch accuracy %
    reports: dict[tuple[str, str], EvalReport] = field(default_factory=dict)

    def format(self) -> str:
        header = f"{'Modality':<10}" + "".join(f"{COLUMN_LABELS[s]:>18}" for s in SamplingScheme)
        lines = [header]
        for mod in Modality:
            row = f"{ROW_LABELS[mod]:<10}"
            for s in SamplingScheme:
                value = self.cells.get((mod.value, s.value))
                row += f"{'-' if value is None else f'{value:.2f}':>18}"
            lines.append(row)
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["modality", "scheme", "accuracy"])
        for (mod, s), acc in self.cells.items():
            w.writerow([mod, s, f"{acc:.2f}"])
        return buf.getvalue()


def modality_scheme_grid(
    manifest: DatasetManifest,
    config: TrainConfig,
    modalities=tuple(Modality),
    schemes=tuple(SamplingScheme),
    out_dir: str | Path | None = None,
) -> GridReport:
    """Train and evaluate every (modality, scheme) cell; each cell reports its primary branch."""
    grid = GridReport(cells={})
    loader_cache: dict = {}
    for mod in map(Modality, modalities):
        for scheme in map(SamplingScheme.parse, schemes):
            cfg = dataclasses.replace(config, modality=mod, scheme=scheme)
            loader = loader_cache.setdefault("loader", ClipLoader(vision=cfg.vision_config(), workers=cfg.workers))
            cell_dir = Path(out_dir) / f"{mod.value}-{scheme.value}" if out_dir is not None else None
            result = train(manifest, cfg, out_dir=cell_dir, loader=loader)
            report = evaluate(result.model, manifest, scheme, loader=loader, batch_size=cfg.batch_size)
            grid.cells[(mod.value, scheme.value)] = report.accuracy(mod.primary_branch)
            grid.reports[(mod.value, scheme.value)] = report
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "grid.csv").write_text(grid.to_csv())
        (Path(out_dir) / "grid.txt").write_text(grid.format() + "\n")
    return grid
