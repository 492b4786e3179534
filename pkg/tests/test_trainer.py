import dataclasses
import hashlib
import json

import numpy as np
import pytest
import torch

from pianoskill.dataset import ClipLoader
from pianoskill.evalharness import evaluate
from pianoskill.model import BranchId
from pianoskill.objective import TERMS
from pianoskill.trainer import (
    PRESETS,
    NonFiniteLossError,
    TrainConfig,
    TrainingError,
    build_model,
    fusion_isolation_probe,
    load_checkpoint,
    overfit_single_batch,
    read_checkpoint,
    save_checkpoint,
    train,
)
from pianoskill.validation import ValidationError

MICRO = dict(width_factor=1 / 16, batch_size=2, learning_rate=1e-3, seed=7)


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_config_defaults_match_reference_hyperparameters():
    c = TrainConfig()
    assert (c.learning_rate, c.epochs, c.batch_size, c.width_factor) == (1e-4, 100, 4, 1.0)
    assert c.adam_betas == (0.9, 0.999) and c.adam_eps == 1e-8
    desk = TrainConfig.preset("desk")
    assert (desk.width_factor, desk.epochs, desk.learning_rate) == (0.25, 20, 1e-4)
    assert set(PRESETS) == {"full", "desk"}


def test_config_validation_and_files(tmp_path):
    with pytest.raises(ValidationError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValidationError, match="epochs"):
        TrainConfig(epochs=2.5)
    with pytest.raises(ValidationError, match="learning_rate"):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValidationError, match="unknown"):
        TrainConfig.from_dict({"lr": 1})
    with pytest.raises(ValidationError, match="preset"):
        TrainConfig.preset("cluster")
    path = tmp_path / "c.yaml"
    path.write_text("preset: desk\nmodality: audio\nweights: {alpha1: 2.0}\n")
    c = TrainConfig.from_file(path)
    assert (c.width_factor, c.modality.value, c.weights.alpha1) == (0.25, "audio", 2.0)
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_two_epochs_reduce_loss(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    result = train(manifest, TrainConfig(modality="audio", epochs=2, **MICRO), out_dir=tmp_path)
    assert result.epochs[1]["total"] < result.epochs[0]["total"]
    lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
    rows = [json.loads(l) for l in lines]
    steps = [r for r in rows if "step" in r]
    assert len(steps) == 4 and all({"epoch", "wall_time", "total", *TERMS} <= set(r) for r in steps)
    assert (tmp_path / "final.pt").exists() and (tmp_path / "best.pt").exists()


def test_same_seed_same_result(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    cfg = TrainConfig(modality="audio", epochs=1, **MICRO)
    a = train(manifest, cfg, out_dir=tmp_path / "a")
    b = train(manifest, cfg, out_dir=tmp_path / "b")
    assert f"{a.final_loss:.6f}" == f"{b.final_loss:.6f}"
    assert sha256(a.final_checkpoint) == sha256(b.final_checkpoint)


def test_video_mode_has_no_aural_parameters(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    result = train(manifest, TrainConfig(modality="video", epochs=1, **MICRO), out_dir=tmp_path)
    state = read_checkpoint(result.final_checkpoint)["state_dict"]
    assert any(k.startswith("visual.") for k in state)
    assert not any(k.startswith(("aural.", "head_a.", "head_m.")) for k in state)


def test_checkpoint_round_trip_is_bitwise(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    torch.manual_seed(0)
    cfg = TrainConfig(modality="audio", epochs=1, **MICRO)
    model = build_model(cfg).eval()
    path = save_checkpoint(tmp_path / "m.pt", model, cfg, note="x")
    loaded, payload = load_checkpoint(path)
    assert payload["meta"] == {"note": "x"} and payload["train_config"]["modality"] == "audio"
    loader = ClipLoader()
    a = evaluate(model, manifest, loader=loader)
    b = evaluate(loaded, manifest, loader=loader)
    assert a.to_json() == b.to_json()
    assert not list(tmp_path.glob("*.tmp"))


def test_bad_checkpoint(tmp_path):
    torch.save({"weights": 1}, tmp_path / "x.pt")
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "x.pt")


class NaNLoader(ClipLoader):
    def load_batch(self, refs, modality, augment=False, rngs=None):
        batch = super().load_batch(refs, modality, augment, rngs)
        batch["audio"] = torch.full_like(batch["audio"], float("nan"))
        return batch


def test_non_finite_loss_aborts_with_diagnostic(tiny_dataset):
    _, manifest = tiny_dataset
    with pytest.raises(NonFiniteLossError) as info:
        train(manifest, TrainConfig(modality="audio", epochs=1, **MICRO), loader=NaNLoader())
    assert info.value.branch == "A" and info.value.step == 0
    assert "branch A" in str(info.value)


def test_missing_media(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    moved = dataclasses.replace(manifest, root=tmp_path)
    with pytest.raises(TrainingError, match="not found"):
        train(moved, TrainConfig(modality="audio", epochs=1, **MICRO))


def test_zero_learning_rate_keeps_loss_constant(tiny_dataset):
    _, manifest = tiny_dataset
    cfg = TrainConfig(modality="audio", **{**MICRO, "learning_rate": 0.0})
    result = overfit_single_batch(manifest, cfg, max_steps=4, raise_on_failure=False)
    totals = [r["total"] for r in result.losses]
    assert len(totals) == 4 and max(totals) - min(totals) < 1e-6


def test_mmdl_logs_six_finite_terms(tiny_dataset):
    _, manifest = tiny_dataset
    cfg = TrainConfig(modality="mmdl", **{**MICRO, "batch_size": 1})
    result = overfit_single_batch(manifest, cfg, max_steps=2, raise_on_failure=False)
    for row in result.losses:
        assert all(np.isfinite(row[t]) and row[t] > 0 for t in TERMS)


def test_fusion_probe_catches_leak():
    cfg = TrainConfig(width_factor=1 / 16)
    model = build_model(cfg)
    g = torch.Generator().manual_seed(0)
    video = torch.randn(1, 10, 16, 112, 112, 3, generator=g)
    audio = torch.randn(1, 10, 224, 224, 1, generator=g)
    target = torch.tensor([3])
    out = model(video=video, audio=audio)
    fusion_isolation_probe(model, out, target, cfg.weights)
    # Rebuild the fused branch without the gradient stop: the probe must object.
    feats = torch.cat([out.sample_features["video"], out.sample_features["audio"]], -1)
    out.branches[BranchId.M] = model.head_m(feats)
    with pytest.raises(TrainingError, match="leaked"):
        fusion_isolation_probe(model, out, target, cfg.weights)


def test_holdout_selects_best(tiny_dataset, tmp_path):
    _, manifest = tiny_dataset
    result = train(manifest, TrainConfig(modality="audio", epochs=2, holdout_fraction=0.5, **MICRO), out_dir=tmp_path)
    assert all("val_accuracy" in e for e in result.epochs)
    assert "val_accuracy" in read_checkpoint(result.best_checkpoint)["meta"]
