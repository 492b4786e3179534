import math

import pytest
import torch

from pianoskill.model import (
    BranchId,
    Modality,
    ModelConfig,
    PianoSkillNet,
    ResNet18,
    VisualBackbone,
    adapt_stem_weight,
    aggregate_clips,
    describe_state_dict,
    expected_level,
    load_aural_pretrained,
    load_visual_pretrained,
)
from pianoskill.validation import ValidationError

W = 1 / 16


def micro_batch(b=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    video = torch.randn(b, 10, 16, 112, 112, 3, generator=g)
    audio = torch.randn(b, 10, 224, 224, 1, generator=g)
    return video, audio


def test_visual_backbone_shapes():
    net = VisualBackbone(W)
    x = torch.randn(2, 16, 112, 112, 3)
    fmap = net.feature_map(x)
    assert tuple(fmap.shape) == (2, net.out_dim, 1, 3, 3)
    assert tuple(net(x).shape) == (2, 16)
    assert list(n for n, _ in net.features.named_children())[:3] == ["conv1", "relu1", "pool1"]
    with pytest.raises(ValidationError):
        net(torch.randn(2, 16, 112, 112))


def test_resnet_shapes_and_names():
    net = ResNet18(1, W)
    assert tuple(net(torch.randn(2, 224, 224, 1)).shape) == (2, 32)
    keys = set(net.state_dict())
    assert {"conv1.weight", "bn1.running_mean", "layer4.1.conv2.weight", "layer2.0.downsample.0.weight"} <= keys
    assert not any(k.startswith("fc.") for k in keys)
    with pytest.raises(ValidationError):
        net(torch.randn(2, 224, 224, 3))


def test_full_width_feature_dims():
    cfg = ModelConfig()
    assert (cfg.visual_dim, cfg.aural_dim) == (256, 512)


@pytest.mark.parametrize("modality", list(Modality))
def test_forward_contract(modality):
    torch.manual_seed(0)
    model = PianoSkillNet(ModelConfig(width_factor=W, modality=modality))
    video, audio = micro_batch(2)
    out = model(video=video, audio=audio)
    assert set(out.branches) == set(modality.branches)
    for branch, bo in out.branches.items():
        assert bo.logits.shape == (2, 10)
        assert bo.embedding.shape == (2, 128)
        assert torch.all((bo.predicted_level >= 1) & (bo.predicted_level <= 10))
        assert torch.allclose(bo.probabilities.sum(-1), torch.ones(2))
    if modality is Modality.MMDL:
        assert set(out.features) == {"video", "audio", "fused"}
        assert out.sample_features["video"].shape[-1] + out.sample_features["audio"].shape[-1] == model.head_m.in_dim


def test_components_built_only_when_needed():
    v = PianoSkillNet(ModelConfig(width_factor=W, modality="video"))
    assert v.aural is None and v.head_a is None and v.head_m is None
    assert not any(k.startswith(("aural.", "head_a.", "head_m.")) for k in v.state_dict())
    with pytest.raises(ValidationError):
        v(audio=micro_batch()[1], mode="audio")
    with pytest.raises(ValidationError):
        v.head("A")


def test_missing_input_is_an_error():
    model = PianoSkillNet(ModelConfig(width_factor=W))
    with pytest.raises(ValidationError):
        model(video=micro_batch()[0])


def test_expected_level_limits():
    logits = torch.full((1, 10), -1e4, dtype=torch.float64)
    logits[0, 6] = 1e4
    assert expected_level(logits).item() == pytest.approx(7.0)
    assert expected_level(torch.zeros(3, 10)).tolist() == pytest.approx([5.5] * 3)


def test_scalar_level_head_range():
    torch.manual_seed(1)
    model = PianoSkillNet(ModelConfig(width_factor=W, modality="audio", level_head="scalar"))
    out = model(audio=micro_batch(3)[1])
    lv = out[BranchId.A].predicted_level
    assert lv.shape == (3,) and torch.all((lv > 1) & (lv < 10))


def test_aggregate_clips():
    feats = [torch.full((2, 4), float(i)) for i in range(10)]
    assert torch.equal(aggregate_clips(feats), torch.full((2, 4), 4.5))
    assert torch.equal(aggregate_clips(torch.stack(feats, 1)), torch.full((2, 4), 4.5))
    with pytest.raises(ValidationError):
        aggregate_clips(feats[:9])
    with pytest.raises(ValidationError):
        aggregate_clips(feats[:9] + [torch.zeros(2, 5)])


def test_clip_order_permutation_invariance():
    torch.manual_seed(0)
    model = PianoSkillNet(ModelConfig(width_factor=W)).eval()
    video, audio = micro_batch(1, seed=4)
    with torch.no_grad():
        ref = model(video=video, audio=audio)
        perm = torch.randperm(10)
        out = model(video=video[:, perm], audio=audio[:, perm])
    for b in ref.branches:
        assert torch.allclose(ref[b].logits, out[b].logits, atol=1e-6, rtol=0)


def test_stem_adaptation_preserves_gray_response():
    torch.manual_seed(0)
    w3 = torch.randn(8, 3, 7, 7, dtype=torch.float64)
    gray = torch.randn(1, 1, 32, 32, dtype=torch.float64)
    rgb = gray.repeat(1, 3, 1, 1)
    a = torch.nn.functional.conv2d(rgb, w3)
    b = torch.nn.functional.conv2d(gray, adapt_stem_weight(w3))
    assert torch.allclose(a, b, atol=1e-10)


def test_load_aural_pretrained_from_rgb_checkpoint():
    src = ResNet18(in_channels=3, width_factor=W)
    state = dict(src.state_dict())
    state["fc.weight"] = torch.zeros(1000, 32)
    state["fc.bias"] = torch.zeros(1000)
    dst = ResNet18(1, W)
    keys = load_aural_pretrained(dst, state)
    assert "fc.weight" not in keys
    assert torch.equal(dst.conv1.weight, src.conv1.weight.sum(1, keepdim=True))
    assert torch.equal(dst.layer3[0].conv1.weight, src.layer3[0].conv1.weight)


def test_load_visual_pretrained(tmp_path):
    src = VisualBackbone(W)
    path = tmp_path / "c3d.pt"
    torch.save({"state_dict": {"module." + k: v for k, v in src.state_dict().items()} | {"fc6.weight": torch.zeros(3)}}, path)
    dst = VisualBackbone(W)
    keys = load_visual_pretrained(dst, path)
    assert len(keys) == 10
    assert torch.equal(dst.features.conv5.weight, src.features.conv5.weight)
    with pytest.raises(ValidationError):
        load_visual_pretrained(VisualBackbone(0.5), src.state_dict())


def test_fusion_detaches_inputs():
    torch.manual_seed(0)
    model = PianoSkillNet(ModelConfig(width_factor=W))
    v = torch.randn(2, model.config.visual_dim, requires_grad=True)
    a = torch.randn(2, model.config.aural_dim, requires_grad=True)
    out = model.fuse(v, a)
    out.logits.sum().backward()
    assert v.grad is None and a.grad is None


def test_describe_state_dict():
    rows = describe_state_dict(PianoSkillNet(ModelConfig(width_factor=W, modality="video")).state_dict())
    assert rows[0] == ("visual.features.conv1.weight", (4, 3, 3, 3, 3), "float32")


def test_config_validation():
    with pytest.raises(ValidationError):
        ModelConfig(width_factor=0)
    with pytest.raises(ValidationError):
        ModelConfig(width_factor=1.5)
    with pytest.raises(ValidationError):
        ModelConfig(level_head="ordinal")
    assert Modality.MMDL.branches == {BranchId.V, BranchId.A, BranchId.M}
    assert Modality.AUDIO.primary_branch is BranchId.A
    assert math.isclose(ModelConfig(width_factor=0.25).aural_dim, 128)
