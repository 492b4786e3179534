"""Three-branch skill model: 3D-conv video backbone, ResNet-18 audio backbone, late fusion.

Each branch averages clip features into one sample feature and maps it to
128 dims and then 10 level logits. The fusion branch consumes *detached*
sample features, so its loss never reaches the backbones or the unimodal
heads.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .sampling import CLIPS_PER_SAMPLE, CLIP_LENGTH
from .validation import ValidationError

N_CLASSES = 10
VISUAL_WIDTHS = (64, 128, 256, 256, 256)
VISUAL_POOLS = ((1, 2, 2), (2, 2, 2), (2, 2, 2), (2, 2, 2), (2, 2, 2))
RESNET_WIDTHS = (64, 128, 256, 512)


class BranchId(str, enum.Enum):
    V = "V"
    A = "A"
    M = "M"


class Modality(str, enum.Enum):
    VIDEO = "video"
    AUDIO = "audio"
    MMDL = "mmdl"

    @property
    def branches(self) -> frozenset[BranchId]:
        return {
            Modality.VIDEO: frozenset({BranchId.V}),
            Modality.AUDIO: frozenset({BranchId.A}),
            Modality.MMDL: frozenset({BranchId.V, BranchId.A, BranchId.M}),
        }[self]

    @property
    def primary_branch(self) -> BranchId:
        return {Modality.VIDEO: BranchId.V, Modality.AUDIO: BranchId.A, Modality.MMDL: BranchId.M}[self]

    @property
    def uses_video(self) -> bool:
        return self is not Modality.AUDIO

    @property
    def uses_audio(self) -> bool:
        return self is not Modality.VIDEO


def scaled(channels: int, width_factor: float) -> int:
    return max(1, int(round(channels * width_factor)))


@dataclass(frozen=True)
class ModelConfig:
    width_factor: float = 1.0
    modality: Modality = Modality.MMDL
    proj_dim: int = 128
    level_head: str = "expectation"  # or "scalar"

    def __post_init__(self):
        if not 0 < self.width_factor <= 1:
            raise ValidationError(f"width_factor must be in (0, 1], got {self.width_factor}", "ModelConfig")
        if self.level_head not in ("expectation", "scalar"):
            raise ValidationError(f"level_head must be 'expectation' or 'scalar', got {self.level_head!r}", "ModelConfig")
        object.__setattr__(self, "modality", Modality(self.modality))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modality"] = self.modality.value
        return d

    @property
    def visual_dim(self) -> int:
        return scaled(VISUAL_WIDTHS[-1], self.width_factor)

    @property
    def aural_dim(self) -> int:
        return scaled(RESNET_WIDTHS[-1], self.width_factor)


class VisualBackbone(nn.Module):
    """Five (3x3x3 conv, ReLU, max-pool) stages; widths 64-128-256-256-256 times ``width_factor``.

    Pooling (1,2,2) then four (2,2,2) takes 16x112x112 to 1x3x3 before the
    global average.
    """

    def __init__(self, width_factor: float = 1.0):
        super().__init__()
        layers = []
        cin = 3
        for i, (c, pool) in enumerate(zip(VISUAL_WIDTHS, VISUAL_POOLS), start=1):
            cout = scaled(c, width_factor)
            layers += [
                (f"conv{i}", nn.Conv3d(cin, cout, kernel_size=3, stride=1, padding=1)),
                (f"relu{i}", nn.ReLU(inplace=True)),
                (f"pool{i}", nn.MaxPool3d(pool)),
            ]
            cin = cout
        self.features = nn.Sequential(OrderedDict(layers))
        self.out_dim = cin

    def feature_map(self, clips: torch.Tensor) -> torch.Tensor:
        if clips.ndim != 5 or tuple(clips.shape[1:]) != (CLIP_LENGTH, 112, 112, 3):
            raise ValidationError(f"expected (batch, 16, 112, 112, 3), got {tuple(clips.shape)}", "clips")
        # (B, T, H, W, C) -> (B, C, T, H, W); the permuted view is already channels_last_3d.
        x = clips.permute(0, 4, 1, 2, 3)
        return self.features(x)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        return self.feature_map(clips).mean(dim=(2, 3, 4))


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, inplanes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(inplanes, planes, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample = None
        if stride != 1 or inplanes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(inplanes, planes, 1, stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + identity)


class ResNet18(nn.Module):
    """ResNet-18 feature extractor with a configurable input channel count.

    Parameter names follow torchvision's ``resnet18`` (minus ``fc``) so
    ImageNet checkpoints load directly at ``width_factor=1``.
    """

    def __init__(self, in_channels: int = 1, width_factor: float = 1.0):
        super().__init__()
        widths = [scaled(c, width_factor) for c in RESNET_WIDTHS]
        self.conv1 = nn.Conv2d(in_channels, widths[0], 7, 2, 3, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        self.relu = nn.ReLU(inplace=True)
        self.maxpool = nn.MaxPool2d(3, 2, 1)
        inplanes = widths[0]
        for i, planes in enumerate(widths, start=1):
            stride = 1 if i == 1 else 2
            setattr(self, f"layer{i}", nn.Sequential(BasicBlock(inplanes, planes, stride), BasicBlock(planes, planes)))
            inplanes = planes
        self.out_dim = inplanes
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def stem(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.bn1(self.conv1(x)))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or tuple(images.shape[1:]) != (224, 224, self.conv1.in_channels):
            raise ValidationError(
                f"expected (batch, 224, 224, {self.conv1.in_channels}), got {tuple(images.shape)}", "images"
            )
        # A permuted view with a single channel has ambiguous strides, which
        # crashes the CPU conv backward in some torch builds; copy to NCHW.
        x = images.permute(0, 3, 1, 2).clone(memory_format=torch.contiguous_format)
        x = self.maxpool(self.stem(x))
        x = self.layer4(self.layer3(self.layer2(self.layer1(x))))
        return x.mean(dim=(2, 3))


def adapt_stem_weight(weight: torch.Tensor) -> torch.Tensor:
    """Collapse an RGB stem kernel (out, 3, k, k) to one input channel by summation.

    A gray image replicated over three channels gives the same response
    through the original kernel as the single channel through the result.
    """
    return weight.sum(dim=1, keepdim=True)


def _read_state_dict(path: str | Path) -> dict:
    obj = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(obj, dict) and "state_dict" in obj and isinstance(obj["state_dict"], dict):
        obj = obj["state_dict"]
    return obj


def load_aural_pretrained(backbone: ResNet18, source: str | Path | dict) -> list[str]:
    """Load image-classification ResNet-18 weights, adapting a 3-channel stem.

    Classifier keys (``fc.*``) are dropped. Returns the loaded keys.
    """
    state = dict(_read_state_dict(source) if not isinstance(source, dict) else source)
    state = {k.removeprefix("module."): v for k, v in state.items() if not k.removeprefix("module.").startswith("fc.")}
    stem = state.get("conv1.weight")
    if stem is not None and stem.shape[1] != backbone.conv1.in_channels:
        if backbone.conv1.in_channels != 1:
            raise ValidationError(f"cannot adapt stem with {stem.shape[1]} input channels", "conv1.weight")
        state["conv1.weight"] = adapt_stem_weight(stem)
    backbone.load_state_dict(state, strict=True)
    return sorted(state)


def load_visual_pretrained(backbone: VisualBackbone, source: str | Path | dict) -> list[str]:
    """Load action-recognition weights for the 3D-conv stages; non-matching keys are ignored."""
    state = dict(_read_state_dict(source) if not isinstance(source, dict) else source)
    own = backbone.state_dict()
    picked = {}
    for k, v in state.items():
        k = k.removeprefix("module.").removeprefix("visual.")
        if k in own:
            if own[k].shape != v.shape:
                raise ValidationError(f"shape {tuple(v.shape)} does not match {tuple(own[k].shape)}", k)
            picked[k] = v
    if not picked:
        raise ValidationError("checkpoint holds no visual backbone parameters", str(source))
    backbone.load_state_dict(picked, strict=False)
    return sorted(picked)


@dataclass
class BranchOutputs:
    logits: torch.Tensor  # (B, 10)
    predicted_level: torch.Tensor  # (B,)
    embedding: torch.Tensor | None = None  # (B, 128)

    @property
    def probabilities(self) -> torch.Tensor:
        return self.logits.softmax(dim=-1)

    @property
    def predicted_class(self) -> torch.Tensor:
        return self.logits.argmax(dim=-1) + 1


@dataclass
class ModelOutputs:
    branches: dict[BranchId, BranchOutputs] = field(default_factory=dict)
    sample_features: dict[str, torch.Tensor] = field(default_factory=dict)  # aggregated backbone features

    def __getitem__(self, branch: BranchId | str) -> BranchOutputs:
        return self.branches[BranchId(branch)]

    def __contains__(self, branch) -> bool:
        return BranchId(branch) in self.branches

    @property
    def features(self) -> dict[str, torch.Tensor]:
        """The 128-d projected features per branch: ``video``, ``audio``, ``fused``."""
        names = {BranchId.V: "video", BranchId.A: "audio", BranchId.M: "fused"}
        return {names[b]: o.embedding for b, o in self.branches.items()}


def expected_level(logits: torch.Tensor) -> torch.Tensor:
    """Softmax expectation of the level over classes 1..10."""
    levels = torch.arange(1, logits.shape[-1] + 1, dtype=logits.dtype, device=logits.device)
    return logits.softmax(dim=-1) @ levels


class BranchHead(nn.Module):
    """Linear -> ReLU to ``proj_dim``, then linear to 10 logits (plus an optional scalar level head)."""

    def __init__(self, in_dim: int, proj_dim: int = 128, level_head: str = "expectation"):
        super().__init__()
        self.in_dim = in_dim
        self.proj = nn.Linear(in_dim, proj_dim)
        self.classifier = nn.Linear(proj_dim, N_CLASSES)
        self.level = nn.Linear(proj_dim, 1) if level_head == "scalar" else None

    def forward(self, feature: torch.Tensor) -> BranchOutputs:
        if feature.shape[-1] != self.in_dim:
            raise ValidationError(f"expected feature dim {self.in_dim}, got {feature.shape[-1]}", "feature")
        emb = F.relu(self.proj(feature))
        logits = self.classifier(emb)
        if self.level is None:
            level = expected_level(logits)
        else:
            level = 1.0 + (N_CLASSES - 1) * torch.sigmoid(self.level(emb).squeeze(-1))
        return BranchOutputs(logits=logits, predicted_level=level, embedding=emb)


def aggregate_clips(clip_features) -> torch.Tensor:
    """Mean over the clip axis.

    Accepts a (B, 10, D) tensor or a sequence of 10 (…, D) tensors.
    """
    if not torch.is_tensor(clip_features):
        clip_features = list(clip_features)
        if len(clip_features) != CLIPS_PER_SAMPLE:
            raise ValidationError(f"need {CLIPS_PER_SAMPLE} clip features, got {len(clip_features)}", "clip_features")
        dims = {tuple(f.shape) for f in clip_features}
        if len(dims) != 1:
            raise ValidationError(f"clip features differ in shape: {sorted(dims)}", "clip_features")
        return torch.stack(clip_features, dim=-2).mean(dim=-2)
    if clip_features.ndim < 2 or clip_features.shape[-2] != CLIPS_PER_SAMPLE:
        raise ValidationError(
            f"expected (..., {CLIPS_PER_SAMPLE}, D), got {tuple(clip_features.shape)}", "clip_features"
        )
    return clip_features.mean(dim=-2)


class PianoSkillNet(nn.Module):
    """Visual, aural and fused branches over samples of 10 clips.

    Only the components needed for ``config.modality`` are instantiated.
    Parameter name prefixes: ``visual.``, ``aural.``, ``head_v.``,
    ``head_a.``, ``head_m.``.
    """

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        mod = config.modality
        self.visual = VisualBackbone(config.width_factor) if mod.uses_video else None
        self.aural = ResNet18(in_channels=1, width_factor=config.width_factor) if mod.uses_audio else None
        self.head_v = BranchHead(config.visual_dim, config.proj_dim, config.level_head) if mod.uses_video else None
        self.head_a = BranchHead(config.aural_dim, config.proj_dim, config.level_head) if mod.uses_audio else None
        self.head_m = (
            BranchHead(config.visual_dim + config.aural_dim, config.proj_dim, config.level_head)
            if mod is Modality.MMDL
            else None
        )

    def head(self, branch: BranchId | str) -> BranchHead:
        h = {BranchId.V: self.head_v, BranchId.A: self.head_a, BranchId.M: self.head_m}[BranchId(branch)]
        if h is None:
            raise ValidationError(f"branch {BranchId(branch).value} is not built for modality {self.config.modality.value}")
        return h

    def visual_features(self, video: torch.Tensor) -> torch.Tensor:
        """(B, 10, 16, 112, 112, 3) -> (B, 10, D_v) clip features."""
        b, n = video.shape[:2]
        return self.visual(video.reshape(b * n, *video.shape[2:])).reshape(b, n, -1)

    def aural_features(self, audio: torch.Tensor) -> torch.Tensor:
        """(B, 10, 224, 224, 1) -> (B, 10, D_a) clip features."""
        b, n = audio.shape[:2]
        return self.aural(audio.reshape(b * n, *audio.shape[2:])).reshape(b, n, -1)

    def project_and_classify(self, feature: torch.Tensor, branch: BranchId | str) -> BranchOutputs:
        return self.head(branch)(feature)

    def fuse(self, video_feature: torch.Tensor, audio_feature: torch.Tensor) -> BranchOutputs:
        """Fusion branch on gradient-stopped (video || audio) sample features."""
        if video_feature is None or audio_feature is None:
            raise ValidationError("fusion needs both a video and an audio feature")
        fused = torch.cat([video_feature.detach(), audio_feature.detach()], dim=-1)
        return self.project_and_classify(fused, BranchId.M)

    def forward(self, video: torch.Tensor | None = None, audio: torch.Tensor | None = None, mode=None) -> ModelOutputs:
        """Run the branches enabled by ``mode`` (defaults to the configured modality)."""
        mode = self.config.modality if mode is None else Modality(mode)
        out = ModelOutputs()
        if mode.uses_video:
            if video is None:
                raise ValidationError(f"mode {mode.value} needs video clips")
            if self.visual is None:
                raise ValidationError(f"model built for {self.config.modality.value} has no visual branch")
            v = aggregate_clips(self.visual_features(video))
            out.sample_features["video"] = v
            out.branches[BranchId.V] = self.head_v(v)
        if mode.uses_audio:
            if audio is None:
                raise ValidationError(f"mode {mode.value} needs audio clips")
            if self.aural is None:
                raise ValidationError(f"model built for {self.config.modality.value} has no aural branch")
            a = aggregate_clips(self.aural_features(audio))
            out.sample_features["audio"] = a
            out.branches[BranchId.A] = self.head_a(a)
        if mode is Modality.MMDL:
            if self.head_m is None:
                raise ValidationError(f"model built for {self.config.modality.value} has no fusion branch")
            out.branches[BranchId.M] = self.fuse(out.sample_features["video"], out.sample_features["audio"])
        return out


def describe_state_dict(state: dict) -> list[tuple[str, tuple[int, ...], str]]:
    return [(k, tuple(v.shape), str(v.dtype).removeprefix("torch.")) for k, v in state.items()]
