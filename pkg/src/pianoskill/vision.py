"""Frame access and visual clip preprocessing (crop, resize, normalize, flip)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .sampling import CLIP_LENGTH, ClipSpec
from .validation import ValidationError, check_bbox_in_frame

CLIP_SIZE = 112
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class VisionConfig:
    size: int = CLIP_SIZE
    # Kinetics/UCF-style video backbone statistics, RGB order.
    mean: tuple[float, float, float] = (0.43216, 0.394666, 0.37645)
    std: tuple[float, float, float] = (0.22803, 0.22145, 0.216989)
    flip_prob: float = 0.5


@dataclass
class VisualClip:
    data: np.ndarray  # (16, 112, 112, 3) float32, standardized
    clip: ClipSpec | None = None
    flipped: bool = field(default=False)


class ImageDirectorySource:
    """Frames stored as zero-padded numbered images (``0000.png``, ``0001.png``, ...)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.is_dir():
            raise FileNotFoundError(f"frame directory not found: {self.path}")
        files = [p for p in self.path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
        numbered = []
        for p in files:
            m = re.search(r"(\d+)$", p.stem)
            if m:
                numbered.append((int(m.group(1)), p))
        numbered.sort()
        self._files = [p for _, p in numbered]

    def __len__(self) -> int:
        return len(self._files)

    @property
    def frame_size(self) -> tuple[int, int]:
        with Image.open(self._files[0]) as im:
            return im.size

    def read(self, index: int) -> np.ndarray:
        with Image.open(self._files[index]) as im:
            return np.asarray(im.convert("RGB"))

    def read_range(self, start: int, count: int) -> np.ndarray:
        if start < 0 or start + count > len(self):
            raise IndexError(f"frames [{start}, {start + count}) outside 0..{len(self)}")
        return np.stack([self.read(i) for i in range(start, start + count)])


class VideoFileSource:
    """Frames decoded from a video file with OpenCV (optional dependency)."""

    def __init__(self, path: str | Path):
        try:
            import cv2
        except ImportError as exc:  # pragma: no cover - depends on the environment
            raise ImportError("reading video files needs opencv-python-headless") from exc
        self._cv2 = cv2
        self.path = Path(path)
        cap = cv2.VideoCapture(str(self.path))
        if not cap.isOpened():
            raise FileNotFoundError(f"cannot open video: {self.path}")
        self._n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        self.fps = float(cap.get(cv2.CAP_PROP_FPS)) or None
        self._size = (int(cap.get(cv2.CAP_PROP_FRAME_WIDTH)), int(cap.get(cv2.CAP_PROP_FRAME_HEIGHT)))
        cap.release()

    def __len__(self) -> int:
        return self._n

    @property
    def frame_size(self) -> tuple[int, int]:
        return self._size

    def read_range(self, start: int, count: int) -> np.ndarray:
        cv2 = self._cv2
        cap = cv2.VideoCapture(str(self.path))
        try:
            cap.set(cv2.CAP_PROP_POS_FRAMES, start)
            frames = []
            for _ in range(count):
                ok, frame = cap.read()
                if not ok:
                    raise IndexError(f"could not decode frame {start + len(frames)} of {self.path}")
                frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
        finally:
            cap.release()
        return np.stack(frames)

    def read(self, index: int) -> np.ndarray:
        return self.read_range(index, 1)[0]


def open_frame_source(path: str | Path):
    path = Path(path)
    if path.is_dir():
        return ImageDirectorySource(path)
    return VideoFileSource(path)


def crop_hands(frame: np.ndarray, bbox) -> np.ndarray:
    """Sub-image of ``frame`` (H, W, C) inside ``bbox`` = (x, y, w, h)."""
    x, y, w, h = bbox
    height, width = frame.shape[:2]
    check_bbox_in_frame((x, y, w, h), width, height, subject="crop")
    return frame[y : y + h, x : x + w]


def _to_unit_range(frames: np.ndarray) -> np.ndarray:
    if frames.dtype == np.uint8:
        return frames.astype(np.float32) / 255.0
    return frames.astype(np.float32)


def resize_frames(frames: np.ndarray, size: int = CLIP_SIZE) -> np.ndarray:
    """Bilinear (antialiased) resize of a (T, H, W, C) stack to (T, size, size, C)."""
    t = torch.from_numpy(np.ascontiguousarray(frames, dtype=np.float32)).permute(0, 3, 1, 2)
    if t.shape[-2:] != (size, size):
        downsampling = t.shape[-1] > size or t.shape[-2] > size
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False, antialias=downsampling)
    return t.permute(0, 2, 3, 1).contiguous().numpy()


def normalize(frames: np.ndarray, config: VisionConfig = VisionConfig()) -> np.ndarray:
    mean = np.asarray(config.mean, dtype=np.float32)
    std = np.asarray(config.std, dtype=np.float32)
    return (frames - mean) / std


def hflip(data: np.ndarray) -> np.ndarray:
    """Mirror every frame of a (T, H, W, C) clip left-right."""
    return np.ascontiguousarray(data[:, :, ::-1, :])


def build_visual_clip(
    frames,
    bbox,
    augment: bool = False,
    rng: np.random.Generator | None = None,
    config: VisionConfig = VisionConfig(),
    clip: ClipSpec | None = None,
) -> VisualClip:
    """Crop, resize and standardize 16 frames into a model-ready clip.

    With ``augment`` set, one Bernoulli(``config.flip_prob``) draw from ``rng``
    decides whether the whole clip is mirrored; frames are never flipped
    individually.
    """
    if len(frames) != CLIP_LENGTH:
        raise ValidationError(f"a clip needs exactly {CLIP_LENGTH} frames, got {len(frames)}", "frames")
    cropped = np.stack([crop_hands(np.asarray(f), bbox) for f in frames])
    data = normalize(resize_frames(_to_unit_range(cropped), config.size), config)
    flipped = False
    if augment:
        if rng is None:
            raise ValueError("augment=True needs a seeded numpy Generator")
        flipped = bool(rng.random() < config.flip_prob)
        if flipped:
            data = hflip(data)
    return VisualClip(data=data.astype(np.float32, copy=False), clip=clip, flipped=flipped)


# Flat binary cache: one JSON header line, then raw little-endian array bytes.
_CACHE_MAGIC = "PSKCLIP1"


def save_clip_cache(path: str | Path, array: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    array = np.ascontiguousarray(array)
    header = {
        "magic": _CACHE_MAGIC,
        "shape": list(array.shape),
        "dtype": array.dtype.newbyteorder("<").str,
        "meta": meta or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(array.astype(header["dtype"], copy=False).tobytes())
    tmp.replace(path)
    return path


def load_clip_cache(path: str | Path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        if header.get("magic") != _CACHE_MAGIC:
            raise ValueError(f"{path} is not a clip cache file")
        data = np.frombuffer(fh.read(), dtype=np.dtype(header["dtype"]))
    return data.reshape(header["shape"]), header["meta"]
