"""Sample references and the media loader that turns them into model inputs."""

from __future__ import annotations

import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio import MelSpectrogramParams, build_aural_clip, extract_window, load_wav
from .datamodel import DatasetManifest, PerformanceRecord, Split
from .model import Modality
from .sampling import SampleSpec, SamplingScheme, enumerate_samples
from .vision import VisionConfig, build_visual_clip, crop_hands, open_frame_source


@dataclass(frozen=True)
class SampleRef:
    """One classifiable sample: its performance, resolved media paths and clip layout."""

    record: PerformanceRecord
    spec: SampleSpec
    video_path: Path
    audio_path: Path

    @property
    def level(self) -> int:
        return self.record.player_level

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.record.id, self.spec.scheme.value, self.spec.sample_index)


def make_samples(
    manifest: DatasetManifest,
    scheme: SamplingScheme | str | None = None,
    split: Split | str | None = None,
) -> list[SampleRef]:
    """Enumerate every sample of the manifest (optionally one split) in record order."""
    scheme = manifest.scheme if scheme is None else SamplingScheme.parse(scheme)
    records = manifest.records if split is None else manifest.split(split)
    out = []
    for rec in records:
        video = manifest.resolve(rec.video_uri)
        audio = manifest.resolve(rec.audio_uri)
        out.extend(SampleRef(rec, spec, video, audio) for spec in enumerate_samples(rec, scheme))
    return out


def sample_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, index])


class ClipLoader:
    """Loads and preprocesses clips, memoising decoded media.

    Cropped frames are cached per performance up to ``frame_cache_bytes``
    (least recently used evicted); dB-mel images are deterministic and cached
    per clip.
    """

    def __init__(
        self,
        vision: VisionConfig = VisionConfig(),
        mel: MelSpectrogramParams = MelSpectrogramParams(),
        frame_cache_bytes: int = 1 << 30,
        workers: int = 0,
    ):
        self.vision = vision
        self.mel = mel
        self.frame_cache_bytes = frame_cache_bytes
        self.workers = workers
        self._frames: OrderedDict[Path, np.ndarray] = OrderedDict()
        self._frame_bytes = 0
        self._sources: dict[Path, object] = {}
        self._waves: dict[Path, np.ndarray] = {}
        self._aural: dict[tuple[Path, int], np.ndarray] = {}
        self._lock = threading.RLock()

    def _source(self, path: Path):
        if path not in self._sources:
            self._sources[path] = open_frame_source(path)
        return self._sources[path]

    def _cropped_frames(self, ref: SampleRef, start: int, count: int) -> tuple[np.ndarray, tuple]:
        with self._lock:
            return self._cropped_frames_locked(ref, start, count)

    def _cropped_frames_locked(self, ref: SampleRef, start: int, count: int) -> tuple[np.ndarray, tuple]:
        path = ref.video_path
        bbox = tuple(ref.record.hand_bbox)
        cached = self._frames.get(path)
        if cached is not None:
            self._frames.move_to_end(path)
            return cached[start : start + count], (0, 0, bbox[2], bbox[3])
        src = self._source(path)
        n = ref.record.frame_count
        size = n * bbox[2] * bbox[3] * 3
        if size <= self.frame_cache_bytes:
            frames = np.stack([crop_hands(src.read(i), bbox) for i in range(n)])
            self._frames[path] = frames
            self._frame_bytes += frames.nbytes
            while self._frame_bytes > self.frame_cache_bytes and len(self._frames) > 1:
                _, old = self._frames.popitem(last=False)
                self._frame_bytes -= old.nbytes
            return frames[start : start + count], (0, 0, bbox[2], bbox[3])
        return src.read_range(start, count), bbox

    def visual_sample(self, ref: SampleRef, augment: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        """(10, 16, 112, 112, 3) float32."""
        clips = []
        for clip in ref.spec.clips:
            frames, bbox = self._cropped_frames(ref, clip.start_frame, clip.length)
            clips.append(build_visual_clip(frames, bbox, augment=augment, rng=rng, config=self.vision, clip=clip).data)
        return np.stack(clips)

    def _wave(self, path: Path) -> np.ndarray:
        with self._lock:
            if path not in self._waves:
                self._waves[path], _ = load_wav(path, self.mel.sample_rate)
            return self._waves[path]

    def aural_sample(self, ref: SampleRef) -> np.ndarray:
        """(10, 224, 224, 1) float32."""
        wave = self._wave(ref.audio_path)
        out = []
        for clip in ref.spec.clips:
            key = (ref.audio_path, clip.start_frame)
            if key not in self._aural:
                window = extract_window(wave, self.mel.sample_rate, clip, ref.record.fps)
                self._aural[key] = build_aural_clip(window, self.mel, clip).data
            out.append(self._aural[key])
        return np.stack(out)

    def load_sample(self, ref: SampleRef, modality: Modality, augment: bool = False, rng=None) -> dict:
        item = {"level": ref.level}
        if modality.uses_video:
            item["video"] = self.visual_sample(ref, augment, rng)
        if modality.uses_audio:
            item["audio"] = self.aural_sample(ref)
        return item

    def load_batch(self, refs, modality, augment: bool = False, rngs=None) -> dict:
        """Stack samples into tensors ``video`` (B,10,16,112,112,3), ``audio`` (B,10,224,224,1), ``level`` (B,)."""
        modality = Modality(modality)
        rngs = list(rngs) if rngs is not None else [None] * len(refs)
        jobs = list(zip(refs, rngs))
        if self.workers > 1 and len(jobs) > 1:
            # map() keeps submission order, so batches are identical to the serial path.
            with ThreadPoolExecutor(self.workers) as pool:
                items = list(pool.map(lambda j: self.load_sample(j[0], modality, augment, j[1]), jobs))
        else:
            items = [self.load_sample(r, modality, augment, g) for r, g in jobs]
        batch = {"level": torch.tensor([it["level"] for it in items], dtype=torch.long)}
        for key in ("video", "audio"):
            if key in items[0]:
                batch[key] = torch.from_numpy(np.stack([it[key] for it in items]))
        return batch
