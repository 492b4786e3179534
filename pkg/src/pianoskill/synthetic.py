"""Synthetic performances with level-encoding visual and aural cues.

Every performance renders a drifting sinusoidal grating (drift speed grows
with the player level) and a tone at ``tone_base_hz * level`` with notes
struck ``level`` times per second. With ``cue="localized"`` those cues only
appear in one random contiguous stretch of the performance; elsewhere the
grating stands still and a fixed neutral tone plays, identical for all levels.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .audio import write_wav
from .datamodel import DatasetManifest, HandBBox, PerformanceRecord, Split, save_manifest
from .sampling import SamplingScheme

MANIFEST_NAME = "manifest.yaml"


@dataclass(frozen=True)
class SyntheticSpec:
    train_per_level: int = 2
    test_per_level: int = 1
    levels: tuple[int, ...] = tuple(range(1, 11))
    frame_count: int = 640
    frame_size: tuple[int, int] = (128, 96)  # width, height
    bbox: tuple[int, int, int, int] = (8, 8, 112, 80)
    fps: float = 30.0
    sample_rate: int = 22050
    cue: str = "global"  # or "localized"
    localized_fraction: float = 0.2
    grating_period: float = 80.0  # pixels
    speed_per_level: float = 1.5  # pixels per frame
    tone_base_hz: float = 220.0
    neutral_tone_hz: float = 110.0
    pixel_noise: float = 0.0
    audio_noise: float = 0.01
    seed: int = 0
    scheme: SamplingScheme = SamplingScheme.UNIFORM

    def __post_init__(self):
        if self.cue not in ("global", "localized"):
            raise ValueError(f"cue must be 'global' or 'localized', got {self.cue!r}")
        if not 0 < self.localized_fraction <= 1:
            raise ValueError("localized_fraction must be in (0, 1]")
        speeds = [self.speed(k) for k in self.levels]
        if sorted(set(speeds)) != speeds or sorted(self.levels) != list(self.levels):
            raise ValueError("levels must be strictly increasing so cues stay monotone")
        if max(speeds) / self.grating_period >= 0.5:
            raise ValueError("fastest drift aliases: speed_per_level * max(level) must stay below grating_period / 2")
        if self.tone_frequency(max(self.levels)) >= self.sample_rate / 2:
            raise ValueError("highest tone exceeds the Nyquist frequency")

    def speed(self, level: int) -> float:
        return self.speed_per_level * level

    def tone_frequency(self, level: int) -> float:
        return self.tone_base_hz * level


def _cue_span(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[int, int]:
    if spec.cue == "global":
        return 0, spec.frame_count
    span = max(1, int(round(spec.localized_fraction * spec.frame_count)))
    start = int(rng.integers(0, spec.frame_count - span + 1))
    return start, start + span


def render_frames(spec: SyntheticSpec, level: int, rng: np.random.Generator, span: tuple[int, int]):
    """Yield (H, W, 3) uint8 frames of the drifting grating, one per time step."""
    w, h = spec.frame_size
    t = np.arange(spec.frame_count)
    in_cue = (t >= span[0]) & (t < span[1])
    velocity = np.where(in_cue, spec.speed(level), 0.0)
    position = np.concatenate([[0.0], np.cumsum(velocity)[:-1]])
    phase = rng.uniform(0, 2 * np.pi)
    # Color varies per performance as an additive offset, so the grating's
    # contrast (and with it the size of frame-to-frame change) stays level-only.
    tint = rng.uniform(-0.08, 0.08, size=3)
    x = np.arange(w)
    for pos in position:
        row = 0.5 + 0.35 * np.sin(2 * np.pi * (x - pos) / spec.grating_period + phase)
        frame = np.broadcast_to(row[None, :, None] + tint, (h, w, 3))
        frame = frame + rng.normal(0.0, spec.pixel_noise, size=(h, w, 3))
        yield np.clip(np.round(frame * 255), 0, 255).astype(np.uint8)


def render_audio(spec: SyntheticSpec, level: int, rng: np.random.Generator, span: tuple[int, int]) -> np.ndarray:
    """Mono float signal covering the whole performance (plus a little slack)."""
    n = int(np.ceil((spec.frame_count / spec.fps + 0.1) * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    frame_of_sample = t * spec.fps
    in_cue = (frame_of_sample >= span[0]) & (frame_of_sample < span[1])
    phase = rng.uniform(0, 2 * np.pi)
    cue_tone = np.sin(2 * np.pi * spec.tone_frequency(level) * t + phase)
    since_note = np.mod(t, 1.0 / level)
    envelope = 0.3 + 0.7 * np.exp(-8.0 * since_note)
    neutral = 0.5 * np.sin(2 * np.pi * spec.neutral_tone_hz * t + phase)
    signal = np.where(in_cue, 0.5 * envelope * cue_tone, neutral)
    signal = signal + rng.normal(0.0, spec.audio_noise, size=n)
    return np.clip(signal, -1.0, 1.0)


def _write_performance(spec: SyntheticSpec, out_dir: Path, index: int, level: int, split: Split, ordinal: int) -> PerformanceRecord:
    rng = np.random.default_rng([spec.seed, index])
    pid = f"L{level:02d}-{split.value}-{ordinal}"
    span = _cue_span(spec, rng)
    frame_dir = out_dir / pid / "frames"
    frame_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(render_frames(spec, level, rng, span)):
        Image.fromarray(frame).save(frame_dir / f"{i:04d}.png", optimize=False)
    write_wav(out_dir / pid / "audio.wav", render_audio(spec, level, rng, span), spec.sample_rate)
    song_level = int(np.clip(level + rng.integers(-1, 2), 1, 10))
    return PerformanceRecord(
        id=pid,
        video_uri=f"{pid}/frames",
        frame_count=spec.frame_count,
        audio_uri=f"{pid}/audio.wav",
        audio_sample_rate=spec.sample_rate,
        player_level=level,
        song_level=song_level,
        song_name=f"synthetic-{level:02d}-{ordinal}",
        hand_bbox=HandBBox(*spec.bbox),
        split=split,
        fps=spec.fps,
        frame_size=tuple(spec.frame_size),
    )


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path, workers: int = 0) -> DatasetManifest:
    """Render all performances under ``out_dir`` and write ``out_dir/manifest.yaml``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for level in spec.levels:
        for split, count in ((Split.TRAIN, spec.train_per_level), (Split.TEST, spec.test_per_level)):
            for ordinal in range(count):
                jobs.append((len(jobs), level, split, ordinal))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda j: _write_performance(spec, out_dir, *j), jobs))
    else:
        records = [_write_performance(spec, out_dir, *j) for j in jobs]
    manifest = DatasetManifest(tuple(records), SamplingScheme.parse(spec.scheme), out_dir.resolve())
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest
