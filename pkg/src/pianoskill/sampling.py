"""Partitioning of a performance into fixed-size samples of short clips.

A sample is ``CLIPS_PER_SAMPLE`` clips of ``CLIP_LENGTH`` consecutive frames
(160 frames in total). A performance of ``frame_count`` frames yields
``frame_count // 160`` samples; the trailing remainder is discarded. Two
layouts are supported:

* contiguous: sample ``i`` occupies frames ``[160 i, 160 (i + 1))``;
* uniformly distributed: the usable frames are cut into 10 equal segments and
  sample ``i`` takes the ``i``-th 16-frame slot of every segment, so each
  sample spans the whole performance while staying disjoint from the others.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

CLIP_LENGTH = 16
CLIPS_PER_SAMPLE = 10
SAMPLE_LENGTH = CLIP_LENGTH * CLIPS_PER_SAMPLE


class SamplingScheme(str, enum.Enum):
    CONTIGUOUS = "contiguous"
    UNIFORM = "uniform"

    @classmethod
    def parse(cls, value: "SamplingScheme | str") -> "SamplingScheme":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {
            "contiguous": cls.CONTIGUOUS,
            "uniform": cls.UNIFORM,
            "uniformly_distributed": cls.UNIFORM,
            "uniformlydistributed": cls.UNIFORM,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown sampling scheme {value!r}; expected 'contiguous' or 'uniform'") from None


@dataclass(frozen=True)
class ClipSpec:
    start_frame: int
    length: int = CLIP_LENGTH

    @property
    def stop_frame(self) -> int:
        return self.start_frame + self.length

    def frames(self) -> range:
        return range(self.start_frame, self.stop_frame)


@dataclass(frozen=True)
class SampleSpec:
    performance_id: str
    sample_index: int
    scheme: SamplingScheme
    clips: tuple[ClipSpec, ...]

    def __post_init__(self):
        if len(self.clips) != CLIPS_PER_SAMPLE:
            raise ValueError(f"a sample holds exactly {CLIPS_PER_SAMPLE} clips, got {len(self.clips)}")

    @property
    def n_frames(self) -> int:
        return sum(c.length for c in self.clips)


def count_samples(frame_count: int) -> int:
    """Number of whole 160-frame samples in ``frame_count`` frames (same for both schemes)."""
    if frame_count < 0:
        raise ValueError(f"frame_count must be >= 0, got {frame_count}")
    return frame_count // SAMPLE_LENGTH


def clip_starts(frame_count: int, scheme: SamplingScheme | str) -> list[list[int]]:
    """Start frames as a ``[sample][clip]`` nested list."""
    scheme = SamplingScheme.parse(scheme)
    n = count_samples(frame_count)
    if scheme is SamplingScheme.CONTIGUOUS:
        return [[i * SAMPLE_LENGTH + j * CLIP_LENGTH for j in range(CLIPS_PER_SAMPLE)] for i in range(n)]
    segment = n * CLIP_LENGTH
    return [[j * segment + i * CLIP_LENGTH for j in range(CLIPS_PER_SAMPLE)] for i in range(n)]


def enumerate_samples(perf, scheme: SamplingScheme | str) -> list[SampleSpec]:
    """All samples of ``perf`` under ``scheme``.

    ``perf`` only needs ``id`` and ``frame_count`` attributes, so a
    :class:`~pianoskill.datamodel.PerformanceRecord` works as well as any
    light-weight stand-in.
    """
    scheme = SamplingScheme.parse(scheme)
    return [
        SampleSpec(
            performance_id=perf.id,
            sample_index=i,
            scheme=scheme,
            clips=tuple(ClipSpec(s) for s in starts),
        )
        for i, starts in enumerate(clip_starts(perf.frame_count, scheme))
    ]


def audio_window(clip: ClipSpec, fps: float) -> tuple[float, float]:
    """(start, duration) in seconds of the audio aligned with ``clip``."""
    if not fps > 0:
        raise ValueError(f"fps must be positive, got {fps}")
    return clip.start_frame / fps, clip.length / fps
