"""Annotated performances, the YAML manifest format, and split accounting."""

from __future__ import annotations

import enum
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import yaml

from .sampling import SamplingScheme, count_samples
from .validation import ValidationError, check_bbox_in_frame, check_level, check_positive

DEFAULT_FPS = 30.0

REQUIRED_KEYS = (
    "id",
    "video",
    "frame_count",
    "audio",
    "audio_sample_rate",
    "player_level",
    "song_level",
    "song_name",
    "bbox",
    "split",
)
OPTIONAL_KEYS = ("fps", "frame_size")


class ManifestParseError(ValueError):
    """The manifest file is not well-formed YAML of the expected layout."""


class Split(str, enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class HandBBox:
    x: int
    y: int
    w: int
    h: int

    def __iter__(self):
        return iter((self.x, self.y, self.w, self.h))

    @classmethod
    def parse(cls, value) -> "HandBBox":
        if isinstance(value, HandBBox):
            return value
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
            try:
                value = [int(v) for v in value]
            except ValueError:
                raise ValidationError(f"expected 4 integers x,y,w,h, got {value!r}") from None
        if not isinstance(value, (list, tuple)) or len(value) != 4:
            raise ValidationError(f"expected 4 integers x,y,w,h, got {value!r}")
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ValidationError(f"expected 4 integers x,y,w,h, got {value!r}")
        x, y, w, h = value
        if x < 0 or y < 0 or w <= 0 or h <= 0:
            raise ValidationError(f"need x,y >= 0 and w,h > 0, got {tuple(value)}")
        return cls(x, y, w, h)


@dataclass(frozen=True)
class PerformanceRecord:
    id: str
    video_uri: str
    frame_count: int
    audio_uri: str
    audio_sample_rate: int
    player_level: int
    song_level: int
    song_name: str
    hand_bbox: HandBBox
    split: Split
    fps: float = DEFAULT_FPS
    frame_size: tuple[int, int] | None = None

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps

    @property
    def n_samples(self) -> int:
        return count_samples(self.frame_count)


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[PerformanceRecord, ...]
    scheme: SamplingScheme = SamplingScheme.UNIFORM
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValidationError("duplicate record id", rec.id, "id")
            seen.add(rec.id)
        # ids are unique, so a performance can only ever sit in one split.

    def __len__(self) -> int:
        return len(self.records)

    def split(self, which: Split | str) -> list[PerformanceRecord]:
        which = Split(which)
        return [r for r in self.records if r.split is which]

    def resolve(self, uri: str) -> Path:
        """Absolute path of a media locator, relative ones resolved against the manifest root."""
        path = Path(os.path.expanduser(uri))
        if path.is_absolute() or self.root is None:
            return path
        return self.root / path

    def with_records(self, records: Iterable[PerformanceRecord]) -> "DatasetManifest":
        return DatasetManifest(tuple(records), self.scheme, self.root)


def _record_from_dict(raw: dict, index: int) -> PerformanceRecord:
    if not isinstance(raw, dict):
        raise ValidationError(f"record #{index} is not a mapping")
    rid = raw.get("id")
    if not isinstance(rid, str) or not rid:
        raise ValidationError(f"record #{index} needs a non-empty string id", f"record#{index}", "id")
    unknown = sorted(set(raw) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
    if unknown:
        raise ValidationError(f"unknown keys {unknown}", rid, unknown[0])
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise ValidationError("missing required key", rid, key)

    frame_count = raw["frame_count"]
    if isinstance(frame_count, bool) or not isinstance(frame_count, int) or frame_count < 0:
        raise ValidationError(f"must be a non-negative integer, got {frame_count!r}", rid, "frame_count")
    fps = raw.get("fps", DEFAULT_FPS)
    check_positive(fps, "fps", rid)
    sr = raw["audio_sample_rate"]
    check_positive(sr, "audio_sample_rate", rid, integer=True)
    for key in ("video", "audio", "song_name"):
        if not isinstance(raw[key], str):
            raise ValidationError(f"expected a string, got {raw[key]!r}", rid, key)
    try:
        bbox = HandBBox.parse(raw["bbox"])
    except ValidationError as exc:
        raise ValidationError(str(exc), rid, "bbox") from None
    frame_size = raw.get("frame_size")
    if frame_size is not None:
        if (
            not isinstance(frame_size, (list, tuple))
            or len(frame_size) != 2
            or not all(isinstance(v, int) and v > 0 for v in frame_size)
        ):
            raise ValidationError(f"expected [width, height], got {frame_size!r}", rid, "frame_size")
        frame_size = tuple(frame_size)
        check_bbox_in_frame(tuple(bbox), *frame_size, subject=rid)
    try:
        split = Split(raw["split"])
    except ValueError:
        raise ValidationError(f"must be 'train' or 'test', got {raw['split']!r}", rid, "split") from None

    return PerformanceRecord(
        id=rid,
        video_uri=raw["video"],
        frame_count=frame_count,
        audio_uri=raw["audio"],
        audio_sample_rate=int(sr),
        player_level=check_level(raw["player_level"], "player_level", rid),
        song_level=check_level(raw["song_level"], "song_level", rid),
        song_name=raw["song_name"],
        hand_bbox=bbox,
        split=split,
        fps=float(fps),
        frame_size=frame_size,
    )


def record_to_dict(rec: PerformanceRecord) -> dict:
    out = {
        "id": rec.id,
        "video": rec.video_uri,
        "frame_count": rec.frame_count,
        "fps": rec.fps,
        "audio": rec.audio_uri,
        "audio_sample_rate": rec.audio_sample_rate,
        "player_level": rec.player_level,
        "song_level": rec.song_level,
        "song_name": rec.song_name,
        "bbox": list(rec.hand_bbox),
        "split": rec.split.value,
    }
    if rec.frame_size is not None:
        out["frame_size"] = list(rec.frame_size)
    return out


def parse_manifest(doc, root: Path | None = None) -> DatasetManifest:
    """Build a manifest from already-parsed YAML content."""
    scheme = SamplingScheme.UNIFORM
    if isinstance(doc, dict):
        unknown = sorted(set(doc) - {"records", "scheme"})
        if unknown:
            raise ValidationError(f"unknown top-level keys {unknown}", "manifest")
        if "scheme" in doc:
            try:
                scheme = SamplingScheme.parse(doc["scheme"])
            except ValueError as exc:
                raise ValidationError(str(exc), "manifest", "scheme") from None
        doc = doc.get("records")
    if not isinstance(doc, list):
        raise ManifestParseError("manifest must contain a list of records")
    records = tuple(_record_from_dict(raw, i) for i, raw in enumerate(doc))
    return DatasetManifest(records, scheme, root)


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read and validate a manifest file.

    Raises :class:`ManifestParseError` for unreadable YAML and
    :class:`ValidationError` (naming record and field) for contract violations.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestParseError(f"cannot read {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ManifestParseError(f"{path}: {exc}") from exc
    return parse_manifest(doc, root=path.resolve().parent)


def dump_manifest(manifest: DatasetManifest) -> str:
    doc = {"scheme": manifest.scheme.value, "records": [record_to_dict(r) for r in manifest.records]}
    return yaml.safe_dump(doc, sort_keys=False)


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.write_text(dump_manifest(manifest))
    return path


@dataclass
class SummaryReport:
    n_records: int
    min_frames: int
    mean_frames: float
    max_frames: int
    performances: dict[str, int]
    samples: dict[str, int]
    player_level_histogram: dict[int, int]
    song_level_histogram: dict[int, int]

    @property
    def total_samples(self) -> int:
        return sum(self.samples.values())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total_samples"] = self.total_samples
        return out

    def format(self) -> str:
        lines = [
            f"performances: {self.n_records}",
            f"frames min/mean/max: {self.min_frames} / {self.mean_frames:.2f} / {self.max_frames}",
        ]
        for split in (s.value for s in Split):
            lines.append(f"{split}: {self.performances[split]} performances, {self.samples[split]} samples")
        lines.append(f"total samples: {self.total_samples}")
        levels = range(1, 11)
        lines.append("player level: " + " ".join(f"{k}:{self.player_level_histogram[k]}" for k in levels))
        lines.append("song level:   " + " ".join(f"{k}:{self.song_level_histogram[k]}" for k in levels))
        return "\n".join(lines)


def dataset_summary(manifest: DatasetManifest) -> SummaryReport:
    if not manifest.records:
        raise ValueError("cannot summarise an empty manifest")
    frames = [r.frame_count for r in manifest.records]
    performances = {s.value: 0 for s in Split}
    samples = {s.value: 0 for s in Split}
    for rec in manifest.records:
        performances[rec.split.value] += 1
        samples[rec.split.value] += count_samples(rec.frame_count)
    pl = Counter(r.player_level for r in manifest.records)
    sl = Counter(r.song_level for r in manifest.records)
    return SummaryReport(
        n_records=len(frames),
        min_frames=min(frames),
        mean_frames=sum(frames) / len(frames),
        max_frames=max(frames),
        performances=performances,
        samples=samples,
        player_level_histogram={k: pl.get(k, 0) for k in range(1, 11)},
        song_level_histogram={k: sl.get(k, 0) for k in range(1, 11)},
    )
