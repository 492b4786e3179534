from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianoskill.sampling import (
    CLIP_LENGTH,
    SAMPLE_LENGTH,
    ClipSpec,
    SamplingScheme,
    audio_window,
    clip_starts,
    count_samples,
    enumerate_samples,
)


@dataclass(frozen=True)
class Perf:
    id: str
    frame_count: int


def frames_used(samples):
    used = []
    for s in samples:
        for c in s.clips:
            used.extend(c.frames())
    return used


@pytest.mark.parametrize("frames, expected", [(570, 3), (159, 0), (10038, 62), (160, 1), (0, 0)])
def test_count_samples(frames, expected):
    assert count_samples(frames) == expected


def test_count_samples_rejects_negative():
    with pytest.raises(ValueError):
        count_samples(-1)


def test_contiguous_first_sample():
    s = enumerate_samples(Perf("p", 570), "contiguous")
    assert [c.start_frame for c in s[0].clips] == [0, 16, 32, 48, 64, 80, 96, 112, 128, 144]


def test_uniform_layout_example():
    s = enumerate_samples(Perf("p", 570), SamplingScheme.UNIFORM)
    assert s[1].clips[2].start_frame == 2 * 48 + 16 == 112


def test_below_one_sample_is_empty():
    assert enumerate_samples(Perf("p", 159), "uniform") == []
    assert enumerate_samples(Perf("p", 159), "contiguous") == []


def test_sample_metadata():
    samples = enumerate_samples(Perf("perf-7", 500), "uniform")
    assert [s.sample_index for s in samples] == [0, 1, 2]
    assert all(s.performance_id == "perf-7" and s.scheme is SamplingScheme.UNIFORM for s in samples)
    assert all(s.n_frames == 160 and len(s.clips) == 10 for s in samples)


@pytest.mark.parametrize("scheme", list(SamplingScheme))
def test_disjoint_and_covering_exhaustive(scheme):
    for n_frames in range(0, 4001):
        samples = enumerate_samples(Perf("p", n_frames), scheme)
        used = frames_used(samples)
        n = count_samples(n_frames)
        assert len(used) == len(set(used)), n_frames
        assert sorted(used) == list(range(n * SAMPLE_LENGTH)), n_frames
        for s in samples:
            starts = [c.start_frame for c in s.clips]
            assert starts == sorted(starts)
            assert all(c.length == CLIP_LENGTH and c.stop_frame <= n_frames for c in s.clips)


@given(st.integers(min_value=2 * SAMPLE_LENGTH, max_value=20000))
def test_uniform_samples_span_every_segment(n_frames):
    n = count_samples(n_frames)
    segment = n * CLIP_LENGTH
    for s in enumerate_samples(Perf("p", n_frames), "uniform"):
        assert [c.start_frame // segment for c in s.clips] == list(range(10))


@given(st.integers(min_value=0, max_value=20000))
def test_contiguous_samples_stay_in_one_window(n_frames):
    for s in enumerate_samples(Perf("p", n_frames), "contiguous"):
        window = {c.start_frame // SAMPLE_LENGTH for c in s.clips} | {(c.stop_frame - 1) // SAMPLE_LENGTH for c in s.clips}
        assert window == {s.sample_index}


@settings(max_examples=50)
@given(st.integers(min_value=0, max_value=20000), st.sampled_from(list(SamplingScheme)))
def test_enumeration_is_pure(n_frames, scheme):
    assert enumerate_samples(Perf("a", n_frames), scheme) == enumerate_samples(Perf("a", n_frames), scheme)
    assert clip_starts(n_frames, scheme) == clip_starts(n_frames, scheme)


def test_scheme_parsing():
    assert SamplingScheme.parse("Uniformly-Distributed") is SamplingScheme.UNIFORM
    assert SamplingScheme.parse("contiguous") is SamplingScheme.CONTIGUOUS
    with pytest.raises(ValueError):
        SamplingScheme.parse("random")


@pytest.mark.parametrize(
    "start, fps, expected",
    [(0, 30, (0.0, 16 / 30)), (30, 30, (1.0, 16 / 30)), (112, 30, (112 / 30, 16 / 30))],
)
def test_audio_window(start, fps, expected):
    got = audio_window(ClipSpec(start), fps)
    assert got == pytest.approx(expected, rel=1e-12)
    assert expected[1] == pytest.approx(0.533333, abs=1e-6)


@pytest.mark.parametrize("fps", [0, -30])
def test_audio_window_rejects_bad_fps(fps):
    with pytest.raises(ValueError):
        audio_window(ClipSpec(0), fps)
