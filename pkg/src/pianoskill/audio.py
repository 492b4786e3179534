"""Clip-aligned audio windows to dB mel-spectrogram images.

The transform chain is: centered STFT (periodic Hann window, reflect padding)
-> power -> Slaney mel filterbank (area normalized) -> dB relative to the
window maximum, floored -> bilinear resize to 224 x 224 -> standardization.
No cropping happens anywhere: the lowest and highest mel bands end up on the
first and last image rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy.io import wavfile
from scipy.signal import resample_poly

from .sampling import ClipSpec, audio_window
from .validation import ValidationError

IMAGE_SIZE = 224
DEFAULT_SAMPLE_RATE = 22050
AMIN = 1e-10


@dataclass(frozen=True)
class MelSpectrogramParams:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    db_ref: float | None = None  # None -> max power of the window
    db_floor: float = -80.0
    # [db_floor, 0] dB maps to [0, 1]; then (x - mean) / std.
    image_mean: float = 0.449
    image_std: float = 0.226

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ValidationError(f"need 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}", "params")
        if self.n_mels < 1:
            raise ValidationError("n_mels must be >= 1", "params")
        if not 0 <= self.fmin < self.f_max <= self.sample_rate / 2:
            raise ValidationError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.f_max}", "params"
            )
        if self.db_floor >= 0:
            raise ValidationError("db_floor must be negative", "params")

    @property
    def f_max(self) -> float:
        return float(self.sample_rate) / 2 if self.fmax is None else float(self.fmax)


@dataclass
class AudioWindow:
    samples: np.ndarray
    sample_rate: int
    clip: ClipSpec | None = None


@dataclass
class AuralClip:
    data: np.ndarray  # (224, 224, 1) float32, standardized
    params: MelSpectrogramParams
    clip: ClipSpec | None = None

    @property
    def db(self) -> np.ndarray:
        """The dB image (224, 224, 1) before standardization."""
        p = self.params
        unit = self.data.astype(np.float64) * p.image_std + p.image_mean
        return unit * (-p.db_floor) + p.db_floor


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mels = freq / f_sp
    return np.where(freq >= min_log_hz, min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep, mels)


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mels >= min_log_mel, min_log_hz * np.exp(logstep * (mels - min_log_mel)), f_sp * mels)


@lru_cache(maxsize=16)
def _mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    fft_freqs = np.linspace(0, sample_rate / 2, 1 + n_fft // 2)
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2:] - mel_pts[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_filterbank(params: MelSpectrogramParams) -> np.ndarray:
    """Triangular filters, shape (n_mels, 1 + n_fft // 2), each of unit area in Hz^-1 scale."""
    return _mel_filterbank(params.sample_rate, params.n_fft, params.n_mels, float(params.fmin), params.f_max)


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft_power(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """|STFT|^2, shape (1 + n_fft // 2, 1 + len // hop), frames centered on multiples of ``hop``."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError("expected a non-empty 1-D signal", "window")
    pad = n_fft // 2
    if x.size <= pad:
        raise ValidationError(
            f"window of {x.size} samples is too short for reflect padding by {pad} (n_fft={n_fft})", "window"
        )
    padded = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (padded.size - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    spec = np.fft.rfft(frames * hann_window(n_fft), axis=1)
    return (spec.real**2 + spec.imag**2).T


def melspectrogram(window: AudioWindow | np.ndarray, params: MelSpectrogramParams = MelSpectrogramParams()) -> np.ndarray:
    """Mel power matrix (n_mels, n_frames) of a mono window."""
    samples = window.samples if isinstance(window, AudioWindow) else window
    if isinstance(window, AudioWindow) and window.sample_rate != params.sample_rate:
        raise ValidationError(
            f"window sampled at {window.sample_rate} Hz, params expect {params.sample_rate} Hz", "window"
        )
    return mel_filterbank(params) @ stft_power(samples, params.n_fft, params.hop)


def power_to_db(S: np.ndarray, db_ref: float, db_floor: float) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if np.any(S < 0):
        raise ValidationError("power must be non-negative", "S")
    db = 10.0 * np.log10(np.maximum(S, AMIN) / db_ref)
    return np.maximum(db, db_floor)


def resize_image(image: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear resize of a 2-D array; corner-aligned so edge rows/columns are kept exactly."""
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float64))[None, None]
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=True)
    return out[0, 0].numpy()


def build_aural_clip(
    window: AudioWindow | np.ndarray,
    params: MelSpectrogramParams = MelSpectrogramParams(),
    clip: ClipSpec | None = None,
) -> AuralClip:
    """Model-ready (224, 224, 1) image of one window; deterministic, never cropped.

    Row 0 holds the lowest mel band, the last row the highest.
    """
    S = melspectrogram(window, params)
    ref = params.db_ref
    if ref is None:
        peak = float(S.max())
        ref = peak if peak > 0 else 1.0
    db = power_to_db(S, ref, params.db_floor)
    image = resize_image(db)
    unit = (image - params.db_floor) / (-params.db_floor)
    data = ((unit - params.image_mean) / params.image_std).astype(np.float32)
    if clip is None and isinstance(window, AudioWindow):
        clip = window.clip
    return AuralClip(data=data[:, :, None], params=params, clip=clip)


def load_wav(path: str | Path, target_rate: int | None = DEFAULT_SAMPLE_RATE) -> tuple[np.ndarray, int]:
    """Read a PCM wave file as mono float64 in [-1, 1], resampled to ``target_rate``."""
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # unsigned 8-bit
            data = (data.astype(np.float64) - 128.0) / 128.0
        else:
            data = data.astype(np.float64) / max(abs(info.min), info.max)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if target_rate is not None and rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        data = resample_poly(data, target_rate // g, rate // g)
        rate = target_rate
    return data, int(rate)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> Path:
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), int(sample_rate), pcm)
    return Path(path)


def extract_window(signal: np.ndarray, sample_rate: int, clip: ClipSpec, fps: float) -> AudioWindow:
    """The slice of ``signal`` aligned with ``clip``; zero-padded if the audio ends early."""
    start_s, dur_s = audio_window(clip, fps)
    start = int(round(start_s * sample_rate))
    length = int(round(dur_s * sample_rate))
    seg = np.asarray(signal[start : start + length], dtype=np.float64)
    if seg.size < length:
        seg = np.pad(seg, (0, length - seg.size))
    return AudioWindow(samples=seg, sample_rate=sample_rate, clip=clip)
