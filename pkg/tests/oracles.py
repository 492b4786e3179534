"""Reference implementations written straight from the textbook definitions.

They share no code with the package (only its mel-scale conversions, which
have their own reference-point tests) and are deliberately slow.
"""

import numpy as np

from pianoskill.audio import hz_to_mel, mel_to_hz


def reflect_index(i, n):
    """Mirror an out-of-range index back into 0..n-1 without repeating the edge sample."""
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def oracle_power(x, n_fft, hop):
    """|DFT|^2 of each centered, Hann-weighted frame, computed straight from the definitions."""
    x = np.asarray(x, dtype=np.float64)
    n_frames = 1 + len(x) // hop
    n = np.arange(n_fft)
    window = np.sin(np.pi * n / n_fft) ** 2
    k = np.arange(n_fft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / n_fft)
    out = np.empty((len(k), n_frames))
    for t in range(n_frames):
        idx = [reflect_index(t * hop - n_fft // 2 + m, len(x)) for m in range(n_fft)]
        spectrum = basis @ (window * x[idx])
        out[:, t] = np.abs(spectrum) ** 2
    return out


def oracle_filterbank(sr, n_fft, n_mels, fmin, fmax):
    """Triangles between consecutive mel-spaced edges, scaled to unit area, one loop per weight."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    fb = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for j, f in enumerate(freqs):
            if lo <= f <= c:
                fb[m, j] = (f - lo) / (c - lo)
            elif c < f <= hi:
                fb[m, j] = (hi - f) / (hi - c)
        fb[m] *= 2.0 / (hi - lo)
    return fb
