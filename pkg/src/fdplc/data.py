"""Training clips: WAV directories, or a synthetic speech-like corpus when no data is configured.

The synthetic clips are syllable trains: glottal-pulse excitation with a
drifting pitch, shaped by three time-varying formant resonators, interleaved
with short fricative noise bursts and pauses, over a low background noise floor.
"""
from pathlib import Path

import numpy as np
import scipy.signal

from .dsp import SAMPLE_RATE, AudioClip, read_wav
from .errors import DataError

NOISE_FLOOR = 3e-4

_VOWELS = np.array([  # F1, F2, F3 in Hz
    [730, 1090, 2440],
    [270, 2290, 3010],
    [300, 870, 2240],
    [530, 1840, 2480],
    [570, 840, 2410],
    [440, 1020, 2240],
    [660, 1720, 2410],
])


def _resonator(f, bw):
    r = np.exp(-np.pi * bw / SAMPLE_RATE)
    theta = 2 * np.pi * f / SAMPLE_RATE
    return np.array([1.0 - r]), np.array([1.0, -2 * r * np.cos(theta), r * r])


def _voiced(n, rng):
    f0 = rng.uniform(90, 240) * np.exp(np.cumsum(rng.normal(0, 0.002, n)))
    phase = np.cumsum(f0 / SAMPLE_RATE)
    pulses = np.diff(np.floor(phase), prepend=0.0)
    src = scipy.signal.lfilter([1.0], [1.0, -0.95], pulses) + 0.02 * rng.normal(size=n)
    a, b = _VOWELS[rng.integers(len(_VOWELS), size=2)]
    out = np.zeros(n)
    for k in range(3):
        # formant glide split into 4 pieces to keep the filters time-varying
        for seg in np.array_split(np.arange(n), 4):
            frac = seg[0] / max(n - 1, 1)
            num, den = _resonator(a[k] + frac * (b[k] - a[k]), 60 + 40 * k)
            out[seg] += scipy.signal.lfilter(num, den, src[seg]) / (k + 1)
    return out


def _fricative(n, rng):
    noise = rng.normal(size=n)
    lo = rng.uniform(2500, 4500)
    sos = scipy.signal.butter(4, [lo, min(lo + 3000, 7800)], btype="bandpass", fs=SAMPLE_RATE, output="sos")
    return scipy.signal.sosfilt(sos, noise) * 0.3


def synth_clip(n_samples, rng):
    out = np.zeros(n_samples)
    pos = int(rng.integers(0, 1600))
    while pos < n_samples:
        kind = rng.choice(3, p=[0.6, 0.2, 0.2])
        n = int(rng.integers(1200, 4800)) if kind == 0 else int(rng.integers(600, 2400))
        n = min(n, n_samples - pos)
        if kind == 0:
            seg = _voiced(n, rng)
        elif kind == 1:
            seg = _fricative(n, rng)
        else:
            seg = np.zeros(n)
        env = np.sin(np.linspace(0, np.pi, n)) ** 0.5 if n > 1 else np.ones(n)
        out[pos:pos + n] += seg * env * rng.uniform(0.5, 1.0)
        pos += n
    peak = np.abs(out).max()
    if peak > 0:
        out *= 0.5 / peak
    # recording noise floor about 64 dB below peak; digital silence would dominate log-spectral metrics
    return out + NOISE_FLOOR * rng.normal(size=n_samples)


def synthetic_corpus(n_clips, seconds, seed):
    rng = np.random.default_rng(seed)
    n = int(round(seconds * SAMPLE_RATE))
    return [AudioClip(synth_clip(n, rng)) for _ in range(n_clips)]


def load_corpus(paths, n_clips=None, seconds=None):
    """Read WAV clips from files or directories (sorted), optionally cropped to ``seconds``."""
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.wav")) if p.is_dir() else [p])
    if n_clips is not None:
        files = files[:n_clips]
    if not files:
        raise DataError(f"no WAV files found in {[str(p) for p in paths]}")
    clips = [read_wav(f) for f in files]
    if seconds is not None:
        n = int(round(seconds * SAMPLE_RATE))
        clips = [AudioClip(c.samples[:n]) for c in clips]
    return clips
