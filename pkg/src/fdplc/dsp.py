"""Spectral front end: STFT/iSTFT, power-law compression, mel filterbanks,
mel cepstra and 16-bit WAV I/O.

Array functions accept ``(..., L)`` signals and return ``(..., T, F)`` grids.
The ``*_tensor`` variants are differentiable and are what the training losses use.
"""
import functools
import wave
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .diffcore import functional as DF
from .diffcore.tensor import Tensor
from .errors import (
    ConfigError,
    ConfigMismatch,
    FormatError,
    InputTooShort,
    InvalidAudio,
    InvalidMagnitude,
    NonInvertibleConfig,
)

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidAudio(f"mono audio expected, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidAudio("audio contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidAudio(f"sample rate must be {SAMPLE_RATE}, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class SpectrogramConfig:
    window_samples: int = 320
    hop_samples: int = 80
    fft_size: int = 0  # 0 means "same as window"

    def __post_init__(self):
        if self.fft_size == 0:
            object.__setattr__(self, "fft_size", self.window_samples)
        if not 1 <= self.window_samples <= self.fft_size:
            raise ConfigError(f"need 1 <= window <= fft_size, got {self}")
        if self.hop_samples < 1:
            raise ConfigError(f"hop must be positive, got {self.hop_samples}")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, length):
        return (length - self.window_samples) // self.hop_samples + 1


CODEC_GRID = SpectrogramConfig(320, 80)
DISC_GRID = SpectrogramConfig(320, 160)


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray
    config: SpectrogramConfig


@dataclass(frozen=True)
class MelConfig:
    resolutions: tuple = ((256, 64, 40), (512, 128, 80), (1024, 256, 128))
    compression: float = 0.3

    def __post_init__(self):
        if len(self.resolutions) < 1:
            raise ConfigError("MelConfig needs at least one resolution")
        object.__setattr__(self, "resolutions", tuple(tuple(int(v) for v in r) for r in self.resolutions))

    def grid(self, r):
        fft, hop, _ = self.resolutions[r]
        return SpectrogramConfig(fft, hop, fft)


@functools.lru_cache(maxsize=None)
def hann(n):
    """Periodic Hann window."""
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def _signal(x):
    arr = x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidAudio("audio contains non-finite samples")
    return arr


def stft(x, cfg=CODEC_GRID):
    """Complex STFT of ``x`` with a Hann window; frame ``t`` covers ``[t*hop, t*hop + window)``."""
    arr = _signal(x)
    if arr.shape[-1] < cfg.window_samples:
        raise InputTooShort(f"need at least {cfg.window_samples} samples, got {arr.shape[-1]}")
    frames = DF.frame_signal(Tensor(arr), cfg.window_samples, cfg.hop_samples).data
    spec = np.fft.rfft(frames * hann(cfg.window_samples), n=cfg.fft_size, axis=-1)
    return Spectrogram(spec, cfg)


def cola_weight(window, hop):
    """Overlap-added squared-window level, or None when it is not constant."""
    w2 = hann(window) ** 2
    env = np.zeros(hop)
    for start in range(0, window, hop):
        chunk = w2[start:start + hop]
        env[:chunk.shape[0]] += chunk
    if np.ptp(env) <= 1e-10 * env.max():
        return float(env.mean())
    return None


def _synthesis_envelope(cfg, n_frames, length):
    w2 = np.broadcast_to(hann(cfg.window_samples) ** 2, (n_frames, cfg.window_samples))
    env = DF.overlap_add(Tensor(np.ascontiguousarray(w2)), cfg.hop_samples, length).data
    return np.maximum(env, 1e-8)


def istft(spec, length=None):
    """Inverse of :func:`stft` by windowed overlap-add.

    Normalizes by the constant COLA level when the Hann/hop pair has one,
    otherwise by the overlap-added squared window.
    """
    cfg = spec.config
    if cfg.hop_samples > cfg.window_samples:
        raise NonInvertibleConfig(f"hop {cfg.hop_samples} exceeds window {cfg.window_samples}")
    frames = np.fft.irfft(spec.frames, n=cfg.fft_size, axis=-1)[..., :cfg.window_samples]
    n_frames = frames.shape[-2]
    if length is None:
        length = (n_frames - 1) * cfg.hop_samples + cfg.window_samples
    out = DF.overlap_add(Tensor(frames * hann(cfg.window_samples)), cfg.hop_samples, length).data
    cola = cola_weight(cfg.window_samples, cfg.hop_samples)
    if cola is not None:
        return out / cola
    return out / _synthesis_envelope(cfg, n_frames, length)


def magnitude(spec):
    return np.abs(spec.frames if isinstance(spec, Spectrogram) else spec)


def power_law(mag, p=0.3):
    """Elementwise ``mag ** p`` for a non-negative magnitude grid."""
    grid = mag.frames if isinstance(mag, Spectrogram) else np.asarray(mag)
    if not 0 < p <= 1:
        raise ConfigError(f"power-law exponent must be in (0, 1], got {p}")
    if np.iscomplexobj(grid) or np.any(grid < 0):
        raise InvalidMagnitude("power_law expects a non-negative real magnitude grid")
    out = grid ** p
    return Spectrogram(out, mag.config) if isinstance(mag, Spectrogram) else out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=None)
def mel_filterbank(fft_size, n_mels, sample_rate=SAMPLE_RATE, fmin=0.0, fmax=None):
    """``(fft_size//2 + 1, n_mels)`` triangular HTK-mel filterbank.

    The first and last bands are flat shoulders down to ``fmin`` and up to
    ``fmax`` so every bin is covered; a band too narrow to contain a bin gets
    unit weight on its nearest bin.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    freqs = np.linspace(0.0, sample_rate / 2, fft_size // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((freqs.shape[0], n_mels))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        if m == 0:
            rise = np.where(freqs <= mid, 1.0, rise)
        if m == n_mels - 1:
            fall = np.where(freqs >= mid, 1.0, fall)
        fb[:, m] = np.clip(np.minimum(rise, fall), 0.0, None)
        if fb[:, m].sum() <= 0:
            fb[np.argmin(np.abs(freqs - mid)), m] = 1.0
    fb.setflags(write=False)
    return fb


def mel_project(mag, resolution_index, cfg=MelConfig()):
    """Project a ``(..., T, F)`` magnitude grid onto the mel bands of one resolution."""
    fft, _, n_mels = cfg.resolutions[resolution_index]
    grid = mag.frames if isinstance(mag, Spectrogram) else np.asarray(mag)
    if grid.shape[-1] != fft // 2 + 1:
        raise ConfigMismatch(f"magnitude has {grid.shape[-1]} bins, resolution {resolution_index} expects {fft // 2 + 1}")
    return grid @ mel_filterbank(fft, n_mels)


MCD_GRID = DISC_GRID
MCD_MELS = 80


def log_mel(x, n_mels=MCD_MELS, cfg=MCD_GRID, floor=1e-10):
    mag = magnitude(stft(x, cfg))
    return np.log(np.maximum(mag @ mel_filterbank(cfg.fft_size, n_mels), floor))


def mel_cepstra(x, n_coeffs=13, n_mels=MCD_MELS, cfg=MCD_GRID, with_c0=False):
    """Per-frame mel cepstra: log-mel amplitude followed by an orthonormal DCT-II.

    Returns coefficients ``1..n_coeffs`` (``0..n_coeffs`` when ``with_c0``).
    """
    if n_coeffs < 1:
        raise ConfigError(f"need at least one cepstral coefficient, got {n_coeffs}")
    ceps = scipy.fft.dct(log_mel(x, n_mels, cfg), type=2, norm="ortho", axis=-1)
    return ceps[..., :n_coeffs + 1] if with_c0 else ceps[..., 1:n_coeffs + 1]


# -- differentiable spectral ops ------------------------------------------------
def stft_tensor(x, cfg=CODEC_GRID):
    """Differentiable STFT of a ``(B, L)`` tensor; returns ``(re, im)`` each ``(B, T, F)``."""
    if x.shape[-1] < cfg.window_samples:
        raise InputTooShort(f"need at least {cfg.window_samples} samples, got {x.shape[-1]}")
    frames = DF.frame_signal(x, cfg.window_samples, cfg.hop_samples)
    return DF.rfft_frames(frames * Tensor(hann(cfg.window_samples).astype(x.dtype)), cfg.fft_size)


def istft_tensor(re, im, length, cfg=CODEC_GRID):
    """Differentiable inverse of :func:`stft_tensor` (constant-COLA configs only)."""
    cola = cola_weight(cfg.window_samples, cfg.hop_samples)
    if cfg.hop_samples > cfg.window_samples or cola is None:
        raise NonInvertibleConfig(f"{cfg} is not a constant-overlap-add configuration")
    frames = DF.irfft_frames(re, im, cfg.fft_size)
    if cfg.fft_size > cfg.window_samples:
        frames = frames[..., :cfg.window_samples]
    frames = frames * Tensor(hann(cfg.window_samples).astype(re.dtype))
    return DF.overlap_add(frames, cfg.hop_samples, length) * (1.0 / cola)


def magnitude_tensor(x, cfg):
    re, im = stft_tensor(x, cfg)
    return DF.complex_abs(re, im)


def compressed_magnitude_tensor(x, cfg=CODEC_GRID, p=0.3):
    return DF.power_law(magnitude_tensor(x, cfg), p)


# -- WAV I/O -------------------------------------------------------------------
def read_wav(path):
    """Read a 16-bit PCM mono 16 kHz WAV file as an :class:`AudioClip` in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            if fh.getframerate() != SAMPLE_RATE:
                raise FormatError(f"{path}: expected {SAMPLE_RATE} Hz, got {fh.getframerate()} Hz")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioClip(pcm.astype(np.float64) / 32768.0)


def to_pcm16(samples):
    return np.round(np.clip(np.asarray(samples), -1.0, 32767 / 32768) * 32768.0).astype("<i2")


def write_wav(path, clip):
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SAMPLE_RATE)
        fh.writeframes(to_pcm16(samples).tobytes())
