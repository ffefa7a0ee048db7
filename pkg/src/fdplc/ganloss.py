"""Segment- and frame-level spectral discriminators and the generator/discriminator losses."""
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .diffcore import functional as DF
from .diffcore.nn import Conv2d, InstanceNorm, Linear, Module, activation
from .diffcore.tensor import Tensor, log_clamped
from .errors import ConfigError, ConfigMismatch, ContractError, LengthMismatch, ShapeError

LOG_FLOOR = 1e-12
MEL_FLOOR = 1e-5
DISC_CHANNELS = (8, 16, 32, 64)


@dataclass
class DiscriminatorOutput:
    probs: Tensor  # (B,) for the segment discriminator, (B, T) for the frame discriminator
    features: list


class _SpectralDiscriminator(Module):
    kernel = (3, 3)
    stride = (2, 2)

    def __init__(self, rng, channels=DISC_CHANNELS):
        chans = (1,) + tuple(channels)
        self.convs = []
        self.norms = []
        for i in range(len(channels)):
            self.convs.append(Conv2d(chans[i], chans[i + 1], self.kernel, self.stride, rng,
                                     pad_t=self._pad_t(), pad_f=self._pad_f(), spectral_norm=(i == 0)))
            if i > 0:
                self.norms.append(InstanceNorm(chans[i + 1], per_frame=self.per_frame_norm))
        self.fc = Linear(chans[-1], 1, rng)

    per_frame_norm = False

    def _pad_t(self):
        return (self.kernel[0] // 2, self.kernel[0] // 2)

    def _pad_f(self):
        return (self.kernel[1] // 2, self.kernel[1] // 2)

    def trunk(self, mag):
        if mag.ndim != 3:
            raise ShapeError(f"discriminator expects a (B, T, F) magnitude grid, got {mag.shape}")
        if mag.shape[-1] != dsp.DISC_GRID.n_bins:
            raise ConfigMismatch(f"discriminator expects {dsp.DISC_GRID.n_bins} bins, got {mag.shape[-1]}")
        h = mag.reshape(*mag.shape, 1)
        features = []
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i > 0:
                h = self.norms[i - 1](h)
            h = activation(h, "leaky_relu")
            features.append(h)
        return self.fc(h), features


class SegmentDiscriminator(_SpectralDiscriminator):
    """Strided (3, 3) convolutions, time/frequency average pooling, one probability per clip."""

    def forward(self, mag):
        logits, features = self.trunk(mag)
        pooled = logits.mean(axis=(1, 2)).reshape(-1)
        return DiscriminatorOutput(pooled.sigmoid(), features)


class FrameDiscriminator(_SpectralDiscriminator):
    """(2, 5) kernels with stride (1, 2): time resolution kept, frequency pooled; one probability per frame.

    The time kernel is causally padded and instance statistics are taken per
    frame, so probability ``t`` depends only on frames ``<= t``.
    """

    kernel = (2, 5)
    stride = (1, 2)
    per_frame_norm = True

    def _pad_t(self):
        return (self.kernel[0] - 1, 0)

    def forward(self, mag):
        logits, features = self.trunk(mag)
        pooled = logits.mean(axis=2)
        return DiscriminatorOutput(pooled.reshape(pooled.shape[0], pooled.shape[1]).sigmoid(), features)


class Discriminators(Module):
    def __init__(self, rng, compression=0.3):
        self.compression = compression
        self.segment = SegmentDiscriminator(rng)
        self.frame = FrameDiscriminator(rng)

    def spectrum(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
        return dsp.compressed_magnitude_tensor(x, dsp.DISC_GRID, self.compression)

    def forward(self, x):
        mag = self.spectrum(x)
        return [self.segment(mag), self.frame(mag)]


def disc_segment(disc, mag):
    return disc(mag)


def disc_frame(disc, mag):
    return disc(mag)


# -- losses -------------------------------------------------------------------
def _log(x):
    return log_clamped(x, LOG_FLOOR)


def loss_adv_d(real_outputs, fake_outputs):
    """``-mean log D(real) - mean log(1 - D(fake))``, averaged over discriminators."""
    terms = []
    for real, fake in zip(real_outputs, fake_outputs):
        terms.append(-_log(real.probs).mean() - _log(1.0 - fake.probs).mean())
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def loss_adv_g(fake_outputs, non_saturating=False):
    """``mean log(1 - D(G(x)))`` (saturating form) averaged over discriminators.

    With ``non_saturating=True`` the term is ``-mean log D(G(x))`` instead.
    """
    terms = []
    for fake in fake_outputs:
        terms.append(-_log(fake.probs).mean() if non_saturating else _log(1.0 - fake.probs).mean())
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


def loss_fm(real_features, fake_features):
    """Sum over layers of mean absolute feature difference; real features carry no gradient.

    Arguments are lists of per-layer tensors, or lists of such lists (one per
    discriminator), in which case the per-discriminator sums are added.
    """
    if real_features and isinstance(real_features[0], (list, tuple)):
        parts = [loss_fm(r, f) for r, f in zip(real_features, fake_features)]
        return sum(parts[1:], parts[0])
    if len(real_features) != len(fake_features):
        raise ShapeError("feature lists differ in length")
    total = None
    for real, fake in zip(real_features, fake_features):
        if real.shape != fake.shape:
            raise ShapeError(f"feature shapes differ: {real.shape} vs {fake.shape}")
        term = (Tensor(real.data) - fake).abs().mean()
        total = term if total is None else total + term
    return total


@dataclass
class BalancedFrameSet:
    indices: np.ndarray
    n_lost: int
    n_received: int

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ContractError("balanced frame set is empty")

    def __len__(self):
        return len(self.indices)


def frame_weights(sets, n_frames):
    """``(B, T)`` weights equal to ``1/|S_b|`` on each sample's selected frames."""
    w = np.zeros((len(sets), n_frames))
    for b, s in enumerate(sets):
        if len(s) == 0:
            raise ContractError("balanced frame set is empty")
        w[b, s.indices] = 1.0 / len(s)
    return w


def loss_plc(target, concealed, sets):
    """Mean over the selected frames of the per-frame L1 distance divided by ``C``, averaged over the batch."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if isinstance(sets, BalancedFrameSet):
        sets = [sets]
        if target.ndim == 2:
            target = target[None]
            concealed = concealed.reshape(1, *concealed.shape)
    B, T, C = concealed.shape
    w = frame_weights(sets, T).astype(concealed.dtype)
    per_frame = (concealed - Tensor(target.astype(concealed.dtype))).abs().mean(axis=-1)
    return (per_frame * Tensor(w)).sum() * (1.0 / B)


def _signal_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.atleast_2d(np.asarray(x))
    return Tensor(arr.astype(dtype) if dtype is not None else arr)


def loss_bin(x, x_hat, compression=0.3):
    """Mean squared error between power-law compressed magnitudes on the 20 ms / 5 ms grid."""
    x_hat = _signal_tensor(x_hat)
    x = _signal_tensor(x, x_hat.dtype)
    if x.shape != x_hat.shape:
        raise LengthMismatch(f"signal shapes differ: {x.shape} vs {x_hat.shape}")
    a = dsp.compressed_magnitude_tensor(x, dsp.CODEC_GRID, compression)
    b = dsp.compressed_magnitude_tensor(x_hat, dsp.CODEC_GRID, compression)
    d = a - b
    return (d * d).mean()


def log_mel_tensor(x, cfg, r):
    fft, _, n_mels = cfg.resolutions[r]
    mag = dsp.magnitude_tensor(x, cfg.grid(r))
    fb = dsp.mel_filterbank(fft, n_mels).astype(x.dtype)
    return log_clamped(mag @ Tensor(fb), MEL_FLOOR)


def loss_mel(x, x_hat, cfg=dsp.MelConfig()):
    """Average over resolutions of the mean absolute log-mel difference."""
    x_hat = _signal_tensor(x_hat)
    x = _signal_tensor(x, x_hat.dtype)
    if x.shape != x_hat.shape:
        raise LengthMismatch(f"signal shapes differ: {x.shape} vs {x_hat.shape}")
    terms = [(log_mel_tensor(x, cfg, r) - log_mel_tensor(x_hat, cfg, r)).abs().mean()
             for r in range(len(cfg.resolutions))]
    return sum(terms[1:], terms[0]) * (1.0 / len(terms))


@dataclass(frozen=True)
class LossWeights:
    plc: float = 1.0
    bin: float = 1.0
    mel: float = 0.25
    adv: float = 1e-3
    fm: float = 2e-5
    use_gan: bool = True
    use_fdplc: bool = True
    use_plc_loss: bool = True
    simulate_loss: bool = True
    non_saturating: bool = False
    fm_single_discriminator: bool = False

    def __post_init__(self):
        for name in ("plc", "bin", "mel", "adv", "fm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")

    def effective(self):
        """Weights after the ablation switches zero out disabled terms."""
        return {
            "plc": self.plc if (self.use_fdplc and self.use_plc_loss) else 0.0,
            "bin": self.bin,
            "mel": self.mel,
            "adv": self.adv if self.use_gan else 0.0,
            "fm": self.fm if self.use_gan else 0.0,
        }

    def with_switches(self, **switches):
        return replace(self, **switches)


COMPONENTS = ("plc", "bin", "mel", "adv", "fm")


def loss_total(components, weights=LossWeights()):
    """Weighted sum of the available components (missing or switched-off terms contribute 0)."""
    eff = weights.effective()
    total = None
    for name in COMPONENTS:
        value = components.get(name)
        if value is None or eff[name] == 0.0:
            continue
        term = value * eff[name]
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.zeros(()))
    return total
