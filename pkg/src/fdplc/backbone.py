"""Causal TF-domain codec backbone.

The encoder maps a power-law compressed complex spectrum (20 ms window, 5 ms
hop) through strided causal 2-D convolutions to a ``T x C`` latent sequence,
then through interleaved TCM ladders and a group GRU. The decoder mirrors it
and resynthesizes audio by inverse STFT.
"""
from dataclasses import dataclass

import numpy as np

from . import dsp
from .diffcore import functional as DF
from .diffcore.nn import (
    Conv2d,
    DepthwiseConv1d,
    FreqDeconv2d,
    GroupGRU,
    LayerNorm,
    Linear,
    Module,
    activation,
)
from .diffcore.tensor import Tensor
from .errors import ConfigError, ContractError

ROLE_PRE = "X^S"
ROLE_QUANTIZED = "X^Q"
ROLE_LOSSY = "X~Q"
ROLE_CONCEALED = "X^Q_hat"


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple = (16, 24, 32)
    conv_kernel: tuple = (2, 3)  # (time, frequency)
    latent_channels: int = 32
    tcm_dilations: tuple = (1, 2, 4, 8)
    tcm_kernel: int = 3
    tcm_inner: int = 16
    gru_groups: int = 4
    interleave: tuple = ("tcm", "gru", "tcm")
    compression: float = 0.3

    def __post_init__(self):
        if self.latent_channels % self.gru_groups:
            raise ConfigError(f"latent channels {self.latent_channels} not divisible by {self.gru_groups} groups")
        for kind in self.interleave:
            if kind not in ("tcm", "gru"):
                raise ConfigError(f"unknown temporal block {kind!r}")
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "conv_kernel", tuple(self.conv_kernel))
        object.__setattr__(self, "tcm_dilations", tuple(self.tcm_dilations))
        object.__setattr__(self, "interleave", tuple(self.interleave))

    @property
    def freq_sizes(self):
        sizes = [dsp.CODEC_GRID.n_bins]
        for _ in self.stage_channels:
            sizes.append(-(-sizes[-1] // 2))
        return sizes

    @property
    def flat_features(self):
        return self.freq_sizes[-1] * self.stage_channels[-1]


@dataclass
class LatentSequence:
    """A ``(B, T, C)`` latent tensor tagged with its pipeline role."""

    frames: Tensor
    role: str


class TCMBlock(Module):
    """Residual block: 1x1 reduce, dilated causal depthwise conv, 1x1 expand, plus skip.

    With ``norm=True`` a layer norm precedes the convolutions (concealment-network
    variant). A zero-initialized expand layer makes the block the identity.
    """

    def __init__(self, channels, inner, kernel, dilation, rng, norm=False, act="leaky_relu", zero_expand=False):
        self.act = act
        self.norm = LayerNorm(channels) if norm else None
        self.reduce = Linear(channels, inner, rng)
        self.dconv = DepthwiseConv1d(inner, kernel, rng, dilation=dilation)
        self.expand = Linear(inner, channels, rng, init="zeros" if zero_expand else "uniform")

    def forward(self, x):
        y = self.norm(x) if self.norm is not None else x
        y = activation(self.reduce(y), self.act)
        y = activation(self.dconv(y), self.act)
        return x + self.expand(y)


class TCMLadder(Module):
    def __init__(self, channels, inner, kernel, dilations, rng, **block_kw):
        self.blocks = [TCMBlock(channels, inner, kernel, d, rng, **block_kw) for d in dilations]

    @property
    def receptive_field(self):
        return 1 + sum((b.dconv.weight.shape[0] - 1) * b.dconv.dilation for b in self.blocks)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class GGRUBlock(Module):
    def __init__(self, channels, groups, rng):
        self.gru = GroupGRU(channels, groups, rng)

    def forward(self, x, state=None):
        out, _ = self.gru(x, state)
        return out


def _temporal_stack(cfg, rng):
    blocks = []
    for kind in cfg.interleave:
        if kind == "tcm":
            blocks.append(TCMLadder(cfg.latent_channels, cfg.tcm_inner, cfg.tcm_kernel, cfg.tcm_dilations, rng))
        else:
            blocks.append(GGRUBlock(cfg.latent_channels, cfg.gru_groups, rng))
    return blocks


def compress_spectrum(x, p=0.3):
    """Power-law compressed complex spectrum as a ``(B, T, F, 2)`` real array."""
    spec = dsp.stft(x, dsp.CODEC_GRID).frames
    mag = np.abs(spec)
    scale = np.where(mag > 0, np.power(np.where(mag > 0, mag, 1.0), p - 1.0), 0.0)
    comp = spec * scale
    return np.stack([comp.real, comp.imag], axis=-1)


class Encoder(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        chans = (2,) + cfg.stage_channels
        self.convs = [Conv2d(chans[i], chans[i + 1], cfg.conv_kernel, (1, 2), rng) for i in range(len(cfg.stage_channels))]
        self.proj = Linear(cfg.flat_features, cfg.latent_channels, rng)
        self.temporal = _temporal_stack(cfg, rng)

    def forward(self, spec):
        """``(B, T, 161, 2)`` compressed spectrum tensor -> ``(B, T, C)`` latents."""
        h = spec
        for conv in self.convs:
            h = activation(conv(h), "leaky_relu")
        B, T = h.shape[:2]
        h = self.proj(h.reshape(B, T, -1))
        for block in self.temporal:
            h = block(h)
        return h


class Decoder(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.temporal = _temporal_stack(cfg, rng)
        self.proj = Linear(cfg.latent_channels, cfg.flat_features, rng)
        chans = tuple(reversed(cfg.stage_channels)) + (2,)
        self.deconvs = [FreqDeconv2d(chans[i], chans[i + 1], cfg.conv_kernel, rng) for i in range(len(cfg.stage_channels))]

    def spectrum(self, latents):
        """``(B, T, C)`` latents -> compressed ``(B, T, 161, 2)`` spectrum tensor."""
        h = latents
        for block in self.temporal:
            h = block(h)
        B, T = h.shape[:2]
        h = self.proj(h).reshape(B, T, self.cfg.freq_sizes[-1], self.cfg.stage_channels[-1])
        for i, deconv in enumerate(self.deconvs):
            h = deconv(h)
            if i < len(self.deconvs) - 1:
                h = activation(h, "leaky_relu")
        return h

    def forward(self, latents, length):
        spec = self.spectrum(latents)
        re_c, im_c = spec[..., 0], spec[..., 1]
        p = self.cfg.compression
        scale = DF.power_law(DF.complex_abs(re_c, im_c), 1.0 / p - 1.0)
        return dsp.istft_tensor(re_c * scale, im_c * scale, length)


def output_length(n_frames, cfg=dsp.CODEC_GRID):
    return (n_frames - 1) * cfg.hop_samples + cfg.window_samples


def encode(encoder, x):
    """Encode a ``(B, L)`` or ``(L,)`` signal array into an ``X^S`` :class:`LatentSequence`."""
    x = np.atleast_2d(np.asarray(x))
    spec = compress_spectrum(x, encoder.cfg.compression).astype(encoder.proj.weight.dtype)
    return LatentSequence(encoder(Tensor(spec)), ROLE_PRE)


def decode(decoder, latents, length):
    """Decode an ``X^Q`` or concealed latent sequence to a ``(B, length)`` signal tensor."""
    if isinstance(latents, LatentSequence):
        if latents.role == ROLE_PRE:
            raise ContractError("decoder consumes quantized or concealed features, not pre-quantization X^S")
        latents = latents.frames
    return decoder(latents, length)


def tcm_block(block, h):
    return block(h)


def ggru_block(block, h, state=None):
    """Group GRU over ``h`` returning ``(sequence, last_state)`` for streaming."""
    return block.gru(h, state)
