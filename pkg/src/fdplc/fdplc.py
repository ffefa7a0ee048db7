"""Feature-domain concealment network.

Lost latent frames arrive zero-filled together with a per-frame loss flag. The
flag is appended as one extra channel and projected back to ``C``; a stack of
windowed causal self-attention (G-TSA) blocks and layer-normed TCM ladders then
re-synthesizes every frame.
"""
from dataclasses import dataclass

import numpy as np

from .backbone import TCMLadder
from .diffcore import functional as DF
from .diffcore.nn import LayerNorm, Linear, Module
from .diffcore.tensor import Tensor, concat, where
from .errors import ConfigError, LengthMismatch, ShapeError


@dataclass(frozen=True)
class AttentionConfig:
    window: int = 32
    heads: int = 4
    inner: int = 16
    pairs: int = 2  # number of (G-TSA, TCM ladder) pairs
    tcm_dilations: tuple = (1, 2, 4, 8)
    tcm_kernel: int = 3
    tcm_inner: int = 16
    use_mask: bool = True
    received_passthrough: bool = False

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"attention window must be >= 1, got {self.window}")
        if self.inner % self.heads:
            raise ConfigError(f"inner dimension {self.inner} not divisible by {self.heads} heads")
        object.__setattr__(self, "tcm_dilations", tuple(self.tcm_dilations))


class GTSABlock(Module):
    """Pre-norm residual unit: ``h + Expand(Attention(Reduce(LayerNorm(h))))``."""

    def __init__(self, channels, cfg, rng, zero_expand=True):
        if cfg.inner > channels:
            raise ConfigError(f"inner dimension {cfg.inner} exceeds channel count {channels}")
        self.window = cfg.window
        self.heads = cfg.heads
        self.norm = LayerNorm(channels)
        self.reduce = Linear(channels, cfg.inner, rng)
        self.q_proj = Linear(cfg.inner, cfg.inner, rng)
        self.k_proj = Linear(cfg.inner, cfg.inner, rng)
        self.v_proj = Linear(cfg.inner, cfg.inner, rng)
        self.expand = Linear(cfg.inner, channels, rng, init="zeros" if zero_expand else "uniform")

    def attend(self, h):
        B, T, C = h.shape
        if C != self.norm.gamma.shape[0]:
            raise ShapeError(f"G-TSA block expects {self.norm.gamma.shape[0]} channels, got {C}")
        y = self.reduce(self.norm(h))
        inner = y.shape[-1]
        split = (B, T, self.heads, inner // self.heads)
        q = self.q_proj(y).reshape(split)
        k = self.k_proj(y).reshape(split)
        v = self.v_proj(y).reshape(split)
        out, weights = DF.window_attention(q, k, v, self.window, return_weights=True)
        return out.reshape(B, T, inner), weights

    def forward(self, h):
        att, _ = self.attend(h)
        return h + self.expand(att)


class FdplcStack(Module):
    def __init__(self, channels, cfg, rng):
        self.cfg = cfg
        self.channels = channels
        n_in = channels + 1 if cfg.use_mask else channels
        self.in_proj = Linear(n_in, channels, rng, init="identity")
        for i in range(cfg.pairs):
            setattr(self, f"gtsa{i}", GTSABlock(channels, cfg, rng))
            setattr(self, f"tcm{i}", TCMLadder(channels, cfg.tcm_inner, cfg.tcm_kernel, cfg.tcm_dilations, rng,
                                               norm=True, act="gelu", zero_expand=True))

    @property
    def receptive_field(self):
        """Frames of history (current frame included) that can influence one output frame."""
        reach = 0
        for block in self.blocks():
            reach += block.window - 1 if isinstance(block, GTSABlock) else block.receptive_field - 1
        return reach + 1

    def blocks(self):
        for i in range(self.cfg.pairs):
            yield getattr(self, f"gtsa{i}")
            yield getattr(self, f"tcm{i}")

    def _inputs(self, lossy, mask):
        lossy = lossy if isinstance(lossy, Tensor) else Tensor(lossy)
        mask = np.asarray(mask, dtype=bool)
        if lossy.ndim == 2:
            lossy = lossy.reshape(1, *lossy.shape)
        if mask.ndim == 1 and mask.shape[0] == lossy.shape[1]:
            mask = np.broadcast_to(mask, lossy.shape[:2])
        if mask.shape != lossy.shape[:2]:
            raise LengthMismatch(f"mask shape {mask.shape} does not match features {lossy.shape[:2]}")
        return lossy, mask

    def forward(self, lossy, mask):
        """``(B, T, C)`` zero-filled features and ``(B, T)`` loss flags -> concealed ``(B, T, C)``."""
        lossy, mask = self._inputs(lossy, mask)
        x = lossy
        if self.cfg.use_mask:
            x = concat([lossy, Tensor(mask[..., None].astype(lossy.dtype))], axis=-1)
        h = self.in_proj(x)
        for block in self.blocks():
            h = block(h)
        if self.cfg.received_passthrough:
            h = where(mask[..., None], h, lossy)
        return h

    def attention_maps(self, lossy, mask):
        """Attention weights ``(B, T, H, window)`` of every G-TSA block for one forward pass."""
        lossy, mask = self._inputs(lossy, mask)
        x = lossy
        if self.cfg.use_mask:
            x = concat([lossy, Tensor(mask[..., None].astype(lossy.dtype))], axis=-1)
        h = self.in_proj(x)
        maps = []
        for block in self.blocks():
            if isinstance(block, GTSABlock):
                att, weights = block.attend(h)
                maps.append(weights)
                h = h + block.expand(att)
            else:
                h = block(h)
        return maps


def gtsa_block(block, h):
    return block(h)


def fdplc_forward(stack, lossy, mask):
    return stack(lossy, mask)
