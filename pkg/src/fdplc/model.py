"""Codec composition: encoder, group VQ, optional FD-PLC stack and decoder."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backbone, dsp
from .backbone import BackboneConfig, Decoder, Encoder, LatentSequence
from .diffcore.nn import Module
from .diffcore.tensor import Tensor
from .errors import CheckpointError, ConfigError
from .fdplc import AttentionConfig, FdplcStack
from .vq import FRAMES_PER_PACKET, GroupVQ


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_groups: int = 12
    n_codewords: int = 1024
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    use_fdplc: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {"backbone", "n_groups", "n_codewords", "attention", "use_fdplc"}
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        try:
            bb = BackboneConfig(**d.pop("backbone", {}))
            att = AttentionConfig(**d.pop("attention", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(backbone=bb, attention=att, **d)


class CodecModel(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        c = cfg.backbone.latent_channels
        self.encoder = Encoder(cfg.backbone, rng)
        self.vq = GroupVQ(c, cfg.n_groups, cfg.n_codewords, rng)
        self.fdplc = FdplcStack(c, cfg.attention, rng) if cfg.use_fdplc else None
        self.decoder = Decoder(cfg.backbone, rng)

    @property
    def dtype(self):
        return self.encoder.proj.weight.dtype

    def encode(self, x):
        return backbone.encode(self.encoder, x)

    def quantize(self, latents):
        frames = latents.frames if isinstance(latents, LatentSequence) else latents
        return self.vq.quantize(frames)

    def conceal(self, lossy, mask):
        """Run the FD-PLC stack, or pass the zero-filled features through when there is none."""
        if self.fdplc is None:
            return lossy if isinstance(lossy, Tensor) else Tensor(lossy)
        return self.fdplc(lossy, mask)

    def decode(self, latents, length):
        return backbone.decode(self.decoder, latents, length)

    def module_groups(self):
        groups = {"encoder": self.encoder, "codebooks": self.vq, "decoder": self.decoder}
        if self.fdplc is not None:
            groups["fdplc"] = self.fdplc
        return groups

    def group_of(self, name):
        return name.split(".", 1)[0].replace("vq", "codebooks")


def build_model(cfg, seed, dtype=np.float32):
    model = CodecModel(cfg, np.random.default_rng(seed))
    return model.astype(dtype)


def padded_length(n_samples, grid=dsp.CODEC_GRID):
    """Smallest length >= ``n_samples`` (and >= one window) that ends on a frame boundary."""
    n = max(n_samples, grid.window_samples)
    return grid.window_samples + -(-(n - grid.window_samples) // grid.hop_samples) * grid.hop_samples


def frames_for(n_samples, grid=dsp.CODEC_GRID):
    return grid.n_frames(padded_length(n_samples, grid))


def check_topology(model, state):
    """Raise :class:`CheckpointError` unless ``state`` matches ``model`` parameter-for-parameter."""
    own = {k: v.shape for k, v in model.state_dict().items()}
    theirs = {k: np.shape(v) for k, v in state.items()}
    if own.keys() != theirs.keys():
        missing = sorted(own.keys() - theirs.keys())[:3]
        extra = sorted(theirs.keys() - own.keys())[:3]
        raise CheckpointError(f"checkpoint topology mismatch (missing {missing}, unexpected {extra})")
    bad = [k for k in own if own[k] != theirs[k]]
    if bad:
        raise CheckpointError(f"shape mismatch for {bad[0]}: {theirs[bad[0]]} vs {own[bad[0]]}")


__all__ = ["ModelConfig", "CodecModel", "build_model", "padded_length", "frames_for", "check_topology",
           "FRAMES_PER_PACKET"]
