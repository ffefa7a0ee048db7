"""Group vector quantization of latent superframes and the packet bitstream.

A superframe is 4 consecutive latent frames (20 ms of new audio). Its ``4*C``
values are split into ``N_g`` contiguous groups, each quantized with its own
codebook of ``S_cw`` codewords. One superframe is one network packet carrying
``N_g * log2(S_cw)`` bits.

Bitstream file layout (little-endian)::

    magic "FDPC" | version u8 (=1)
    n_groups u8 | log2_codewords u8 | channels u16 | sample_rate u32
    n_samples u32 | n_frames u32 | tail_pad u8 | n_packets u32
    n_packets * ceil(n_groups * log2_codewords / 8) payload bytes

Each payload holds the group indices MSB-first, zero-padded to a byte boundary.
"""
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .diffcore.nn import Module, Parameter
from .diffcore.tensor import Tensor, concat, straight_through, take_rows
from .errors import ConfigError, CorruptBitstream, FormatError, ShapeError

FRAMES_PER_PACKET = 4
PACKET_SECONDS = 0.020
MAGIC = b"FDPC"
VERSION = 1
_HEADER = struct.Struct("<4sBBBHIIIBI")


def group_split(total, groups):
    """Contiguous group widths summing to ``total``; the first ``total % groups`` are one wider."""
    if groups < 1 or groups > total:
        raise ConfigError(f"cannot split {total} values into {groups} groups")
    base, extra = divmod(total, groups)
    return tuple(base + 1 if g < extra else base for g in range(groups))


def bitrate_of(n_groups, n_codewords):
    """Bits per second for ``n_groups`` indices of ``log2(n_codewords)`` bits every 20 ms."""
    return n_groups * math.log2(n_codewords) / PACKET_SECONDS


@dataclass(frozen=True)
class PacketPayload:
    superframe_index: int
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))


@dataclass
class QuantizeResult:
    indices: np.ndarray  # (B, P, N_g) int64
    quantized: Tensor  # (B, T, C), straight-through w.r.t. the input latents
    codebook_loss: Tensor
    commitment_loss: Tensor
    tail_pad: int


class GroupVQ(Module):
    """The codebook set plus quantize / dequantize."""

    def __init__(self, channels, n_groups, n_codewords, rng, beta=0.25):
        if n_codewords < 1:
            raise ConfigError("codebooks must hold at least one codeword")
        if n_codewords & (n_codewords - 1):
            raise ConfigError(f"codeword count must be a power of two, got {n_codewords}")
        self.channels = channels
        self.n_groups = n_groups
        self.n_codewords = n_codewords
        self.beta = beta
        self.dims = group_split(FRAMES_PER_PACKET * channels, n_groups)
        self.offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.dims)]))
        for g, d in enumerate(self.dims):
            setattr(self, f"book{g}", Parameter(rng.normal(scale=0.1, size=(n_codewords, d))))

    @property
    def books(self):
        return [getattr(self, f"book{g}") for g in range(self.n_groups)]

    @property
    def bits_per_index(self):
        return int(math.log2(self.n_codewords))

    @property
    def bitrate(self):
        return bitrate_of(self.n_groups, self.n_codewords)

    def superframes(self, latents):
        """Pad ``(B, T, C)`` by repeating the last frame to a multiple of 4; return ``((B, P, 4C), pad)``."""
        B, T, C = latents.shape
        if C != self.channels:
            raise ShapeError(f"quantizer expects {self.channels} channels, got {C}")
        pad = (-T) % FRAMES_PER_PACKET
        if pad:
            tail = latents[:, T - 1:T]
            latents = concat([latents] + [tail] * pad, axis=1)
        return latents.reshape(B, (T + pad) // FRAMES_PER_PACKET, FRAMES_PER_PACKET * C), pad

    def nearest(self, superframes):
        """Index of the nearest codeword per group for a ``(..., 4C)`` array (ties -> lowest index)."""
        lead = superframes.shape[:-1]
        flat = superframes.reshape(-1, superframes.shape[-1])
        out = np.empty((flat.shape[0], self.n_groups), dtype=np.int64)
        for g, book in enumerate(self.books):
            a, b = self.offsets[g], self.offsets[g + 1]
            out[:, g] = kernels.nearest_codeword(np.ascontiguousarray(flat[:, a:b]), np.ascontiguousarray(book.data))
        return out.reshape(lead + (self.n_groups,))

    def quantize(self, latents):
        latents = latents if isinstance(latents, Tensor) else Tensor(latents)
        B, T, C = latents.shape
        sf, pad = self.superframes(latents)
        idx = self.nearest(sf.data)
        q = concat([take_rows(book, idx[..., g]) for g, book in enumerate(self.books)], axis=-1)
        sf_const = Tensor(sf.data)
        q_const = Tensor(q.data)
        diff_book = sf_const - q
        diff_commit = sf - q_const
        codebook_loss = (diff_book * diff_book).mean()
        commitment_loss = (diff_commit * diff_commit).mean() * self.beta
        xq = straight_through(sf, q.data).reshape(B, T + pad, C)
        if pad:
            xq = xq[:, :T]
        return QuantizeResult(idx, xq, codebook_loss, commitment_loss, pad)

    def forward(self, latents):
        return self.quantize(latents)

    def dequantize(self, indices, n_frames=None):
        """Table lookup ``(B, P, N_g)`` or ``(P, N_g)`` -> ``(B, T, C)`` / ``(T, C)`` array."""
        indices = np.asarray(indices)
        if indices.shape[-1] != self.n_groups:
            raise ShapeError(f"expected {self.n_groups} indices per packet, got {indices.shape[-1]}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_codewords):
            raise CorruptBitstream(f"codeword index out of range [0, {self.n_codewords})")
        parts = [book.data[indices[..., g]] for g, book in enumerate(self.books)]
        sf = np.concatenate(parts, axis=-1)
        frames = sf.reshape(sf.shape[:-2] + (sf.shape[-2] * FRAMES_PER_PACKET, self.channels))
        if n_frames is not None:
            frames = frames[..., :n_frames, :]
        return frames

    def kmeans_init(self, superframes, rng, iters=10):
        """Initialize every group codebook by k-means on a ``(n, 4C)`` warm-up batch.

        With fewer vectors than codewords the surplus codewords are jittered copies
        of randomly chosen vectors.
        """
        data = np.asarray(superframes, dtype=np.float64).reshape(-1, FRAMES_PER_PACKET * self.channels)
        n = data.shape[0]
        for g, book in enumerate(self.books):
            x = data[:, self.offsets[g]:self.offsets[g + 1]]
            scale = x.std() + 1e-8
            if n >= self.n_codewords:
                centers = x[rng.choice(n, self.n_codewords, replace=False)].copy()
                for _ in range(iters):
                    assign = kernels.nearest_codeword(np.ascontiguousarray(x), np.ascontiguousarray(centers))
                    counts = np.bincount(assign, minlength=self.n_codewords)
                    sums = np.zeros_like(centers)
                    np.add.at(sums, assign, x)
                    used = counts > 0
                    centers[used] = sums[used] / counts[used, None]
            else:
                centers = np.empty((self.n_codewords, x.shape[1]))
                centers[:n] = x
                extra = rng.integers(0, n, self.n_codewords - n)
                centers[n:] = x[extra] + rng.normal(scale=0.05 * scale, size=(self.n_codewords - n, x.shape[1]))
            book.data = centers.astype(book.dtype)


# -- packing --------------------------------------------------------------------
def bytes_per_packet(n_groups, bits):
    return -(-n_groups * bits // 8)


def pack(payloads, n_groups, bits):
    """Serialize payloads MSB-first, each padded to a byte boundary."""
    if not payloads:
        return b""
    idx = np.array([p.indices for p in payloads], dtype=np.int64)
    if idx.shape[1] != n_groups:
        raise ShapeError(f"payloads carry {idx.shape[1]} indices, expected {n_groups}")
    if idx.min() < 0 or idx.max() >= (1 << bits):
        raise ConfigError(f"index out of range for {bits}-bit fields")
    shifts = np.arange(bits - 1, -1, -1)
    bitgrid = ((idx[:, :, None] >> shifts) & 1).reshape(idx.shape[0], -1).astype(np.uint8)
    width = 8 * bytes_per_packet(n_groups, bits)
    padded = np.zeros((idx.shape[0], width), dtype=np.uint8)
    padded[:, :bitgrid.shape[1]] = bitgrid
    return np.packbits(padded, axis=1).tobytes()


def unpack(data, n_groups, bits, first_index=0):
    """Inverse of :func:`pack`."""
    step = bytes_per_packet(n_groups, bits)
    if len(data) % step:
        offset = len(data) - len(data) % step
        raise CorruptBitstream(f"truncated packet: {len(data) % step} of {step} bytes", offset=offset)
    if not data:
        return []
    raw = np.frombuffer(bytes(data), dtype=np.uint8).reshape(-1, step)
    bitgrid = np.unpackbits(raw, axis=1)
    used = n_groups * bits
    if bitgrid[:, used:].any():
        bad = int(np.nonzero(bitgrid[:, used:].any(axis=1))[0][0])
        raise CorruptBitstream("non-zero padding bits", offset=bad * step)
    weights = 1 << np.arange(bits - 1, -1, -1)
    idx = (bitgrid[:, :used].reshape(-1, n_groups, bits).astype(np.int64) * weights).sum(axis=-1)
    return [PacketPayload(first_index + i, row) for i, row in enumerate(idx.tolist())]


def payloads_from_indices(indices):
    """``(P, N_g)`` index array -> list of :class:`PacketPayload`."""
    return [PacketPayload(i, row) for i, row in enumerate(np.asarray(indices).tolist())]


def indices_from_payloads(payloads):
    return np.array([p.indices for p in payloads], dtype=np.int64)


@dataclass(frozen=True)
class BitstreamHeader:
    n_groups: int
    log2_codewords: int
    channels: int
    sample_rate: int
    n_samples: int
    n_frames: int
    tail_pad: int


def write_bitstream(path, header, payloads):
    body = pack(payloads, header.n_groups, header.log2_codewords)
    head = _HEADER.pack(MAGIC, VERSION, header.n_groups, header.log2_codewords, header.channels,
                        header.sample_rate, header.n_samples, header.n_frames, header.tail_pad, len(payloads))
    with open(path, "wb") as fh:
        fh.write(head + body)


def read_bitstream(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise CorruptBitstream("file shorter than header", offset=len(blob))
    magic, version, n_groups, log2_s, channels, sr, n_samples, n_frames, tail_pad, n_packets = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported bitstream version {version}")
    body = blob[_HEADER.size:]
    expected = n_packets * bytes_per_packet(n_groups, log2_s)
    if len(body) != expected:
        raise CorruptBitstream(f"expected {expected} payload bytes, found {len(body)}",
                               offset=_HEADER.size + min(len(body), expected))
    header = BitstreamHeader(n_groups, log2_s, channels, sr, n_samples, n_frames, tail_pad)
    return header, unpack(body, n_groups, log2_s)
