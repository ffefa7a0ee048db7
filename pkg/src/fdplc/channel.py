"""Packet-loss channels: burst-capped random losses, a three-state Markov
model, trace files, and the packet-to-frame loss expansion.

Trace file format (text)::

    FDPLC-TRACE v1 packet_ms=20
    0010110...

One character per 20 ms packet on the second line, ``0`` received and ``1``
lost, newline-terminated.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, LengthMismatch, NumericalError
from .vq import FRAMES_PER_PACKET

PACKET_MS = 20
TRACE_HEADER = f"FDPLC-TRACE v1 packet_ms={PACKET_MS}"
GOOD, LOSSY, BURST = 0, 1, 2

# loss-rate categories used for training data and their burst caps (ms)
RATE_CATEGORIES = {0.1: 60, 0.2: 80, 0.3: 120, 0.4: 160, 0.5: 220}


@dataclass(frozen=True)
class PacketTrace:
    lost: np.ndarray  # bool per packet
    packet_ms: int = PACKET_MS

    def __post_init__(self):
        lost = np.asarray(self.lost, dtype=bool)
        if lost.ndim != 1 or lost.size == 0:
            raise ConfigError("a packet trace needs at least one packet")
        object.__setattr__(self, "lost", lost)

    def __len__(self):
        return self.lost.shape[0]

    @property
    def n_lost(self):
        return int(self.lost.sum())

    @property
    def loss_rate(self):
        return self.n_lost / len(self)

    @property
    def max_burst(self):
        return max_run(self.lost)

    def to_string(self):
        return "".join("1" if v else "0" for v in self.lost)


def max_run(flags):
    flags = np.asarray(flags, dtype=bool)
    if not flags.any():
        return 0
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.diff(padded)
    return int((np.nonzero(edges == -1)[0] - np.nonzero(edges == 1)[0]).max())


def gen_random_trace(rate, max_burst_ms, n_packets, seed):
    """Bernoulli(rate) losses with runs longer than ``max_burst_ms / 20`` packets broken."""
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"loss rate must be in [0, 1], got {rate}")
    if max_burst_ms % PACKET_MS or max_burst_ms < PACKET_MS:
        raise ConfigError(f"max burst must be a positive multiple of {PACKET_MS} ms, got {max_burst_ms}")
    rng = np.random.default_rng(seed)
    lost = rng.random(n_packets) < rate
    return PacketTrace(kernels.cap_bursts(lost, max_burst_ms // PACKET_MS))


@dataclass(frozen=True)
class MarkovChannel:
    """Three-state (GOOD, LOSSY, BURST) loss model with per-state loss probability."""

    transition: np.ndarray = field(default_factory=lambda: np.array([
        [0.95, 0.04, 0.01],
        [0.70, 0.25, 0.05],
        [0.20, 0.00, 0.80],
    ]))
    emission: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.5, 1.0]))

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        e = np.asarray(self.emission, dtype=np.float64)
        if p.shape != (3, 3) or e.shape != (3,):
            raise ConfigError("Markov channel needs a 3x3 transition matrix and 3 emission probabilities")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("transition matrix must be row-stochastic")
        if np.any(e < 0) or np.any(e > 1):
            raise ConfigError("emission probabilities must lie in [0, 1]")
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "emission", e)


def _recurrent_classes(p):
    """Closed communicating classes of the chain; the stationary law is unique iff there is one."""
    reach = (p > 0) | np.eye(p.shape[0], dtype=bool)
    for _ in range(p.shape[0]):
        reach = reach | ((reach.astype(int) @ reach.astype(int)) > 0)
    recurrent = [i for i in range(p.shape[0]) if all(reach[j, i] for j in np.nonzero(reach[i])[0])]
    return {frozenset(np.nonzero(reach[i])[0].tolist()) for i in recurrent}


def stationary_distribution(ch, tol=1e-12, max_iter=1_000_000):
    """Stationary distribution by power iteration on the lazy chain ``(P + I) / 2``.

    The lazy chain has the same stationary vector and is aperiodic, so iteration
    converges for every chain with a single closed class, periodic ones included.
    Transient states end with zero mass.
    """
    p = ch.transition
    if len(_recurrent_classes(p)) != 1:
        raise NumericalError("Markov chain has several closed classes; stationary distribution is not unique")
    lazy = 0.5 * (p + np.eye(p.shape[0]))
    pi = np.full(p.shape[0], 1.0 / p.shape[0])
    for _ in range(max_iter):
        nxt = pi @ lazy
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def stationary_loss_rate(ch):
    return float(stationary_distribution(ch) @ ch.emission)


def gen_markov_trace(ch, n_packets, seed, start=None):
    """Simulate the chain for ``n_packets``; the first state is drawn from the
    stationary distribution unless ``start`` is given."""
    rng = np.random.default_rng(seed)
    u_start = rng.random()
    if start is None:
        pi = stationary_distribution(ch)
        start = int(min(np.searchsorted(np.cumsum(pi), u_start, side="right"), 2))
    cum = np.cumsum(ch.transition, axis=1)
    cum[:, -1] = 1.0
    u_trans = rng.random(n_packets)
    u_emit = rng.random(n_packets)
    _, lost = kernels.markov_walk(cum, ch.emission, int(start), u_trans, u_emit)
    return PacketTrace(lost)


def save_trace(trace, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n" + trace.to_string() + "\n")


def parse_trace(text):
    lines = text.split("\n")
    if lines[0].rstrip("\r") != TRACE_HEADER:
        raise FormatError(f"unknown trace header {lines[0]!r}", line=1, column=1)
    body = [ln.rstrip("\r") for ln in lines[1:]]
    flags = []
    for lineno, ln in enumerate(body, start=2):
        for col, ch in enumerate(ln, start=1):
            if ch not in "01":
                raise FormatError(f"unexpected character {ch!r}", line=lineno, column=col)
            flags.append(ch == "1")
    if not flags:
        raise FormatError("trace has no packets", line=2, column=1)
    return PacketTrace(np.array(flags))


def load_trace(path):
    with open(path, encoding="ascii", newline="") as fh:
        return parse_trace(fh.read())


def frame_mask(trace, n_frames):
    """Per-latent-frame loss flags (``True`` = lost) for the first ``n_frames`` frames."""
    n_packets = -(-n_frames // FRAMES_PER_PACKET)
    if len(trace) < n_packets:
        raise LengthMismatch(f"trace has {len(trace)} packets, stream needs {n_packets}")
    return np.repeat(trace.lost[:n_packets], FRAMES_PER_PACKET)[:n_frames]


def apply_trace(features, trace):
    """Zero-fill the latent frames of lost packets.

    ``features`` is ``(T, C)`` or ``(B, T, C)``; returns ``(lossy_features, mask)``
    with ``mask`` the per-frame loss flags.
    """
    features = np.asarray(features)
    mask = frame_mask(trace, features.shape[-2])
    out = features.copy()
    out[..., mask, :] = 0.0
    return out, mask


def apply_trace_to_payloads(payloads, trace):
    """Drop the payloads of lost packets; returns the received list (None for lost)."""
    if len(trace) < len(payloads):
        raise LengthMismatch(f"trace has {len(trace)} packets, stream has {len(payloads)}")
    return [None if trace.lost[i] else p for i, p in enumerate(payloads)]
