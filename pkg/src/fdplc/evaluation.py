"""Metrics, the end-to-end lossy pipeline and loss-rate sweeps.

Sweep CSV columns: ``scheme,loss_rate,seed,mcd_db,l_bin,feature_l1_lost,n_clips``
(one row per scheme x rate x seed, clip metrics averaged inside the cell).
Report CSV columns: ``clip,loss_rate,scheme,mcd_db,l_bin,feature_l1_lost``.
"""
import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import backbone, channel, dsp, vq
from .diffcore import Tensor, no_grad
from .errors import ConfigError, InputTooShort
from .model import padded_length
from .trainer import load_model

MCD_CONST = 10.0 * math.sqrt(2.0) / math.log(10.0)
REPORT_COLUMNS = ("clip", "loss_rate", "scheme", "mcd_db", "l_bin", "feature_l1_lost")
SWEEP_COLUMNS = ("scheme", "loss_rate", "seed", "mcd_db", "l_bin", "feature_l1_lost", "n_clips")
DEFAULT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


def mcd_from_cepstra(c_ref, c_deg):
    """Mean over frames of ``(10 sqrt 2 / ln 10) * ||c_ref - c_deg||_2``."""
    c_ref, c_deg = np.asarray(c_ref), np.asarray(c_deg)
    if c_ref.shape != c_deg.shape:
        raise ConfigError(f"cepstra shapes differ: {c_ref.shape} vs {c_deg.shape}")
    return float(MCD_CONST * np.mean(np.linalg.norm(c_ref - c_deg, axis=-1)))


def _samples(clip):
    return clip.samples if isinstance(clip, dsp.AudioClip) else np.asarray(clip, dtype=np.float64)


def mcd(ref, deg, n_coeffs=13):
    """Mel cepstral distortion in dB over cepstra 1..13 (c0 excluded)."""
    a, b = _samples(ref), _samples(deg)
    if a.shape[-1] != b.shape[-1]:
        warnings.warn(f"MCD inputs differ in length ({a.shape[-1]} vs {b.shape[-1]}); trimming to the shorter")
        n = min(a.shape[-1], b.shape[-1])
        a, b = a[..., :n], b[..., :n]
    if a.shape[-1] < dsp.MCD_GRID.window_samples:
        raise InputTooShort(f"MCD needs at least {dsp.MCD_GRID.window_samples} samples, got {a.shape[-1]}")
    return mcd_from_cepstra(dsp.mel_cepstra(a, n_coeffs), dsp.mel_cepstra(b, n_coeffs))


def l_bin(ref, deg, p=0.3):
    """Array version of the compressed-magnitude MSE on the codec grid."""
    a = dsp.power_law(dsp.magnitude(dsp.stft(_samples(ref))), p)
    b = dsp.power_law(dsp.magnitude(dsp.stft(_samples(deg))), p)
    return float(np.mean((a - b) ** 2))


def feature_l1_lost(reference, concealed, mask):
    """Mean over lost frames of the per-frame mean absolute feature error (NaN without losses)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.abs(np.asarray(reference)[mask] - np.asarray(concealed)[mask]).mean())


@dataclass
class PipelineResult:
    decoded: dsp.AudioClip
    mask: np.ndarray
    row: dict
    quantized: np.ndarray = None
    concealed: np.ndarray = None
    indices: np.ndarray = None


def encode_clip(model, clip):
    """Encode and quantize one clip; returns ``(indices (P, N_g), quantized (T, C), header)``."""
    x = _samples(clip)
    n = padded_length(len(x))
    xp = np.zeros(n)
    xp[:len(x)] = x
    with no_grad():
        res = model.quantize(model.encode(xp.astype(model.dtype)))
    T = res.quantized.shape[1]
    header = vq.BitstreamHeader(model.vq.n_groups, model.vq.bits_per_index, model.vq.channels,
                                dsp.SAMPLE_RATE, len(x), T, res.tail_pad)
    return res.indices[0], res.quantized.data[0], header


def receive(model, header, payloads, trace=None):
    """Dequantize received payloads, zero-filling lost packets; returns ``(features (T, C), mask)``."""
    n_packets = -(-header.n_frames // vq.FRAMES_PER_PACKET)
    if trace is None:
        trace = channel.PacketTrace(np.zeros(n_packets, dtype=bool))
    got = channel.apply_trace_to_payloads(payloads, trace)
    idx = np.zeros((len(got), model.vq.n_groups), dtype=np.int64)
    for i, p in enumerate(got):
        if p is not None:
            idx[i] = p.indices
    feats = model.vq.dequantize(idx, header.n_frames)
    mask = channel.frame_mask(trace, header.n_frames)
    feats = np.where(mask[:, None], 0.0, feats).astype(model.dtype)
    return feats, mask


def conceal_and_decode(model, feats, mask, n_samples, conceal=True):
    with no_grad():
        if conceal and model.fdplc is not None:
            feats = model.conceal(Tensor(feats[None]), mask[None]).data[0]
        y = model.decode(Tensor(feats[None]), padded_length(n_samples)).data[0]
    return feats, y[:n_samples].astype(np.float64)


def run_pipeline(clip, trace, model, scheme=None, conceal=True, bitstream=True, clip_id=""):
    """encode -> quantize -> pack -> channel -> unpack/dequantize -> conceal -> decode, plus a metric row.

    With ``bitstream=False`` the quantized features are zero-filled in memory
    instead of going through pack/unpack; both paths decode identically.
    ``conceal=False`` forces zero-fill even when the model has an FD-PLC stack.
    """
    if isinstance(model, str):
        model, _ = load_model(model)
    x = _samples(clip)
    idx, xq, header = encode_clip(model, clip)
    if trace is None:
        trace = channel.PacketTrace(np.zeros(idx.shape[0], dtype=bool))
    if bitstream:
        blob = vq.pack(vq.payloads_from_indices(idx), header.n_groups, header.log2_codewords)
        payloads = vq.unpack(blob, header.n_groups, header.log2_codewords)
        feats, mask = receive(model, header, payloads, trace)
    else:
        feats, mask = channel.apply_trace(xq, trace)
        feats = feats.astype(model.dtype)
    concealed, y = conceal_and_decode(model, feats, mask, len(x), conceal)
    row = {
        "clip": clip_id,
        "loss_rate": float(trace.lost[:idx.shape[0]].mean()),
        "scheme": scheme or ("FDPLC" if (conceal and model.fdplc is not None) else "zero-fill"),
        "mcd_db": mcd(x, y),
        "l_bin": l_bin(x, y),
        "feature_l1_lost": feature_l1_lost(xq, concealed, mask),
    }
    return PipelineResult(dsp.AudioClip(y), mask, row, xq, concealed, idx)


def _ci95(values):
    values = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if values.size < 2:
        return float("nan")
    return float(scipy.stats.t.ppf(0.975, values.size - 1) * values.std(ddof=1) / math.sqrt(values.size))


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def aggregate(self):
        """Per (scheme, loss rate) means and 95% confidence half-widths of every metric."""
        groups = {}
        for r in self.rows:
            groups.setdefault((r["scheme"], r["loss_rate"]), []).append(r)
        out = []
        for (scheme, rate), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            agg = {"scheme": scheme, "loss_rate": rate, "n": len(rows)}
            for m in ("mcd_db", "l_bin", "feature_l1_lost"):
                vals = [r[m] for r in rows]
                finite = [v for v in vals if not math.isnan(v)]
                agg[m] = float(np.mean(finite)) if finite else float("nan")
                agg[m + "_ci95"] = _ci95(vals)
            out.append(agg)
        return out

    def write_csv(self, path):
        write_rows(path, REPORT_COLUMNS, self.rows)


def write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items() if k in columns})


def sweep_trace(rate, n_packets, seed):
    if rate == 0:
        return channel.PacketTrace(np.zeros(n_packets, dtype=bool))
    cap = channel.RATE_CATEGORIES.get(round(rate, 6))
    if cap is None:
        raise ConfigError(f"sweep rate {rate} has no burst-cap category")
    return channel.gen_random_trace(rate, cap, n_packets, seed)


def _cell(args):
    name, model, clips, rate, seed = args
    rows = []
    for i, clip in enumerate(clips):
        n_packets = -(-dsp.CODEC_GRID.n_frames(padded_length(len(clip))) // vq.FRAMES_PER_PACKET)
        trace = sweep_trace(rate, n_packets, [seed, i, int(round(rate * 1000))])
        conceal = not name.endswith("+zero-fill")
        rows.append(run_pipeline(clip, trace, model, scheme=name, conceal=conceal, clip_id=str(i)).row)
    lost = [r["feature_l1_lost"] for r in rows if not math.isnan(r["feature_l1_lost"])]
    return {
        "scheme": name,
        "loss_rate": rate,
        "seed": seed,
        "mcd_db": float(np.mean([r["mcd_db"] for r in rows])),
        "l_bin": float(np.mean([r["l_bin"] for r in rows])),
        "feature_l1_lost": float(np.mean(lost)) if lost else float("nan"),
        "n_clips": len(rows),
    }


def sweep(checkpoints, clips, rates=DEFAULT_RATES, n_seeds=3, out_csv=None, workers=1):
    """Full factorial scheme x rate x seed evaluation; returns the list of cell rows.

    ``checkpoints`` maps a scheme label to a checkpoint path or a loaded model.
    A label ending in ``+zero-fill`` evaluates that model without concealment.
    """
    if len(checkpoints) < 2:
        raise ConfigError("a sweep compares at least two schemes")
    models = {name: (load_model(m)[0] if isinstance(m, str) else m) for name, m in checkpoints.items()}
    cells = [(name, model, clips, float(rate), seed)
             for name, model in models.items() for rate in rates for seed in range(n_seeds)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    if out_csv is not None:
        write_rows(out_csv, SWEEP_COLUMNS, rows)
    return rows


def sweep_summary(rows):
    """Mean MCD and feature L1 per (scheme, rate), averaged over seeds."""
    out = {}
    for r in rows:
        out.setdefault((r["scheme"], r["loss_rate"]), []).append(r)
    return [{"scheme": s, "loss_rate": rate,
             "mcd_db": float(np.mean([r["mcd_db"] for r in rs])),
             "feature_l1_lost": float(np.nanmean([r["feature_l1_lost"] for r in rs]))
             if any(not math.isnan(r["feature_l1_lost"]) for r in rs) else float("nan")}
            for (s, rate), rs in sorted(out.items())]
