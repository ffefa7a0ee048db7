"""Time the numba kernels against their numpy twins on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

The first numba call (compilation or cache load) is excluded from the timings.
Results are checked for agreement before timing, so a fast but wrong kernel fails
loudly instead of winning.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from fdplc.kernels import _numpy as NP

try:
    from fdplc.kernels import _numba as NB
except ImportError:  # pragma: no cover
    sys.exit("numba is not installed; nothing to compare")


def cases(rng):
    # group GRU over one batch of 80-frame crops: B=8, G=4, d=8 (C=32)
    gi = rng.normal(size=(8, 80, 4, 3, 8)).astype(np.float32)
    wh = (rng.normal(size=(4, 3, 8, 8)) * 0.3).astype(np.float32)
    bh = rng.normal(size=(4, 3, 8)).astype(np.float32)
    h0 = np.zeros((8, 4, 8), dtype=np.float32)
    fwd = NP.gru_scan_forward(gi, wh, bh, h0)
    dhs = rng.normal(size=fwd[0].shape).astype(np.float32)
    yield "gru_scan_forward", (gi, wh, bh, h0)
    yield "gru_scan_backward", (dhs, fwd[0], h0, fwd[1], fwd[2], fwd[3], fwd[4], wh)

    # G-TSA attention: 4 heads of 4 dims, window 32
    q, k, v = (rng.normal(size=(8, 80, 4, 4)).astype(np.float32) for _ in range(3))
    scale = np.float32(0.5)
    _, p = NP.window_attention_forward(q, k, v, 32, scale)
    g = rng.normal(size=q.shape).astype(np.float32)
    yield "window_attention_forward", (q, k, v, 32, scale)
    yield "window_attention_backward", (g, q, k, v, p, 32, scale)

    # channel simulation over 10^6 packets
    lost = rng.random(1_000_000) < 0.5
    yield "cap_bursts", (lost, 3)
    p3 = rng.uniform(size=(3, 3))
    p3 /= p3.sum(axis=1, keepdims=True)
    yield "markov_walk", (np.cumsum(p3, axis=1), np.array([0.0, 0.4, 1.0]), 0,
                          rng.random(1_000_000), rng.random(1_000_000))

    # one 1024-entry codebook over a clip's worth of superframe slices
    yield "nearest_codeword", (rng.normal(size=(2000, 11)).astype(np.float32),
                               rng.normal(size=(1024, 11)).astype(np.float32))


def agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-4, atol=1e-5) for x, y in zip(a, b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--csv", help="also write the table as CSV")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, inputs in cases(rng):
        f_np, f_nb = getattr(NP, name), getattr(NB, name)
        if not agree(f_np(*inputs), f_nb(*inputs)):  # also warms up the jit
            sys.exit(f"{name}: numba and numpy results disagree")
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        rows.append({"kernel": name, "numpy_ms": t_np, "numba_ms": t_nb, "speedup": t_np / t_nb})
        print(f"{name:28s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)


if __name__ == "__main__":
    main()
