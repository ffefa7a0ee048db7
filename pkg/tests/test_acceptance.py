"""Acceptance criteria 1-9, one test each; every test prints a single PASS/FAIL line.

Criteria 6-8 share two module-scoped training runs (ERROR_FREE, then
FDPLC_PROPOSED initialized from it) on the 8-clip synthetic overfit set.
"""
import json
import time

import numpy as np
import pytest

from fdplc import backbone, channel, dsp, evaluation, ganloss, gradsuite, trainer, vq
from fdplc.backbone import BackboneConfig, Decoder, Encoder
from fdplc.cli import main as cli_main
from fdplc.diffcore import Tensor
from fdplc.fdplc import AttentionConfig, FdplcStack, GTSABlock
from fdplc.model import build_model
from fdplc.trainer import RunConfig

OVERFIT_STEPS = 500
LOSS_RATE = 0.3
N_SEEDS = 3


def report(capsys, n, ok, detail):
    line = f"ACCEPTANCE criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def randomize(module, rng, scale=0.2):
    for p in module.parameters():
        p.data = rng.normal(scale=scale, size=p.shape).astype(p.data.dtype)
    return module


# -- 1 ---------------------------------------------------------------------------------
def test_criterion_1_gradient_suite(capsys):
    t = time.perf_counter()
    results = gradsuite.run_suite(seed=0)
    elapsed = time.perf_counter() - t
    worst = max(results, key=results.get)
    failed = sorted(k for k, v in results.items() if not v < 1e-5)
    ok = not failed and elapsed < 120
    report(capsys, 1, ok, f"{len(results)} checks, worst {worst}={results[worst]:.2e}, "
                          f"failed={failed}, {elapsed:.1f}s")


# -- 2 ---------------------------------------------------------------------------------
def _future_invariant(fn, x, t, perturb_from, rng, axis=1):
    base = fn(x)
    x2 = x.copy()
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(perturb_from, None)
    x2[tuple(idx)] += rng.normal(size=x2[tuple(idx)].shape)
    out = fn(x2)
    return np.array_equal(out[:, :t], base[:, :t])


def test_criterion_2_causality(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cfg = BackboneConfig()
    enc, dec = Encoder(cfg, rng), Decoder(cfg, rng)
    checks = {}
    x = rng.normal(size=4800) * 0.1
    enc_ok = True
    for t in rng.integers(2, 50, size=4):
        # frame t sees samples < 80 t + 320
        base = backbone.encode(enc, x).frames.data
        x2 = x.copy()
        x2[80 * t + 320:] += rng.normal(size=x2[80 * t + 320:].shape)
        enc_ok &= np.array_equal(backbone.encode(enc, x2).frames.data[:, :t + 1], base[:, :t + 1])
    checks["encoder"] = enc_ok
    lat = rng.normal(size=(1, 48, 32))
    n = backbone.output_length(48)
    checks["decoder"] = all(
        _future_invariant(lambda z: dec(Tensor(z), n).data, lat, 80 * int(t), int(t), rng)
        for t in rng.integers(1, 47, size=4))
    stack = randomize(FdplcStack(32, AttentionConfig(window=32), rng), rng)
    feats = rng.normal(size=(1, 90, 32))
    mask = rng.random(90) < 0.3
    stack_ok = True
    for t in rng.integers(1, 89, size=5):
        base = stack(feats, mask).data
        f2, m2 = feats.copy(), mask.copy()
        f2[:, t:] += rng.normal(size=f2[:, t:].shape)
        m2[t:] = ~m2[t:]
        stack_ok &= np.array_equal(stack(f2, m2).data[:, :t], base[:, :t])
    checks["fdplc_stack"] = stack_ok
    block = randomize(GTSABlock(32, AttentionConfig(window=32), rng), rng)
    h = rng.normal(size=(1, 80, 32))
    base = block(Tensor(h)).data
    far, near = h.copy(), h.copy()
    bump = rng.normal(size=32)  # a constant shift would vanish under the layer norm
    far[:, 60 - 32] += bump
    near[:, 60 - 31] += bump
    checks["gtsa_boundary_32"] = (np.array_equal(block(Tensor(far)).data[:, 60], base[:, 60])
                                  and not np.array_equal(block(Tensor(near)).data[:, 60], base[:, 60]))
    disc = ganloss.Discriminators(rng).frame
    disc.eval()  # freeze the spectral-norm power iteration so both passes share one sigma
    mag = rng.random((1, 60, 161))
    checks["frame_discriminator"] = all(
        _future_invariant(lambda m: disc(Tensor(m)).probs.data, mag, int(t), int(t), rng)
        for t in rng.integers(1, 59, size=4))
    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 60
    report(capsys, 2, ok, ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()) + f", {elapsed:.1f}s")


# -- 3 ---------------------------------------------------------------------------------
def test_criterion_3_channel_statistics(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    caps_ok = True
    for rate, cap_ms in sorted(channel.RATE_CATEGORIES.items()):
        trace = channel.gen_random_trace(rate, cap_ms, 100_000, int(rate * 100))
        worst = max(worst, abs(trace.loss_rate - rate))
        caps_ok &= trace.max_burst * 20 <= cap_ms
    ch = channel.MarkovChannel()
    markov_err = abs(channel.gen_markov_trace(ch, 1_000_000, 0).loss_rate - channel.stationary_loss_rate(ch))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.01 and caps_ok and markov_err <= 0.01 and elapsed < 60
    report(capsys, 3, ok, f"random max |err|={worst:.4f}, caps respected={caps_ok}, "
                          f"markov |err|={markov_err:.4f}, {elapsed:.1f}s")


# -- 4 ---------------------------------------------------------------------------------
def test_criterion_4_bitstream(capsys):
    t0 = time.perf_counter()
    idx = np.random.default_rng(4).integers(0, 1024, size=(10_000, 12))
    payloads = vq.payloads_from_indices(idx)
    blob = vq.pack(payloads, 12, 10)
    back = vq.unpack(blob, 12, 10)
    round_trip = back == payloads and vq.pack(back, 12, 10) == blob
    bps = vq.GroupVQ(32, 12, 1024, np.random.default_rng(0)).bitrate
    elapsed = time.perf_counter() - t0
    ok = round_trip and bps == 6000 and elapsed < 10
    report(capsys, 4, ok, f"round trip={round_trip}, bitrate={bps} bps, {len(blob)} bytes, {elapsed:.1f}s")


# -- 5 ---------------------------------------------------------------------------------
def test_criterion_5_dsp_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    x = rng.normal(size=1200)
    w = dsp.hann(320)
    frames = np.stack([x[t * 80:t * 80 + 320] * w for t in range(dsp.CODEC_GRID.n_frames(len(x)))])
    k = np.arange(161)
    dft = frames @ np.exp(-2j * np.pi * np.outer(np.arange(320), k) / 320)
    stft_err = float(np.max(np.abs(dsp.stft(x).frames - dft)))
    y = rng.normal(size=16000)
    rec = dsp.istft(dsp.stft(y), len(y))
    interior = slice(320, len(y) - 320)
    snr = 10 * np.log10(np.sum(y[interior] ** 2) / np.sum((rec[interior] - y[interior]) ** 2))
    c = rng.normal(size=(50, 13))
    d = c.copy()
    d[:, 0] += 1.0
    mcd_id = evaluation.mcd(y, y)
    mcd_one = evaluation.mcd_from_cepstra(c, d)
    elapsed = time.perf_counter() - t0
    ok = stft_err < 1e-9 and snr > 60 and mcd_id == 0 and abs(mcd_one - 6.1419) <= 1e-3 and elapsed < 60
    report(capsys, 5, ok, f"STFT err={stft_err:.1e}, iSTFT SNR={snr:.1f} dB, MCD identity={mcd_id}, "
                          f"single-coefficient={mcd_one:.4f} dB, {elapsed:.1f}s")


# -- shared overfit runs -----------------------------------------------------------------
def _overfit_cfg(scheme, out, **extra):
    return RunConfig.from_dict({"scheme": scheme, "steps": OVERFIT_STEPS, "seed": 0, "out_dir": str(out),
                                "data": {"n_clips": 8, "seconds": 2.0}, **extra}, env={})


@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    ef_cfg = _overfit_cfg("ERROR_FREE", root / "ef")
    ef = trainer.train("ERROR_FREE", ef_cfg)
    t1 = time.perf_counter()
    fp_cfg = _overfit_cfg("FDPLC_PROPOSED", root / "fp", pretrained=str(ef.checkpoint),
                          loss_mix={str(LOSS_RATE): 1})
    fp = trainer.train("FDPLC_PROPOSED", fp_cfg)
    t2 = time.perf_counter()
    clips = trainer.load_clips(ef_cfg)
    return {"root": root, "ef": ef, "fp": fp, "ef_cfg": ef_cfg, "fp_cfg": fp_cfg, "clips": clips,
            "ef_seconds": t1 - t0, "fp_seconds": t2 - t1}


def _traces(clips):
    out = {}
    for seed in range(N_SEEDS):
        for i, clip in enumerate(clips):
            n_packets = -(-dsp.CODEC_GRID.n_frames(len(clip)) // vq.FRAMES_PER_PACKET)
            out[seed, i] = evaluation.sweep_trace(LOSS_RATE, n_packets, [seed, i, 300])
    return out


@pytest.fixture(scope="module")
def lossy_eval(overfit):
    t0 = time.perf_counter()
    ef_model, _ = trainer.load_model(overfit["ef"].checkpoint)
    fp_model, _ = trainer.load_model(overfit["fp"].checkpoint)
    rows = {"fp": [], "fp_zero_fill": [], "ef_zero_fill": []}
    for (seed, i), trace in _traces(overfit["clips"]).items():
        clip = overfit["clips"][i]
        rows["fp"].append(evaluation.run_pipeline(clip, trace, fp_model).row)
        rows["fp_zero_fill"].append(evaluation.run_pipeline(clip, trace, fp_model, conceal=False).row)
        rows["ef_zero_fill"].append(evaluation.run_pipeline(clip, trace, ef_model).row)
    means = {k: {m: float(np.nanmean([r[m] for r in v])) for m in ("mcd_db", "l_bin", "feature_l1_lost")}
             for k, v in rows.items()}
    return means, time.perf_counter() - t0


# -- 6 ---------------------------------------------------------------------------------
def test_criterion_6_overfit(overfit, lossy_eval, capsys):
    rows = overfit["ef"].rows
    first, last = rows[0]["L_bin"], rows[-1]["L_bin"]
    means, eval_seconds = lossy_eval
    l1_fp = means["fp"]["feature_l1_lost"]
    l1_zf = means["fp_zero_fill"]["feature_l1_lost"]
    elapsed = overfit["ef_seconds"] + overfit["fp_seconds"] + eval_seconds
    ok_a = last <= 0.5 * first
    ok_b = l1_fp <= 0.8 * l1_zf
    ok = ok_a and ok_b and elapsed < 600
    report(capsys, 6, ok, f"(a) L_bin {first:.4f} -> {last:.4f} ({last / first:.2f}x); "
                          f"(b) lost-frame feature L1 {l1_fp:.4f} vs zero-fill {l1_zf:.4f} ({l1_fp / l1_zf:.2f}x); "
                          f"{elapsed:.0f}s")


# -- 7 ---------------------------------------------------------------------------------
def test_criterion_7_trend(lossy_eval, capsys):
    means, eval_seconds = lossy_eval
    fp, zf = means["fp"], means["ef_zero_fill"]
    ok = fp["l_bin"] < zf["l_bin"] and fp["mcd_db"] < zf["mcd_db"] and eval_seconds < 300
    report(capsys, 7, ok, f"FDPLC L_bin={fp['l_bin']:.4f} MCD={fp['mcd_db']:.2f} dB vs ERROR_FREE+zero-fill "
                          f"L_bin={zf['l_bin']:.4f} MCD={zf['mcd_db']:.2f} dB over {N_SEEDS} seeds at "
                          f"{LOSS_RATE:.0%} loss; {eval_seconds:.0f}s")


# -- 8 ---------------------------------------------------------------------------------
def test_criterion_8_scheme_ladder(overfit, capsys):
    t0 = time.perf_counter()
    atten = RunConfig.from_dict({"scheme": "ATTEN_GAN"}, env={})
    prop = RunConfig.from_dict({"scheme": "FDPLC_PROPOSED"}, env={})
    n_atten = build_model(atten.model_config(), 0).num_parameters()
    n_prop = build_model(prop.model_config(), 0).num_parameters()
    fp = overfit["fp"]
    ef_model, _ = trainer.load_model(overfit["ef"].checkpoint)
    fp_model, _ = trainer.load_model(fp.checkpoint)
    hashes_ok = all(
        trainer.hash_parameters(fp_model.module_groups()[g]) == h == trainer.hash_parameters(ef_model.module_groups()[g])
        for g, h in fp.frozen_hashes.items()) and set(fp.frozen_hashes) == {"encoder", "codebooks"}
    d_opt = fp.d_optimizer
    lr_ok = d_opt.epoch == OVERFIT_STEPS and d_opt.lr == 4e-4 * 0.999 ** d_opt.epoch
    saved_epoch = d_opt.epoch
    for e in range(0, 2 * OVERFIT_STEPS, 37):
        d_opt.epoch = e
        lr_ok &= d_opt.lr == 4e-4 * 0.999 ** e
    d_opt.epoch = saved_epoch
    elapsed = time.perf_counter() - t0
    ok = n_atten == n_prop and hashes_ok and lr_ok and elapsed < 60
    report(capsys, 8, ok, f"params ATTEN_GAN={n_atten} FDPLC={n_prop}, frozen hashes invariant={hashes_ok}, "
                          f"D lr schedule exact={lr_ok}, {elapsed:.1f}s")


# -- 9 ---------------------------------------------------------------------------------
def test_criterion_9_determinism(overfit, tmp_path, capsys):
    checks = {}
    # training: a rerun of the overfit configs reproduces the loss curve bitwise (prefix of the 500-step runs)
    for key in ("ef", "fp"):
        cfg = overfit[f"{key}_cfg"]
        short = RunConfig(**{**cfg.__dict__, "steps": 20, "out_dir": str(tmp_path / key)})
        rows = trainer.train(cfg.scheme, short).rows
        checks[f"{key}_loss_curve"] = rows == overfit[key].rows[:20]
    # CLI: train, encode, simulate, decode, evaluate twice each with the same seed
    outs = []
    for run in range(2):
        d = tmp_path / f"cli{run}"
        d.mkdir()
        cfg = {"scheme": "ERROR_FREE", "steps": 5, "batch_size": 2, "crop_frames": 16, "seed": 3,
               "data": {"n_clips": 2, "seconds": 0.5}, "out_dir": str(tmp_path / "cli_run")}
        (d / "t.json").write_text(json.dumps(cfg))
        assert cli_main(["train", "--config", str(d / "t.json")]) == 0
        ckpt_bytes = (tmp_path / "cli_run" / "checkpoint.fdck").read_bytes()
        csv_bytes = (tmp_path / "cli_run" / "losses.csv").read_bytes()
        codec = d / "c.json"
        codec.write_text(json.dumps({"checkpoint": str(overfit["fp"].checkpoint)}))
        dsp.write_wav(d / "in.wav", overfit["clips"][0])
        n_packets = -(-dsp.CODEC_GRID.n_frames(len(overfit["clips"][0])) // vq.FRAMES_PER_PACKET)
        (d / "s.json").write_text(json.dumps({"rate": LOSS_RATE, "n_packets": n_packets, "seed": 1}))
        assert cli_main(["encode", "--config", str(codec), str(d / "in.wav"), str(d / "a.fdpc")]) == 0
        assert cli_main(["simulate", "--config", str(d / "s.json"), str(d / "trace.txt")]) == 0
        assert cli_main(["decode", "--config", str(codec), str(d / "a.fdpc"), str(d / "out.wav"),
                         str(d / "trace.txt")]) == 0
        (d / "e.json").write_text(json.dumps({"checkpoint": str(overfit["fp"].checkpoint), "loss_rate": LOSS_RATE,
                                              "seeds": 2}))
        assert cli_main(["evaluate", "--config", str(d / "e.json"), str(d / "eval.csv"), str(d / "in.wav")]) == 0
        outs.append({"checkpoint": ckpt_bytes, "losses_csv": csv_bytes,
                     **{name: (d / name).read_bytes() for name in ("a.fdpc", "trace.txt", "out.wav", "eval.csv")}})
    for name in outs[0]:
        checks[name] = outs[0][name] == outs[1][name]
    ok = all(checks.values())
    report(capsys, 9, ok, ", ".join(f"{k}={'same' if v else 'DIFF'}" for k, v in checks.items()))
