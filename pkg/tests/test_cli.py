import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fdplc import channel, data, dsp, evaluation
from fdplc.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main

TINY = {"steps": 40, "batch_size": 2, "crop_frames": 16, "data": {"n_clips": 2, "seconds": 0.5}}


def write_cfg(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(d / "train.json", {"scheme": "ERROR_FREE", **TINY, "out_dir": str(d / "ef")})
    assert main(["train", "--config", cfg]) == EXIT_OK
    ckpt = d / "ef" / "checkpoint.fdck"
    dsp.write_wav(d / "clip.wav", data.synthetic_corpus(1, 0.5, 7)[0])
    write_cfg(d / "codec.json", {"checkpoint": str(ckpt)})
    return d, ckpt


def test_train_outputs(work):
    d, ckpt = work
    assert ckpt.is_file()
    with open(d / "ef" / "losses.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40 and rows[0]["step"] == "0"


def test_encode_decode_round_trip(work):
    d, _ = work
    codec = str(d / "codec.json")
    assert main(["encode", "--config", codec, str(d / "clip.wav"), str(d / "a.fdpc")]) == EXIT_OK
    blob = (d / "a.fdpc").read_bytes()
    assert blob[:4] == b"FDPC"
    assert main(["decode", "--config", codec, str(d / "a.fdpc"), str(d / "a.wav")]) == EXIT_OK
    out = dsp.read_wav(d / "a.wav")
    assert len(out) == len(dsp.read_wav(d / "clip.wav"))
    assert main(["encode", "--config", codec, str(d / "clip.wav"), str(d / "b.fdpc")]) == EXIT_OK
    assert (d / "b.fdpc").read_bytes() == blob


def test_decode_with_trace_is_deterministic(work):
    d, _ = work
    codec = str(d / "codec.json")
    main(["encode", "--config", codec, str(d / "clip.wav"), str(d / "c.fdpc")])
    sim = write_cfg(d / "sim.json", {"rate": 0.3, "n_packets": 25, "seed": 1})
    assert main(["simulate", "--config", sim, str(d / "trace.txt")]) == EXIT_OK
    args = [str(d / "c.fdpc"), None, str(d / "trace.txt")]
    for name in ("x.wav", "y.wav"):
        args[1] = str(d / name)
        assert main(["decode", "--config", codec, *args]) == EXIT_OK
    assert (d / "x.wav").read_bytes() == (d / "y.wav").read_bytes()
    main(["decode", "--config", codec, str(d / "c.fdpc"), str(d / "z.wav")])
    assert (d / "z.wav").read_bytes() != (d / "x.wav").read_bytes()


def test_simulate_stats_and_seed_override(tmp_path, monkeypatch, capsys):
    cfg = write_cfg(tmp_path / "s.json", {"channel": "random", "rate": 0.2, "n_packets": 5000, "seed": 3})
    assert main(["simulate", "--config", cfg, str(tmp_path / "t1.txt"), str(tmp_path / "s.csv")]) == EXIT_OK
    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == "packets,losses,max_burst,rate"
    with open(tmp_path / "s.csv") as fh:
        row = next(csv.DictReader(fh))
    trace = channel.load_trace(tmp_path / "t1.txt")
    assert int(row["packets"]) == 5000 and int(row["losses"]) == trace.n_lost
    assert abs(trace.loss_rate - 0.2) < 0.03 and trace.max_burst <= 4
    main(["simulate", "--config", cfg, str(tmp_path / "t2.txt")])
    assert (tmp_path / "t2.txt").read_bytes() == (tmp_path / "t1.txt").read_bytes()
    monkeypatch.setenv("FDPLC_SEED", "99")
    main(["simulate", "--config", cfg, str(tmp_path / "t3.txt")])
    assert (tmp_path / "t3.txt").read_bytes() != (tmp_path / "t1.txt").read_bytes()
    direct = channel.gen_random_trace(0.2, 80, 5000, 99)
    assert np.array_equal(channel.load_trace(tmp_path / "t3.txt").lost, direct.lost)


def test_simulate_markov(tmp_path):
    cfg = write_cfg(tmp_path / "m.json", {"channel": "markov", "n_packets": 2000, "seed": 0})
    assert main(["simulate", "--config", cfg, str(tmp_path / "m.txt")]) == EXIT_OK
    assert len(channel.load_trace(tmp_path / "m.txt")) == 2000


def test_evaluate_and_sweep(work):
    d, ckpt = work
    cfg = write_cfg(d / "ev.json", {"checkpoint": str(ckpt), "loss_rate": 0.3, "seeds": 2})
    assert main(["evaluate", "--config", cfg, str(d / "ev.csv"), str(d / "clip.wav")]) == EXIT_OK
    with open(d / "ev.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == evaluation.REPORT_COLUMNS and len(rows) == 2
    assert all(r["loss_rate"] == "0.3" for r in rows)
    first = (d / "ev.csv").read_bytes()
    main(["evaluate", "--config", cfg, str(d / "ev.csv"), str(d / "clip.wav")])
    assert (d / "ev.csv").read_bytes() == first
    sw = write_cfg(d / "sw.json", {"checkpoints": {"A": str(ckpt), "B": str(ckpt)}, "rates": [0.0, 0.2],
                                   "n_seeds": 1, "data": {"n_clips": 1, "seconds": 0.5}})
    assert main(["sweep", "--config", sw, str(d / "sw.csv")]) == EXIT_OK
    assert len((d / "sw.csv").read_text().splitlines()) == 1 + 4


def test_gradcheck_exit_codes(tmp_path):
    ok = write_cfg(tmp_path / "g.json", {"groups": ["elementwise"]})
    assert main(["gradcheck", "--config", ok, str(tmp_path / "g.csv")]) == EXIT_OK
    with open(tmp_path / "g.csv") as fh:
        assert all(r["passed"] == "True" for r in csv.DictReader(fh))
    strict = write_cfg(tmp_path / "s.json", {"groups": ["elementwise"], "tolerance": 1e-30})
    assert main(["gradcheck", "--config", strict]) == EXIT_NUMERICAL
    bad = write_cfg(tmp_path / "b.json", {"groups": ["nope"]})
    assert main(["gradcheck", "--config", bad]) == EXIT_VALIDATION


def test_validation_exit_codes(work, tmp_path):
    d, ckpt = work
    bad_key = write_cfg(tmp_path / "k.json", {"checkpoint": str(ckpt), "speed": 2})
    assert main(["encode", "--config", bad_key, str(d / "clip.wav"), str(tmp_path / "o.fdpc")]) == EXIT_VALIDATION
    codec = str(d / "codec.json")
    assert main(["encode", "--config", codec, str(tmp_path / "missing.wav"), str(tmp_path / "o.fdpc")]) \
        == EXIT_VALIDATION
    assert main(["encode", "--config", codec, str(d / "clip.wav")]) == EXIT_VALIDATION
    (tmp_path / "bad.fdpc").write_bytes(b"XXXX" + bytes(40))
    assert main(["decode", "--config", codec, str(tmp_path / "bad.fdpc"), str(tmp_path / "o.wav")]) \
        == EXIT_VALIDATION
    (tmp_path / "j.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "j.json"), str(tmp_path / "t.txt")]) == EXIT_VALIDATION
    typo = write_cfg(tmp_path / "n.json", {"rate": 0.2, "n_packets": "many"})
    assert main(["simulate", "--config", typo, str(tmp_path / "t.txt")]) == EXIT_VALIDATION
    assert main(["train", "--config", write_cfg(tmp_path / "t.json", {"scheme": "NOPE"})]) == EXIT_VALIDATION
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_exits_3(tmp_path):
    cfg = write_cfg(tmp_path / "t.json", {"scheme": "ERROR_FREE", **TINY, "steps": 4, "lr_g": 1e30,
                                          "grad_clip": 1e30, "out_dir": str(tmp_path / "run")})
    assert main(["train", "--config", cfg]) == EXIT_NUMERICAL


def test_console_script_entry_point(tmp_path):
    cfg = write_cfg(tmp_path / "s.json", {"rate": 0.1, "n_packets": 10})
    proc = subprocess.run([sys.executable, "-m", "fdplc.cli", "simulate", "--config", cfg, str(tmp_path / "t.txt")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("packets,")
    proc = subprocess.run([sys.executable, "-m", "fdplc.cli", "simulate", "--config", cfg],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "error" in proc.stderr
