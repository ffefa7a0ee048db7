"""Command-line entry point: ``fdplc <command> --config cfg.json [files...]``.

Exit codes: 0 success, 2 validation error (bad config, input or file), 3 numerical failure.

Command configs (JSON objects; unknown keys are rejected):

train      the trainer run-config (see :mod:`fdplc.trainer`)
encode     {"checkpoint": path}                         in.wav out.fdpc
decode     {"checkpoint": path, "conceal": true}        in.fdpc out.wav [trace.txt]
simulate   {"channel": "random"|"markov", "rate", "max_burst_ms", "n_packets", "seed",
            "transition", "emission"}                  out_trace.txt [stats.csv]
evaluate   {"checkpoint", "scheme", "loss_rate", "seeds", "trace", "conceal", "data"}
                                                        out.csv [clip.wav ...]
sweep      {"checkpoints": {label: path}, "rates", "n_seeds", "data", "workers"}
                                                        out.csv [clip.wav ...]
gradcheck  {"seed", "tolerance", "groups"}              [out.csv]
"""
import argparse
import json
import logging
import sys

import numpy as np

from . import channel, dsp, evaluation, gradsuite, vq
from .errors import ConfigError, FormatError, NumericalError, NumericalFailure, ValidationError
from .trainer import DataConfig, RunConfig, TrainScheme, load_clips, load_model, seed_override, train

log = logging.getLogger("fdplc")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
SIMULATE_COLUMNS = ("packets", "losses", "max_burst", "rate")


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _check_keys(cfg, allowed, command):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"{command}: unknown config keys {sorted(unknown)}")


def _seed(cfg, default=0):
    override = seed_override()
    return override if override is not None else int(cfg.get("seed", default))


def _require(cfg, key, command):
    if key not in cfg:
        raise ConfigError(f"{command}: config needs {key!r}")
    return cfg[key]


def _clips(cfg, files):
    if files:
        return [dsp.read_wav(f) for f in files]
    data = cfg.get("data", {})
    if not isinstance(data, dict):
        raise ConfigError("'data' must be an object")
    return load_clips(RunConfig(scheme=TrainScheme.parse("ERROR_FREE"), data=DataConfig(**data)))


# -- commands -----------------------------------------------------------------------
def cmd_train(args, cfg):
    run = RunConfig.from_dict(cfg)
    result = train(run.scheme, run, log=log.info)
    print(result.checkpoint)
    print(result.losses_csv)


def cmd_encode(args, cfg):
    _check_keys(cfg, {"checkpoint"}, "encode")
    if len(args.files) != 2:
        raise ConfigError("encode needs: in.wav out.fdpc")
    model, _ = load_model(_require(cfg, "checkpoint", "encode"))
    clip = dsp.read_wav(args.files[0])
    idx, _, header = evaluation.encode_clip(model, clip)
    vq.write_bitstream(args.files[1], header, vq.payloads_from_indices(idx))
    print(f"{len(idx)} packets, {model.vq.bitrate:.0f} bps")


def cmd_decode(args, cfg):
    _check_keys(cfg, {"checkpoint", "conceal"}, "decode")
    if len(args.files) not in (2, 3):
        raise ConfigError("decode needs: in.fdpc out.wav [trace.txt]")
    model, _ = load_model(_require(cfg, "checkpoint", "decode"))
    header, payloads = vq.read_bitstream(args.files[0])
    if (header.n_groups, header.log2_codewords, header.channels) != \
            (model.vq.n_groups, model.vq.bits_per_index, model.vq.channels):
        raise FormatError(f"{args.files[0]}: bitstream layout does not match the checkpoint")
    trace = channel.load_trace(args.files[2]) if len(args.files) == 3 else None
    feats, mask = evaluation.receive(model, header, payloads, trace)
    _, y = evaluation.conceal_and_decode(model, feats, mask, header.n_samples, bool(cfg.get("conceal", True)))
    if not np.all(np.isfinite(y)):
        raise NumericalError("decoder produced non-finite samples")
    dsp.write_wav(args.files[1], dsp.AudioClip(np.clip(y, -1.0, 1.0)))
    print(f"{int(mask.sum())} of {len(mask)} frames lost")


def cmd_simulate(args, cfg):
    _check_keys(cfg, {"channel", "rate", "max_burst_ms", "n_packets", "seed", "transition", "emission"}, "simulate")
    if len(args.files) not in (1, 2):
        raise ConfigError("simulate needs: out_trace.txt [stats.csv]")
    kind = cfg.get("channel", "random")
    n = int(_require(cfg, "n_packets", "simulate"))
    seed = _seed(cfg)
    if kind == "random":
        rate = float(_require(cfg, "rate", "simulate"))
        cap = cfg.get("max_burst_ms", channel.RATE_CATEGORIES.get(round(rate, 6), 220))
        trace = channel.gen_random_trace(rate, int(cap), n, seed)
    elif kind == "markov":
        kw = {k: np.array(cfg[k]) for k in ("transition", "emission") if k in cfg}
        trace = channel.gen_markov_trace(channel.MarkovChannel(**kw), n, seed)
    else:
        raise ConfigError(f"unknown channel {kind!r}; use 'random' or 'markov'")
    channel.save_trace(trace, args.files[0])
    stats = {"packets": len(trace), "losses": trace.n_lost, "max_burst": trace.max_burst, "rate": trace.loss_rate}
    if len(args.files) == 2:
        evaluation.write_rows(args.files[1], SIMULATE_COLUMNS, [stats])
    print(",".join(SIMULATE_COLUMNS))
    print(",".join(repr(stats[k]) for k in SIMULATE_COLUMNS))


def cmd_evaluate(args, cfg):
    _check_keys(cfg, {"checkpoint", "scheme", "loss_rate", "seeds", "trace", "conceal", "data", "seed"}, "evaluate")
    if not args.files:
        raise ConfigError("evaluate needs: out.csv [clip.wav ...]")
    out, clip_files = args.files[0], args.files[1:]
    model, meta = load_model(_require(cfg, "checkpoint", "evaluate"))
    scheme = cfg.get("scheme", meta.get("scheme", "model"))
    clips = _clips(cfg, clip_files)
    rate = float(cfg.get("loss_rate", 0.0))
    base_seed = _seed(cfg)
    fixed = channel.load_trace(cfg["trace"]) if "trace" in cfg else None
    report = evaluation.EvalReport()
    for s in range(int(cfg.get("seeds", 1))):
        for i, clip in enumerate(clips):
            n_packets = -(-dsp.CODEC_GRID.n_frames(evaluation.padded_length(len(clip))) // vq.FRAMES_PER_PACKET)
            trace = fixed if fixed is not None else \
                evaluation.sweep_trace(rate, n_packets, [base_seed + s, i, int(round(rate * 1000))])
            res = evaluation.run_pipeline(clip, trace, model, scheme, bool(cfg.get("conceal", True)), clip_id=str(i))
            if fixed is None:
                res.row["loss_rate"] = rate  # group by nominal rate, not the realized one
            report.rows.append(res.row)
    report.write_csv(out)
    for agg in report.aggregate():
        print(f"{agg['scheme']} loss={agg['loss_rate']:.3f} MCD={agg['mcd_db']:.3f} dB L_bin={agg['l_bin']:.5f}")


def cmd_sweep(args, cfg):
    _check_keys(cfg, {"checkpoints", "rates", "n_seeds", "data", "workers"}, "sweep")
    if not args.files:
        raise ConfigError("sweep needs: out.csv [clip.wav ...]")
    ckpts = _require(cfg, "checkpoints", "sweep")
    if not isinstance(ckpts, dict):
        raise ConfigError("sweep: 'checkpoints' must map labels to checkpoint paths")
    clips = _clips(cfg, args.files[1:])
    rows = evaluation.sweep(ckpts, clips, tuple(cfg.get("rates", evaluation.DEFAULT_RATES)),
                            int(cfg.get("n_seeds", 3)), args.files[0], int(cfg.get("workers", 1)))
    for r in evaluation.sweep_summary(rows):
        print(f"{r['scheme']} loss={r['loss_rate']:.2f} MCD={r['mcd_db']:.3f} dB")


def cmd_gradcheck(args, cfg):
    _check_keys(cfg, {"seed", "tolerance", "groups"}, "gradcheck")
    tol = float(cfg.get("tolerance", gradsuite.TOLERANCE))
    groups = cfg.get("groups")
    if groups is not None and set(groups) - set(gradsuite.GROUPS):
        raise ConfigError(f"unknown gradcheck groups {sorted(set(groups) - set(gradsuite.GROUPS))}")
    results = gradsuite.run_suite(_seed(cfg), groups)
    failed = [k for k, v in results.items() if not v < tol]
    for k, v in results.items():
        print(f"{k:28s} {v:.3e} {'ok' if v < tol else 'FAIL'}")
    if args.files:
        evaluation.write_rows(args.files[0], ("check", "relative_error", "passed"),
                              [{"check": k, "relative_error": v, "passed": v < tol} for k, v in results.items()])
    if failed:
        raise NumericalError(f"{len(failed)} gradient checks above {tol}: {failed}")


HELP = {
    "train": "train a model under one of the training schemes",
    "encode": "WAV -> FDPC bitstream",
    "decode": "FDPC bitstream (+ optional loss trace) -> WAV",
    "simulate": "write a packet-loss trace",
    "evaluate": "MCD and L_bin of one checkpoint over clips",
    "sweep": "compare checkpoints across loss rates",
    "gradcheck": "finite-difference check of every differentiable op",
}

COMMANDS = {
    "train": cmd_train,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="fdplc", description="Feature-domain packet loss concealment workbench")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=name == "train", help="JSON config file")
        p.add_argument("files", nargs="*")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args, _load_json(args.config))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
