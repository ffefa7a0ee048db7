"""Training schemes, the JSON run-config, loss-simulated batches and the training loop.

Run-config keys (all optional except ``scheme``)::

    scheme          ERROR_FREE | ERROR_RESILIENT | BASELINE_GAN | ATTEN_GAN |
                    FDPLC_PROPOSED | FDPLC_MULTISTAGE | FDPLC_END2END
    seed            int (overridden by $FDPLC_SEED)
    epochs          int, 60; one epoch is one pass over the clips
    steps           int or null; when set, overrides ``epochs``
    batch_size      int, 8
    lr_g, lr_d      4e-4
    lr_decay        0.999 per epoch (both optimizers)
    grad_clip       5.0 (global norm)
    crop_frames     latent frames per training crop (multiple of 4), 80
    loss_mix        {"0.1": w, ..., "0.5": w, "markov": w}
    data            {"paths": [...], "n_clips": 8, "seconds": 2.0, "synthetic_seed": 1234}
    model           ModelConfig fields
    weights         LossWeights fields
    pretrained      path of an ERROR_FREE checkpoint
    fresh_decoder   false; start the decoder from scratch in FDPLC_PROPOSED
    multistage_split  0.5; fraction of steps in phase 1 of FDPLC_MULTISTAGE
    out_dir         "runs/<scheme>"

Loss-curve CSV columns: ``step,L_plc,L_bin,L_mel,L_adv_g,L_adv_d,L_fm,total``
(missing components are written as 0).
"""
import csv
import enum
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import backbone, channel, data, dsp, ganloss
from .diffcore import Adam, Tensor, clip_grad_norm, load_checkpoint, no_grad, save_checkpoint
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DependencyError,
    GradError,
    NumericalError,
)
from .ganloss import BalancedFrameSet, Discriminators, LossWeights
from .model import ModelConfig, build_model, check_topology
from .vq import FRAMES_PER_PACKET

CSV_COLUMNS = ("step", "L_plc", "L_bin", "L_mel", "L_adv_g", "L_adv_d", "L_fm", "total")
MARKOV = "markov"
CHECKPOINT_NAME = "checkpoint.fdck"
LOSSES_NAME = "losses.csv"


class SchemeKind(enum.Enum):
    ERROR_FREE = "ERROR_FREE"
    ERROR_RESILIENT = "ERROR_RESILIENT"
    BASELINE_GAN = "BASELINE_GAN"
    ATTEN_GAN = "ATTEN_GAN"
    FDPLC_PROPOSED = "FDPLC_PROPOSED"
    FDPLC_MULTISTAGE = "FDPLC_MULTISTAGE"
    FDPLC_END2END = "FDPLC_END2END"


_FDPLC_KINDS = {SchemeKind.ATTEN_GAN, SchemeKind.FDPLC_PROPOSED, SchemeKind.FDPLC_MULTISTAGE, SchemeKind.FDPLC_END2END}
_GAN_KINDS = _FDPLC_KINDS | {SchemeKind.BASELINE_GAN}


@dataclass(frozen=True)
class TrainScheme:
    kind: SchemeKind

    @classmethod
    def parse(cls, name):
        if isinstance(name, TrainScheme):
            return name
        if isinstance(name, SchemeKind):
            return cls(name)
        try:
            return cls(SchemeKind[str(name).strip().upper().replace("-", "_")])
        except KeyError:
            raise ConfigError(f"unknown training scheme {name!r}; choose from {[k.name for k in SchemeKind]}") from None

    @property
    def name(self):
        return self.kind.name

    @property
    def has_fdplc(self):
        return self.kind in _FDPLC_KINDS

    @property
    def simulate_loss(self):
        return self.kind is not SchemeKind.ERROR_FREE

    @property
    def use_gan(self):
        return self.kind in _GAN_KINDS

    @property
    def use_plc_loss(self):
        return self.kind in {SchemeKind.FDPLC_PROPOSED, SchemeKind.FDPLC_MULTISTAGE, SchemeKind.FDPLC_END2END}

    @property
    def requires_pretrained(self):
        return self.kind in {SchemeKind.FDPLC_PROPOSED, SchemeKind.FDPLC_MULTISTAGE}

    def frozen(self, phase=2):
        """Names of the frozen module groups; phase 1 only matters for FDPLC_MULTISTAGE."""
        if self.kind is SchemeKind.FDPLC_PROPOSED:
            return frozenset({"encoder", "codebooks"})
        if self.kind is SchemeKind.FDPLC_MULTISTAGE:
            return frozenset({"encoder", "codebooks", "decoder"} if phase == 1 else {"encoder", "codebooks"})
        return frozenset()

    def weights(self, base=LossWeights()):
        return base.with_switches(use_gan=self.use_gan and base.use_gan, use_fdplc=self.has_fdplc,
                                  use_plc_loss=self.use_plc_loss and base.use_plc_loss,
                                  simulate_loss=self.simulate_loss)


def _parse_mix(mix):
    out = {}
    for key, w in dict(mix).items():
        if str(key).lower() == MARKOV:
            cat = MARKOV
        else:
            try:
                cat = float(key)
            except ValueError:
                raise ConfigError(f"unknown loss category {key!r}") from None
            if cat > 1.0:  # percentages
                cat = cat / 100.0
            cat = round(cat, 6)
            if cat not in channel.RATE_CATEGORIES:
                raise ConfigError(f"loss rate {key!r} is not one of {sorted(channel.RATE_CATEGORIES)} or 'markov'")
        if w < 0:
            raise ConfigError(f"negative mix weight for {key!r}")
        out[cat] = out.get(cat, 0.0) + float(w)
    total = sum(out.values())
    if total <= 0:
        raise ConfigError("loss mix has no positive weight")
    return {k: v / total for k, v in out.items()}


def default_mix():
    mix = {str(rate): 1.0 for rate in channel.RATE_CATEGORIES}
    mix[MARKOV] = 1.0
    return mix


@dataclass(frozen=True)
class DataConfig:
    paths: tuple = ()
    n_clips: int = 8
    seconds: float = 2.0
    synthetic_seed: int = 1234

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if self.n_clips < 1 or self.seconds <= 0:
            raise ConfigError("data needs n_clips >= 1 and seconds > 0")


@dataclass(frozen=True)
class RunConfig:
    scheme: TrainScheme
    seed: int = 0
    epochs: int = 60
    steps: int = None
    batch_size: int = 8
    lr_g: float = 4e-4
    lr_d: float = 4e-4
    lr_decay: float = 0.999
    grad_clip: float = 5.0
    crop_frames: int = 80
    loss_mix: dict = field(default_factory=default_mix)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    pretrained: str = None
    fresh_decoder: bool = False
    multistage_split: float = 0.5
    out_dir: str = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be positive when given")
        if self.crop_frames < FRAMES_PER_PACKET or self.crop_frames % FRAMES_PER_PACKET:
            raise ConfigError(f"crop_frames must be a positive multiple of {FRAMES_PER_PACKET}")
        if not 0.0 < self.multistage_split < 1.0:
            raise ConfigError("multistage_split must lie in (0, 1)")
        if self.lr_g <= 0 or self.lr_d <= 0 or not 0 < self.lr_decay <= 1:
            raise ConfigError("learning rates must be positive and lr_decay in (0, 1]")
        _parse_mix(self.loss_mix)

    @property
    def mix(self):
        return _parse_mix(self.loss_mix)

    def model_config(self):
        """The model config with the FD-PLC stack switched per scheme."""
        d = self.model.to_dict()
        d["use_fdplc"] = self.scheme.has_fdplc
        return ModelConfig.from_dict(d)

    def resolved_out_dir(self):
        return Path(self.out_dir or os.path.join("runs", self.scheme.name.lower()))

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scheme"] = self.scheme.name
        d["data"] = asdict(self.data)
        d["data"]["paths"] = list(self.data.paths)
        d["model"] = self.model.to_dict()
        d["weights"] = asdict(self.weights)
        d["loss_mix"] = {str(k): v for k, v in self.loss_mix.items()}
        return d

    @classmethod
    def from_dict(cls, d, env=None):
        d = dict(d)
        env = os.environ if env is None else env
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run-config keys {sorted(unknown)}")
        if "scheme" not in d:
            raise ConfigError("run-config needs a 'scheme'")
        d["scheme"] = TrainScheme.parse(d["scheme"])
        try:
            d["data"] = DataConfig(**d.get("data", {}))
            d["weights"] = LossWeights(**d.get("weights", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        seed = seed_override(env)
        if seed is not None:
            d["seed"] = seed
        for key in ("seed", "epochs", "batch_size", "crop_frames"):
            if key in d and not isinstance(d[key], int):
                raise ConfigError(f"{key} must be an integer")
        return cls(**d)

    @classmethod
    def load(cls, path, env=None):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: run-config must be a JSON object")
        return cls.from_dict(raw, env)


def seed_override(env=None):
    env = os.environ if env is None else env
    raw = env.get("FDPLC_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"FDPLC_SEED must be an integer, got {raw!r}") from None


# -- loss-simulated batches ------------------------------------------------------------------
def make_balanced_frame_set(mask, seed):
    """All lost frames plus an equal number of uniformly drawn received frames."""
    mask = np.asarray(mask, dtype=bool)
    T = mask.shape[0]
    if T == 0:
        raise ContractError("cannot build a frame set for an empty mask")
    rng = np.random.default_rng(seed)
    lost = np.flatnonzero(mask)
    received = np.flatnonzero(~mask)
    n_pick = min(T, 16) if lost.size == 0 else min(lost.size, received.size)
    picked = rng.choice(received, size=n_pick, replace=False) if n_pick else np.empty(0, dtype=np.int64)
    return BalancedFrameSet(np.sort(np.concatenate([lost, picked])), int(lost.size), int(n_pick))


@dataclass
class BatchItem:
    x: np.ndarray
    trace: channel.PacketTrace
    mask: np.ndarray
    category: object


_MARKOV_CHANNEL = channel.MarkovChannel()


def draw_trace(category, n_packets, seed):
    if category == MARKOV:
        return channel.gen_markov_trace(_MARKOV_CHANNEL, n_packets, seed)
    return channel.gen_random_trace(category, channel.RATE_CATEGORIES[category], n_packets, seed)


def synthesize_batch(clips, loss_mix, seed):
    """Pair every clip with a fresh trace from a category drawn per ``loss_mix``."""
    if len(clips) == 0:
        raise DataError("cannot synthesize a batch from an empty dataset")
    mix = _parse_mix(loss_mix)
    cats = list(mix)
    probs = np.array([mix[c] for c in cats])
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(cats), size=len(clips), p=probs)
    trace_seeds = rng.integers(0, 2**63 - 1, size=len(clips))
    items = []
    for clip, k, ts in zip(clips, picks, trace_seeds):
        x = clip.samples if isinstance(clip, dsp.AudioClip) else np.asarray(clip)
        n_frames = dsp.CODEC_GRID.n_frames(x.shape[-1])
        if n_frames < 1:
            raise DataError(f"clip of {x.shape[-1]} samples is shorter than one analysis window")
        n_packets = -(-n_frames // FRAMES_PER_PACKET)
        trace = draw_trace(cats[k], n_packets, int(ts))
        items.append(BatchItem(x, trace, channel.frame_mask(trace, n_frames), cats[k]))
    return items


# -- bookkeeping ----------------------------------------------------------------------
def hash_parameters(module):
    h = hashlib.sha256()
    for name, p in module.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def lr_after_epochs(base_lr, decay, epochs):
    return base_lr * decay ** epochs


@dataclass
class TrainResult:
    checkpoint: Path
    losses_csv: Path
    rows: list
    frozen_hashes: dict
    model: object = None
    discriminators: object = None
    d_optimizer: object = None


def load_clips(cfg):
    if cfg.data.paths:
        return data.load_corpus(cfg.data.paths, cfg.data.n_clips, cfg.data.seconds)
    return data.synthetic_corpus(cfg.data.n_clips, cfg.data.seconds, cfg.data.synthetic_seed)


def _crop_samples(crop_frames):
    return backbone.output_length(crop_frames)


def load_pretrained(model, path, fresh_decoder=False):
    if path is None or not Path(path).is_file():
        raise DependencyError(f"this scheme needs an ERROR_FREE checkpoint; {path!r} not found")
    state, meta = load_checkpoint(path)
    wanted = {k: v for k, v in model.state_dict().items() if not k.startswith("fdplc.")}
    if fresh_decoder:
        wanted = {k: v for k, v in wanted.items() if not k.startswith("decoder.")}
    subset = {k: state[k] for k in wanted if k in state}
    check_topology_subset(wanted, subset)
    model.load_state_dict({**model.state_dict(), **subset})
    return meta


def check_topology_subset(wanted, state):
    from .errors import CheckpointError

    for k, v in wanted.items():
        if k not in state:
            raise CheckpointError(f"pretrained checkpoint lacks {k}")
        if np.shape(state[k]) != np.shape(v):
            raise CheckpointError(f"pretrained {k} has shape {np.shape(state[k])}, expected {np.shape(v)}")


class _Trainer:
    def __init__(self, cfg, clips=None, log=None):
        self.cfg = cfg
        self.scheme = cfg.scheme
        self.log = log or (lambda msg: None)
        self.clips = clips if clips is not None else load_clips(cfg)
        if not self.clips:
            raise DataError("training needs at least one clip")
        self.crop_frames = cfg.crop_frames
        self.crop_len = _crop_samples(self.crop_frames)
        self.clip_frames = [dsp.CODEC_GRID.n_frames(len(c)) for c in self.clips]
        if min(self.clip_frames) < self.crop_frames:
            raise DataError(f"clips must hold at least {self.crop_len} samples for {self.crop_frames}-frame crops")
        self.model = build_model(cfg.model_config(), cfg.seed)
        self.weights = self.scheme.weights(cfg.weights)
        self.pretrained_meta = None
        pretrained = cfg.pretrained
        if self.scheme.requires_pretrained or (pretrained and self.scheme.kind is not SchemeKind.FDPLC_END2END
                                               and self.scheme.kind is not SchemeKind.ERROR_FREE):
            self.pretrained_meta = load_pretrained(self.model, pretrained, cfg.fresh_decoder)
        self.disc = None
        if self.scheme.use_gan:
            self.disc = Discriminators(np.random.default_rng([cfg.seed, 1])).astype(self.model.dtype)
        n = len(self.clips)
        self.steps_per_epoch = -(-n // min(cfg.batch_size, n))
        self.total_steps = cfg.steps if cfg.steps is not None else cfg.epochs * self.steps_per_epoch
        self.phase1_steps = int(round(cfg.multistage_split * self.total_steps)) \
            if self.scheme.kind is SchemeKind.FDPLC_MULTISTAGE else 0
        self.targets = None

    # -- setup --------------------------------------------------------------------
    def _group_params(self, groups):
        out = []
        for g, module in self.model.module_groups().items():
            if g in groups:
                out.extend((f"{g}.{n}", p) for n, p in module.named_parameters())
        return out

    def _make_g_optimizer(self, phase):
        frozen = self.scheme.frozen(phase)
        for g, module in self.model.module_groups().items():
            module.requires_grad_(g not in frozen)
        trainable = self._group_params(set(self.model.module_groups()) - frozen)
        return Adam(trainable, lr=self.cfg.lr_g, lr_decay_per_epoch=self.cfg.lr_decay), frozen

    def _frozen_hashes(self, frozen):
        groups = self.model.module_groups()
        return {g: hash_parameters(groups[g]) for g in sorted(frozen)}

    def _kmeans_init(self):
        rng = np.random.default_rng([self.cfg.seed, 2])
        with no_grad():
            sf = []
            for clip in self.clips:
                lat = self.model.encode(clip.samples.astype(self.model.dtype)).frames
                sf.append(self.model.vq.superframes(lat)[0].data.reshape(-1, lat.shape[-1] * FRAMES_PER_PACKET))
        self.model.vq.kmeans_init(np.concatenate(sf), rng)

    def _precompute_targets(self):
        """Quantized full-clip features ``X^Q`` from the frozen encoder and codebooks."""
        with no_grad():
            self.targets = [self.model.quantize(self.model.encode(c.samples.astype(self.model.dtype))).quantized.data[0]
                            for c in self.clips]

    # -- one step ---------------------------------------------------------------------
    def _batch(self, step):
        cfg = self.cfg
        rng = np.random.default_rng([cfg.seed, 3, step])
        epoch, pos = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng([cfg.seed, 4, epoch]).permutation(len(self.clips))
        bs = min(cfg.batch_size, len(self.clips))
        idx = order[pos * bs:(pos + 1) * bs]
        starts = []
        for i in idx:
            n_sf = (self.clip_frames[i] - self.crop_frames) // FRAMES_PER_PACKET + 1
            starts.append(int(rng.integers(0, n_sf)) * FRAMES_PER_PACKET)
        xs = np.stack([self.clips[i].samples[s * dsp.CODEC_GRID.hop_samples:
                                             s * dsp.CODEC_GRID.hop_samples + self.crop_len]
                       for i, s in zip(idx, starts)]).astype(self.model.dtype)
        if self.scheme.simulate_loss:
            items = synthesize_batch(list(xs), cfg.mix, int(rng.integers(2**63 - 1)))
            mask = np.stack([it.mask for it in items])
        else:
            mask = np.zeros((len(idx), self.crop_frames), dtype=bool)
        sets = [make_balanced_frame_set(m, int(s)) for m, s in zip(mask, rng.integers(0, 2**63 - 1, size=len(idx)))]
        return idx, starts, xs, mask, sets

    def _features(self, idx, starts, xs):
        """Quantized crop features plus VQ auxiliary loss (None when frozen) and the L_plc target."""
        if self.targets is not None:
            xq = np.stack([self.targets[i][s:s + self.crop_frames] for i, s in zip(idx, starts)])
            return Tensor(xq), None, xq
        spec = backbone.compress_spectrum(xs, self.model.cfg.backbone.compression).astype(self.model.dtype)
        res = self.model.vq.quantize(self.model.encoder(Tensor(spec)))
        return res.quantized, res.codebook_loss + res.commitment_loss, res.quantized.data

    def _finite(self, step, comps):
        bad = {k: float(v) for k, v in comps.items() if not math.isfinite(float(v))}
        if bad:
            out = self.cfg.resolved_out_dir()
            out.mkdir(parents=True, exist_ok=True)
            dump = out / f"nonfinite_step{step}.json"
            dump.write_text(json.dumps({"step": step, "components": {k: float(v) for k, v in comps.items()}},
                                       indent=2, default=str))
            raise NumericalError(f"non-finite loss components {sorted(bad)} at step {step}; dump at {dump}")

    def step(self, step, g_opt, d_opt, phase):
        idx, starts, xs, mask, sets = self._batch(step)
        weights = self.weights
        plc_only = phase == 1
        xq, vq_aux, target = self._features(idx, starts, xs)
        comps = {}
        if self.scheme.simulate_loss:
            keep = Tensor((~mask)[..., None].astype(xq.dtype))
            lossy = xq * keep
        else:
            lossy = xq
        feats = self.model.conceal(lossy, mask) if self.model.fdplc is not None else lossy
        if self.model.fdplc is not None and weights.effective()["plc"] > 0:
            comps["plc"] = ganloss.loss_plc(target, feats, sets)
        fake = None
        d_outputs = None
        if not plc_only:
            fake = self.model.decode(feats, self.crop_len)
            comps["bin"] = ganloss.loss_bin(xs, fake)
            comps["mel"] = ganloss.loss_mel(xs, fake)
            if self.disc is not None:
                # one discriminator pass serves both updates: D is untouched by the
                # generator step, and the generator sees D through a leaf on the decoded signal
                fake_leaf = Tensor(fake.data, requires_grad=True)
                real_out = self.disc(xs)
                fake_out = self.disc(fake_leaf)
                d_outputs = (real_out, fake_out)
                comps["adv"] = ganloss.loss_adv_g(fake_out, weights.non_saturating)
                real_f = [o.features for o in real_out]
                fake_f = [o.features for o in fake_out]
                if weights.fm_single_discriminator:
                    real_f, fake_f = real_f[:1], fake_f[:1]
                comps["fm"] = ganloss.loss_fm(real_f, fake_f)
        w = weights.with_switches(bin=0.0, mel=0.0) if plc_only else weights
        eff = w.effective()
        total = ganloss.loss_total(comps, w)
        if vq_aux is not None:
            comps["vq"] = vq_aux
            total = total + vq_aux
        values = {k: float(v.data) for k, v in comps.items()}
        values["total"] = float(total.data)
        self._finite(step, values)
        g_opt.zero_grad()
        if d_outputs is not None:
            adv_part = ganloss.loss_total({"adv": comps["adv"], "fm": comps["fm"]}, w)
            if eff["adv"] or eff["fm"]:
                adv_part.backward()
            rest = ganloss.loss_total({k: v for k, v in comps.items() if k not in ("adv", "fm")}, w)
            if vq_aux is not None:
                rest = rest + vq_aux
            if fake_leaf.grad is not None:
                rest = rest + (fake * Tensor(fake_leaf.grad)).sum()
            rest.backward()
        else:
            total.backward()
        self._clip(step, "generator", [p for _, p in g_opt.params])
        g_opt.step()
        if d_outputs is not None:
            d_loss = ganloss.loss_adv_d(*d_outputs)
            values["adv_d"] = float(d_loss.data)
            self._finite(step, values)
            d_opt.zero_grad()
            d_loss.backward()
            self._clip(step, "discriminator", [p for _, p in d_opt.params])
            d_opt.step()
        return values

    def _clip(self, step, who, params):
        norm = clip_grad_norm(params, self.cfg.grad_clip)
        if not math.isfinite(norm):
            raise GradError(f"non-finite {who} gradient norm at step {step}")
        if norm > self.cfg.grad_clip:
            self.log(f"step {step}: clipped {who} gradient norm {norm:.3g} -> {self.cfg.grad_clip}")

    # -- loop -------------------------------------------------------------------------
    def run(self):
        cfg = self.cfg
        if self.scheme.kind in {SchemeKind.ERROR_FREE, SchemeKind.FDPLC_END2END} or (
                self.pretrained_meta is None and not self.scheme.requires_pretrained):
            self._kmeans_init()
        phase = 1 if self.phase1_steps else 2
        g_opt, frozen = self._make_g_optimizer(phase)
        if {"encoder", "codebooks"} <= frozen:
            self._precompute_targets()
        d_opt = None
        if self.disc is not None:
            d_opt = Adam(self.disc.named_parameters(), lr=cfg.lr_d, lr_decay_per_epoch=cfg.lr_decay)
        hashes = self._frozen_hashes(frozen)
        initial_hashes = dict(hashes)
        rows = []
        for step in range(self.total_steps):
            if phase == 1 and step == self.phase1_steps:
                phase = 2
                epoch = g_opt.epoch
                g_opt, frozen = self._make_g_optimizer(phase)
                g_opt.epoch = epoch
                hashes = self._frozen_hashes(frozen)
            values = self.step(step, g_opt, d_opt, phase)
            rows.append(self._row(step, values))
            if (step + 1) % self.steps_per_epoch == 0:
                g_opt.end_epoch()
                if d_opt is not None:
                    d_opt.end_epoch()
                now = self._frozen_hashes(frozen)
                if now != hashes:
                    changed = sorted(g for g in now if now[g] != hashes[g])
                    raise ContractError(f"frozen parameters changed during training: {changed}")
            if step % 50 == 0 or step == self.total_steps - 1:
                self.log(f"step {step}: " + " ".join(f"{k}={v:.4g}" for k, v in values.items()))
        return rows, initial_hashes, d_opt

    @staticmethod
    def _row(step, values):
        names = {"L_plc": "plc", "L_bin": "bin", "L_mel": "mel", "L_adv_g": "adv", "L_adv_d": "adv_d",
                 "L_fm": "fm", "total": "total"}
        return {"step": step, **{col: values.get(key, 0.0) for col, key in names.items()}}


def write_losses_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in CSV_COLUMNS})


def read_losses_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def checkpoint_metadata(cfg, model):
    return {
        "format": "fdplc-model",
        "scheme": cfg.scheme.name,
        "model": model.cfg.to_dict(),
        "run_config": cfg.to_dict(),
    }


def train(scheme, cfg, clips=None, log=None):
    """Train ``scheme`` under ``cfg``; writes the checkpoint and the loss-curve CSV into ``cfg.out_dir``."""
    scheme = TrainScheme.parse(scheme)
    if scheme != cfg.scheme:
        cfg = RunConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, "scheme": scheme})
    trainer = _Trainer(cfg, clips=clips, log=log)
    rows, hashes, d_opt = trainer.run()
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / CHECKPOINT_NAME
    save_checkpoint(ckpt, trainer.model.state_dict(), checkpoint_metadata(cfg, trainer.model))
    csv_path = out / LOSSES_NAME
    write_losses_csv(csv_path, rows)
    return TrainResult(ckpt, csv_path, rows, hashes, trainer.model, trainer.disc, d_opt)


def load_model(path):
    """Rebuild a model from a checkpoint written by :func:`train`; returns ``(model, metadata)``."""
    state, meta = load_checkpoint(path)
    if meta.get("format") != "fdplc-model":
        from .errors import CheckpointError

        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = ModelConfig.from_dict(meta["model"])
    model = build_model(cfg, 0)
    check_topology(model, state)
    model.load_state_dict(state)
    model.eval()
    return model, meta
