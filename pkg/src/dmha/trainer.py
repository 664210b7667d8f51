"""Speaker-classification training loop.

Adam with L2-coupled weight decay, random fixed-length chunk batches,
plateau-triggered learning-rate annealing, binary checkpoints that
round-trip bit-exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import features as feat
from .model import ModelConfig, SpeakerModel
from . import encoder as enc


@dataclass(frozen=True)
class TrainConfig:
    chunk_frames: int = 350
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-3
    max_epochs: int = 100
    anneal_patience: int = 15
    anneal_factor: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.05
    train_loss_goal: float | None = None  # optional desk-scale early stop

    def __post_init__(self):
        if self.chunk_frames < 16:
            raise ValueError("chunk_frames must be >= 16")
        if not (0 < self.anneal_factor < 1):
            raise ValueError("anneal_factor must be in (0, 1)")
        if self.anneal_patience < 1:
            raise ValueError("anneal_patience must be >= 1")


# ---- dataset ----------------------------------------------------------------


@dataclass(frozen=True)
class Utterance:
    speaker: str
    utt_id: str
    path: str


def load_manifest(path) -> list[Utterance]:
    """Manifest: one line per utterance, "speaker<TAB>utt-id<TAB>wav-path"."""
    utts = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            spk, uid, wav = line.split("\t")
            utts.append(Utterance(spk, uid, wav))
    return utts


class FeatureCache:
    """Lazy per-utterance CMN log-mel features keyed by utterance id."""

    def __init__(self, utterances, fconfig: feat.FeatureConfig):
        self.by_id = {u.utt_id: u for u in utterances}
        self.fconfig = fconfig
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, utt_id: str) -> np.ndarray:
        if utt_id not in self._cache:
            self._cache[utt_id] = feat.utterance_features(
                self.by_id[utt_id].path, self.fconfig)
        return self._cache[utt_id]


# ---- chunking / optimizer ----------------------------------------------------


def sample_chunk(frames: np.ndarray, chunk_frames: int, rng) -> np.ndarray:
    """Random contiguous window of exactly chunk_frames frames; shorter
    utterances are wrap-padded by repetition first."""
    n = len(frames)
    if n >= chunk_frames:
        off = int(rng.integers(0, n - chunk_frames + 1))
        return frames[off:off + chunk_frames]
    reps = -(-(chunk_frames + n) // n)
    tiled = np.concatenate([frames] * reps, axis=0)
    off = int(rng.integers(0, n))
    return tiled[off:off + chunk_frames]


def fixed_chunk(frames: np.ndarray, chunk_frames: int) -> np.ndarray:
    """Deterministic leading window (wrap-padded); used for validation."""
    n = len(frames)
    if n >= chunk_frames:
        return frames[:chunk_frames]
    reps = -(-chunk_frames // n)
    return np.concatenate([frames] * reps, axis=0)[:chunk_frames]


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              weight_decay: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Classic Adam; L2 decay is added to the gradient before the moments."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape "
                f"{p.data.shape} for {name}")
        if weight_decay:
            g = g + weight_decay * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        mhat = state.m[name] / bc1
        vhat = state.v[name] / bc2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


# ---- checkpoint format -------------------------------------------------------

CKPT_MAGIC = b"DMHA"
CKPT_VERSION = 1


def save_checkpoint(path, config: dict, tensors: dict):
    """Little-endian binary: magic, u32 version, length-prefixed UTF-8
    key=value block, then per-tensor records (name, rank, dims, raw f64)."""
    blob = "".join(f"{k}={config[k]}\n" for k in sorted(config)).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a DMHA checkpoint")
        version, = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        clen, = struct.unpack("<I", f.read(4))
        config = {}
        for line in f.read(clen).decode().splitlines():
            k, _, v = line.partition("=")
            config[k] = v
        ntensors, = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(ntensors):
            nlen, = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            rank, = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            count = int(np.prod(dims)) if rank else 1
            tensors[name] = np.frombuffer(
                f.read(8 * count), dtype="<f8").reshape(dims).copy()
    return config, tensors


def model_config_to_dict(mc: ModelConfig) -> dict:
    return {
        "model.base_channels": mc.encoder.base_channels,
        "model.n_mels": mc.encoder.n_mels,
        "model.pooling_kind": mc.pooling_kind,
        "model.num_heads": mc.num_heads,
        "model.hidden": mc.hidden,
        "model.num_speakers": mc.num_speakers,
        "model.s": repr(mc.s),
        "model.m": repr(mc.m),
    }


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        encoder=enc.EncoderConfig(base_channels=int(d["model.base_channels"]),
                                  n_mels=int(d["model.n_mels"])),
        pooling_kind=d["model.pooling_kind"],
        num_heads=int(d["model.num_heads"]),
        hidden=int(d["model.hidden"]),
        num_speakers=int(d["model.num_speakers"]),
        s=float(d["model.s"]),
        m=float(d["model.m"]),
    )


def load_model(path) -> tuple[SpeakerModel, dict]:
    """Rebuild a SpeakerModel (and its meta dict) from a checkpoint."""
    config, tensors = load_checkpoint(path)
    model = SpeakerModel(model_config_from_dict(config), seed=0)
    model.load_state_tensors(tensors)
    return model, config


# ---- training loop -----------------------------------------------------------


@dataclass
class TrainResult:
    best_path: str
    last_path: str
    log_rows: list          # (epoch, train_loss, val_loss, lr)
    anneal_epochs: list
    speakers: list
    epochs_run: int

    @property
    def final_train_loss(self) -> float:
        return self.log_rows[-1][1]


def _epoch_rng(seed: int, epoch: int):
    return np.random.default_rng([seed, zlib.crc32(b"epoch"), epoch])


def _forward_batch(model, batch_mel, labels, training):
    out = model.forward(np.stack(batch_mel), labels=np.asarray(labels),
                        training=training)
    return out["loss"]


def train(tconfig: TrainConfig, dataset: list[Utterance],
          model_config: ModelConfig, out_dir,
          fconfig: feat.FeatureConfig = feat.FeatureConfig(),
          resume=None, step_hook=None) -> TrainResult:
    """Train a speaker classifier; returns paths to best/last checkpoints.

    Deterministic under tconfig.seed: parameter init, the train/val split,
    epoch shuffles and chunk offsets all flow from named sub-streams, and
    epoch streams are keyed by (seed, epoch) so resumed runs replay the
    identical batch sequence.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    speakers = sorted({u.speaker for u in dataset})
    by_speaker: dict[str, list[Utterance]] = {s: [] for s in speakers}
    for u in dataset:
        by_speaker[u.speaker].append(u)
    if len(speakers) < 2 or any(len(v) < 2 for v in by_speaker.values()):
        raise ValueError(
            "degenerate dataset: need >= 2 speakers with >= 2 utterances each")
    if model_config.num_speakers != len(speakers):
        model_config = replace(model_config, num_speakers=len(speakers))
    label_of = {s: i for i, s in enumerate(speakers)}

    # utterance-disjoint validation split, speakers shared
    split_rng = np.random.default_rng([tconfig.seed, zlib.crc32(b"split")])
    train_utts, val_utts = [], []
    for s in speakers:
        utts = sorted(by_speaker[s], key=lambda u: u.utt_id)
        n_val = (max(1, int(round(tconfig.validation_fraction * len(utts))))
                 if tconfig.validation_fraction > 0 else 0)
        n_val = min(n_val, len(utts) - 1)
        picks = set(split_rng.choice(len(utts), size=n_val, replace=False))
        for i, u in enumerate(utts):
            (val_utts if i in picks else train_utts).append(u)

    cache = FeatureCache(dataset, fconfig)
    model = SpeakerModel(model_config, seed=tconfig.seed)
    adam = AdamState()
    lr = tconfig.lr
    best_val = float("inf")
    since_improve = 0
    start_epoch = 1
    best_state = None
    log_rows = []
    anneal_epochs = []

    if resume is not None:
        rc, tensors = load_checkpoint(resume)
        model.load_state_tensors(tensors)
        for name in model.trainable():
            adam.m[name] = tensors["adam.m." + name].copy()
            adam.v[name] = tensors["adam.v." + name].copy()
        adam.t = int(rc["train.step"])
        lr = float(rc["train.lr"])
        best_val = float(rc["train.best_val"])
        since_improve = int(rc["train.since_improve"])
        start_epoch = int(rc["train.epoch"]) + 1

    def meta(epoch):
        d = model_config_to_dict(model.config)
        d.update({
            "train.epoch": epoch,
            "train.step": adam.t,
            "train.lr": repr(lr),
            "train.best_val": repr(best_val),
            "train.since_improve": since_improve,
            "train.seed": tconfig.seed,
            "train.chunk_frames": tconfig.chunk_frames,
            "train.batch_size": tconfig.batch_size,
            "train.weight_decay": repr(tconfig.weight_decay),
            "speakers": ",".join(speakers),
        })
        return d

    def checkpoint_tensors():
        t = model.state_tensors()
        for name in model.trainable():
            t["adam.m." + name] = adam.m.get(
                name, np.zeros_like(model.params[name].data))
            t["adam.v." + name] = adam.v.get(
                name, np.zeros_like(model.params[name].data))
        return t

    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")
    log_path = os.path.join(out_dir, "train_log.csv")

    epoch = start_epoch - 1
    for epoch in range(start_epoch, tconfig.max_epochs + 1):
        rng = _epoch_rng(tconfig.seed, epoch)
        order = rng.permutation(len(train_utts))
        chunks = []
        for i in order:
            u = train_utts[i]
            chunks.append((sample_chunk(cache(u.utt_id),
                                        tconfig.chunk_frames, rng),
                           label_of[u.speaker]))
        losses = []
        step_in_epoch = 0
        for b0 in range(0, len(chunks), tconfig.batch_size):
            batch = chunks[b0:b0 + tconfig.batch_size]
            if len(batch) < 2:
                continue  # batchnorm needs batch >= 2
            mels = [c for c, _ in batch]
            labels = [l for _, l in batch]
            loss = _forward_batch(model, mels, labels, training=True)
            for p in model.params.values():
                p.zero_grad()
            loss.backward()
            grads = {name: p.grad for name, p in model.params.items()
                     if p.grad is not None}
            adam_step(model.params, grads, adam, lr, tconfig.weight_decay)
            losses.append(loss.item())
            step_in_epoch += 1
            if step_hook is not None:
                step_hook(epoch, step_in_epoch, model)
        train_loss = float(np.mean(losses))

        if val_utts:
            import dmha.autodiff as ad
            vlosses = []
            with ad.no_grad():
                for b0 in range(0, len(val_utts), tconfig.batch_size):
                    batch = val_utts[b0:b0 + tconfig.batch_size]
                    mels = [fixed_chunk(cache(u.utt_id), tconfig.chunk_frames)
                            for u in batch]
                    labels = [label_of[u.speaker] for u in batch]
                    loss = _forward_batch(model, mels, labels, training=False)
                    vlosses.append(loss.item() * len(batch))
            val_loss = float(np.sum(vlosses) / len(val_utts))
        else:
            val_loss = train_loss

        log_rows.append((epoch, train_loss, val_loss, lr))

        if val_loss < best_val:
            best_val = val_loss
            since_improve = 0
            best_state = (meta(epoch), checkpoint_tensors())
        else:
            since_improve += 1
            if since_improve >= tconfig.anneal_patience:
                lr *= tconfig.anneal_factor
                anneal_epochs.append(epoch)
                since_improve = 0

        save_checkpoint(last_path, meta(epoch), checkpoint_tensors())
        if tconfig.train_loss_goal is not None and \
                train_loss < tconfig.train_loss_goal:
            break

    if best_state is None:
        best_state = (meta(epoch), checkpoint_tensors())
    save_checkpoint(best_path, *best_state)
    with open(log_path, "w") as f:
        f.write("epoch,train_loss,val_loss,lr\n")
        for e, tl, vl, l in log_rows:
            f.write(f"{e},{tl:.17g},{vl:.17g},{l:.17g}\n")
    return TrainResult(best_path, last_path, log_rows, anneal_epochs,
                       speakers, epochs_run=epoch - start_epoch + 1)
