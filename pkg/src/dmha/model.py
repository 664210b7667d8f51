"""Full speaker network: features -> encoder -> pooling -> FC head.

Owns parameter initialization (named sub-streams off one seed), forward
passes, embedding extraction, and the flat named-tensor view used by the
optimizer and the checkpoint format.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import encoder as enc
from . import features as feat
from . import head as hd
from . import pooling as pl
from .autodiff import Tensor


def param_rng_factory(seed: int):
    """Named RNG sub-streams: independent of creation order, stable across
    runs and configurations."""

    def make(name: str):
        return np.random.default_rng([seed, zlib.crc32(name.encode())])

    return make


@dataclass(frozen=True)
class ModelConfig:
    encoder: enc.EncoderConfig
    pooling_kind: str = "dmha"
    num_heads: int = 8
    hidden: int = 400
    num_speakers: int = 2
    s: float = 30.0
    m: float = 0.4

    @property
    def hidden_dim(self) -> int:
        return enc.output_dim(self.encoder)

    @property
    def pooled_dim(self) -> int:
        return pl.pooled_dim(self.pooling_kind, self.hidden_dim,
                             self.num_heads)

    @property
    def head(self) -> hd.HeadConfig:
        return hd.HeadConfig(in_dim=self.pooled_dim, hidden=self.hidden,
                             num_speakers=self.num_speakers,
                             s=self.s, m=self.m)


class SpeakerModel:
    """Parameter container plus forward/extract entry points."""

    def __init__(self, config: ModelConfig, seed: int | None = None):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, ad.BatchNormState] = {}
        if seed is not None:
            self._init(seed)

    def _init(self, seed: int):
        rng = param_rng_factory(seed)
        self.params.update(enc.init_params(self.config.encoder, rng))
        pp = pl.init_params(self.config.hidden_dim, self.config.num_heads,
                            self.config.pooling_kind, rng)
        self.params["pool.u"] = pp.u
        if pp.u_prime is not None:
            self.params["pool.u_prime"] = pp.u_prime
        head_params, self.bn_states = hd.init_params(self.config.head, rng)
        self.params.update(head_params)

    @property
    def pooling_params(self) -> pl.PoolingParams:
        return pl.PoolingParams(u=self.params["pool.u"],
                                num_heads=self.config.num_heads,
                                u_prime=self.params.get("pool.u_prime"))

    def trainable(self) -> dict[str, Tensor]:
        return self.params

    def forward(self, mel_batch, labels=None, training: bool = False):
        """mel_batch: (B, N, n_mels) -> dict with embedding, cos_logits,
        pooled context, attention weights, and (if labels given) loss."""
        h = enc.encode(mel_batch, self.params, self.config.encoder)
        c, w, wp = pl.pool(h, self.pooling_params, self.config.pooling_kind)
        emb, cos_logits = hd.head_forward(c, self.params, self.bn_states,
                                          self.config.head, training)
        out = {"embedding": emb, "cos_logits": cos_logits,
               "context": c, "weights": w, "head_weights": wp}
        if labels is not None:
            out["loss"] = hd.am_softmax_loss(cos_logits, labels,
                                             self.config.s, self.config.m)
        return out

    def extract_embedding(self, mel: np.ndarray) -> np.ndarray:
        """Whole-utterance embedding, eval-mode batchnorm, deterministic."""
        n = mel.shape[0]
        if n < 16:
            raise ValueError(
                f"utterance too short: {n} mel frames, need at least 16")
        with ad.no_grad():
            out = self.forward(mel[None], training=False)
        return out["embedding"].data[0].copy()

    def extract_from_wav(self, path,
                         fconfig: feat.FeatureConfig = feat.FeatureConfig()
                         ) -> np.ndarray:
        return self.extract_embedding(feat.utterance_features(path, fconfig))

    # ---- flat named-tensor view (checkpoints, optimizer) -----------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All model state as named float64 arrays (params + BN stats)."""
        out = {name: t.data for name, t in self.params.items()}
        for name, st in self.bn_states.items():
            out[name + ".running_mean"] = st.running_mean
            out[name + ".running_var"] = st.running_var
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]):
        for name, t in self.params.items():
            t.data = np.array(tensors[name], dtype=np.float64)
        for name, st in self.bn_states.items():
            st.running_mean = np.array(tensors[name + ".running_mean"])
            st.running_var = np.array(tensors[name + ".running_var"])


# ---- embedding file format -------------------------------------------------


def write_embeddings(path, embeddings: dict[str, np.ndarray]):
    """Text format: header "dim=<d> count=<n>", then one utterance per line
    with 17-significant-digit floats."""
    items = list(embeddings.items())
    dim = len(items[0][1]) if items else 0
    with open(path, "w") as f:
        f.write(f"dim={dim} count={len(items)}\n")
        for uid, e in items:
            f.write(uid + " " + " ".join(f"{v:.17g}" for v in e) + "\n")


def read_embeddings(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        header = f.readline().split()
        dim = int(header[0].split("=")[1])
        count = int(header[1].split("=")[1])
        out = {}
        for line in f:
            parts = line.split()
            out[parts[0]] = np.array([float(v) for v in parts[1:]])
            if len(out[parts[0]]) != dim:
                raise ValueError(f"bad embedding dim for {parts[0]}")
    if len(out) != count:
        raise ValueError(f"embedding file header says {count}, found {len(out)}")
    return out
