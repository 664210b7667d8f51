"""Flat run configuration: one "key = value" text format everywhere,
CLI flags overriding file values."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .encoder import EncoderConfig, output_dim
from .features import FeatureConfig
from .model import ModelConfig
from .pooling import POOLING_KINDS, pooled_dim
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # features
    sample_rate: int = 16000
    win_length: int = 400
    hop: int = 160
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    # encoder
    base_channels: int = 128
    # pooling
    pooling: str = "dmha"
    heads: int = 8
    # head
    hidden: int = 400
    s: float = 30.0
    m: float = 0.4
    # trainer
    chunk_frames: int = 350
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-3
    max_epochs: int = 100
    anneal_patience: int = 15
    anneal_factor: float = 0.5
    validation_fraction: float = 0.05
    seed: int = 0
    train_loss_goal: float = float("nan")  # NaN = disabled

    def validate(self) -> "RunConfig":
        if self.pooling not in POOLING_KINDS:
            raise ValueError(f"unknown pooling {self.pooling!r}; "
                             f"choose from {POOLING_KINDS}")
        d = output_dim(self.encoder_config())
        pooled_dim(self.pooling, d, self.heads)  # raises if K does not divide D
        if self.pooling == "attention" and self.heads != 1:
            raise ValueError("attention pooling requires heads=1")
        self.feature_config()
        return self

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(sample_rate=self.sample_rate,
                             win_length=self.win_length, hop=self.hop,
                             n_fft=self.n_fft, n_mels=self.n_mels,
                             fmin=self.fmin, fmax=self.fmax)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(base_channels=self.base_channels,
                             n_mels=self.n_mels)

    def model_config(self, num_speakers: int = 2) -> ModelConfig:
        return ModelConfig(encoder=self.encoder_config(),
                           pooling_kind=self.pooling, num_heads=self.heads,
                           hidden=self.hidden, num_speakers=num_speakers,
                           s=self.s, m=self.m)

    def train_config(self) -> TrainConfig:
        goal = None if self.train_loss_goal != self.train_loss_goal \
            else self.train_loss_goal
        return TrainConfig(chunk_frames=self.chunk_frames,
                           batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay,
                           max_epochs=self.max_epochs,
                           anneal_patience=self.anneal_patience,
                           anneal_factor=self.anneal_factor,
                           seed=self.seed,
                           validation_fraction=self.validation_fraction,
                           train_loss_goal=goal)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {name!r}")
    ftype = _FIELD_TYPES[name]
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    """Read "key = value" lines; '#' starts a comment; blank lines ignored."""
    overrides = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            overrides[key] = _parse_value(key, raw)
    return RunConfig(**overrides)


def apply_overrides(cfg: RunConfig, **kwargs) -> RunConfig:
    updates = {k: v for k, v in kwargs.items() if v is not None}
    return replace(cfg, **updates) if updates else cfg
