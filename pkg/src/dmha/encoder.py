"""VGG-style convolutional front-end: 4 x (conv-conv-maxpool) then flatten.

Maps an N x n_mels spectrogram to a T x D sequence where T is N after four
floor-halvings and D = M * D' (final channels times final frequency extent).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 128   # block plan 1->c, c->2c, 2c->4c, 4c->8c
    n_mels: int = 80

    @property
    def channel_plan(self):
        c = self.base_channels
        return ((1, c), (c, 2 * c), (2 * c, 4 * c), (4 * c, 8 * c))

    @property
    def final_channels(self) -> int:
        return 8 * self.base_channels

    @property
    def final_freq(self) -> int:
        if self.n_mels % 16 != 0:
            raise ValueError(f"n_mels must be divisible by 16, got {self.n_mels}")
        return self.n_mels // 16


def output_dim(config: EncoderConfig) -> int:
    """Hidden state dimension D = M * D'."""
    return config.final_channels * config.final_freq


def output_frames(n: int) -> int:
    """Time extent after the four 2x2 maxpools (floor at each stage)."""
    for _ in range(4):
        n //= 2
    return n


def init_params(config: EncoderConfig, param_rng) -> dict:
    """He-normal conv weights, zero biases. param_rng(name) -> Generator."""
    params = {}
    for b, (cin, cout) in enumerate(config.channel_plan, start=1):
        for k, ci in ((1, cin), (2, cout)):
            name = f"enc.b{b}.conv{k}"
            fan_in = ci * 9
            rng = param_rng(name + ".w")
            params[name + ".w"] = Tensor(
                rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, ci, 3, 3)),
                requires_grad=True)
            params[name + ".b"] = Tensor(np.zeros(cout), requires_grad=True)
    return params


def encode(mel, params: dict, config: EncoderConfig) -> Tensor:
    """Forward the encoder; mel is (N, n_mels) or (B, N, n_mels).

    Returns h as (T, D) or (B, T, D); flatten is channel-major (channel
    index varies slowest).
    """
    x = mel if isinstance(mel, Tensor) else Tensor(mel)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    B, N, F = x.shape
    if F != config.n_mels:
        raise ValueError(f"expected {config.n_mels} mel bins, got {F}")
    if N < 16:
        raise ValueError(
            f"utterance too short for 16x downsampling: {N} frames < 16")
    x = x.reshape((B, 1, N, F))
    for b in range(1, 5):
        for k in (1, 2):
            x = ad.relu(ad.conv2d_same(x, params[f"enc.b{b}.conv{k}.w"],
                                       params[f"enc.b{b}.conv{k}.b"]))
        x = ad.maxpool2x2(x)
    # (B, M, T, D') -> (B, T, M, D') -> (B, T, M*D'), channel-major
    x = x.transpose(0, 2, 1, 3)
    h = x.reshape((B, x.shape[1], x.shape[2] * x.shape[3]))
    return h[0] if squeeze else h
