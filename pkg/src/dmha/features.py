"""Log-mel spectrogram front-end: framing, HTK mel filterbank, CMN."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    win_length: int = 400   # 25 ms
    hop: int = 160          # 10 ms
    n_fft: int = 512
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        if not (self.win_length <= self.n_fft):
            raise ValueError("win_length must be <= n_fft")
        if not (self.hop <= self.win_length):
            raise ValueError("hop must be <= win_length")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.fmax > self.sample_rate / 2:
            raise ValueError("fmax must be <= Nyquist")


def read_wav(path) -> np.ndarray:
    """Read a 16 kHz 16-bit PCM mono RIFF wav into float64 in [-1, 1]."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getframerate() != 16000:
            raise ValueError(f"{path}: expected 16000 Hz, got {wf.getframerate()} Hz "
                             "(no resampling)")
        raw = wf.readframes(wf.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, audio: np.ndarray, sample_rate: int = 16000):
    """Write float audio in [-1, 1] as 16-bit PCM mono."""
    pcm = np.clip(np.round(audio * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def frame_count(num_samples: int, config: FeatureConfig) -> int:
    """Number of analysis frames; no padding of the signal tail."""
    if num_samples < config.win_length:
        raise ValueError(
            f"signal of {num_samples} samples shorter than one window "
            f"({config.win_length} samples)")
    return 1 + (num_samples - config.win_length) // config.hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) on the HTK mel scale."""
    n_bins = config.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * config.sample_rate / config.n_fft
    mel_pts = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                          config.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((config.n_mels, n_bins))
    for i in range(config.n_mels):
        lo, ctr, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        rising = (fft_freqs - lo) / (ctr - lo)
        falling = (hi - fft_freqs) / (hi - ctr)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def filter_centers_hz(config: FeatureConfig) -> np.ndarray:
    mel_pts = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                          config.n_mels + 2)
    return mel_to_hz(mel_pts)[1:-1]


def log_mel(audio: np.ndarray, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """N x n_mels log mel-spectrogram (pre-CMN).

    Hamming window, zero-pad to n_fft, magnitude-squared spectrum, mel
    filterbank, natural log floored at ENERGY_FLOOR.
    """
    audio = np.asarray(audio, dtype=np.float64)
    n = frame_count(len(audio), config)
    idx = (np.arange(config.win_length)[None, :]
           + config.hop * np.arange(n)[:, None])
    frames = audio[idx] * np.hamming(config.win_length)
    spec = np.abs(np.fft.rfft(frames, n=config.n_fft, axis=1)) ** 2
    mel = spec @ mel_filterbank(config).T
    return np.log(np.maximum(mel, ENERGY_FLOOR))


def cmn(m: np.ndarray) -> np.ndarray:
    """Subtract the per-coefficient mean over frames (variance untouched)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[0] < 1:
        raise ValueError("cmn needs at least one frame")
    return m - m.mean(axis=0, keepdims=True)


def utterance_features(path, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """wav path -> CMN-normalized N x n_mels log-mel matrix."""
    return cmn(log_mel(read_wav(path), config))
