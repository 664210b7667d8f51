"""Log-mel front-end: framing arithmetic, filterbank geometry, CMN."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmha import features as ft


CFG = ft.FeatureConfig()


def test_frame_count_examples():
    assert ft.frame_count(400, CFG) == 1
    assert ft.frame_count(560, CFG) == 2
    assert ft.frame_count(16000, CFG) == 98  # 1 + (16000-400)//160


def test_frame_count_too_short_rejected():
    with pytest.raises(ValueError):
        ft.frame_count(399, CFG)


def test_silence_hits_energy_floor():
    out = ft.log_mel(np.zeros(800), CFG)
    np.testing.assert_array_equal(out, np.full_like(out, np.log(1e-10)))


def test_log_mel_shape_contract():
    for n in (400, 1000, 16000):
        out = ft.log_mel(np.random.default_rng(0).standard_normal(n) * 0.1,
                         CFG)
        assert out.shape == (ft.frame_count(n, CFG), CFG.n_mels)


def test_pure_tone_lands_in_bracketing_filter():
    t = np.arange(16000) / CFG.sample_rate
    tone = 0.5 * np.sin(2 * np.pi * 1000.0 * t)
    mel = ft.log_mel(tone, CFG)
    centers = ft.filter_centers_hz(CFG)
    peak_bin = int(np.argmax(mel.mean(axis=0)))
    # the winning filter's triangle must actually cover 1 kHz
    mel_pts = ft.mel_to_hz(np.linspace(ft.hz_to_mel(CFG.fmin),
                                       ft.hz_to_mel(CFG.fmax),
                                       CFG.n_mels + 2))
    lo, hi = mel_pts[peak_bin], mel_pts[peak_bin + 2]
    assert lo < 1000.0 < hi
    # and its center is the closest-to-1kHz center within one filter width
    assert abs(centers[peak_bin] - 1000.0) <= (hi - lo)


def test_flat_spectrum_reproduces_filter_row_sums():
    fb = ft.mel_filterbank(CFG)
    flat = np.ones(CFG.n_fft // 2 + 1)
    np.testing.assert_allclose(fb @ flat, fb.sum(axis=1), atol=1e-12)


def test_filterbank_geometry():
    fb = ft.mel_filterbank(CFG)
    assert (fb >= 0).all()
    # adjacent triangles overlap: filter i ends at the center of filter i+1's
    # right neighbor, past filter i+1's start (checked on the continuous
    # edges; at low frequencies the triangles are narrower than one FFT bin)
    mel_pts = ft.mel_to_hz(np.linspace(ft.hz_to_mel(CFG.fmin),
                                       ft.hz_to_mel(CFG.fmax),
                                       CFG.n_mels + 2))
    for i in range(CFG.n_mels - 1):
        hi_i, lo_next = mel_pts[i + 2], mel_pts[i + 1]
        assert hi_i > lo_next
    # every FFT bin strictly inside (fmin, fmax) touches >= 1 filter
    freqs = np.arange(CFG.n_fft // 2 + 1) * CFG.sample_rate / CFG.n_fft
    centers = ft.filter_centers_hz(CFG)
    inside = (freqs > centers[0]) & (freqs < centers[-1])
    assert (fb.sum(axis=0)[inside] > 0).all()


def test_mel_scale_is_htk():
    assert ft.hz_to_mel(0.0) == 0.0
    np.testing.assert_allclose(ft.hz_to_mel(700.0), 2595.0 * np.log10(2.0))
    np.testing.assert_allclose(ft.mel_to_hz(ft.hz_to_mel(1234.5)), 1234.5)


def test_cmn_constant_and_single_frame():
    np.testing.assert_array_equal(ft.cmn(np.full((4, 3), 2.5)),
                                  np.zeros((4, 3)))
    np.testing.assert_array_equal(ft.cmn(np.ones((1, 3))), np.zeros((1, 3)))


def test_cmn_zero_column_means(rng):
    out = ft.cmn(rng.standard_normal((5, 8)))
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_cmn_idempotent(seed):
    x = np.random.default_rng(seed).standard_normal((6, 4))
    once = ft.cmn(x)
    np.testing.assert_allclose(ft.cmn(once), once, atol=1e-12)


def test_cmn_preserves_variance(rng):
    x = rng.standard_normal((20, 4)) * 3.0 + 1.0
    np.testing.assert_allclose(ft.cmn(x).var(axis=0), x.var(axis=0),
                               atol=1e-12)


def test_wav_round_trip(tmp_path, rng):
    audio = np.clip(rng.standard_normal(1600) * 0.1, -1, 1)
    path = tmp_path / "x.wav"
    ft.write_wav(path, audio)
    back = ft.read_wav(path)
    assert back.shape == audio.shape
    np.testing.assert_allclose(back, audio, atol=1.0 / 32767.0)


def test_read_wav_rejects_wrong_rate(tmp_path, rng):
    path = tmp_path / "bad.wav"
    ft.write_wav(path, rng.standard_normal(800) * 0.1, sample_rate=8000)
    with pytest.raises(ValueError, match="16000"):
        ft.read_wav(path)


def test_feature_config_validation():
    with pytest.raises(ValueError):
        ft.FeatureConfig(win_length=600, n_fft=512)
    with pytest.raises(ValueError):
        ft.FeatureConfig(fmax=9000.0)
