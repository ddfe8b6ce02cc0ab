import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbse import losses
from sbse.dsp import MelFilterbank, StftConfig, mel_filterbank, phase, stft
from sbse.losses import (
    GeneratorComponents,
    LossWeights,
    MultiMelConfig,
    anti_wrap,
    feature_matching_loss,
    full_report,
    generator_loss,
    hinge_d_loss,
    hinge_g_loss,
    mel_loss,
    mse_loss,
    multi_mel_components,
    multi_mel_loss,
    phase_loss,
)
from sbse.streams import make_rng


@pytest.fixture
def wave():
    return 0.1 * make_rng(0).standard_normal(8000)


def test_mse_examples():
    x = make_rng(1).normal(size=(4, 5)) + 1j
    assert mse_loss(x, x) == 0.0
    assert mse_loss(np.array([[3 + 4j]]), np.array([[0j]])) == 25.0
    with pytest.raises(ValueError):
        mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_mel_loss_hand_computed():
    fb = MelFilterbank(matrix=np.array([[1.0], [0.5]]), centers_hz=np.array([1.0]), f_max=2.0)
    est = np.array([[1.0, 2.0], [3.0, -4.0]])
    ref = np.array([[0.0, 0.0], [1.0, 1.0]])
    # |est| A = [2, 5]; |ref| A = [0, 1.5]; mean |diff| = (2 + 3.5) / 2
    assert mel_loss(est, ref, fb) == pytest.approx(2.75)
    assert mel_loss(est, est, fb) == 0.0


def test_mel_loss_bin_mismatch():
    fb = mel_filterbank(16000, 512, 40)
    with pytest.raises(ValueError):
        mel_loss(np.zeros((3, 513)), np.zeros((3, 513)), fb)


def test_multi_mel_identity_and_decomposition(wave):
    assert multi_mel_loss(wave, wave) == 0.0
    other = wave + 0.01 * make_rng(2).standard_normal(len(wave))
    parts = multi_mel_components(other, wave)
    assert len(parts) == 7
    assert multi_mel_loss(other, wave) == pytest.approx(sum(parts), rel=1e-15)
    assert all(p > 0 for p in parts)


def test_multi_mel_scales():
    stages = MultiMelConfig().stages()
    assert [(c.n_fft, c.hop, fb.n_mels) for c, fb in stages][0] == (32, 8, 5)
    assert [(c.n_fft, fb.n_mels) for c, fb in stages][-1] == (2048, 210)


def test_anti_wrap_grid():
    x = np.linspace(-20, 20, 10_000)
    a = anti_wrap(x)
    np.testing.assert_allclose(anti_wrap(x + 2 * np.pi), a, atol=1e-12)
    np.testing.assert_allclose(anti_wrap(-x), a, atol=1e-12)
    assert a.min() >= 0 and a.max() <= np.pi
    assert anti_wrap(np.pi) == pytest.approx(np.pi)
    assert anti_wrap(0.0) == 0.0


@settings(max_examples=100)
@given(st.floats(-1e3, 1e3), st.integers(-50, 50))
def test_anti_wrap_periodic(x, k):
    assert float(anti_wrap(x + 2 * np.pi * k)) == pytest.approx(float(anti_wrap(x)), abs=1e-9)


def test_phase_loss_examples():
    ref = make_rng(3).uniform(-np.pi, np.pi, (20, 33))
    assert phase_loss(ref, ref) == (0.0, 0.0, 0.0, 0.0)
    assert phase_loss(ref + 2 * np.pi, ref).total == pytest.approx(0.0, abs=1e-12)
    off = phase_loss(ref + 0.5, ref)
    assert off.ip == pytest.approx(0.5, abs=1e-12)
    assert off.gd == pytest.approx(0.0, abs=1e-12)
    assert off.if_ == pytest.approx(0.0, abs=1e-12)


def test_phase_loss_axes():
    ref = np.zeros((4, 6))
    # ramp along frequency only changes group delay, not instantaneous frequency
    est = np.tile(0.3 * np.arange(6), (4, 1))
    pl = phase_loss(est, ref)
    assert pl.gd == pytest.approx(0.3)
    assert pl.if_ == 0.0


def test_hinge_examples():
    assert hinge_d_loss([2, 2], [-2, -2]) == 0.0
    assert hinge_d_loss([0, 0, 0], [0, 0, 0]) == 2.0
    assert hinge_d_loss([1], [-1]) == 0.0
    assert hinge_g_loss([1]) == 0.0
    assert hinge_g_loss([-1]) == 2.0
    assert hinge_g_loss([2, 0]) == 0.5
    with pytest.raises(ValueError):
        hinge_g_loss([])
    with pytest.raises(ValueError):
        hinge_d_loss([1, 2], [1])


def test_feature_matching_examples():
    feats = [[np.ones(3), np.arange(4.0)]]
    assert feature_matching_loss(feats, feats) == 0.0
    assert feature_matching_loss([[np.array([1.0, 2.0])]], [[np.zeros(2)]]) == 1.5
    with pytest.raises(ValueError):
        feature_matching_loss([], [])


def test_generator_loss_weights():
    ones = GeneratorComponents(1, 1, 1, 1, 1)
    assert generator_loss(ones) == 21.11
    assert generator_loss(GeneratorComponents(0, 0, 0, 0, 0)) == 0.0
    zero_w = LossWeights(0, 0, 0, 0)
    assert generator_loss(GeneratorComponents(3.5, 9, 9, 9, 9), zero_w) == 3.5
    with pytest.raises(ValueError):
        generator_loss(GeneratorComponents(1, math.nan, 1, 1, 1))
    with pytest.raises(ValueError):
        LossWeights(lambda_g=-1)


def test_scorers(wave):
    scorers = losses.default_scorers()
    assert len(scorers) == 8
    for s in scorers:
        score, layers = s(wave)
        assert -1 <= score <= 1 and len(layers) >= 2


def test_full_report_identity(wave):
    rep = full_report(wave, wave)
    for key in ("mse", "mel_single", "mel_multi", "phase", "phase_ip", "phase_gd", "phase_if", "feature_matching"):
        assert rep.components[key] == 0.0, key
    # the hinge terms score each waveform on its own, so they need not vanish
    assert rep.total == pytest.approx(10 * rep.components["hinge_g"])


def test_full_report_nonnegative_and_positive_on_difference(wave):
    other = wave + 0.05 * make_rng(4).standard_normal(len(wave))
    rep = full_report(other, wave, mel_mode="single")
    scalars = {k: v for k, v in rep.components.items() if not isinstance(v, list)}
    assert all(v >= 0 for v in scalars.values())
    for key in ("mse", "mel_single", "mel_multi", "phase", "feature_matching"):
        assert scalars[key] > 0
    with pytest.raises(ValueError):
        full_report(wave, wave, mel_mode="both")


def test_full_report_uses_stft_of_waves(wave):
    other = 0.5 * wave
    rep = full_report(other, wave)
    cfg = StftConfig(1024, 256)
    assert rep.components["mse"] == pytest.approx(mse_loss(stft(other, cfg), stft(wave, cfg)))
    expected_phase = phase_loss(phase(stft(other, cfg)), phase(stft(wave, cfg))).total
    assert rep.components["phase"] == pytest.approx(expected_phase, abs=1e-12)
