"""Generator and discriminator objectives for bridge-based enhancement.

Reconstruction terms work on complex spectrograms ``(L, F)`` or waveforms;
adversarial terms work on the outputs of *scorers*. A scorer is any callable
``waveform -> (score, [layer features...])`` standing in for one
sub-discriminator. Two deterministic families are built in: period-folded
energy scorers and multi-resolution magnitude scorers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from sbse.dsp import DEFAULT_SAMPLE_RATE, MelFilterbank, StftConfig, mel_filterbank, mpd_reshape, phase, stft

Scorer = Callable[[np.ndarray], tuple]

TWO_PI = 2.0 * math.pi

MULTI_MEL_SCALES = ((32, 5), (64, 10), (128, 20), (256, 40), (512, 80), (1024, 160), (2048, 210))
MPD_PERIODS = (2, 3, 5, 7, 11)
MRSD_RESOLUTIONS = ((512, 128, 512), (1024, 256, 1024), (2048, 512, 2048))


@dataclass(frozen=True)
class LossWeights:
    lambda_mel: float = 0.1
    lambda_p: float = 0.01
    lambda_g: float = 10.0
    lambda_fm: float = 10.0

    def __post_init__(self):
        for name in ("lambda_mel", "lambda_p", "lambda_g", "lambda_fm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse_loss(est_spec, ref_spec) -> float:
    """Mean squared modulus of the complex difference."""
    est, ref = _same_shape(est_spec, ref_spec)
    return float(np.mean(np.abs(est - ref) ** 2))


def mel_spectrogram(spec, filterbank: MelFilterbank) -> np.ndarray:
    spec = np.asarray(spec)
    if spec.shape[-1] != filterbank.matrix.shape[0]:
        raise ValueError(f"filterbank expects {filterbank.matrix.shape[0]} bins, got {spec.shape[-1]}")
    return np.abs(spec) @ filterbank.matrix


def mel_loss(est_spec, ref_spec, filterbank: MelFilterbank) -> float:
    """Mean absolute error between ``|X| A`` mel spectrograms."""
    est, ref = _same_shape(est_spec, ref_spec)
    return float(np.mean(np.abs(mel_spectrogram(est, filterbank) - mel_spectrogram(ref, filterbank))))


@dataclass(frozen=True)
class MultiMelConfig:
    scales: tuple = MULTI_MEL_SCALES
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def stages(self):
        """``(StftConfig, MelFilterbank)`` per scale; window = n_fft, hop = n_fft / 4."""
        return [
            (StftConfig(n_fft, n_fft // 4), mel_filterbank(self.sample_rate, n_fft, n_mels))
            for n_fft, n_mels in self.scales
        ]


def multi_mel_components(est_wave, ref_wave, config: MultiMelConfig = MultiMelConfig()) -> list[float]:
    est, ref = np.asarray(est_wave, dtype=np.float64), np.asarray(ref_wave, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    return [mel_loss(stft(est, cfg), stft(ref, cfg), fb) for cfg, fb in config.stages()]


def multi_mel_loss(est_wave, ref_wave, config: MultiMelConfig = MultiMelConfig()) -> float:
    """Sum of per-scale mel losses."""
    return float(sum(multi_mel_components(est_wave, ref_wave, config)))


def anti_wrap(x):
    """``|x - 2 pi round(x / 2 pi)|``, the distance to the nearest multiple of 2 pi."""
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x - TWO_PI * np.round(x / TWO_PI))


class PhaseLoss(NamedTuple):
    total: float
    ip: float
    gd: float
    if_: float


def phase_loss(est_phase, ref_phase) -> PhaseLoss:
    """Instantaneous-phase, group-delay and instantaneous-frequency terms.

    Grids are ``(L, F)``. Group delay differences along frequency, the
    instantaneous frequency along time; both are forward differences.
    """
    est, ref = _same_shape(est_phase, ref_phase)
    ip = float(np.mean(anti_wrap(est - ref)))
    gd = float(np.mean(anti_wrap(np.diff(est, axis=1) - np.diff(ref, axis=1)))) if est.shape[1] > 1 else 0.0
    if_ = float(np.mean(anti_wrap(np.diff(est, axis=0) - np.diff(ref, axis=0)))) if est.shape[0] > 1 else 0.0
    return PhaseLoss(ip + gd + if_, ip, gd, if_)


def _scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("need at least one sub-discriminator score")
    return s


def hinge_d_loss(real_scores, fake_scores) -> float:
    real, fake = _scores(real_scores), _scores(fake_scores)
    if real.shape != fake.shape:
        raise ValueError("real and fake score lists differ in length")
    return float(np.mean(np.maximum(0.0, 1.0 - real) + np.maximum(0.0, 1.0 + fake)))


def hinge_g_loss(fake_scores) -> float:
    return float(np.mean(np.maximum(0.0, 1.0 - _scores(fake_scores))))


def feature_matching_loss(est_features, ref_features) -> float:
    """Mean over all (scorer, layer) pairs of the mean absolute feature gap."""
    if len(est_features) != len(ref_features) or not est_features:
        raise ValueError("feature sets must have the same, nonzero, number of scorers")
    terms = []
    for est_layers, ref_layers in zip(est_features, ref_features):
        if len(est_layers) != len(ref_layers):
            raise ValueError("scorers disagree on layer count")
        for fe, fr in zip(est_layers, ref_layers):
            fe, fr = _same_shape(fe, fr)
            terms.append(np.mean(np.abs(fe - fr)))
    if not terms:
        raise ValueError("no feature layers")
    return float(np.mean(terms))


# -- built-in scorers -------------------------------------------------------


@dataclass(frozen=True)
class PeriodEnergyScorer:
    """Folds the waveform by ``period`` and scores its RMS level.

    Layers: the folded grid, per-column RMS, per-row RMS.
    """

    period: int
    ref_rms: float = 0.05

    def __call__(self, wave):
        grid = mpd_reshape(wave, self.period)
        col = np.sqrt(np.mean(grid**2, axis=0))
        row = np.sqrt(np.mean(grid**2, axis=1))
        rms = math.sqrt(float(np.mean(grid**2))) if grid.size else 0.0
        score = math.tanh(math.log((rms + 1e-12) / self.ref_rms))
        return score, [grid, col, row]


@dataclass(frozen=True)
class SpectralScorer:
    """Magnitude spectrogram at one resolution; layers are ``|X|`` and ``log1p |X|``."""

    n_fft: int
    hop: int
    ref_mag: float = 0.5

    def __call__(self, wave):
        mag = np.abs(stft(wave, StftConfig(self.n_fft, self.hop)))
        score = math.tanh(math.log((float(np.mean(mag)) + 1e-12) / self.ref_mag))
        return score, [mag, np.log1p(mag)]


def default_scorers() -> list:
    return [PeriodEnergyScorer(p) for p in MPD_PERIODS] + [SpectralScorer(n, h) for _, h, n in MRSD_RESOLUTIONS]


def adversarial_losses(est_wave, ref_wave, scorers: Sequence[Scorer] | None = None) -> dict:
    scorers = default_scorers() if scorers is None else scorers
    real = [s(ref_wave) for s in scorers]
    fake = [s(est_wave) for s in scorers]
    real_scores = [r[0] for r in real]
    fake_scores = [f[0] for f in fake]
    return {
        "d": hinge_d_loss(real_scores, fake_scores),
        "g": hinge_g_loss(fake_scores),
        "fm": feature_matching_loss([f[1] for f in fake], [r[1] for r in real]),
    }


@dataclass(frozen=True)
class GeneratorComponents:
    mse: float
    mel: float
    phase: float
    g: float
    fm: float


def generator_loss(components: GeneratorComponents, weights: LossWeights = LossWeights()) -> float:
    c = components
    vals = (c.mse, c.mel, c.phase, c.g, c.fm)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite loss component in {components}")
    return (
        c.mse
        + weights.lambda_mel * c.mel
        + weights.lambda_p * c.phase
        + weights.lambda_g * c.g
        + weights.lambda_fm * c.fm
    )


@dataclass
class LossReport:
    components: dict
    total: float
    weights: LossWeights = field(default_factory=LossWeights)


def full_report(
    est_wave,
    ref_wave,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    weights: LossWeights = LossWeights(),
    mel_mode: str = "multi",
    scorers: Sequence[Scorer] | None = None,
) -> LossReport:
    """Every loss term between two waveforms plus the weighted generator total.

    ``mel_mode`` picks the single-scale (1024/160) or the 7-scale mel term
    for the total; both are always reported.
    """
    if mel_mode not in ("multi", "single"):
        raise ValueError(f"mel_mode must be 'multi' or 'single', got {mel_mode!r}")
    est = np.asarray(est_wave, dtype=np.float64)
    ref = np.asarray(ref_wave, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    cfg = StftConfig(1024, 256)
    est_spec, ref_spec = stft(est, cfg), stft(ref, cfg)
    single = mel_loss(est_spec, ref_spec, mel_filterbank(sample_rate, 1024, 160))
    per_scale = multi_mel_components(est, ref, MultiMelConfig(sample_rate=sample_rate))
    ph = phase_loss(phase(est_spec), phase(ref_spec))
    adv = adversarial_losses(est, ref, scorers)
    comps = GeneratorComponents(
        mse=mse_loss(est_spec, ref_spec),
        mel=float(sum(per_scale)) if mel_mode == "multi" else single,
        phase=ph.total,
        g=adv["g"],
        fm=adv["fm"],
    )
    components = {
        "mse": comps.mse,
        "mel_single": single,
        "mel_multi": float(sum(per_scale)),
        "mel_multi_per_scale": per_scale,
        "phase": ph.total,
        "phase_ip": ph.ip,
        "phase_gd": ph.gd,
        "phase_if": ph.if_,
        "hinge_d": adv["d"],
        "hinge_g": adv["g"],
        "feature_matching": adv["fm"],
    }
    return LossReport(components=components, total=generator_loss(comps, weights), weights=weights)
