"""STFT analysis/synthesis, mel filterbanks, phase and waveform I/O.

Spectrograms are laid out frames-by-bins, ``(L, n_fft // 2 + 1)``. Frames
are centered with reflect padding and a periodic Hann window; synthesis is
weighted overlap-add normalized by the summed squared window, which inverts
analysis exactly wherever the normalizer is nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

DEFAULT_SAMPLE_RATE = 16000


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 1024
    hop: int = 256

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must be in (0, n_fft], got {self.hop}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return get_window("hann", self.n_fft, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    n = 1 + (len(x) - n_fft) // hop
    return np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop][:n]


def stft(samples, config: StftConfig = StftConfig()) -> np.ndarray:
    """Complex spectrogram of a 1-D signal, shape ``(L, n_fft // 2 + 1)``."""
    x = np.asarray(samples.samples if isinstance(samples, Waveform) else samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a 1-D signal")
    if len(x) < config.n_fft:
        raise ValueError(f"signal of {len(x)} samples is too short for n_fft={config.n_fft}")
    padded = np.pad(x, config.n_fft // 2, mode="reflect")
    frames = _frames(padded, config.n_fft, config.hop) * config.window
    return np.fft.rfft(frames, axis=-1)


def istft(spec, config: StftConfig = StftConfig(), length: int | None = None) -> np.ndarray:
    """Overlap-add inverse of :func:`stft`; ``length`` trims or zero-pads the output."""
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != config.n_bins:
        raise ValueError(f"expected spectrogram shaped (L, {config.n_bins}), got {spec.shape}")
    n_frames = spec.shape[0]
    win = config.window
    frames = np.fft.irfft(spec, n=config.n_fft, axis=-1) * win
    total = config.n_fft + config.hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    win2 = win * win
    for i in range(n_frames):
        sl = slice(i * config.hop, i * config.hop + config.n_fft)
        out[sl] += frames[i]
        norm[sl] += win2
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    pad = config.n_fft // 2
    out = out[pad:]
    if length is None:
        length = config.hop * (n_frames - 1)
    if len(out) >= length:
        return out[:length]
    return np.pad(out, (0, length - len(out)))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    matrix: np.ndarray
    centers_hz: np.ndarray
    f_max: float

    @property
    def n_mels(self) -> int:
        return self.matrix.shape[1]


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int) -> MelFilterbank:
    """Triangular HTK-mel filters, ``(n_fft // 2 + 1, n_mels)``, peak weight 1.

    Filters are spaced evenly in mel between 0 Hz and Nyquist.
    """
    n_bins = n_fft // 2 + 1
    if sample_rate <= 0 or n_fft < 2 or not 0 < n_mels < n_bins:
        raise ValueError(f"invalid filterbank sizes: sr={sample_rate}, n_fft={n_fft}, n_mels={n_mels}")
    f_max = sample_rate / 2.0
    bin_hz = np.linspace(0.0, f_max, n_bins)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2], edges[1:-1], edges[2:]
    rising = (bin_hz[:, None] - lower) / (center - lower)
    falling = (upper - bin_hz[:, None]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(matrix=weights, centers_hz=center, f_max=f_max)


def phase(spec) -> np.ndarray:
    """Element-wise argument in ``(-pi, pi]``; the argument of 0 is 0."""
    ang = np.angle(np.asarray(spec))
    # arg(-1 - 0j) comes back as -pi
    return np.where(ang <= -np.pi, np.pi, ang)


def mpd_reshape(samples, period: int) -> np.ndarray:
    """Zero-pad to a multiple of ``period`` and fold into ``(len / period, period)``."""
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    x = np.asarray(samples, dtype=np.float64).ravel()
    rem = (-len(x)) % period
    if rem:
        x = np.pad(x, (0, rem))
    return x.reshape(-1, period)


# -- WAV I/O ---------------------------------------------------------------


class AudioFormatError(ValueError):
    pass


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Mono PCM16 or float32 WAV as float64 samples in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioFormatError(f"{path}: only mono audio is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return Waveform(samples, int(rate))


def write_wav(path, wave: Waveform, fmt: str = "float32") -> None:
    path = Path(path)
    if fmt == "float32":
        data = wave.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(wave.samples, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise AudioFormatError(f"unknown WAV format {fmt!r}")
    wavfile.write(str(path), int(wave.sample_rate), data)
