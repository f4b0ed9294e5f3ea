"""Snapshot framing, tonal extraction and spectrogram utilities.

Raw hydrophone samples at rate ``1/T_delta`` are cut into frames of
``n_dft`` samples with hop ``(1 - overlap) * n_dft``; the snapshot interval
is ``t_delta = hop / sample_rate``. Each frame is windowed and transformed,
the complex value at the bin nearest each tone becomes ``p[n, f]`` and the
squared magnitudes form the spectrogram.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import windows

from .waveguide import PressureFieldSeries

SNR_CAP_DB = 300.0


class SigprocError(ValueError):
    pass


class ToneOutOfBand(SigprocError):
    pass


class TooFewSamples(SigprocError):
    pass


class UnsupportedEncoding(SigprocError):
    pass


class CorruptHeader(SigprocError):
    pass


class EmptyBinSet(SigprocError):
    pass


class Window(str, enum.Enum):
    HANN = "hann"
    RECT = "rect"


@dataclass(frozen=True)
class DftConfig:
    sample_rate_hz: float
    n_dft: int
    overlap: float = 0.0
    window: Window = Window.HANN

    def __post_init__(self):
        object.__setattr__(self, "window", Window(self.window))
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        if int(self.n_dft) != self.n_dft or self.n_dft < 1:
            raise ValueError("n_dft must be a positive integer")
        if not 0 <= self.overlap < 1:
            raise ValueError("overlap must lie in [0, 1)")
        hop = (1 - self.overlap) * self.n_dft
        if abs(hop - round(hop)) > 1e-9 or round(hop) < 1:
            raise ValueError("(1 - overlap) * n_dft must be a positive integer")

    @property
    def hop(self) -> int:
        return int(round((1 - self.overlap) * self.n_dft))

    @property
    def snapshot_interval_s(self) -> float:
        return self.hop / self.sample_rate_hz

    @property
    def bin_width_hz(self) -> float:
        return self.sample_rate_hz / self.n_dft

    def taper(self) -> np.ndarray:
        if self.window is Window.RECT:
            return np.ones(self.n_dft)
        # periodic Hann, the usual choice for spectral analysis
        return windows.hann(self.n_dft, sym=False)

    def bin_of(self, f_hz: float) -> int:
        """Nearest DFT bin to ``f_hz``."""
        if not 0 <= f_hz < self.sample_rate_hz / 2:
            raise ToneOutOfBand(f"tone {f_hz} Hz outside [0, {self.sample_rate_hz / 2}) Hz")
        return int(np.round(f_hz / self.bin_width_hz))


@dataclass(frozen=True)
class Spectrogram:
    intensity: np.ndarray  # (n_snapshots, n_bins)
    bin_freqs_hz: np.ndarray
    snapshot_interval_s: float
    provenance: str = "wav"

    def __post_init__(self):
        I = np.asarray(self.intensity, dtype=float)
        if I.ndim != 2 or I.shape[1] != len(self.bin_freqs_hz):
            raise ValueError("intensity must be shaped (n_snapshots, n_bins)")
        if not np.all(np.isfinite(I)) or np.any(I < 0):
            raise ValueError("intensity must be finite and nonnegative")
        if self.provenance not in ("wav", "synthetic", "imported"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "intensity", I)
        object.__setattr__(self, "bin_freqs_hz", np.asarray(self.bin_freqs_hz, dtype=float))

    def times(self) -> np.ndarray:
        return np.arange(self.intensity.shape[0]) * self.snapshot_interval_s

    def bins_near(self, freqs_hz: Sequence[float]) -> list:
        return [int(np.argmin(np.abs(self.bin_freqs_hz - f))) for f in freqs_hz]

    def to_csv(self, path) -> None:
        """Header row of bin frequencies, then one row per snapshot."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s"] + [repr(float(f)) for f in self.bin_freqs_hz])
            for t, row in zip(self.times(), self.intensity):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def frame_and_dft(raw: np.ndarray, cfg: DftConfig, tones_hz: Sequence[float],
                  provenance: str = "wav"):
    """Frame ``raw`` into snapshots and extract tonal samples.

    Returns ``(series, spectrogram)``. Snapshot ``n`` covers samples
    ``[n * hop, n * hop + n_dft)``; a trailing partial frame is dropped.
    Real input yields a one-sided spectrogram, complex input a full one.
    """
    x = np.asarray(raw)
    if x.ndim != 1:
        raise ValueError("raw samples must be one-dimensional")
    if len(x) < cfg.n_dft:
        raise TooFewSamples(f"{len(x)} samples, need at least {cfg.n_dft}")
    bins = [cfg.bin_of(f) for f in tones_hz]
    n_frames = 1 + (len(x) - cfg.n_dft) // cfg.hop
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.n_dft)[:: cfg.hop][:n_frames]
    frames = frames * cfg.taper()
    if np.iscomplexobj(x):
        spec = np.fft.fft(frames, axis=1)
        freqs = np.fft.fftfreq(cfg.n_dft, 1 / cfg.sample_rate_hz)
    else:
        spec = np.fft.rfft(frames, axis=1)
        freqs = np.fft.rfftfreq(cfg.n_dft, 1 / cfg.sample_rate_hz)
    series = PressureFieldSeries(
        np.asarray(tones_hz, dtype=float), cfg.snapshot_interval_s, spec[:, bins],
        meta={"provenance": provenance, "bins": bins},
    )
    return series, Spectrogram(np.abs(spec) ** 2, freqs, cfg.snapshot_interval_s, provenance)


def hann_kernel_ratio(offset_bins: float, n_dft: int) -> float:
    """Magnitude ratio |Hann| / |rect| of the DFT of a tone ``offset_bins`` off-centre."""
    d = float(offset_bins)
    def dirichlet(u):
        if abs(np.sin(np.pi * u / n_dft)) < 1e-15:
            return complex(n_dft)
        return np.exp(-1j * np.pi * u * (n_dft - 1) / n_dft) * np.sin(np.pi * u) / np.sin(np.pi * u / n_dft)
    # periodic Hann = 0.5 - 0.25 e^{+j2pi n/N} - 0.25 e^{-j2pi n/N}
    hann = 0.5 * dirichlet(d) - 0.25 * dirichlet(d + 1) - 0.25 * dirichlet(d - 1)
    return float(abs(hann) / abs(dirichlet(d)))


def load_wav(path, channel: int = 0):
    """Read PCM16 or float32 WAV samples normalised to [-1, 1].

    Returns ``(samples, sample_rate_hz)``. No resampling is performed.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() and "unknown" in msg.lower():
            raise UnsupportedEncoding(msg) from exc
        raise CorruptHeader(msg) from exc
    except EOFError as exc:
        raise CorruptHeader(str(exc)) from exc
    if data.ndim == 2:
        if not 0 <= channel < data.shape[1]:
            raise ValueError(f"channel {channel} not in file with {data.shape[1]} channels")
        data = data[:, channel]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncoding(f"sample type {data.dtype} (need PCM16 or float32)")
    return samples, float(rate)


def write_wav(path, samples: np.ndarray, sample_rate_hz: float, encoding: str = "float32"):
    """Write mono samples as float32 or PCM16 (clipped, scaled by 32768)."""
    x = np.asarray(samples, dtype=float)
    if encoding == "float32":
        data = x.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise UnsupportedEncoding(f"encoding {encoding!r}")
    # scipy stores an integer rate; fractional rates are rounded in the header
    wavfile.write(path, int(round(sample_rate_hz)), data)


def default_noise_bins(n_bins: int, tone_bins: Sequence[int], guard: int = 2) -> np.ndarray:
    """All bins except DC, Nyquist and ``guard`` bins either side of each tone."""
    keep = np.ones(n_bins, bool)
    keep[0] = keep[-1] = False
    for b in tone_bins:
        keep[max(0, b - guard): b + guard + 1] = False
    return np.flatnonzero(keep)


def estimate_snr(spectrogram, tone_bins: Sequence[int],
                 noise_bins: Optional[Sequence[int]] = None) -> float:
    """``10 log10(mean tone-bin power / mean noise-bin power)``, capped at 300 dB.

    ``spectrogram`` is a :class:`Spectrogram` or an intensity array.
    """
    I = spectrogram.intensity if isinstance(spectrogram, Spectrogram) else np.asarray(spectrogram)
    tone_bins = np.asarray(tone_bins, dtype=int)
    if noise_bins is None:
        noise_bins = default_noise_bins(I.shape[1], tone_bins)
    noise_bins = np.asarray(noise_bins, dtype=int)
    if tone_bins.size == 0 or noise_bins.size == 0:
        raise EmptyBinSet("tone and noise bin sets must be non-empty")
    if np.intersect1d(tone_bins, noise_bins).size:
        raise ValueError("noise bins overlap tone bins")
    p_tone = I[:, tone_bins].mean()
    p_noise = I[:, noise_bins].mean()
    if p_noise <= p_tone * 10 ** (-SNR_CAP_DB / 10):
        return SNR_CAP_DB
    return float(min(10 * np.log10(p_tone / p_noise), SNR_CAP_DB))


def tonal_snr(series: PressureFieldSeries, noiseless: PressureFieldSeries) -> float:
    """Empirical SNR of a noisy series against its noiseless counterpart."""
    noise = series.samples - noiseless.samples
    return float(10 * np.log10(np.mean(np.abs(noiseless.samples) ** 2)
                               / np.mean(np.abs(noise) ** 2)))


@dataclass
class AudioRender:
    samples: np.ndarray
    cfg: DftConfig
    meta: dict = field(default_factory=dict)


def render_audio(series: PressureFieldSeries, cfg: DftConfig, snr_db: float = np.inf,
                 seed: int = 0, real: bool = True) -> AudioRender:
    """Render a tonal series as a sampled waveform, for the audio-input path.

    Amplitude and phase of each tone are held for one hop; with ``real`` the
    waveform is ``Re{sum p e^{j 2 pi f t}}``, otherwise the complex analytic
    form. White noise is scaled so the per-bin noise power at the tone bins
    sits ``snr_db`` below the mean tone-bin power.
    """
    hop = cfg.hop
    n = series.n_snapshots * hop + (cfg.n_dft - hop)
    t = np.arange(n) / cfg.sample_rate_hz
    idx = np.minimum(np.arange(n) // hop, series.n_snapshots - 1)
    x = np.zeros(n, dtype=complex)
    for j, f in enumerate(series.tones_hz):
        x += series.samples[idx, j] * np.exp(2j * np.pi * f * t)
    x = x.real if real else x
    if np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        w = cfg.taper()
        # a unit tone of amplitude a gives bin power (a |sum w| / 2)^2 for real signals
        gain = np.sum(w) / (2 if real else 1)
        tone_pow = np.mean(np.abs(series.samples) ** 2) * gain**2
        per_bin = tone_pow / 10 ** (snr_db / 10)
        sigma2 = per_bin / np.sum(w**2)
        if real:
            x = x + rng.standard_normal(n) * np.sqrt(sigma2)
        else:
            x = x + (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(sigma2 / 2)
    return AudioRender(x, cfg, {"snr_db": float(snr_db), "seed": int(seed)})
