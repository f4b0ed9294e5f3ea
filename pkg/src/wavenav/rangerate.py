"""Range-rate measurements from a single tone by the difference method.

For a tonal series ``p[n]`` the product

    I_c[k] = Re{ p[n-k] conj(p[n+k]) },   k = 0..L

oscillates as ``cos(w k)`` with ``w = 4 pi f rdot t_delta / v``. The peak of
``|DFT(I_c)|`` gives the average range rate over the ``2L+1`` snapshots
centred on ``n``. Because ``I_c`` is real, the spectrum is symmetric and the
sign of ``rdot`` is taken from the configured search band. When the band maps
to more than half a cycle per lag, several range rates fold onto the same
spectral peak; the alias closest to a reference value is returned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .waveguide import PressureFieldSeries


class RangeRateError(ValueError):
    pass


class InsufficientHistory(RangeRateError):
    pass


class NoPeakInBand(RangeRateError):
    pass


@dataclass(frozen=True)
class RangeRateConfig:
    segment_half_len: int = 120
    tone_hz: float = 109.0
    sound_speed_mps: float = 1500.0
    zero_pad_factor: int = 16
    search_band_mps: tuple = (0.0, 10.0)
    refine: bool = True
    phase_compensation: str = "none"  # none | complex | subtract

    def __post_init__(self):
        if self.segment_half_len < 8:
            raise ValueError("segment_half_len must be >= 8")
        if not 1 <= self.zero_pad_factor <= 64:
            raise ValueError("zero_pad_factor must be in [1, 64]")
        lo, hi = self.search_band_mps
        if not lo < hi:
            raise ValueError("search band must be increasing")
        if not (lo <= 0 <= hi or lo >= 0 or hi <= 0):
            raise ValueError("search band must contain 0 or be sign-constrained")
        if self.phase_compensation not in ("none", "complex", "subtract"):
            raise ValueError(f"unknown phase_compensation {self.phase_compensation!r}")
        object.__setattr__(self, "search_band_mps", (float(lo), float(hi)))

    def bin_width_mps(self, snapshot_interval_s: float) -> float:
        """Range-rate spacing of one (padded) DFT bin of the product."""
        n_fft = self.zero_pad_factor * (self.segment_half_len + 1)
        return self.sound_speed_mps / (2 * n_fft * self.tone_hz * snapshot_interval_s)


@dataclass
class RangeRateTrack:
    """Smoothed, realtime and acceleration tracks on the snapshot grid.

    Entries are NaN where a quantity is undefined. ``smoothed[m]`` is the
    average range rate over snapshots ``m-L..m+L`` and first becomes known at
    snapshot ``m+L``.
    """

    times_s: np.ndarray
    smoothed: np.ndarray
    realtime: np.ndarray
    accel: np.ndarray
    segment_half_len: int
    snapshot_interval_s: float
    truth: Optional[np.ndarray] = None

    def first_valid_index(self) -> int:
        idx = np.flatnonzero(np.isfinite(self.smoothed))
        if len(idx) == 0:
            raise InsufficientHistory("no range-rate estimates")
        return int(idx[0])


def difference_product(samples: np.ndarray, n: int, L: int) -> np.ndarray:
    """``Re{p[n-k] conj(p[n+k])}`` for ``k = 0..L``."""
    if n - L < 0 or n + L >= len(samples):
        raise InsufficientHistory(f"snapshots {n - L}..{n + L} not available")
    k = np.arange(L + 1)
    return np.real(samples[n - k] * np.conj(samples[n + k]))


def phase_offset_mps(f_hz: float, snapshot_interval_s: float, sound_speed_mps: float) -> float:
    """Range-rate bias caused by a snapshot interval that is not a multiple of 1/f.

    The carrier advances ``2 pi f t_delta`` per snapshot; only the fractional
    cycle ``delta = f t_delta - round(f t_delta)`` survives. For tonal samples
    taken at the positive-frequency DFT bin the raw estimate is shifted by
    ``v delta / (f t_delta)``, which is the value returned here and the value
    to subtract from raw estimates.
    """
    ft = f_hz * snapshot_interval_s
    if not ft > 0:
        raise ValueError("f * t_delta must be positive")
    delta = ft - np.round(ft)
    return float(sound_speed_mps * delta / ft)


def compensate_carrier_phase(samples: np.ndarray, f_hz: float, snapshot_interval_s: float):
    """Remove the per-snapshot carrier rotation from a tonal series."""
    n = np.arange(len(samples))
    frac = f_hz * snapshot_interval_s - np.round(f_hz * snapshot_interval_s)
    return samples * np.exp(-2j * np.pi * frac * n)


def _folded_rate_candidates(w0: float, cfg: RangeRateConfig, scale: float):
    """All range rates in the band whose lag frequency folds onto ``w0``."""
    lo, hi = cfg.search_band_mps
    # w = rdot / scale, folded into [0, pi]
    m_lo = int(np.floor(lo / scale / (2 * np.pi))) - 1
    m_hi = int(np.ceil(hi / scale / (2 * np.pi))) + 1
    cands = []
    for m in range(m_lo, m_hi + 1):
        for s in (1.0, -1.0):
            cands.append((2 * np.pi * m + s * w0) * scale)
    return np.unique(np.round(np.array(cands), 12))


def estimate_range_rate(ic: np.ndarray, cfg: RangeRateConfig, snapshot_interval_s: float,
                        reference: Optional[float] = None) -> float:
    """Range rate from the spectral peak of a difference product.

    ``reference`` selects among aliases when the band's lag-frequency image
    exceeds half a cycle; without it the alias of smallest magnitude wins.
    """
    ic = np.asarray(ic, dtype=float)
    L = len(ic) - 1
    n_fft = cfg.zero_pad_factor * (L + 1)
    spec = np.abs(np.fft.rfft(ic, n_fft))
    w = 2 * np.pi * np.arange(len(spec)) / n_fft
    scale = cfg.sound_speed_mps / (4 * np.pi * cfg.tone_hz * snapshot_interval_s)
    lo, hi = cfg.search_band_mps
    w_lo, w_hi = lo / scale, hi / scale
    if w_hi - w_lo >= 2 * np.pi:
        allowed = np.ones(len(w), bool)
    else:
        # a bin is reachable if +w or -w (mod 2 pi) falls inside [w_lo, w_hi]
        tol = np.pi / n_fft
        allowed = np.zeros(len(w), bool)
        for s in (1.0, -1.0):
            shifted = (s * w - w_lo) % (2 * np.pi)
            allowed |= (shifted <= (w_hi - w_lo) + tol) | (shifted >= 2 * np.pi - tol)
    if not allowed.any():
        raise NoPeakInBand("search band maps to no spectral bins")
    masked = np.where(allowed, spec, -np.inf)
    b = int(np.argmax(masked))
    if not np.isfinite(masked[b]) or masked[b] <= 0:
        raise NoPeakInBand("no spectral energy inside the search band")
    w0 = w[b]
    if cfg.refine:
        n_last = len(spec) - 1
        # the spectrum of a real sequence is even about 0 and about pi
        left = spec[1] if b == 0 else spec[b - 1]
        right = spec[b - 1] if b == n_last and n_fft % 2 == 0 else (
            spec[b + 1] if b < n_last else spec[b])
        denom = left - 2 * spec[b] + right
        if denom < 0:
            delta = 0.5 * (left - right) / denom
            w0 = np.clip(w0 + delta * 2 * np.pi / n_fft, 0.0, np.pi)
    cands = _folded_rate_candidates(w0, cfg, scale)
    slack = scale * 2 * np.pi / n_fft
    inside = cands[(cands >= lo - slack) & (cands <= hi + slack)]
    if len(inside) == 0:
        raise NoPeakInBand("peak does not unfold into the search band")
    if reference is None or not np.isfinite(reference):
        pick = inside[np.argmin(np.abs(inside))]
    else:
        pick = inside[np.argmin(np.abs(inside - reference))]
    return float(np.clip(pick, lo, hi))


def least_squares_slope(values: np.ndarray, dt: float) -> float:
    """Slope per second of a uniformly sampled sequence, ignoring NaNs."""
    y = np.asarray(values, dtype=float)
    t = np.arange(len(y)) * dt
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return 0.0
    t, y = t[ok], y[ok]
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def predict_realtime(smoothed: np.ndarray, n: int, L: int, snapshot_interval_s: float,
                     horizon: Optional[int] = None) -> tuple:
    """Linear prediction of the range rate at ``n`` from ``smoothed[n-2L..n-L]``.

    Returns ``(z, accel)``. ``horizon`` overrides the prediction distance in
    snapshots (default ``L``); the acceleration window is truncated to the
    available history.
    """
    m = n - L
    if m < 0 or m >= len(smoothed) or not np.isfinite(smoothed[m]):
        raise InsufficientHistory(f"no smoothed range rate at index {m}")
    window = smoothed[max(0, m - L): m + 1]
    accel = least_squares_slope(window, snapshot_interval_s)
    h = L if horizon is None else horizon
    return float(smoothed[m] + accel * snapshot_interval_s * h), accel


def _extrapolated_reference(recent: np.ndarray, dt: float) -> Optional[float]:
    """One-step linear extrapolation of recent estimates, used to pick aliases."""
    if len(recent) == 0:
        return None
    if len(recent) < 3:
        return float(recent[-1])
    return float(recent[-1] + least_squares_slope(recent, dt) * dt)


def range_rate_track(series: PressureFieldSeries, cfg: RangeRateConfig) -> RangeRateTrack:
    """Smoothed and realtime range rates for one tone of ``series``.

    Alias selection follows a linear extrapolation of the previous estimates,
    starting from the alias of smallest magnitude, so a track can continue
    through the fold where the lag frequency passes half a cycle.
    """
    dt = series.snapshot_interval_s
    p = series.tone(cfg.tone_hz)
    if cfg.phase_compensation == "complex":
        p = compensate_carrier_phase(p, cfg.tone_hz, dt)
    L = cfg.segment_half_len
    n_total = len(p)
    smoothed = np.full(n_total, np.nan)
    offset = 0.0
    if cfg.phase_compensation == "subtract":
        offset = phase_offset_mps(cfg.tone_hz, dt, cfg.sound_speed_mps)
    for m in range(L, n_total - L):
        ref = _extrapolated_reference(smoothed[max(L, m - L): m], dt)
        raw_ref = None if ref is None else ref + offset
        smoothed[m] = estimate_range_rate(difference_product(p, m, L), cfg, dt, raw_ref) - offset
    realtime = np.full(n_total, np.nan)
    accel = np.full(n_total, np.nan)
    for n in range(2 * L, n_total):
        try:
            realtime[n], accel[n - L] = predict_realtime(smoothed, n, L, dt)
        except InsufficientHistory:
            continue
    return RangeRateTrack(series.times(), smoothed, realtime, accel, L, dt,
                          series.truth_range_rate_mps)


def causal_rates(track: RangeRateTrack, n: int, start: int) -> np.ndarray:
    """Range rates for columns ``start..n-1`` using only data up to snapshot ``n``.

    Columns up to ``n - L`` take the smoothed estimate, whose segment ends by
    ``n``. The last ``L`` columns are linearly predicted from the most recent
    smoothed value and the least-squares acceleration behind it, which is the
    realtime prediction evaluated at intermediate horizons.
    """
    L = track.segment_half_len
    m = n - L
    if start < 0 or start > m:
        raise InsufficientHistory(f"columns from {start} need smoothed estimates up to {m}")
    known = track.smoothed[start: m + 1]
    if not np.all(np.isfinite(known)):
        raise InsufficientHistory(f"smoothed range rates missing in {start}..{m}")
    accel = least_squares_slope(track.smoothed[max(0, m - L): m + 1], track.snapshot_interval_s)
    ahead = track.smoothed[m] + accel * track.snapshot_interval_s * np.arange(1, L)
    return np.concatenate([known, ahead])[: n - start]
