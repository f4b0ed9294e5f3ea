"""Waveguide-invariant ranging and invariant calibration.

Spectrogram columns are assigned ranges from range rates (a reference range
``r_n`` plus accumulated range-rate distance). For a tone pair ``f0 < f1``
the low-tone row is stretched by ``(f1/f0)**(1/beta)`` and interpolated back
onto the recent window; its correlation coefficient with the high-tone row,
summed over all pairs, is the objective ``g(r_n; beta)``. Range is the grid
argmax over ``r_n``; calibration is the grid argmax over ``beta`` at a known
range.

The vectorised evaluators work in accumulated-distance coordinates
``D_i = r_n - r_i``, which do not depend on the candidate, so one
``np.interp`` call covers every candidate of a grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np


class RangingError(ValueError):
    pass


class NonPositiveRange(RangingError):
    pass


class InsufficientCoverage(RangingError):
    pass


class NoValidPairs(RangingError):
    pass


class AllCandidatesInvalid(RangingError):
    pass


def _grid(spec) -> np.ndarray:
    lo, hi, step = (float(v) for v in spec)
    if not (step > 0 and hi >= lo):
        raise ValueError(f"bad grid {spec}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


@dataclass(frozen=True)
class WiConfig:
    tones_hz: tuple = (109.0, 127.0, 145.0, 163.0)
    window_len: int = 600
    beta_grid: tuple = (0.8, 1.5, 0.005)
    range_grid: tuple = (500.0, 10000.0, 10.0)
    # minimum fraction of the window a stretched row must cover for a pair to count
    min_overlap: float = 0.25
    log_intensity: bool = False

    def __post_init__(self):
        tones = tuple(float(f) for f in self.tones_hz)
        if len(tones) < 2 or len(set(tones)) != len(tones) or min(tones) <= 0:
            raise ValueError("need at least two distinct positive tones")
        if self.window_len < 4:
            raise ValueError("window_len too small")
        if not 0 < self.min_overlap <= 1:
            raise ValueError("min_overlap must be in (0, 1]")
        object.__setattr__(self, "tones_hz", tones)
        _grid(self.beta_grid)
        _grid(self.range_grid)

    def ranges(self) -> np.ndarray:
        return _grid(self.range_grid)

    def betas(self) -> np.ndarray:
        return _grid(self.beta_grid)

    def pairs(self) -> list:
        """Index pairs (i, j) with tones[i] < tones[j]."""
        order = np.argsort(self.tones_hz)
        return [(int(a), int(b)) for a, b in combinations(order, 2)]


def build_range_axis(rates: np.ndarray, r_ref: float, snapshot_interval_s: float) -> np.ndarray:
    """Ranges of columns ``0..n`` given range rates for columns ``0..n-1``.

    ``r_i = r_ref - sum_{l=i}^{n-1} rates[l] * t_delta``.
    """
    rates = np.asarray(rates, dtype=float)
    if not np.all(np.isfinite(rates)):
        raise ValueError("range rates must be finite")
    suffix = np.concatenate([np.cumsum((rates * snapshot_interval_s)[::-1])[::-1], [0.0]])
    axis = r_ref - suffix
    if np.any(axis <= 0):
        raise NonPositiveRange(f"reference {r_ref} m gives non-positive column ranges")
    return axis


def stretch_and_interp(row_f0: np.ndarray, axis: np.ndarray, f0: float, f1: float, beta: float,
                       window_len: int, stretch_len: Optional[int] = None,
                       allow_partial: bool = False) -> np.ndarray:
    """Stretch the ``f0`` row onto the ``f1`` range scale over the last window.

    Returns ``J`` on the last ``window_len`` axis ranges. Outside the
    stretched support ``J`` is NaN when ``allow_partial``; otherwise
    :class:`InsufficientCoverage` is raised.
    """
    if not f0 < f1:
        raise ValueError("need f0 < f1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    n = len(axis)
    M = n if stretch_len is None else min(int(stretch_len), n)
    if M < window_len:
        raise InsufficientCoverage("stretch length shorter than window")
    s = (f1 / f0) ** (1.0 / beta)
    r_src = axis[n - M:] * s
    vals = np.asarray(row_f0, dtype=float)[n - M:]
    order = np.argsort(r_src, kind="stable")
    r_src, vals = r_src[order], vals[order]
    r_win = axis[n - window_len:]
    tol = 1e-9 * r_src[-1]
    inside = (r_win >= r_src[0] - tol) & (r_win <= r_src[-1] + tol)
    if not allow_partial and not inside.all():
        raise InsufficientCoverage("stretched support does not cover the window")
    J = np.interp(r_win, r_src, vals)
    return np.where(inside, J, np.nan)


def correlation_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """Normalised inner product of demeaned sequences over their common finite samples."""
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 2:
        return np.nan
    am = a[ok] - a[ok].mean()
    bm = b[ok] - b[ok].mean()
    z = np.sqrt(np.dot(am, am) * np.dot(bm, bm))
    if z <= 0 or not np.isfinite(z):
        return np.nan
    return float(np.dot(am, bm) / z)


def objective_g(rows: np.ndarray, axis: np.ndarray, tones_hz: Sequence[float], beta: float,
                window_len: int, min_overlap: float = 1.0) -> float:
    """Sum of pairwise correlation coefficients for one reference range.

    ``rows`` is ``(n_columns, n_tones)`` aligned with ``axis``. Each pair's
    coefficient is computed over the part of the window covered by the
    stretched row and weighted by that covered fraction, so a fully covered
    pair contributes its plain coefficient. Pairs covering less than
    ``min_overlap`` of the window, or with zero variance, contribute nothing.
    """
    tones = np.asarray(tones_hz, dtype=float)
    order = np.argsort(tones)
    pairs = list(combinations(order, 2))
    coeffs = []
    for i0, i1 in pairs:
        J = stretch_and_interp(rows[:, i0], axis, tones[i0], tones[i1], beta, window_len,
                               allow_partial=True)
        covered = np.isfinite(J).sum()
        if covered < min_overlap * window_len - 1e-9:
            continue
        rho = correlation_coefficient(J, rows[-window_len:, i1])
        if np.isfinite(rho):
            coeffs.append(rho * covered / window_len)
    if not coeffs:
        raise NoValidPairs("no tone pair has usable overlap and variance")
    return float(np.sum(coeffs))


def _prepare_rows(rows: np.ndarray, log_intensity: bool) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if log_intensity:
        floor = np.max(rows) * 1e-12 if np.max(rows) > 0 else 1e-300
        rows = np.log(np.maximum(rows, floor))
    return rows


def _objective_batch(rows, distances, tones, window_len, r_cands, betas, min_overlap):
    """Objective for candidate arrays ``r_cands`` and ``betas`` (same shape).

    ``distances[i]`` is the accumulated range-rate distance from column ``i``
    to the reference column (last entry 0, non-increasing).
    """
    n = len(distances)
    D_desc = distances
    # np.interp needs increasing abscissae: reverse columns
    xp = D_desc[::-1]
    D_max = xp[-1]
    D_win = D_desc[n - window_len:]
    r_cands = np.asarray(r_cands, dtype=float)[:, None]
    betas = np.asarray(betas, dtype=float)[:, None]
    order = np.argsort(tones)
    pairs = list(combinations(order, 2))
    total = np.zeros(len(r_cands))
    used = np.zeros(len(r_cands))
    need = min_overlap * window_len - 1e-9
    for i0, i1 in pairs:
        s = (tones[i1] / tones[i0]) ** (1.0 / betas)
        Dp = r_cands * (1.0 - 1.0 / s) + D_win[None, :] / s
        mask = (Dp <= D_max + 1e-9) & (Dp >= -1e-9)
        J = np.interp(Dp, xp, rows[::-1, i0])
        I1 = rows[n - window_len:, i1][None, :]
        cnt = mask.sum(axis=1)
        w = mask.astype(float)
        cnt_safe = np.maximum(cnt, 1)
        mJ = (w * J).sum(1) / cnt_safe
        mI = (w * I1).sum(1) / cnt_safe
        Jc = (J - mJ[:, None]) * w
        Ic = (I1 - mI[:, None]) * w
        num = (Jc * Ic).sum(1)
        den = np.sqrt((Jc**2).sum(1) * (Ic**2).sum(1))
        ok = (cnt >= need) & (den > 0)
        rho = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        total += rho * cnt / window_len
        used += ok
    g = np.where(used > 0, total, np.nan)
    # every retained column must have a positive range
    g = np.where(r_cands[:, 0] - D_max > 0, g, np.nan)
    return g


def _distances(rates: np.ndarray, snapshot_interval_s: float) -> np.ndarray:
    rates = np.asarray(rates, dtype=float)
    if not np.all(np.isfinite(rates)):
        raise ValueError("range rates must be finite")
    return np.concatenate([np.cumsum((rates * snapshot_interval_s)[::-1])[::-1], [0.0]])


def _monotone_suffix(rows, distances):
    """Trim history to the longest suffix with non-decreasing range."""
    d = np.diff(distances)
    bad = np.flatnonzero(d > 0)
    if len(bad):
        start = bad[-1] + 1
        return rows[start:], distances[start:]
    return rows, distances


def objective_curve(rows: np.ndarray, rates: np.ndarray, cfg: WiConfig, beta: float,
                    snapshot_interval_s: float, r_cands: Optional[np.ndarray] = None):
    """Objective over the range grid (NaN marks invalid candidates).

    ``rows`` covers columns ``c0..n`` and ``rates`` columns ``c0..n-1``.
    """
    rows = _prepare_rows(rows, cfg.log_intensity)
    D = _distances(rates, snapshot_interval_s)
    if len(D) != len(rows):
        raise ValueError("rates must have one entry fewer than rows")
    rows, D = _monotone_suffix(rows, D)
    if len(D) < cfg.window_len:
        raise InsufficientCoverage("history shorter than the correlation window")
    cands = cfg.ranges() if r_cands is None else np.asarray(r_cands, float)
    g = _objective_batch(rows, D, np.asarray(cfg.tones_hz), cfg.window_len, cands,
                         np.full(len(cands), float(beta)), cfg.min_overlap)
    return cands, g


@dataclass
class RangeEstimate:
    range_m: float
    objective_peak: float
    candidates_m: np.ndarray
    objective: np.ndarray


def estimate_range(rows: np.ndarray, rates: np.ndarray, cfg: WiConfig, beta: float,
                   snapshot_interval_s: float) -> RangeEstimate:
    """Grid argmax of the objective over reference ranges; ties go to the smaller range."""
    cands, g = objective_curve(rows, rates, cfg, beta, snapshot_interval_s)
    if not np.any(np.isfinite(g)):
        raise AllCandidatesInvalid("no range candidate has a valid objective")
    i = int(np.nanargmax(g))
    return RangeEstimate(float(cands[i]), float(g[i]), cands, g)


@dataclass
class BetaEstimate:
    beta: float
    objective_peak: float
    betas: np.ndarray
    objective: np.ndarray


def calibrate_beta(rows: np.ndarray, rates: np.ndarray, cfg: WiConfig, r_known: float,
                   snapshot_interval_s: float) -> BetaEstimate:
    """Grid argmax of the objective over the invariant at a known range."""
    if not r_known > 0:
        raise ValueError("known range must be positive")
    rows = _prepare_rows(rows, cfg.log_intensity)
    D = _distances(rates, snapshot_interval_s)
    rows, D = _monotone_suffix(rows, D)
    if len(D) < cfg.window_len:
        raise InsufficientCoverage("history shorter than the correlation window")
    betas = cfg.betas()
    g = _objective_batch(rows, D, np.asarray(cfg.tones_hz), cfg.window_len,
                         np.full(len(betas), float(r_known)), betas, cfg.min_overlap)
    if not np.any(np.isfinite(g)):
        raise AllCandidatesInvalid("no invariant candidate has a valid objective")
    i = int(np.nanargmax(g))
    return BetaEstimate(float(betas[i]), float(g[i]), betas, g)
