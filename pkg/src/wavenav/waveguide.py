"""
Normal-mode synthesis of tonal pressure fields in a range-independent
shallow-water waveguide.

Three solvers are available through :func:`solve_modes`:

- isovelocity water over a perfectly rigid bottom (closed form),
- isovelocity water over a fluid halfspace (Pekeris), roots of the
  characteristic equation by bracketing and bisection,
- a piecewise-linear sound-speed profile over either bottom, solved by a
  finite-difference eigenproblem.

The far-field modal sum

    p(r) = sum_m Psi_m(z_s) Psi_m(z_r) exp(j k_m r) / sqrt(k_m r)

is evaluated by :func:`pressure`, and :func:`synthesize_series` samples it
along source/receiver trajectories to build a :class:`PressureFieldSeries`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import eigh_tridiagonal

MIN_RANGE_M = 100.0
DEPTH_STEP_M = 1.0
BISECTION_RTOL = 1e-12

FIELD_MAGIC = b"WGF1"
_HEADER = struct.Struct("<4sIIdI")
_FLAG_TRUTH = 1


class WaveguideError(ValueError):
    """Base class for waveguide failures."""


class NoTrappedModes(WaveguideError):
    pass


class NonConvergence(WaveguideError):
    pass


class RangeTooSmall(WaveguideError):
    pass


class BottomType(str, enum.Enum):
    PERFECTLY_RIGID = "perfectly_rigid"
    PEKERIS_HALFSPACE = "pekeris_halfspace"


@dataclass(frozen=True)
class Halfspace:
    sound_speed_mps: float
    density_ratio: float


@dataclass(frozen=True)
class Environment:
    """Range-independent waveguide.

    ``sound_speed_mps`` is either a scalar (isovelocity water) or a sequence
    of ``(depth_m, speed_mps)`` pairs describing a piecewise-linear profile
    that spans the whole water column.
    """

    water_depth_m: float
    sound_speed_mps: Union[float, tuple]
    bottom_type: BottomType = BottomType.PEKERIS_HALFSPACE
    halfspace: Optional[Halfspace] = None
    # modes steeper than this grazing angle are discarded (None keeps all)
    max_grazing_deg: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "bottom_type", BottomType(self.bottom_type))
        if not np.isscalar(self.sound_speed_mps):
            prof = tuple((float(z), float(c)) for z, c in self.sound_speed_mps)
            object.__setattr__(self, "sound_speed_mps", prof)
        if not self.water_depth_m > 0:
            raise ValueError("water_depth_m must be positive")
        speeds = self.speeds()
        if speeds.min() < 1400 or speeds.max() > 1700:
            raise ValueError("sound speeds must lie in [1400, 1700] m/s")
        if not self.isovelocity:
            depths = np.array([z for z, _ in self.sound_speed_mps])
            if len(depths) < 2 or np.any(np.diff(depths) <= 0):
                raise ValueError("profile depths must be strictly increasing")
            if depths[0] > 0 or depths[-1] < self.water_depth_m:
                raise ValueError("profile must span [0, water_depth_m]")
        if self.bottom_type is BottomType.PEKERIS_HALFSPACE:
            hs = self.halfspace
            if hs is None:
                raise ValueError("pekeris bottom requires a halfspace")
            if not 1400 <= hs.sound_speed_mps <= 1700:
                raise ValueError("halfspace speed must lie in [1400, 1700] m/s")
            if hs.sound_speed_mps <= speeds.max():
                raise ValueError("halfspace speed must exceed every water sound speed")
            if not hs.density_ratio > 0:
                raise ValueError("density_ratio must be positive")
        if self.max_grazing_deg is not None and not 0 < self.max_grazing_deg <= 90:
            raise ValueError("max_grazing_deg must be in (0, 90]")

    @property
    def isovelocity(self) -> bool:
        return np.isscalar(self.sound_speed_mps)

    def speeds(self) -> np.ndarray:
        if self.isovelocity:
            return np.array([float(self.sound_speed_mps)])
        return np.array([c for _, c in self.sound_speed_mps])

    def sound_speed_at(self, z) -> np.ndarray:
        if self.isovelocity:
            return np.full_like(np.asarray(z, dtype=float), float(self.sound_speed_mps))
        zp, cp = zip(*self.sound_speed_mps)
        return np.interp(z, zp, cp)

    @property
    def reference_speed_mps(self) -> float:
        """Depth-averaged water sound speed."""
        if self.isovelocity:
            return float(self.sound_speed_mps)
        z = np.linspace(0.0, self.water_depth_m, 2001)
        return float(np.trapezoid(self.sound_speed_at(z), z) / self.water_depth_m)


@dataclass(frozen=True)
class ModeSet:
    frequency_hz: float
    wavenumbers: np.ndarray
    depths_m: np.ndarray
    mode_table: np.ndarray  # (n_modes, n_depths)

    @property
    def n_modes(self) -> int:
        return len(self.wavenumbers)

    def mode_values(self, z_m: float) -> np.ndarray:
        """Mode functions at depth ``z_m`` by linear interpolation of the table."""
        idx = np.searchsorted(self.depths_m, z_m)
        idx = int(np.clip(idx, 1, len(self.depths_m) - 1))
        z0, z1 = self.depths_m[idx - 1], self.depths_m[idx]
        t = (z_m - z0) / (z1 - z0)
        return (1 - t) * self.mode_table[:, idx - 1] + t * self.mode_table[:, idx]

    def phase_speeds(self) -> np.ndarray:
        return 2 * np.pi * self.frequency_hz / self.wavenumbers


def _depth_grid(depth_m: float, step: float = DEPTH_STEP_M) -> np.ndarray:
    n = int(np.ceil(depth_m / step - 1e-9))
    z = np.arange(n + 1) * step
    z[-1] = depth_m
    return z


def pekeris_phase_function(k, omega, c_w, c_b, density_ratio, depth, mode):
    """Phase form of the Pekeris characteristic equation; zero at mode ``mode``."""
    kz = np.sqrt(omega**2 / c_w**2 - k**2)
    kappa = np.sqrt(k**2 - omega**2 / c_b**2)
    return kz * depth - np.arctan(kappa / (density_ratio * kz)) - (mode - 0.5) * np.pi


def pekeris_characteristic(k, omega, c_w, c_b, density_ratio, depth):
    """Pole-free characteristic function, normalised to be dimensionless.

    Zero where ``kappa sin(kz D) + M kz cos(kz D) = 0``.
    """
    kz = np.sqrt(np.maximum(omega**2 / c_w**2 - k**2, 0.0))
    kappa = np.sqrt(np.maximum(k**2 - omega**2 / c_b**2, 0.0))
    num = kappa * np.sin(kz * depth) + density_ratio * kz * np.cos(kz * depth)
    return num / (omega / c_w)


def _bisect(fun, lo, hi, rtol=BISECTION_RTOL, max_iter=200):
    flo, fhi = fun(lo), fun(hi)
    if not (flo > 0 > fhi):
        raise NonConvergence("bisection bracket does not contain a sign change")
    # run to floating-point resolution; rtol is the contract, not the stop
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fun(mid) > 0:
            lo = mid
        else:
            hi = mid
    if hi - lo > rtol * abs(hi):
        raise NonConvergence("bisection did not converge")
    return 0.5 * (lo + hi)


def _solve_rigid_isovelocity(env: Environment, f_hz: float) -> ModeSet:
    c = float(env.sound_speed_mps)
    D = env.water_depth_m
    k0 = 2 * np.pi * f_hz / c
    n = int(np.floor(k0 * D / np.pi + 0.5))
    # strict inequality gamma_m < k0
    while n > 0 and (n - 0.5) * np.pi / D >= k0:
        n -= 1
    if n == 0:
        raise NoTrappedModes(f"no propagating modes at {f_hz} Hz")
    gam = (np.arange(1, n + 1) - 0.5) * np.pi / D
    k = np.sqrt(k0**2 - gam**2)
    z = _depth_grid(D)
    return ModeSet(f_hz, k, z, np.sin(np.outer(gam, z)))


def _solve_pekeris_isovelocity(env: Environment, f_hz: float) -> ModeSet:
    c_w = float(env.sound_speed_mps)
    c_b = env.halfspace.sound_speed_mps
    M = env.halfspace.density_ratio
    D = env.water_depth_m
    omega = 2 * np.pi * f_hz
    k_w, k_b = omega / c_w, omega / c_b
    kz_max = np.sqrt(k_w**2 - k_b**2)
    n = int(np.floor(kz_max * D / np.pi + 0.5))
    if n == 0:
        raise NoTrappedModes(f"no trapped modes at {f_hz} Hz")
    span = k_w - k_b
    lo, hi = k_b + 1e-14 * span, k_w - 1e-14 * span
    ks = []
    for m in range(1, n + 1):
        fun = lambda k, m=m: pekeris_phase_function(k, omega, c_w, c_b, M, D, m)
        if fun(lo) <= 0:
            break
        ks.append(_bisect(fun, lo, hi))
    if not ks:
        raise NoTrappedModes(f"no trapped modes at {f_hz} Hz")
    k = np.array(ks)
    kz = np.sqrt(k_w**2 - k**2)
    kappa = np.sqrt(k**2 - k_b**2)
    norm2 = 2.0 / ((D - np.sin(2 * kz * D) / (2 * kz)) + np.sin(kz * D) ** 2 / (M * kappa))
    z = _depth_grid(D)
    table = np.sqrt(norm2)[:, None] * np.sin(np.outer(kz, z))
    return ModeSet(f_hz, k, z, table)


def _solve_profile_fd(env: Environment, f_hz: float, step: float = 0.25) -> ModeSet:
    """Finite-difference modes for a depth-dependent profile."""
    omega = 2 * np.pi * f_hz
    D = env.water_depth_m
    pekeris = env.bottom_type is BottomType.PEKERIS_HALFSPACE
    if pekeris:
        c_b = env.halfspace.sound_speed_mps
        M = env.halfspace.density_ratio
        # truncated halfspace, terminated by a pressure-release false bottom
        z_end = D + 12 * c_b / f_hz
    else:
        z_end = D
    nz = int(np.ceil(z_end / step))
    h = z_end / nz
    z = np.arange(nz + 1) * h
    c = np.where(z <= D, env.sound_speed_at(np.minimum(z, D)), c_b if pekeris else 1.0)
    rho = np.where(z <= D + 1e-9, 1.0, M if pekeris else 1.0)
    rho_half = np.where(z[:-1] + 0.5 * h <= D, 1.0, M if pekeris else 1.0)
    # interface node density: mean of adjacent layers
    i_face = int(np.argmin(np.abs(z - D)))
    if pekeris:
        rho[i_face] = 0.5 * (1.0 + M)
    inv_rh = 1.0 / rho_half
    # unknowns: nodes 1..nz (surface pinned to zero)
    idx = np.arange(1, nz + 1)
    diag = -(inv_rh[idx - 1] + np.append(inv_rh[idx[:-1]], 0.0)) / h**2
    diag += omega**2 / (c[idx] ** 2 * rho[idx])
    off = inv_rh[idx[:-1]] / h**2
    bw = 1.0 / rho[idx]
    if pekeris:
        # pressure-release false bottom: drop the last node
        diag, off, bw, idx = diag[:-1], off[:-1], bw[:-1], idx[:-1]
        diag = diag.copy()
    else:
        # Neumann bottom via a half control volume
        diag = diag.copy()
        diag[-1] = -inv_rh[-1] / h**2 + 0.5 * omega**2 / (c[-1] ** 2 * rho[-1])
        bw = bw.copy()
        bw[-1] *= 0.5
    s = 1.0 / np.sqrt(bw)
    d_sym = diag * s * s
    e_sym = off * s[:-1] * s[1:]
    k2_min = (omega / c_b) ** 2 if pekeris else 0.0
    k2_max = (omega / env.speeds().min()) ** 2
    vals, vecs = eigh_tridiagonal(d_sym, e_sym, select="v", select_range=(k2_min, k2_max))
    if len(vals) == 0:
        raise NoTrappedModes(f"no trapped modes at {f_hz} Hz")
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order] * s[:, None]
    psi = np.vstack([np.zeros(len(vals)), vecs])  # prepend surface node
    w = np.concatenate([[0.0], bw]) * h
    norms = np.sqrt(np.sum(w[:, None] * psi**2, axis=0))
    psi = psi / norms
    psi *= np.sign(psi[1])[None, :]
    zg = _depth_grid(D)
    table = np.array([np.interp(zg, z[: psi.shape[0]], psi[:, m]) for m in range(psi.shape[1])])
    return ModeSet(f_hz, np.sqrt(vals), zg, table)


def solve_modes(env: Environment, f_hz: float) -> ModeSet:
    """Trapped normal modes of ``env`` at frequency ``f_hz``.

    Raises
    ------
    NoTrappedModes
        If the frequency is below the first-mode cutoff.
    NonConvergence
        If a bisection bracket fails (Pekeris case).
    """
    if not f_hz > 0:
        raise ValueError("frequency must be positive")
    if not env.isovelocity:
        modes = _solve_profile_fd(env, f_hz)
    elif env.bottom_type is BottomType.PERFECTLY_RIGID:
        modes = _solve_rigid_isovelocity(env, f_hz)
    else:
        modes = _solve_pekeris_isovelocity(env, f_hz)
    if env.max_grazing_deg is not None:
        modes = _limit_grazing(modes, env)
    return modes


def grazing_angles_deg(modes: ModeSet, env: Environment) -> np.ndarray:
    """Grazing angle of each mode relative to the slowest water sound speed."""
    k_ref = 2 * np.pi * modes.frequency_hz / env.speeds().min()
    return np.degrees(np.arccos(np.clip(modes.wavenumbers / k_ref, -1.0, 1.0)))


def _limit_grazing(modes: ModeSet, env: Environment) -> ModeSet:
    keep = grazing_angles_deg(modes, env) <= env.max_grazing_deg
    if not keep.any():
        raise NoTrappedModes("no modes below the grazing-angle limit")
    return ModeSet(modes.frequency_hz, modes.wavenumbers[keep], modes.depths_m,
                   modes.mode_table[keep])


def modal_excitation(modes: ModeSet, z_src_m: float, z_rcv_m: float) -> np.ndarray:
    return modes.mode_values(z_src_m) * modes.mode_values(z_rcv_m)


def pressure(modes: ModeSet, z_src_m: float, z_rcv_m: float, range_m):
    """Far-field modal sum at one or more ranges.

    Returns a complex scalar for scalar ``range_m``, otherwise an array with
    the same shape.
    """
    r = np.asarray(range_m, dtype=float)
    if np.any(r < MIN_RANGE_M):
        raise RangeTooSmall(f"range below the {MIN_RANGE_M:.0f} m far-field guard")
    D = modes.depths_m[-1]
    for z in (z_src_m, z_rcv_m):
        if not 0 < z < D:
            raise ValueError(f"depth {z} m outside the water column (0, {D})")
    amp = modal_excitation(modes, z_src_m, z_rcv_m)
    k = modes.wavenumbers
    kr = np.multiply.outer(r, k)
    p = np.sum(amp * np.exp(1j * kr) / np.sqrt(kr), axis=-1)
    return complex(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class Geometry:
    """Per-snapshot horizontal positions and velocities of source and receiver."""

    snapshot_interval_s: float
    source_xy: np.ndarray
    source_vxy: np.ndarray
    receiver_xy: np.ndarray
    receiver_vxy: np.ndarray
    source_depth_m: float
    receiver_depth_m: float

    @classmethod
    def straight_line(cls, source_xy0, source_vxy, receiver_xy0, receiver_vxy,
                      n_snapshots, snapshot_interval_s, source_depth_m, receiver_depth_m):
        t = np.arange(n_snapshots) * snapshot_interval_s
        sv = np.broadcast_to(np.asarray(source_vxy, float), (n_snapshots, 2))
        rv = np.broadcast_to(np.asarray(receiver_vxy, float), (n_snapshots, 2))
        return cls(
            snapshot_interval_s,
            np.asarray(source_xy0, float) + t[:, None] * sv,
            np.array(sv),
            np.asarray(receiver_xy0, float) + t[:, None] * rv,
            np.array(rv),
            source_depth_m,
            receiver_depth_m,
        )

    @property
    def n_snapshots(self) -> int:
        return len(self.source_xy)

    def ranges(self) -> np.ndarray:
        return np.hypot(*(self.source_xy - self.receiver_xy).T)

    def range_rates(self) -> np.ndarray:
        d = self.source_xy - self.receiver_xy
        dv = self.source_vxy - self.receiver_vxy
        return np.sum(d * dv, axis=1) / np.hypot(*d.T)


@dataclass(frozen=True)
class PressureFieldSeries:
    tones_hz: np.ndarray
    snapshot_interval_s: float
    samples: np.ndarray  # (n_snapshots, n_tones) complex
    truth_range_m: Optional[np.ndarray] = None
    truth_range_rate_mps: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        tones = np.atleast_1d(np.asarray(self.tones_hz, dtype=float))
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 2 or samples.shape[1] != len(tones):
            raise ValueError("samples must be shaped (n_snapshots, n_tones)")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if not self.snapshot_interval_s > 0:
            raise ValueError("snapshot interval must be positive")
        for name in ("truth_range_m", "truth_range_rate_mps"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if len(arr) != len(samples):
                    raise ValueError(f"{name} length differs from samples")
                object.__setattr__(self, name, arr)
        object.__setattr__(self, "tones_hz", tones)
        object.__setattr__(self, "samples", samples)

    @property
    def n_snapshots(self) -> int:
        return self.samples.shape[0]

    def times(self) -> np.ndarray:
        return np.arange(self.n_snapshots) * self.snapshot_interval_s

    def tone(self, f_hz: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.tones_hz - f_hz)))
        if abs(self.tones_hz[i] - f_hz) > 1e-6 * f_hz:
            raise KeyError(f"tone {f_hz} Hz not in series")
        return self.samples[:, i]

    def intensity(self) -> np.ndarray:
        return np.abs(self.samples) ** 2


def synthesize_series(env: Environment, geometry: Geometry, tones_hz: Sequence[float],
                      snr_db: float = np.inf, seed: int = 0,
                      modes: Optional[dict] = None) -> PressureFieldSeries:
    """Sample the modal field along ``geometry`` and add circular Gaussian noise.

    The noise variance of each tone is set so that the run-averaged ratio of
    tone power to noise power equals ``snr_db``; ``snr_db=inf`` disables noise.
    ``modes`` optionally maps tone frequency to a precomputed :class:`ModeSet`.
    """
    tones = np.asarray(tones_hz, dtype=float)
    r = geometry.ranges()
    cols = []
    for f in tones:
        ms = modes[f] if modes is not None and f in modes else solve_modes(env, f)
        cols.append(pressure(ms, geometry.source_depth_m, geometry.receiver_depth_m, r))
    samples = np.stack(cols, axis=1)
    if np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        sig_pow = np.mean(np.abs(samples) ** 2, axis=0)
        noise_var = sig_pow / 10 ** (snr_db / 10)
        noise = rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape)
        samples = samples + noise * np.sqrt(noise_var / 2)
    elif snr_db < 0:
        raise ValueError("snr_db must be finite or +inf")
    return PressureFieldSeries(
        tones, geometry.snapshot_interval_s, samples, r, geometry.range_rates(),
        meta={"provenance": "synthetic", "snr_db": float(snr_db), "seed": int(seed)},
    )


def write_field(path, series: PressureFieldSeries) -> None:
    """Write ``series`` in the little-endian WGF1 binary layout."""
    has_truth = series.truth_range_m is not None and series.truth_range_rate_mps is not None
    n, nf = series.samples.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, nf, n, float(series.snapshot_interval_s),
                              _FLAG_TRUTH if has_truth else 0))
        fh.write(np.asarray(series.tones_hz, "<f8").tobytes())
        fh.write(np.ascontiguousarray(series.samples).astype("<c16").tobytes())
        if has_truth:
            fh.write(series.truth_range_m.astype("<f8").tobytes())
            fh.write(series.truth_range_rate_mps.astype("<f8").tobytes())


def read_field(path) -> PressureFieldSeries:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated WGF1 header")
    magic, nf, n, dt, flags = _HEADER.unpack_from(data)
    if magic != FIELD_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    off = _HEADER.size
    expected = off + 8 * nf + 16 * n * nf + (16 * n if flags & _FLAG_TRUTH else 0)
    if len(data) != expected:
        raise ValueError(f"WGF1 size mismatch: {len(data)} bytes, expected {expected}")
    tones = np.frombuffer(data, "<f8", nf, off)
    off += 8 * nf
    samples = np.frombuffer(data, "<c16", n * nf, off).reshape(n, nf)
    off += 16 * n * nf
    truth_r = truth_rr = None
    if flags & _FLAG_TRUTH:
        truth_r = np.frombuffer(data, "<f8", n, off).copy()
        truth_rr = np.frombuffer(data, "<f8", n, off + 8 * n).copy()
    return PressureFieldSeries(tones.copy(), dt, samples.copy(), truth_r, truth_rr,
                               meta={"provenance": "imported"})
