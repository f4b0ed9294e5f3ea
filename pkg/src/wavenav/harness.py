"""End-to-end scenario runs: synthesis, range rate, ranging and navigation.

A run draws a truth AUV trajectory, synthesises the tonal field received
from the SOO along it, tracks range rate, computes waveguide-invariant range
fixes once enough history exists and fuses them with DVL and compass
readings in the particle filter. Every random stream is spawned from the
run seed, so a run is a pure function of ``(config, seed)``.
"""

from __future__ import annotations

import functools
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import navfilter as nf
from .config import ScenarioConfig, dumps, loads
from .rangerate import RangeRateTrack, causal_rates, range_rate_track
from .waveguide import (Environment, Geometry, PressureFieldSeries, modal_excitation,
                        solve_modes, synthesize_series)
from .wiranging import RangingError, calibrate_beta, estimate_range

log = logging.getLogger(__name__)

WORKERS_ENV = "WAVENAV_WORKERS"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        self.stage = stage
        super().__init__(f"{stage}: {exc}")


@functools.lru_cache(maxsize=64)
def cached_modes(env: Environment, f_hz: float):
    return solve_modes(env, f_hz)


def mode_table(env: Environment, tones) -> dict:
    return {float(f): cached_modes(env, float(f)) for f in tones}


def phase_speed(cfg: ScenarioConfig) -> float:
    """Sound speed used to convert lag frequency to range rate."""
    ps = cfg.rangerate.phase_speed
    env = cfg.environment_model()
    if not isinstance(ps, str):
        return float(ps)
    if ps == "water":
        return env.reference_speed_mps
    # excitation-weighted mean phase speed at the range-rate tone
    ms = cached_modes(env, float(cfg.tones_hz[0]))
    amp = modal_excitation(ms, cfg.geometry.source_depth_m, cfg.geometry.receiver_depth_m)
    w = amp**2 / ms.wavenumbers
    return float(np.sum(w * ms.phase_speeds()) / np.sum(w))


def sample_indices(cfg: ScenarioConfig, interval_s: float, start: int = 0) -> np.ndarray:
    step = max(1, int(round(interval_s / cfg.snapshot_interval_s)))
    return np.arange(start, cfg.n_snapshots, step)


def metric_indices(cfg: ScenarioConfig) -> np.ndarray:
    """Snapshots closest to multiples of the metrics interval."""
    dt = cfg.snapshot_interval_s
    k = np.arange(int(np.floor(cfg.duration_s / cfg.metrics_interval_s + 1e-9)) + 1)
    idx = np.round(k * cfg.metrics_interval_s / dt).astype(int)
    return np.unique(np.clip(idx, 0, cfg.n_snapshots - 1))


def fix_indices(cfg: ScenarioConfig) -> np.ndarray:
    first = cfg.first_fix_index()
    if first >= cfg.n_snapshots:
        return np.array([], dtype=int)
    return sample_indices(cfg, cfg.wi.fix_interval_s, first)


def truth_trajectory(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    return nf.propagate_truth(cfg.auv.build(), cfg.motion_model(), cfg.n_snapshots, rng,
                              cfg.auv.driving_noise)


def soo_positions(cfg: ScenarioConfig) -> np.ndarray:
    t = np.arange(cfg.n_snapshots) * cfg.snapshot_interval_s
    return np.asarray(cfg.soo.position0) + t[:, None] * np.asarray(cfg.soo.velocity)


def scenario_geometry(cfg: ScenarioConfig, truth: np.ndarray) -> Geometry:
    n = len(truth)
    return Geometry(cfg.snapshot_interval_s, soo_positions(cfg)[:n],
                    np.tile(np.asarray(cfg.soo.velocity, float), (n, 1)),
                    truth[:, :2].copy(), truth[:, 2:4].copy(),
                    cfg.geometry.source_depth_m, cfg.geometry.receiver_depth_m)


def synthesize(cfg: ScenarioConfig, truth: np.ndarray, snr_db: float, seed) -> PressureFieldSeries:
    if isinstance(seed, np.random.SeedSequence):
        seed = int(seed.generate_state(1)[0])
    env = cfg.environment_model()
    return synthesize_series(env, scenario_geometry(cfg, truth), cfg.tones_hz, snr_db, seed,
                             modes=mode_table(env, cfg.tones_hz))


def track_range_rate(cfg: ScenarioConfig, series: PressureFieldSeries) -> RangeRateTrack:
    return range_rate_track(series, cfg.rangerate_config(phase_speed(cfg)))


def range_fix(cfg: ScenarioConfig, series: PressureFieldSeries, track: RangeRateTrack,
              n: int, beta: float):
    """Range estimate at snapshot ``n`` from data up to ``n``."""
    start = track.segment_half_len
    rows = series.intensity()[start: n + 1]
    rates = causal_rates(track, n, start)
    return estimate_range(rows, rates, cfg.wi_config(), beta, cfg.snapshot_interval_s)


def _calibration_key(cfg: ScenarioConfig) -> str:
    """Config text with every field that cannot affect the calibration reset."""
    base = ScenarioConfig()
    return dumps(replace(cfg, seed=0, trials=1, snr_db=np.inf, noise=base.noise,
                         prior=base.prior, filter=base.filter,
                         metrics_interval_s=base.metrics_interval_s))


@functools.lru_cache(maxsize=16)
def _calibrate_cached(cfg_text: str) -> float:
    cfg = loads(cfg_text)
    truth = nf.propagate_truth(cfg.auv.build(), cfg.motion_model(), cfg.n_snapshots,
                               np.random.default_rng(0), driving_noise=False)
    series = synthesize(cfg, truth, np.inf, 0)
    track = track_range_rate(cfg, series)
    n = cfg.n_snapshots - 1
    start = track.segment_half_len
    est = calibrate_beta(series.intensity()[start: n + 1], causal_rates(track, n, start),
                         cfg.wi_config(), float(series.truth_range_m[n]), cfg.snapshot_interval_s)
    return est.beta


def resolve_beta(cfg: ScenarioConfig) -> float:
    """Configured invariant, or a calibration on a noiseless straight-line run."""
    if cfg.wi.beta is not None:
        return float(cfg.wi.beta)
    return _calibrate_cached(_calibration_key(cfg))


@dataclass
class RunMetrics:
    times_s: np.ndarray
    position_error_m: np.ndarray
    covariance_trace_m2: np.ndarray
    range_rate_error_mps: np.ndarray
    range_error_m: np.ndarray
    first_fix_time_s: float

    def rows(self):
        for vals in zip(self.times_s, self.position_error_m, self.covariance_trace_m2,
                        self.range_rate_error_mps, self.range_error_m):
            yield vals


@dataclass
class RunResult:
    seed: int
    trajectory: dict
    rangerate: dict
    ranges: dict
    metrics: RunMetrics
    objective_curves: dict = field(default_factory=dict)
    beta: float = np.nan
    phase_speed_mps: float = np.nan


def acoustic_pipeline(cfg: ScenarioConfig, truth: np.ndarray, seed_seq, beta: Optional[float],
                      fixes: Sequence[int], keep_curves: bool = False):
    """Synthesis, range-rate tracking and range fixes for one truth trajectory."""
    try:
        series = synthesize(cfg, truth, cfg.snr_db, seed_seq)
    except Exception as exc:  # noqa: BLE001 - annotate with the stage
        raise PipelineError("synthesis", exc) from exc
    try:
        track = track_range_rate(cfg, series)
    except Exception as exc:  # noqa: BLE001
        raise PipelineError("range-rate", exc) from exc
    fix_ranges = np.full(len(fixes), np.nan)
    curves = {}
    for j, n in enumerate(fixes):
        try:
            est = range_fix(cfg, series, track, int(n), beta)
        except RangingError as exc:
            log.debug("range fix at %d skipped: %s", n, exc)
            continue
        fix_ranges[j] = est.range_m
        if keep_curves:
            curves[int(n)] = (est.candidates_m, est.objective)
    return series, track, fix_ranges, curves


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None, keep_curves: bool = False
                 ) -> RunResult:
    """One full run; ``seed`` defaults to ``cfg.seed``."""
    seed = cfg.seed if seed is None else int(seed)
    s_truth, s_acoustic, s_sensor, s_prior, s_filter = np.random.SeedSequence(seed).spawn(5)
    dt = cfg.snapshot_interval_s
    n_steps = cfg.n_snapshots
    truth = truth_trajectory(cfg, np.random.default_rng(s_truth))
    soo = soo_positions(cfg)
    true_range = np.hypot(*(truth[:, :2] - soo).T)
    fixes = fix_indices(cfg)
    source = cfg.filter.range_source
    track = None
    beta = np.nan
    vbar = phase_speed(cfg)
    if source == "acoustic":
        beta = resolve_beta(cfg)
        _, track, fix_ranges, curves = acoustic_pipeline(cfg, truth, s_acoustic, beta, fixes,
                                                         keep_curves)
    elif source == "truth":
        fix_ranges, curves = true_range[fixes].copy(), {}
    else:
        fixes, fix_ranges, curves = np.array([], dtype=int), np.array([]), {}
    range_at = {int(n): r for n, r in zip(fixes, fix_ranges) if np.isfinite(r)}

    noise = cfg.noise.build()
    motion = cfg.motion_model()
    vb, hd = nf.simulate_measurements(truth, noise, np.random.default_rng(s_sensor))
    prior_rng = np.random.default_rng(s_prior)
    pr = cfg.prior
    offset = prior_rng.standard_normal(5) * [pr.position_std_m, pr.position_std_m,
                                             pr.velocity_std_mps, pr.velocity_std_mps,
                                             pr.heading_std_deg]
    prior_mean = nf.AuvState.from_array(truth[0] + offset)
    particles = nf.ParticleSet.from_prior(prior_mean, pr.position_std_m, pr.velocity_std_mps,
                                          pr.heading_std_deg, cfg.filter.n_particles, s_filter)
    est = np.empty((n_steps, 5))
    cov = np.empty((n_steps, 3))
    has_fix = np.zeros(n_steps, bool)
    for n in range(n_steps):
        if n > 0:
            nf.predict(particles, motion)
        z = nf.MeasurementBundle(tuple(vb[n]), float(hd[n]), tuple(soo[n]), range_at.get(n))
        try:
            nf.update(particles, z, noise)
        except nf.WeightCollapse as exc:
            raise PipelineError("filter update", exc) from exc
        has_fix[n] = z.range_m is not None
        nf.resample_and_roughen(particles, cfg.filter.ess_threshold, cfg.filter.roughen_std_m,
                                 cfg.filter.keep_uninformed_positions)
        est[n] = nf.mmse_estimate(particles).as_array()
        c = nf.position_covariance(particles)
        cov[n] = c[0, 0], c[0, 1], c[1, 1]

    times = np.arange(n_steps) * dt
    trajectory = {
        "time_s": times, "est_x": est[:, 0], "est_y": est[:, 1], "est_vx": est[:, 2],
        "est_vy": est[:, 3], "est_heading": est[:, 4], "cov_xx": cov[:, 0],
        "cov_xy": cov[:, 1], "cov_yy": cov[:, 2], "truth_x": truth[:, 0],
        "truth_y": truth[:, 1], "has_range_fix": has_fix.astype(int),
    }
    if track is not None:
        rr = {"time_s": times, "smoothed": track.smoothed, "realtime": track.realtime,
              "truth": track.truth}
    else:
        nan = np.full(n_steps, np.nan)
        rr = {"time_s": times, "smoothed": nan, "realtime": nan.copy(),
              "truth": scenario_geometry(cfg, truth).range_rates()}
    ranges = {"time_s": fixes * dt, "range_m": fix_ranges, "truth_m": true_range[fixes]}
    metrics = compute_metrics(cfg, trajectory, rr, ranges, fixes)
    return RunResult(seed, trajectory, rr, ranges, metrics, curves, beta, vbar)


def compute_metrics(cfg: ScenarioConfig, trajectory, rr, ranges, fixes) -> RunMetrics:
    idx = metric_indices(cfg)
    dx = trajectory["est_x"][idx] - trajectory["truth_x"][idx]
    dy = trajectory["est_y"][idx] - trajectory["truth_y"][idx]
    cov_tr = trajectory["cov_xx"][idx] + trajectory["cov_yy"][idx]
    rr_err = rr["smoothed"][idx] - rr["truth"][idx]
    rng_err = np.full(len(idx), np.nan)
    fix_step = max(1, int(round(cfg.wi.fix_interval_s / cfg.snapshot_interval_s)))
    errs = ranges["range_m"] - ranges["truth_m"]
    for j, n in enumerate(idx):
        k = np.searchsorted(fixes, n, side="right") - 1
        if k >= 0 and n - fixes[k] < fix_step:
            rng_err[j] = errs[k]
    finite = np.isfinite(ranges["range_m"])
    first = float(ranges["time_s"][finite][0]) if finite.any() else np.nan
    return RunMetrics(trajectory["time_s"][idx], np.hypot(dx, dy), cov_tr, rr_err, rng_err, first)


def rmse(errors, axis=None):
    e = np.asarray(errors, dtype=float)
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", "Mean of empty slice", RuntimeWarning)
        return np.sqrt(np.nanmean(e**2, axis=axis))


@dataclass
class MonteCarloResult:
    times_s: np.ndarray
    position_rmse_m: np.ndarray
    mean_covariance_trace_m2: np.ndarray
    range_rate_rmse_mps: np.ndarray
    range_rmse_m: np.ndarray
    first_fix_times_s: np.ndarray
    n_trials: int
    seeds: list
    failures: dict
    runs: list = field(default_factory=list)

    @property
    def overall_range_rate_rmse(self) -> float:
        return float(rmse(np.concatenate([r.metrics.range_rate_error_mps for r in self.runs])))

    @property
    def overall_range_rmse(self) -> float:
        errs = [r.ranges["range_m"] - r.ranges["truth_m"] for r in self.runs]
        return float(rmse(np.concatenate(errs))) if errs else np.nan


def _trial(args):
    cfg, seed, keep_curves = args
    try:
        return seed, run_scenario(cfg, seed, keep_curves), None
    except Exception as exc:  # noqa: BLE001 - reported as a partial failure
        return seed, None, f"{type(exc).__name__}: {exc}"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def aggregate(runs: Sequence[RunResult], seeds, failures) -> MonteCarloResult:
    if not runs:
        raise RuntimeError(f"all trials failed: {failures}")
    m = [r.metrics for r in runs]
    return MonteCarloResult(
        m[0].times_s,
        rmse(np.stack([x.position_error_m for x in m]), axis=0),
        np.mean(np.stack([x.covariance_trace_m2 for x in m]), axis=0),
        rmse(np.stack([x.range_rate_error_mps for x in m]), axis=0),
        rmse(np.stack([x.range_error_m for x in m]), axis=0),
        np.array([x.first_fix_time_s for x in m]),
        len(runs), list(seeds), dict(failures), list(runs),
    )


def monte_carlo(cfg: ScenarioConfig, n_trials: Optional[int] = None,
                seeds: Optional[Sequence[int]] = None, workers: Optional[int] = None,
                keep_curves: bool = False) -> MonteCarloResult:
    """Independent trials with seeds ``cfg.seed + i``; results do not depend on ``workers``."""
    n_trials = cfg.trials if n_trials is None else int(n_trials)
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    seeds = [cfg.seed + i for i in range(n_trials)] if seeds is None else list(seeds)
    workers = worker_count() if workers is None else workers
    if cfg.filter.range_source == "acoustic":
        resolve_beta(cfg)  # compute once before forking
    jobs = [(cfg, s, keep_curves) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    runs = [r for _, r, e in results if r is not None]
    failures = {s: e for s, _, e in results if e is not None}
    return aggregate(runs, [s for s, r, _ in results if r is not None], failures)


@dataclass
class AcousticTrial:
    seed: int
    snr_db: float
    range_rate_errors: np.ndarray
    range_errors: np.ndarray


def acoustic_trial(cfg: ScenarioConfig, seed: int, snr_db: float,
                   with_range: bool = True) -> AcousticTrial:
    """Range-rate and range errors at the metric checkpoints, without the filter.

    Uses the same truth and acoustic streams as :func:`run_scenario`.
    """
    c = replace(cfg, snr_db=float(snr_db))
    s_truth, s_acoustic = np.random.SeedSequence(seed).spawn(5)[:2]
    truth = truth_trajectory(c, np.random.default_rng(s_truth))
    idx = metric_indices(c)
    fixes = idx[idx >= c.first_fix_index()] if with_range else np.array([], dtype=int)
    beta = resolve_beta(c) if with_range else np.nan
    series, track, fix_ranges, _ = acoustic_pipeline(c, truth, s_acoustic, beta, fixes)
    rr_err = track.smoothed[idx] - track.truth[idx]
    return AcousticTrial(seed, float(snr_db), rr_err[np.isfinite(rr_err)],
                         fix_ranges - series.truth_range_m[fixes])


def snr_sweep(cfg: ScenarioConfig, snrs: Sequence[float], n_trials: int,
              with_range: bool = True) -> list:
    """Per-SNR range-rate and range RMSE over ``n_trials`` seeds."""
    out = []
    for snr in snrs:
        trials = [acoustic_trial(cfg, cfg.seed + i, snr, with_range) for i in range(n_trials)]
        rr = np.concatenate([t.range_rate_errors for t in trials])
        rg = np.concatenate([t.range_errors for t in trials])
        out.append({"snr_db": float(snr), "n_trials": n_trials,
                    "range_rate_rmse_mps": float(rmse(rr)),
                    "range_rmse_m": float(rmse(rg)) if rg.size else np.nan})
    return out
