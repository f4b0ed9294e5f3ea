"""Results directory writer.

Layout::

    run.json            config echo, package versions, scalar summaries
    trajectory.csv      per-snapshot filter estimate and truth
    rangerate.csv       smoothed / realtime / true range rate
    range.csv           range fixes against truth
    metrics.csv         30 s checkpoints
    objective_curves/   one CSV per retained range fix
    *.png               figures next to the CSVs

Floats are written with ``repr`` so files are byte-identical for identical
inputs.
"""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__, plotting
from .config import ScenarioConfig, as_plain, to_dict
from .harness import MonteCarloResult, RunResult, soo_positions


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return repr(v)


def write_table(path, columns: dict) -> Path:
    """Write equal-length columns with a header row."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(header)}


def versions() -> dict:
    import matplotlib
    import scipy
    import yaml
    return {"wavenav": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__}


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(as_plain(payload), indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def metrics_columns(result: RunResult) -> dict:
    m = result.metrics
    return {"time_s": m.times_s, "position_error_m": m.position_error_m,
            "covariance_trace_m2": m.covariance_trace_m2,
            "range_rate_error_mps": m.range_rate_error_mps, "range_error_m": m.range_error_m}


def write_run(out_dir, cfg: ScenarioConfig, result: RunResult, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "trajectory.csv", result.trajectory)
    write_table(out / "rangerate.csv", {
        "time_s": result.rangerate["time_s"], "y_rdot": result.rangerate["smoothed"],
        "z_rdot": result.rangerate["realtime"], "truth_rdot": result.rangerate["truth"]})
    write_table(out / "range.csv", {"time_s": result.ranges["time_s"],
                                    "z_r": result.ranges["range_m"],
                                    "truth_r": result.ranges["truth_m"]})
    write_table(out / "metrics.csv", metrics_columns(result))
    curves = out / "objective_curves"
    curves.mkdir(exist_ok=True)
    dt = cfg.snapshot_interval_s
    for n, (r, g) in sorted(result.objective_curves.items()):
        write_table(curves / f"range_{n * dt:08.1f}s.csv", {"r_n": r, "g": g})
    m = result.metrics
    write_json(out / "run.json", {
        "config": to_dict(cfg), "versions": versions(), "seed": result.seed,
        "beta": result.beta, "phase_speed_mps": result.phase_speed_mps,
        "first_fix_time_s": m.first_fix_time_s,
        "snapshot_interval_s": dt,
    })
    if figures:
        plotting.range_rate_figure(result.rangerate, out / "rangerate.png")
        if len(result.ranges["time_s"]):
            plotting.range_figure(result.ranges, out / "range.png")
        plotting.trajectory_figure(result.trajectory, soo_positions(cfg), out / "trajectory.png")
        plotting.error_figure(m.times_s, m.position_error_m, m.covariance_trace_m2,
                              out / "error.png", m.first_fix_time_s)
    return out


def write_monte_carlo(out_dir, cfg: ScenarioConfig, mc: MonteCarloResult,
                      sweep: list = None, figures: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "metrics.csv", {
        "time_s": mc.times_s, "position_rmse_m": mc.position_rmse_m,
        "mean_covariance_trace_m2": mc.mean_covariance_trace_m2,
        "range_rate_rmse_mps": mc.range_rate_rmse_mps, "range_rmse_m": mc.range_rmse_m,
        "n_trials": np.full(len(mc.times_s), mc.n_trials)})
    trials = out / "trials"
    trials.mkdir(exist_ok=True)
    for run in mc.runs:
        write_table(trials / f"metrics_seed{run.seed}.csv", metrics_columns(run))
    if sweep:
        write_table(out / "snr_sweep.csv", {k: [r[k] for r in sweep] for k in sweep[0]})
    write_json(out / "run.json", {
        "config": to_dict(cfg), "versions": versions(), "seeds": mc.seeds,
        "n_trials": mc.n_trials, "failures": {str(k): v for k, v in mc.failures.items()},
        "first_fix_times_s": mc.first_fix_times_s,
        "range_rate_rmse_mps": mc.overall_range_rate_rmse, "range_rmse_m": mc.overall_range_rmse,
    })
    if figures:
        plotting.error_figure(mc.times_s, mc.position_rmse_m, mc.mean_covariance_trace_m2,
                              out / "error.png", float(np.nanmin(mc.first_fix_times_s))
                              if np.isfinite(mc.first_fix_times_s).any() else None)
        if sweep:
            plotting.sweep_figure(sweep, "range_rate_rmse_mps", "range-rate RMSE (m/s)",
                                  out / "sweep_range_rate.png")
            plotting.sweep_figure(sweep, "range_rmse_m", "range RMSE (m)", out / "sweep_range.png")
    return out
