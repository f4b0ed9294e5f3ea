"""Diagnostic figures written next to the CSV outputs.

Uses the non-interactive Agg backend; every function takes an output path
and returns it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def range_rate_figure(rr: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.asarray(rr["time_s"]) / 60
        ax.plot(t, rr["truth"], "k-", lw=1.2, label="truth")
        ax.plot(t, rr["smoothed"], "C0-", lw=1, label="smoothed")
        ax.plot(t, rr["realtime"], "C1--", lw=1, label="realtime")
        ax.set_xlabel("time (min)")
        ax.set_ylabel("range rate (m/s)")
        ax.legend()
        return _save(fig, path)


def range_figure(ranges: dict, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.asarray(ranges["time_s"]) / 60
        ax.plot(t, np.asarray(ranges["truth_m"]) / 1e3, "k-", lw=1.2, label="truth")
        ax.plot(t, np.asarray(ranges["range_m"]) / 1e3, "C3o", ms=3, label="estimate")
        ax.set_xlabel("time (min)")
        ax.set_ylabel("range (km)")
        ax.legend()
        return _save(fig, path)


def trajectory_figure(traj: dict, soo_xy: np.ndarray, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 4.8))
        ax.plot(traj["truth_x"], traj["truth_y"], "k-", lw=1.2, label="AUV truth")
        ax.plot(traj["est_x"], traj["est_y"], "C0-", lw=1, label="AUV estimate")
        ax.plot(soo_xy[:, 0], soo_xy[:, 1], "C2-", lw=1, label="SOO")
        fix = np.asarray(traj["has_range_fix"]).astype(bool)
        if fix.any():
            ax.plot(np.asarray(traj["est_x"])[fix], np.asarray(traj["est_y"])[fix], "C3.",
                    ms=3, label="range fix")
        ax.set_xlabel("east (m)")
        ax.set_ylabel("north (m)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend(loc="best")
        return _save(fig, path)


def error_figure(times_s, position_rmse, cov_trace, path, first_fix_s=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        t = np.asarray(times_s) / 60
        ax.plot(t, position_rmse, "C0-o", ms=3, label="position error")
        ax.plot(t, np.sqrt(np.asarray(cov_trace)), "C1-s", ms=3, label="sqrt covariance trace")
        if first_fix_s is not None and np.isfinite(first_fix_s):
            ax.axvline(first_fix_s / 60, color="0.5", ls=":", lw=1)
        ax.set_xlabel("time (min)")
        ax.set_ylabel("m")
        ax.legend()
        return _save(fig, path)


def objective_figure(x, g, path, xlabel="reference range (m)", truth=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(x, g, "C0-", lw=1)
        if truth is not None:
            ax.axvline(truth, color="k", ls=":", lw=1)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("objective")
        return _save(fig, path)


def spectrogram_figure(intensity, times_s, freqs_hz, path, fmax=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        I = np.asarray(intensity, dtype=float)
        keep = np.ones(len(freqs_hz), bool) if fmax is None else np.asarray(freqs_hz) <= fmax
        db = 10 * np.log10(np.maximum(I[:, keep], np.max(I) * 1e-12 + 1e-300))
        ax.pcolormesh(np.asarray(freqs_hz)[keep], np.asarray(times_s) / 60, db,
                      shading="auto", cmap="viridis")
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("time (min)")
        return _save(fig, path)


def sweep_figure(rows: list, key: str, ylabel: str, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([r["snr_db"] for r in rows], [r[key] for r in rows], "C0-o", ms=4)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(ylabel)
        return _save(fig, path)
