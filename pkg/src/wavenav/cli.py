"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 configuration error. With
``--json-errors`` the error is printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, plotting, results
from .config import ConfigError, ScenarioConfig, apply_overrides, default_paper_scenario, dumps, load
from .rangerate import causal_rates
from .sigproc import estimate_snr, frame_and_dft, load_wav, render_audio
from .waveguide import read_field, write_field
from .wiranging import calibrate_beta

SUBCOMMANDS = ("simulate-field", "spectrogram", "range-rate", "range", "calibrate-beta",
               "navigate", "monte-carlo", "export-defaults")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario YAML file (defaults if omitted)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="dotted-key override, repeatable")
    common.add_argument("--output-dir", type=Path, default=Path("results"))
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int)
    common.add_argument("--snr-db", type=float)
    common.add_argument("--particles", type=int)
    common.add_argument("--json-errors", action="store_true")
    common.add_argument("--no-figures", action="store_true", help="skip PNG output")

    p = argparse.ArgumentParser(prog="wavenav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate-field", parents=[common],
                   help="synthesize the tonal field and write it as WGF1")
    sp = sub.add_parser("spectrogram", parents=[common],
                        help="spectrogram from a WAV file or rendered synthetic audio")
    sp.add_argument("--input", type=Path, help="WAV file; rendered from the scenario if omitted")
    sp.add_argument("--channel", type=int, default=0)
    sp.add_argument("--fmax", type=float, default=200.0, help="highest bin written (Hz)")
    for name, text in (("range-rate", "range-rate track"), ("range", "waveguide-invariant ranges"),
                       ("calibrate-beta", "invariant calibration at a known range")):
        q = sub.add_parser(name, parents=[common], help=text)
        q.add_argument("--field", type=Path, help="WGF1 field file; synthesized if omitted")
    cb = sub.choices["calibrate-beta"]
    cb.add_argument("--at-s", type=float, help="calibration time (default: end of run)")
    cb.add_argument("--known-range", type=float, help="known range (default: truth)")
    sub.add_parser("navigate", parents=[common], help="one full navigation run")
    mc = sub.add_parser("monte-carlo", parents=[common], help="Monte-Carlo navigation trials")
    mc.add_argument("--sweep", type=str, default="",
                    help="comma-separated SNRs for an acoustic-only RMSE sweep")
    ex = sub.add_parser("export-defaults", parents=[common], help="write the default scenario")
    ex.add_argument("--output", type=Path, help="file to write (stdout if omitted)")
    return p


def resolve_config(args) -> ScenarioConfig:
    cfg = load(args.config) if args.config else default_paper_scenario()
    overrides = list(args.overrides)
    for flag, key in (("seed", "seed"), ("trials", "trials"), ("snr_db", "snr_db"),
                      ("particles", "filter.n_particles")):
        val = getattr(args, flag)
        if val is not None:
            overrides.append(f"{key}={val}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _series(cfg: ScenarioConfig, field_path=None):
    if field_path is not None:
        return read_field(field_path)
    s_truth, s_acoustic = np.random.SeedSequence(cfg.seed).spawn(5)[:2]
    truth = harness.truth_trajectory(cfg, np.random.default_rng(s_truth))
    return harness.synthesize(cfg, truth, cfg.snr_db, s_acoustic)


def cmd_simulate_field(cfg, args, out: Path) -> dict:
    series = _series(cfg)
    write_field(out / "field.wgf", series)
    cols = {"time_s": series.times(), "truth_r": series.truth_range_m,
            "truth_rdot": series.truth_range_rate_mps}
    for j, f in enumerate(series.tones_hz):
        cols[f"intensity_{f:g}Hz"] = series.intensity()[:, j]
    results.write_table(out / "field.csv", cols)
    if not args.no_figures:
        plotting.spectrogram_figure(series.intensity(), series.times(), series.tones_hz,
                                    out / "tonal_intensity.png")
    return {"snapshots": series.n_snapshots, "tones_hz": series.tones_hz}


def cmd_spectrogram(cfg, args, out: Path) -> dict:
    dft = cfg.dft.build()
    if args.input is not None:
        raw, rate = load_wav(args.input, args.channel)
        dft = replace(dft, sample_rate_hz=rate)
        provenance = "wav"
    else:
        raw = render_audio(_series(cfg), dft, cfg.snr_db, cfg.seed).samples
        provenance = "synthetic"
    series, spec = frame_and_dft(raw, dft, cfg.tones_hz, provenance)
    keep = spec.bin_freqs_hz <= args.fmax
    cut = replace(spec, intensity=spec.intensity[:, keep], bin_freqs_hz=spec.bin_freqs_hz[keep])
    cut.to_csv(out / "spectrogram.csv")
    snr = estimate_snr(spec, spec.bins_near(cfg.tones_hz))
    if not args.no_figures:
        plotting.spectrogram_figure(cut.intensity, cut.times(), cut.bin_freqs_hz,
                                    out / "spectrogram.png")
    return {"snr_db": snr, "snapshot_interval_s": dft.snapshot_interval_s,
            "snapshots": series.n_snapshots}


def cmd_range_rate(cfg, args, out: Path) -> dict:
    series = _series(cfg, args.field)
    cfg = _match_interval(cfg, series)
    track = harness.track_range_rate(cfg, series)
    truth = track.truth if track.truth is not None else np.full(len(track.times_s), np.nan)
    rr = {"time_s": track.times_s, "smoothed": track.smoothed, "realtime": track.realtime,
          "truth": truth}
    results.write_table(out / "rangerate.csv", {"time_s": rr["time_s"], "y_rdot": rr["smoothed"],
                                                "z_rdot": rr["realtime"], "truth_rdot": truth})
    if not args.no_figures:
        plotting.range_rate_figure(rr, out / "rangerate.png")
    err = track.smoothed[harness.metric_indices(cfg)] - truth[harness.metric_indices(cfg)]
    return {"range_rate_rmse_mps": float(harness.rmse(err)),
            "bin_width_mps": cfg.rangerate_config(harness.phase_speed(cfg))
            .bin_width_mps(cfg.snapshot_interval_s)}


def _match_interval(cfg: ScenarioConfig, series) -> ScenarioConfig:
    if abs(series.snapshot_interval_s - cfg.snapshot_interval_s) > 1e-9:
        raise ConfigError(f"field snapshot interval {series.snapshot_interval_s} s does not "
                          f"match the configured {cfg.snapshot_interval_s} s", "dft")
    return cfg


def cmd_range(cfg, args, out: Path) -> dict:
    series = _series(cfg, args.field)
    _match_interval(cfg, series)
    track = harness.track_range_rate(cfg, series)
    beta = harness.resolve_beta(cfg)
    fixes = harness.fix_indices(cfg)
    fixes = fixes[fixes < series.n_snapshots]
    curves_dir = out / "objective_curves"
    curves_dir.mkdir(exist_ok=True)
    z = np.full(len(fixes), np.nan)
    for j, n in enumerate(fixes):
        try:
            est = harness.range_fix(cfg, series, track, int(n), beta)
        except harness.RangingError:
            continue
        z[j] = est.range_m
        results.write_table(curves_dir / f"range_{n * cfg.snapshot_interval_s:08.1f}s.csv",
                            {"r_n": est.candidates_m, "g": est.objective})
    truth = (series.truth_range_m[fixes] if series.truth_range_m is not None
             else np.full(len(fixes), np.nan))
    ranges = {"time_s": fixes * cfg.snapshot_interval_s, "range_m": z, "truth_m": truth}
    results.write_table(out / "range.csv", {"time_s": ranges["time_s"], "z_r": z,
                                            "truth_r": truth})
    if not args.no_figures and len(fixes):
        plotting.range_figure(ranges, out / "range.png")
    return {"beta": beta, "fixes": int(np.isfinite(z).sum()),
            "range_rmse_m": float(harness.rmse(z - truth))}


def cmd_calibrate_beta(cfg, args, out: Path) -> dict:
    series = _series(cfg, args.field)
    _match_interval(cfg, series)
    track = harness.track_range_rate(cfg, series)
    dt = cfg.snapshot_interval_s
    n = series.n_snapshots - 1 if args.at_s is None else int(round(args.at_s / dt))
    if args.known_range is not None:
        r_known = args.known_range
    elif series.truth_range_m is not None:
        r_known = float(series.truth_range_m[n])
    else:
        raise ConfigError("field has no truth; pass --known-range", "known-range")
    start = track.segment_half_len
    est = calibrate_beta(series.intensity()[start: n + 1], causal_rates(track, n, start),
                         cfg.wi_config(), r_known, dt)
    results.write_table(out / "beta_objective.csv", {"beta": est.betas, "g": est.objective})
    if not args.no_figures:
        plotting.objective_figure(est.betas, est.objective, out / "beta_objective.png",
                                  xlabel="waveguide invariant")
    return {"beta": est.beta, "objective_peak": est.objective_peak, "known_range_m": r_known,
            "time_s": n * dt}


def cmd_navigate(cfg, args, out: Path) -> dict:
    res = harness.run_scenario(cfg, keep_curves=True)
    results.write_run(out, cfg, res, figures=not args.no_figures)
    return {"first_fix_time_s": res.metrics.first_fix_time_s,
            "final_position_error_m": float(res.metrics.position_error_m[-1])}


def cmd_monte_carlo(cfg, args, out: Path) -> dict:
    mc = harness.monte_carlo(cfg)
    sweep = None
    if args.sweep:
        snrs = [float(s) for s in args.sweep.split(",") if s.strip()]
        sweep = harness.snr_sweep(cfg, snrs, cfg.trials)
    results.write_monte_carlo(out, cfg, mc, sweep, figures=not args.no_figures)
    return {"n_trials": mc.n_trials, "failures": len(mc.failures)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "export-defaults":
            text = dumps(cfg)
            if args.output:
                Path(args.output).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        out = args.output_dir
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "simulate-field": cmd_simulate_field, "spectrogram": cmd_spectrogram,
            "range-rate": cmd_range_rate, "range": cmd_range,
            "calibrate-beta": cmd_calibrate_beta, "navigate": cmd_navigate,
            "monte-carlo": cmd_monte_carlo,
        }[args.command]
        summary = handler(cfg, args, out)
        print(json.dumps({"command": args.command, "output_dir": str(out),
                          **results.as_plain(summary)}, sort_keys=True))
        return 0
    except ConfigError as exc:
        return _report(args, exc, 2, "config")
    except Exception as exc:  # noqa: BLE001 - top-level error boundary
        return _report(args, exc, 1, "runtime")


def _report(args, exc, code: int, kind: str) -> int:
    if args.json_errors:
        payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            payload.update(key=exc.key, line=exc.line)
        sys.stderr.write(json.dumps(payload) + "\n")
    else:
        sys.stderr.write(f"wavenav: {kind} error: {exc}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
