import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import single_mode_series
from wavenav.rangerate import (InsufficientHistory, NoPeakInBand, RangeRateConfig,
                               causal_rates, difference_product, estimate_range_rate,
                               least_squares_slope, phase_offset_mps, predict_realtime,
                               range_rate_track)
from wavenav.waveguide import PressureFieldSeries

L = 120
CFG = RangeRateConfig(L, 109.0, 1500.0, 16, (0.0, 10.0))


def _estimate(series, cfg=CFG, n=L):
    ic = difference_product(series.tone(cfg.tone_hz), n, cfg.segment_half_len)
    return estimate_range_rate(ic, cfg, series.snapshot_interval_s)


# -- difference product --------------------------------------------------------

@pytest.mark.parametrize("rdot", [-3.0, 0.5, 2.0])
def test_single_mode_product_is_cosine(rdot):
    dt = 0.99975586
    s = single_mode_series(rdot, dt=dt)
    k1 = 2 * np.pi * 109 / 1500
    ic = difference_product(s.tone(109.0), L, L)
    k = np.arange(L + 1)
    r = s.truth_range_m
    expected = np.cos(2 * k1 * rdot * dt * k) / (k1 * np.sqrt(r[L - k] * r[L + k]))
    np.testing.assert_allclose(ic, expected, rtol=1e-9, atol=1e-15)


def test_static_source_has_flat_product():
    s = single_mode_series(0.0)
    ic = difference_product(s.tone(109.0), L, L)
    np.testing.assert_allclose(ic, ic[0], rtol=1e-12)


def test_zero_lag_is_intensity():
    rng = np.random.default_rng(2)
    p = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    ic = difference_product(p, 25, 10)
    assert ic[0] == pytest.approx(abs(p[25]) ** 2, rel=1e-14)
    assert ic[0] >= 0


def test_product_history_bounds():
    p = np.ones(30, complex)
    with pytest.raises(InsufficientHistory):
        difference_product(p, 9, 10)
    with pytest.raises(InsufficientHistory):
        difference_product(p, 20, 10)
    assert len(difference_product(p, 10, 10)) == 11


# -- range-rate estimate -------------------------------------------------------

@pytest.mark.parametrize("rdot", [0.5, 2.0, 5.0])
@pytest.mark.parametrize("dt", [0.99975586, 0.4998779296875])
def test_single_mode_recovery(rdot, dt):
    s = single_mode_series(rdot, dt=dt)
    ic = difference_product(s.tone(109.0), L, L)
    # beyond v / (4 f t) the lag frequency folds and a reference picks the alias
    ref = rdot + 0.3 if rdot > 1500 / (4 * 109 * dt) else None
    assert estimate_range_rate(ic, CFG, dt, ref) == pytest.approx(rdot, abs=0.01)


def test_zero_rate_within_one_bin():
    est = _estimate(single_mode_series(0.0))
    assert abs(est) <= CFG.bin_width_mps(1.0)


def test_unpadded_estimates_sit_on_bin_grid():
    cfg = RangeRateConfig(L, 109.0, 1500.0, 1, (0.0, 10.0), refine=False)
    width = cfg.bin_width_mps(1.0)
    assert width == pytest.approx(1500 / (2 * 121 * 109), rel=1e-12)
    for rdot in (0.3, 1.0, 1.7):
        est = _estimate(single_mode_series(rdot), cfg)
        assert est / width == pytest.approx(round(est / width), abs=1e-9)
        assert abs(est - rdot) <= width / 2 + 1e-9


def test_sign_is_set_by_search_band():
    pos = single_mode_series(1.5)
    # mirrored track: same ranges about the centre snapshot
    neg = single_mode_series(-1.5, r0=3000.0 + 2 * 1.5 * L)
    ip = difference_product(pos.tone(109.0), L, L)
    ineg = difference_product(neg.tone(109.0), L, L)
    np.testing.assert_allclose(np.abs(np.fft.rfft(ip, 16 * 121)),
                               np.abs(np.fft.rfft(ineg, 16 * 121)), rtol=1e-9, atol=1e-15)
    lower = RangeRateConfig(L, 109.0, 1500.0, 16, (-10.0, 0.0))
    assert _estimate(pos, CFG) == pytest.approx(1.5, abs=0.01)
    assert _estimate(pos, lower) == pytest.approx(-1.5, abs=0.01)
    assert _estimate(neg, lower) == pytest.approx(-1.5, abs=0.01)


@given(st.floats(1e-6, 1e6), st.floats(0.2, 4.0))
@settings(max_examples=25, deadline=None)
def test_amplitude_scaling_invariance(scale, rdot):
    a = _estimate(single_mode_series(rdot))
    b = _estimate(single_mode_series(rdot, amplitude=scale))
    assert b == pytest.approx(a, abs=1e-9)


def test_no_peak_for_empty_product():
    with pytest.raises(NoPeakInBand):
        estimate_range_rate(np.zeros(L + 1), CFG, 1.0)


@pytest.mark.parametrize("kwargs", [dict(segment_half_len=4), dict(zero_pad_factor=65),
                                    dict(search_band_mps=(3.0, 1.0)),
                                    dict(phase_compensation="magic")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        RangeRateConfig(**kwargs)


# -- phase offset --------------------------------------------------------------

def test_phase_offset_field_value():
    dt = 3276 / 3276.8
    off = phase_offset_mps(109.0, dt, 1500.0)
    delta = 109 * dt - 109
    assert off == pytest.approx(1500 * delta / (109 * dt), rel=1e-12)
    assert abs(off) == pytest.approx(0.3663, abs=1e-4)


def test_phase_offset_integer_cycles_and_linearity():
    assert phase_offset_mps(109.0, 1.0, 1500.0) == 0.0
    assert phase_offset_mps(50.0, 0.5, 1500.0) == 0.0
    dt = 3276 / 3276.8
    assert phase_offset_mps(127.0, dt, 3000.0) == pytest.approx(
        2 * phase_offset_mps(127.0, dt, 1500.0), rel=1e-12)
    with pytest.raises(ValueError):
        phase_offset_mps(0.0, 1.0, 1500.0)


# -- realtime prediction -------------------------------------------------------

def test_prediction_constant_and_linear():
    dt = 0.5
    const = np.full(600, 1.7)
    z, a = predict_realtime(const, 400, 100, dt)
    assert z == pytest.approx(1.7, abs=1e-12) and a == pytest.approx(0.0, abs=1e-12)
    m = np.arange(600)
    lin = 0.3 + 0.004 * m * dt
    z, a = predict_realtime(lin, 400, 100, dt)
    assert z == pytest.approx(0.3 + 0.004 * 400 * dt, abs=1e-10)
    assert a == pytest.approx(0.004, rel=1e-9)


def test_prediction_needs_history():
    y = np.full(100, np.nan)
    y[50:] = 1.0
    with pytest.raises(InsufficientHistory):
        predict_realtime(y, 140, 100, 1.0)
    with pytest.raises(InsufficientHistory):
        predict_realtime(y, 120, 100, 1.0)


def test_least_squares_slope_ignores_nans():
    y = 2.0 + 0.5 * np.arange(10.0)
    y[3] = np.nan
    assert least_squares_slope(y, 1.0) == pytest.approx(0.5, rel=1e-12)
    assert least_squares_slope(np.array([np.nan, 1.0]), 1.0) == 0.0


def test_prediction_error_on_scenario_kinematics():
    dt = 1.0
    t = np.arange(1201) * dt
    d = np.stack([2000 - 1.1 * t, 5.14 * t - 1.1 * t], axis=1)
    dv = np.array([-1.1, 5.14 - 1.1])
    r = np.hypot(*d.T)
    rdot = d @ dv / r
    rddot = (dv @ dv - rdot**2) / r
    jerk = -3 * rdot * rddot / r
    errors = [abs(predict_realtime(rdot, n, L, dt)[0] - rdot[n]) for n in range(2 * L, 1201)]
    # a least-squares slope centred L/2 behind the anchor doubles the Taylor term
    bound = np.max(np.abs(jerk)) * (L * dt) ** 2
    assert max(errors) < bound


# -- track ---------------------------------------------------------------------

def test_track_latency_and_realtime_validity():
    s = single_mode_series(1.2, dt=1.0, n=600)
    track = range_rate_track(s, CFG)
    assert track.first_valid_index() == L
    assert np.all(np.isnan(track.smoothed[:L])) and np.all(np.isnan(track.smoothed[-L:]))
    assert np.all(np.isnan(track.realtime[: 2 * L]))
    assert np.all(np.isfinite(track.realtime[2 * L:]))
    np.testing.assert_allclose(track.smoothed[L:-L], 1.2, atol=0.01)
    np.testing.assert_allclose(track.realtime[2 * L:], 1.2, atol=0.01)


def test_track_follows_aliases_beyond_half_cycle():
    # 109 Hz at 1 s: the lag frequency wraps above v / (4 f t) = 3.44 m/s
    rd = np.linspace(2.5, 4.5, 900)
    dt, k = 1.0, 2 * np.pi * 109 / 1500
    r = 3000 + np.concatenate([[0.0], np.cumsum(rd[:-1] * dt)])
    p = np.exp(1j * k * r) / np.sqrt(k * r)
    s = PressureFieldSeries((109.0,), dt, p[:, None], r, rd)
    track = range_rate_track(s, CFG)
    ok = np.isfinite(track.smoothed)
    np.testing.assert_allclose(track.smoothed[ok], rd[ok], atol=0.02)


def test_causal_rates_use_only_past_data():
    s = single_mode_series(1.0, dt=1.0, n=800)
    track = range_rate_track(s, CFG)
    n, start = 600, L
    rates = causal_rates(track, n, start)
    assert len(rates) == n - start
    np.testing.assert_array_equal(rates[: n - L - start + 1], track.smoothed[start: n - L + 1])
    # editing the future must not change the result
    future = track.smoothed.copy()
    track.smoothed[n - L + 1:] = 99.0
    np.testing.assert_array_equal(causal_rates(track, n, start), rates)
    track.smoothed = future
    with pytest.raises(InsufficientHistory):
        causal_rates(track, 200, 100)
