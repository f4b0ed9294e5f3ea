import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavenav import harness, wiranging
from wavenav.wiranging import (AllCandidatesInvalid, InsufficientCoverage, NonPositiveRange,
                               NoValidPairs, WiConfig, build_range_axis, calibrate_beta,
                               correlation_coefficient, estimate_range, objective_curve,
                               objective_g, stretch_and_interp)

TONES = (109.0, 127.0, 145.0, 163.0)


# -- range axis ----------------------------------------------------------------

def test_axis_constant_rate():
    axis = build_range_axis(np.full(10, 2.0), 5000.0, 1.0)
    assert len(axis) == 11
    assert axis[0] == 4980.0 and axis[5] == 4990.0 and axis[-1] == 5000.0


def test_axis_zero_rate():
    np.testing.assert_array_equal(build_range_axis(np.zeros(7), 321.0, 0.5), 321.0)


@given(st.lists(st.floats(-5.0, 5.0), min_size=1, max_size=200), st.floats(0.1, 2.0))
@settings(max_examples=60, deadline=None)
def test_axis_telescoping(rates, dt):
    rates = np.array(rates)
    axis = build_range_axis(rates, 1e5, dt)
    np.testing.assert_allclose(np.diff(axis), rates * dt, atol=1e-9)
    assert axis[-1] == 1e5


def test_axis_rejects_non_positive_ranges():
    with pytest.raises(NonPositiveRange):
        build_range_axis(np.full(10, 2.0), 15.0, 1.0)
    with pytest.raises(ValueError):
        build_range_axis(np.array([1.0, np.nan]), 100.0, 1.0)


# -- stretching ----------------------------------------------------------------

def test_identity_stretch():
    axis = build_range_axis(np.full(599, 1.0), 1600.0, 1.0)
    row = np.cos(2 * np.pi * axis / 2000.0)
    J = stretch_and_interp(row, axis, 109.0, 127.0, 1e9, 400)
    # residual is r * ln(f1/f0) / beta * |dI/dr|, below 1e-9 for this row
    np.testing.assert_allclose(J, row[-400:], atol=1e-9, rtol=0)


def test_cosine_stretch_closed_form():
    lam = 1000.0
    axis = build_range_axis(np.full(76_000, 0.5), 20_000.0, 0.5)
    row = np.cos(2 * np.pi * axis / lam)
    N = 40_000
    J = stretch_and_interp(row, axis, 100.0, 200.0, 1.0, N)
    expected = np.cos(2 * np.pi * axis[-N:] / (2 * lam))
    # linear interpolation on nodes 0.5 m apart: h^2 / 8 * max|J''|
    bound = 0.5**2 / 8 * (np.pi / lam) ** 2
    err = np.max(np.abs(J - expected))
    assert err <= bound + 1e-12
    assert err <= 1e-6


def test_stretch_coverage_errors():
    axis = build_range_axis(np.full(99, 1.0), 1000.0, 1.0)
    row = np.ones(100)
    with pytest.raises(InsufficientCoverage):
        stretch_and_interp(row, axis, 100.0, 200.0, 1.0, 60)
    J = stretch_and_interp(row, axis, 100.0, 200.0, 1.0, 60, allow_partial=True)
    assert np.all(np.isnan(J))
    with pytest.raises(InsufficientCoverage):
        stretch_and_interp(row, axis, 100.0, 101.0, 1.0, 60, stretch_len=50)
    with pytest.raises(ValueError):
        stretch_and_interp(row, axis, 200.0, 100.0, 1.0, 60)
    with pytest.raises(ValueError):
        stretch_and_interp(row, axis, 100.0, 200.0, 0.0, 60)


def test_pekeris_striations_align(noiseless_default):
    cfg, series, _, beta = noiseless_default
    n = series.n_snapshots - 1
    axis = series.truth_range_m[: n + 1]
    I = series.intensity()[: n + 1]
    J = stretch_and_interp(I[:, 2], axis, 145.0, 163.0, beta, 600)
    assert correlation_coefficient(J, I[-600:, 3]) > 0.9
    # and the stretch is what aligns them
    assert correlation_coefficient(I[-600:, 2], I[-600:, 3]) < 0.5


# -- objective -----------------------------------------------------------------

def _history(n_cols=900, rate=1.5, r_ref=5000.0, dt=1.0):
    rates = np.full(n_cols - 1, rate)
    return rates, build_range_axis(rates, r_ref, dt)


def test_identical_rows_identity_stretch():
    _, axis = _history()
    row = np.cos(2 * np.pi * axis / 5000.0) + 0.3 * np.sin(2 * np.pi * axis / 1700.0)
    rows = np.tile(row[:, None], (1, 4))
    assert objective_g(rows, axis, TONES, 1e9, 300) == pytest.approx(6.0, abs=1e-9)


def test_anticorrelated_pair():
    _, axis = _history()
    row = np.sin(2 * np.pi * axis / 900.0)
    rows = np.stack([row, 3.0 - row], axis=1)
    assert objective_g(rows, axis, TONES[:2], 1e9, 300) == pytest.approx(-1.0, abs=1e-9)


def test_constant_rows_have_no_valid_pairs():
    _, axis = _history()
    with pytest.raises(NoValidPairs):
        objective_g(np.ones((len(axis), 4)), axis, TONES, 1.0, 300)


@given(st.integers(0, 2**32 - 1), st.floats(0.8, 1.5))
@settings(max_examples=40, deadline=None)
def test_objective_bounds(seed, beta):
    rng = np.random.default_rng(seed)
    _, axis = _history()
    rows = rng.random((len(axis), 4))
    g = objective_g(rows, axis, TONES, beta, 300, min_overlap=0.25)
    assert -6.0 <= g <= 6.0


@given(st.integers(0, 2**32 - 1),
       st.lists(st.floats(1e-3, 1e3), min_size=4, max_size=4),
       st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4))
@settings(max_examples=40, deadline=None)
def test_objective_affine_invariance(seed, scales, shifts):
    rng = np.random.default_rng(seed)
    _, axis = _history()
    rows = rng.random((len(axis), 4))
    g0 = objective_g(rows, axis, TONES, 1.1, 300)
    g1 = objective_g(rows * np.array(scales) + np.array(shifts), axis, TONES, 1.1, 300)
    assert g1 == pytest.approx(g0, abs=1e-9)


def test_vectorised_batch_matches_direct_objective():
    rng = np.random.default_rng(7)
    rates = 1.0 + 0.5 * rng.random(899)
    rows = rng.random((900, 4))
    cfg = WiConfig(TONES, 300, range_grid=(1500.0, 6000.0, 250.0))
    cands, g = objective_curve(rows, rates, cfg, 1.05, 1.0)
    for r, val in zip(cands, g):
        axis = build_range_axis(rates, r, 1.0)
        direct = objective_g(rows, axis, TONES, 1.05, 300, cfg.min_overlap)
        assert val == pytest.approx(direct, abs=1e-9)


def test_candidates_with_non_positive_ranges_are_invalid():
    rates, _ = _history()
    rows = np.random.default_rng(0).random((len(rates) + 1, 4))
    cfg = WiConfig(TONES, 300, range_grid=(100.0, 1300.0, 100.0))
    with pytest.raises(AllCandidatesInvalid):
        estimate_range(rows, rates, cfg, 1.0, 1.0)
    with pytest.raises(InsufficientCoverage):
        estimate_range(rows[:200], rates[:199], cfg, 1.0, 1.0)


# -- estimation on striation-pure data -----------------------------------------

def _striation_rows(axis, tones, beta=1.0):
    """Intensity constant along r / f^(1/beta)."""
    x = axis[:, None] / np.asarray(tones)[None, :] ** (1 / beta)
    return 1.0 + np.cos(2 * np.pi * x / 7.0) + 0.5 * np.cos(2 * np.pi * x / 2.3 + 1.0)


def test_estimate_range_on_striation_data():
    rates, axis = _history(1500, 1.5, 5000.0)
    rows = _striation_rows(axis, TONES)
    cfg = WiConfig(TONES, 600, range_grid=(3000.0, 8000.0, 10.0))
    est = estimate_range(rows, rates, cfg, 1.0, 1.0)
    assert est.range_m == pytest.approx(5000.0, abs=10.0)
    assert est.objective_peak == pytest.approx(6.0, abs=0.05)
    beta = calibrate_beta(rows, rates, cfg, 5000.0, 1.0)
    assert beta.beta == pytest.approx(1.0, abs=0.01)


def test_rate_scaling_scales_range():
    eps = 0.05
    rates, axis = _history(1500, 1.5, 5000.0)
    rows = _striation_rows(axis, TONES)
    cfg = WiConfig(TONES, 600, range_grid=(3000.0, 8000.0, 10.0))
    est = estimate_range(rows, rates * (1 + eps), cfg, 1.0, 1.0)
    assert abs(est.range_m / 5000.0 - (1 + eps)) <= 2 * eps


def test_tone_order_does_not_change_estimate():
    rates, axis = _history(1500, 1.5, 5000.0)
    rows = _striation_rows(axis, TONES) + 0.2 * np.random.default_rng(3).random((1500, 4))
    cfg = WiConfig(TONES, 600, range_grid=(3000.0, 8000.0, 10.0))
    perm = [2, 0, 3, 1]
    cfg_p = WiConfig(tuple(TONES[i] for i in perm), 600, range_grid=cfg.range_grid)
    a = estimate_range(rows, rates, cfg, 1.0, 1.0)
    b = estimate_range(rows[:, perm], rates, cfg_p, 1.0, 1.0)
    assert a.range_m == b.range_m
    np.testing.assert_allclose(a.objective, b.objective, atol=1e-12, equal_nan=True)


def test_ties_go_to_smaller_values(monkeypatch):
    rates, axis = _history()
    rows = _striation_rows(axis, TONES)
    cfg = WiConfig(TONES, 300, range_grid=(3000.0, 6000.0, 100.0))
    monkeypatch.setattr(wiranging, "_objective_batch",
                        lambda rows, D, tones, N, r, b, mo: np.full(len(r), 0.5))
    assert estimate_range(rows, rates, cfg, 1.0, 1.0).range_m == 3000.0
    assert calibrate_beta(rows, rates, cfg, 5000.0, 1.0).beta == 0.8


def test_wi_config_validation():
    with pytest.raises(ValueError):
        WiConfig((109.0,))
    with pytest.raises(ValueError):
        WiConfig((109.0, 109.0))
    with pytest.raises(ValueError):
        WiConfig(TONES, min_overlap=0.0)
    with pytest.raises(ValueError):
        WiConfig(TONES, range_grid=(10.0, 5.0, 1.0))
    assert len(WiConfig(TONES).pairs()) == 6
    with pytest.raises(ValueError):
        calibrate_beta(np.ones((10, 4)), np.ones(9), WiConfig(TONES, 5), -1.0, 1.0)


# -- Pekeris pipeline ----------------------------------------------------------

def test_noiseless_pekeris_peak_dominance(noiseless_default):
    cfg, series, track, beta = noiseless_default
    n = series.n_snapshots - 1
    est = harness.range_fix(cfg, series, track, n, beta)
    true_r = series.truth_range_m[n]
    cands, g = est.candidates_m, est.objective
    g_true = np.interp(true_r, cands, g)
    for factor in (0.8, 1.2):
        assert g_true > np.interp(factor * true_r, cands, g)
