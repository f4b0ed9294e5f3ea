import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from conftest import single_mode_series
from wavenav.rangerate import (RangeRateConfig, difference_product, estimate_range_rate,
                               phase_offset_mps, range_rate_track)
from wavenav.sigproc import (SNR_CAP_DB, CorruptHeader, DftConfig, EmptyBinSet, Spectrogram,
                             ToneOutOfBand, TooFewSamples, UnsupportedEncoding, estimate_snr,
                             frame_and_dft, hann_kernel_ratio, load_wav, render_audio,
                             write_wav)
from wavenav.waveguide import PressureFieldSeries

FIELD_DFT = DftConfig(3276.8, 3276, 0.0, "hann")


def test_snapshot_interval_field_settings():
    assert FIELD_DFT.snapshot_interval_s == pytest.approx(0.99975586, abs=1e-8)
    assert FIELD_DFT.snapshot_interval_s == 3276 / 3276.8
    half = DftConfig(3276.8, 3276, 0.5)
    assert half.hop == 1638
    assert half.snapshot_interval_s == 1638 / 3276.8


@pytest.mark.parametrize("kwargs", [
    dict(sample_rate_hz=1000.0, n_dft=101, overlap=0.5),
    dict(sample_rate_hz=1000.0, n_dft=100, overlap=1.0),
    dict(sample_rate_hz=0.0, n_dft=100),
    dict(sample_rate_hz=1000.0, n_dft=0),
])
def test_dft_config_validation(kwargs):
    with pytest.raises(ValueError):
        DftConfig(**kwargs)


@pytest.mark.parametrize("overlap", [0.0, 0.5, 0.75])
def test_pure_tone_at_bin_centre(overlap):
    cfg = DftConfig(1024.0, 256, overlap, "rect")
    f = 37 * cfg.bin_width_hz
    t = np.arange(256 * 40) / cfg.sample_rate_hz
    series, _ = frame_and_dft(np.exp(2j * np.pi * f * t), cfg, (f,))
    p = series.tone(f)
    np.testing.assert_allclose(np.abs(p), 256.0, rtol=1e-10)
    step = p[1:] / p[:-1]
    expected = np.exp(2j * np.pi * f * cfg.snapshot_interval_s)
    np.testing.assert_allclose(step, expected, atol=1e-9)


@pytest.mark.parametrize("offset", [0.1, 0.25, 0.4, 0.5])
def test_hann_off_bin_kernel(offset):
    n = 3276
    hann = DftConfig(3276.8, n, 0.0, "hann")
    rect = DftConfig(3276.8, n, 0.0, "rect")
    f = (100 + offset) * hann.bin_width_hz
    t = np.arange(n) / hann.sample_rate_hz
    x = np.exp(2j * np.pi * f * t)
    ph, _ = frame_and_dft(x, hann, (f,))
    pr, _ = frame_and_dft(x, rect, (f,))
    measured = abs(ph.samples[0, 0]) / abs(pr.samples[0, 0])
    # continuous-kernel ratio: Hann = 0.5 sinc(d) / (1 - d^2)
    assert measured == pytest.approx(1 / (2 * (1 - offset**2)), abs=1e-6)
    assert hann_kernel_ratio(offset, n) == pytest.approx(measured, rel=1e-9)


@given(st.integers(0, 2**31), st.sampled_from(["hann", "rect"]))
@settings(max_examples=20, deadline=None)
def test_parseval(seed, window):
    rng = np.random.default_rng(seed)
    cfg = DftConfig(1000.0, 128, 0.5, window)
    x = rng.standard_normal(128 * 6) + 1j * rng.standard_normal(128 * 6)
    _, spec = frame_and_dft(x, cfg, (10.0,))
    frames = np.lib.stride_tricks.sliding_window_view(x, 128)[::64][: spec.intensity.shape[0]]
    energy = np.sum(np.abs(frames * cfg.taper()) ** 2, axis=1)
    np.testing.assert_allclose(spec.intensity.sum(axis=1), 128 * energy, rtol=1e-6)


def test_parseval_one_sided_real():
    rng = np.random.default_rng(0)
    cfg = DftConfig(1000.0, 128, 0.0, "hann")
    x = rng.standard_normal(128 * 5)
    _, spec = frame_and_dft(x, cfg, (10.0,))
    I = spec.intensity
    total = I[:, 0] + I[:, -1] + 2 * I[:, 1:-1].sum(axis=1)
    energy = np.sum((x.reshape(5, 128) * cfg.taper()) ** 2, axis=1)
    np.testing.assert_allclose(total, 128 * energy, rtol=1e-6)


def test_snapshot_timing_and_frame_count():
    cfg = DftConfig(3276.8, 3276, 0.5)
    x = np.zeros(3276 + 1638 * 9 + 100)
    series, spec = frame_and_dft(x, cfg, (109.0,))
    assert series.n_snapshots == 10
    assert np.all(np.diff(spec.times()) == cfg.snapshot_interval_s)
    assert spec.times()[3] == 3 * cfg.snapshot_interval_s


def test_frame_errors():
    cfg = DftConfig(1000.0, 100)
    with pytest.raises(TooFewSamples):
        frame_and_dft(np.zeros(99), cfg, (10.0,))
    with pytest.raises(ToneOutOfBand):
        frame_and_dft(np.zeros(200), cfg, (500.0,))
    with pytest.raises(ToneOutOfBand):
        frame_and_dft(np.zeros(200), cfg, (-1.0,))


# -- WAV -------------------------------------------------------------------------

def test_wav_pcm16_sample_count_and_scaling(tmp_path):
    path = tmp_path / "a.wav"
    data = np.zeros(3277, np.int16)
    data[0] = 32767
    data[1] = -32768
    wavfile.write(path, 3277, data)
    x, rate = load_wav(path)
    assert len(x) == 3277 and rate == 3277.0
    assert x[0] == 32767 / 32768 and x[1] == -1.0


def test_wav_round_trips(tmp_path):
    rng = np.random.default_rng(1)
    noise = rng.uniform(-1, 1, 5000)
    p32 = tmp_path / "f.wav"
    write_wav(p32, noise, 3276.8, "float32")
    back, _ = load_wav(p32)
    assert np.array_equal(back, noise.astype(np.float32).astype(np.float64))
    q = np.round(noise * 32767) / 32768
    p16 = tmp_path / "i.wav"
    write_wav(p16, q, 3276.8, "pcm16")
    back16, rate = load_wav(p16)
    assert rate == 3277.0
    assert np.array_equal(back16, q)


def test_wav_channel_selection(tmp_path):
    path = tmp_path / "st.wav"
    data = np.stack([np.full(10, 0.25), np.full(10, -0.5)], axis=1).astype(np.float32)
    wavfile.write(path, 8000, data)
    assert np.all(load_wav(path, 1)[0] == -0.5)
    with pytest.raises(ValueError):
        load_wav(path, 2)


def test_wav_unsupported_and_corrupt(tmp_path):
    p = tmp_path / "i32.wav"
    wavfile.write(p, 8000, np.zeros(10, np.int32))
    with pytest.raises(UnsupportedEncoding):
        load_wav(p)
    good = tmp_path / "g.wav"
    wavfile.write(good, 8000, np.zeros(10, np.int16))
    raw = bytearray(good.read_bytes())
    raw[20:22] = (2).to_bytes(2, "little")  # ADPCM format tag
    adpcm = tmp_path / "adpcm.wav"
    adpcm.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedEncoding):
        load_wav(adpcm)
    junk = tmp_path / "junk.wav"
    junk.write_bytes(b"not a riff file at all" * 4)
    with pytest.raises(CorruptHeader):
        load_wav(junk)
    with pytest.raises(UnsupportedEncoding):
        write_wav(tmp_path / "x.wav", np.zeros(4), 8000, "mp3")


# -- SNR -------------------------------------------------------------------------

def test_snr_noiseless_is_capped():
    I = np.zeros((4, 64))
    I[:, 10] = 1.0
    assert estimate_snr(I, [10]) == SNR_CAP_DB


def test_snr_equal_power_is_zero():
    I = np.ones((4, 64))
    assert estimate_snr(I, [10, 20], [30, 31, 32]) == pytest.approx(0.0, abs=1e-12)


def test_snr_errors():
    I = np.ones((4, 64))
    with pytest.raises(EmptyBinSet):
        estimate_snr(I, [])
    with pytest.raises(EmptyBinSet):
        estimate_snr(I, [10], [])
    with pytest.raises(ValueError):
        estimate_snr(I, [10], [10, 11])


def test_snr_of_rendered_audio():
    cfg = DftConfig(3276.8, 3276, 0.5)
    tones = (109.0, 127.0, 145.0, 163.0)
    n = 400
    phase = np.exp(1j * np.linspace(0, 3, len(tones)))
    series = PressureFieldSeries(tones, cfg.snapshot_interval_s, np.tile(phase, (n, 1)))
    audio = render_audio(series, cfg, snr_db=12.0, seed=3)
    _, spec = frame_and_dft(audio.samples, cfg, tones, "synthetic")
    assert estimate_snr(spec, spec.bins_near(tones)) == pytest.approx(12.0, abs=1.0)


def test_spectrogram_csv(tmp_path):
    spec = Spectrogram(np.arange(6.0).reshape(2, 3), [0.0, 1.5, 3.0], 0.5, "synthetic")
    path = tmp_path / "s.csv"
    spec.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time_s,0.0,1.5,3.0"
    assert lines[2] == "0.5,3.0,4.0,5.0"
    with pytest.raises(ValueError):
        Spectrogram(-np.ones((2, 3)), [0, 1, 2], 0.5)


# -- carrier phase offset through the audio path -------------------------------

RR = RangeRateConfig(120, 109.0, 1500.0, 16, (0.0, 10.0))


def _rendered_tone(rdot):
    dt = FIELD_DFT.snapshot_interval_s
    s = single_mode_series(rdot, 109.0, dt, 241)
    audio = render_audio(s, FIELD_DFT, np.inf, real=True)
    series, _ = frame_and_dft(audio.samples, FIELD_DFT, (109.0,))
    return PressureFieldSeries(series.tones_hz, dt, series.samples, s.truth_range_m,
                               s.truth_range_rate_mps)


@pytest.mark.parametrize("rdot", [1.0, 2.0])
def test_fractional_carrier_cycle_biases_raw_estimate(rdot):
    series = _rendered_tone(rdot)
    dt = series.snapshot_interval_s
    raw = estimate_range_rate(difference_product(series.tone(109.0), 120, 120), RR, dt)
    assert raw - rdot == pytest.approx(phase_offset_mps(109.0, dt, 1500.0), abs=0.01)


@pytest.mark.parametrize("mode", ["subtract", "complex"])
def test_phase_compensation_removes_bias(mode):
    series = _rendered_tone(2.0)
    cfg = RangeRateConfig(120, 109.0, 1500.0, 16, (0.0, 10.0), phase_compensation=mode)
    track = range_rate_track(series, cfg)
    assert track.smoothed[120] == pytest.approx(2.0, abs=0.01)
