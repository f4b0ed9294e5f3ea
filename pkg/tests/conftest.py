import numpy as np
import pytest

from wavenav.waveguide import ModeSet, PressureFieldSeries

ACCEPTANCE_LINES: list = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    """Queue a PASS/FAIL line for the terminal summary."""
    ACCEPTANCE_LINES.append((number, "PASS" if passed else "FAIL", detail))


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")


def single_mode(f_hz: float, speed_mps: float = 1500.0, depth_m: float = 200.0) -> ModeSet:
    """One mode with unit amplitude at every depth and phase speed ``speed_mps``."""
    z = np.arange(0.0, depth_m + 1.0)
    return ModeSet(f_hz, np.array([2 * np.pi * f_hz / speed_mps]), z, np.ones((1, len(z))))


def single_mode_series(rdot: float, f_hz: float = 109.0, dt: float = 1.0, n: int = 241,
                       r0: float = 3000.0, speed_mps: float = 1500.0, amplitude: float = 1.0):
    """Unit-mode field ``e^{jkr}/sqrt(kr)`` of a source receding at constant ``rdot``."""
    k = 2 * np.pi * f_hz / speed_mps
    r = r0 + rdot * dt * np.arange(n)
    p = amplitude * np.exp(1j * k * r) / np.sqrt(k * r)
    return PressureFieldSeries((f_hz,), dt, p[:, None], r, np.full(n, rdot))


@pytest.fixture(scope="session")
def noiseless_default():
    """Noiseless straight-line run of the default scenario with its range-rate track."""
    from wavenav import harness, navfilter
    from wavenav.config import default_paper_scenario

    cfg = default_paper_scenario()
    truth = navfilter.propagate_truth(cfg.auv.build(), cfg.motion_model(), cfg.n_snapshots,
                                      np.random.default_rng(0), driving_noise=False)
    series = harness.synthesize(cfg, truth, np.inf, 0)
    track = harness.track_range_rate(cfg, series)
    return cfg, series, track, harness.resolve_beta(cfg)
