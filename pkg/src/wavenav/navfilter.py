"""Bootstrap particle filter for AUV navigation with acoustic range fixes.

State per particle: ``[x, y, vx, vy, heading_deg]`` in the world frame (x
east, y north, heading 0 deg east and counterclockwise positive). The motion
model is nearly constant velocity with a random-walk heading. Measurements
are an optional range to a source of opportunity (SOO) on a known straight
track, a body-frame velocity from a DVL and a compass heading.

Weights are kept as log-weights so that sharp range likelihoods over a wide
prior do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp


def wrap_deg(a):
    """Wrap angles to [0, 360)."""
    w = np.mod(a, 360.0)
    return np.where(w >= 360.0, 0.0, w)


def wrap_signed_deg(a):
    """Wrap angle differences to (-180, 180]."""
    w = 180.0 - np.mod(180.0 - np.asarray(a, dtype=float), 360.0)
    return w


@dataclass(frozen=True)
class AuvState:
    x: float
    y: float
    vx: float
    vy: float
    heading_deg: float

    def __post_init__(self):
        vals = (self.x, self.y, self.vx, self.vy, self.heading_deg)
        if not np.all(np.isfinite(vals)):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "heading_deg", float(wrap_deg(self.heading_deg)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.heading_deg])

    @classmethod
    def from_array(cls, a) -> "AuvState":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class MotionModel:
    """Nearly constant velocity model with driving noise ``U diag(...) U^T``.

    ``accel_std`` is the linear acceleration STD and ``turn_rate_std_deg`` the
    turn-rate STD in degrees per second.
    """

    snapshot_interval_s: float
    accel_std: float = 0.02
    turn_rate_std_deg: float = 0.5

    def __post_init__(self):
        if not self.snapshot_interval_s > 0:
            raise ValueError("snapshot interval must be positive")
        if self.accel_std < 0 or self.turn_rate_std_deg < 0:
            raise ValueError("noise STDs must be nonnegative")

    def transition(self) -> np.ndarray:
        F = np.eye(5)
        F[0, 2] = F[1, 3] = self.snapshot_interval_s
        return F

    def noise_gain(self) -> np.ndarray:
        t = self.snapshot_interval_s
        U = np.zeros((5, 3))
        U[0, 0] = U[1, 1] = t**2 / 2
        U[2, 0] = U[3, 1] = t
        U[4, 2] = t
        return U

    def noise_stds(self) -> np.ndarray:
        return np.array([self.accel_std, self.accel_std, self.turn_rate_std_deg])

    def covariance(self) -> np.ndarray:
        U = self.noise_gain()
        return U @ np.diag(self.noise_stds() ** 2) @ U.T


@dataclass(frozen=True)
class NoiseModel:
    range_std_m: float = 150.0
    velocity_std_mps: float = 0.02
    heading_std_deg: float = 0.5

    def __post_init__(self):
        if min(self.range_std_m, self.velocity_std_mps, self.heading_std_deg) <= 0:
            raise ValueError("measurement noise STDs must be positive")


@dataclass(frozen=True)
class SooTrack:
    position0: tuple
    velocity: tuple

    def __post_init__(self):
        p, v = np.asarray(self.position0, float), np.asarray(self.velocity, float)
        if p.shape != (2,) or v.shape != (2,) or not np.all(np.isfinite(np.r_[p, v])):
            raise ValueError("SOO position and velocity must be finite 2-vectors")
        object.__setattr__(self, "position0", tuple(p))
        object.__setattr__(self, "velocity", tuple(v))

    def position_at(self, t_s: float) -> np.ndarray:
        return np.asarray(self.position0) + t_s * np.asarray(self.velocity)


@dataclass(frozen=True)
class MeasurementBundle:
    velocity_body: tuple
    heading_deg: float
    soo_position: tuple
    range_m: Optional[float] = None

    def __post_init__(self):
        vals = list(self.velocity_body) + [self.heading_deg] + list(self.soo_position)
        if self.range_m is not None:
            vals.append(self.range_m)
        if not np.all(np.isfinite(vals)):
            raise ValueError("measurement components must be finite")


def world_to_body(heading_deg, v_world: np.ndarray) -> np.ndarray:
    """Rotate world-frame velocities ``(..., 2)`` into the body frame."""
    th = np.radians(heading_deg)
    c, s = np.cos(th), np.sin(th)
    vx, vy = v_world[..., 0], v_world[..., 1]
    return np.stack([c * vx + s * vy, -s * vx + c * vy], axis=-1)


class WeightCollapse(RuntimeError):
    pass


@dataclass
class ParticleSet:
    """Particles ``(N, 5)`` with normalised log-weights and a private RNG.

    ``range_informed`` records whether a position-dependent likelihood has
    entered the weights since the last resampling.
    """

    states: np.ndarray
    log_weights: np.ndarray
    rng: np.random.Generator
    range_informed: bool = False

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 5 or len(self.states) < 1:
            raise ValueError("states must be shaped (N, 5) with N >= 1")
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.log_weights.shape != (len(self.states),):
            raise ValueError("one log-weight per particle")

    @classmethod
    def from_prior(cls, mean: AuvState, position_std_m: float, velocity_std_mps: float,
                   heading_std_deg: float, n_particles: int, seed=0) -> "ParticleSet":
        rng = np.random.default_rng(seed)
        stds = np.array([position_std_m, position_std_m, velocity_std_mps, velocity_std_mps,
                         heading_std_deg])
        states = mean.as_array() + rng.standard_normal((n_particles, 5)) * stds
        states[:, 4] = wrap_deg(states[:, 4])
        return cls(states, np.full(n_particles, -np.log(n_particles)), rng)

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def ess(self) -> float:
        return float(np.exp(-logsumexp(2 * self.log_weights)))


def predict(particles: ParticleSet, motion: MotionModel) -> ParticleSet:
    """Propagate every particle through the motion model (in place) and return it."""
    x = particles.states
    t = motion.snapshot_interval_s
    u = particles.rng.standard_normal((particles.n, 3)) * motion.noise_stds()
    x[:, 0] += t * x[:, 2] + 0.5 * t**2 * u[:, 0]
    x[:, 1] += t * x[:, 3] + 0.5 * t**2 * u[:, 1]
    x[:, 2] += t * u[:, 0]
    x[:, 3] += t * u[:, 1]
    x[:, 4] = wrap_deg(x[:, 4] + t * u[:, 2])
    return particles


def log_likelihood(states: np.ndarray, z: MeasurementBundle, noise: NoiseModel) -> np.ndarray:
    """Per-particle log-likelihood of ``z`` up to an additive constant."""
    ll = np.zeros(len(states))
    if z.range_m is not None:
        d = np.hypot(states[:, 0] - z.soo_position[0], states[:, 1] - z.soo_position[1])
        ll -= 0.5 * ((z.range_m - d) / noise.range_std_m) ** 2
    vb = world_to_body(states[:, 4], states[:, 2:4])
    ll -= 0.5 * np.sum((np.asarray(z.velocity_body) - vb) ** 2, axis=1) / noise.velocity_std_mps**2
    dh = wrap_signed_deg(z.heading_deg - states[:, 4])
    ll -= 0.5 * (dh / noise.heading_std_deg) ** 2
    return ll


def update(particles: ParticleSet, z: MeasurementBundle, noise: NoiseModel) -> ParticleSet:
    """Bayes update of the log-weights (in place); returns the particle set."""
    lw = particles.log_weights + log_likelihood(particles.states, z, noise)
    norm = logsumexp(lw)
    if not np.isfinite(norm):
        raise WeightCollapse("all particle likelihoods vanished")
    particles.log_weights = lw - norm
    if z.range_m is not None:
        particles.range_informed = True
    return particles


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample_and_roughen(particles: ParticleSet, ess_threshold: float = 0.5,
                         roughen_std_m: float = 10.0, keep_uninformed_positions: bool = False
                         ) -> bool:
    """Systematic resampling when ESS drops below ``ess_threshold * N``.

    After resampling, weights are uniform and Gaussian jitter of
    ``roughen_std_m`` is added to positions only. Returns whether
    resampling happened.

    With ``keep_uninformed_positions``, a resampling whose weights came only
    from velocity and heading likelihoods redraws the velocity and heading
    columns and leaves the positions of the cloud in place before roughening.
    Those likelihoods carry no position information, so this avoids
    collapsing the position cloud onto a few ancestors during long stretches
    of dead reckoning.
    """
    if particles.ess() >= ess_threshold * particles.n:
        return False
    idx = systematic_resample(particles.weights, particles.rng)
    if keep_uninformed_positions and not particles.range_informed:
        # keep positions, shuffle the resampled kinematics across them
        perm = particles.rng.permutation(particles.n)
        particles.states[:, 2:] = particles.states[idx[perm], 2:]
    else:
        particles.states = particles.states[idx]
    if roughen_std_m > 0:
        particles.states[:, :2] += particles.rng.standard_normal((particles.n, 2)) * roughen_std_m
    particles.log_weights = np.full(particles.n, -np.log(particles.n))
    particles.range_informed = False
    return True


def mmse_estimate(particles: ParticleSet) -> AuvState:
    """Weighted mean state with a circular mean for the heading."""
    w = particles.weights
    w = w / w.sum()
    x = particles.states
    mean = w @ x[:, :4]
    th = np.radians(x[:, 4])
    heading = np.degrees(np.arctan2(w @ np.sin(th), w @ np.cos(th)))
    return AuvState(*mean, float(wrap_deg(heading)))


def position_covariance(particles: ParticleSet) -> np.ndarray:
    w = particles.weights
    w = w / w.sum()
    d = particles.states[:, :2] - w @ particles.states[:, :2]
    return (w[:, None] * d).T @ d


def propagate_truth(x0: AuvState, motion: MotionModel, n_steps: int, rng: np.random.Generator,
                    driving_noise: bool = True) -> np.ndarray:
    """Truth trajectory ``(n_steps, 5)`` under the motion model."""
    if driving_noise:
        ps = ParticleSet(x0.as_array()[None, :].copy(), np.zeros(1), rng)
        out = np.empty((n_steps, 5))
        out[0] = ps.states[0]
        for n in range(1, n_steps):
            predict(ps, motion)
            out[n] = ps.states[0]
        return out
    t = np.arange(n_steps) * motion.snapshot_interval_s
    out = np.tile(x0.as_array(), (n_steps, 1))
    out[:, 0] += t * x0.vx
    out[:, 1] += t * x0.vy
    return out


def simulate_measurements(truth: np.ndarray, noise: NoiseModel, rng: np.random.Generator):
    """Noisy DVL (body frame) and compass readings for each truth state."""
    vb = world_to_body(truth[:, 4], truth[:, 2:4])
    vb = vb + rng.standard_normal(vb.shape) * noise.velocity_std_mps
    hd = wrap_deg(truth[:, 4] + rng.standard_normal(len(truth)) * noise.heading_std_deg)
    return vb, hd
