"""Euler-Maruyama simulation of the forward and reverse dynamics.

The forward process relaxes data toward the N(0, I/L) equilibrium;
the reverse process starts from that equilibrium and integrates the
time-reversed drift, consuming a learned (or analytic) s-channel score.
Noise enters only the acceleration channel in both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsParams, PhaseState, diffusion_coefficient

__all__ = [
    "SimulationError",
    "EMConfig",
    "Trajectory",
    "forward_simulate",
    "reverse_sample",
]


class SimulationError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, step_index: int, what: str):
        self.step_index = step_index
        super().__init__(f"non-finite state at step {step_index} ({what})")


@dataclass(frozen=True)
class EMConfig:
    """Uniform-grid Euler-Maruyama settings.

    noise_scale 1 is the physical SDE; 0 switches the diffusion off,
    leaving the deterministic drift ODE used by convergence tests.
    """

    n_steps: int
    horizon: float
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not 0.0 <= self.noise_scale <= 1.0:
            raise ValueError(f"noise_scale must lie in [0, 1], got {self.noise_scale}")


@dataclass(frozen=True)
class Trajectory:
    """States at every step boundary, n_steps + 1 frames from 0 to horizon."""

    frames: tuple

    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.frames])

    def q_histograms(self, bins: int = 60, lim: float | None = None):
        """Per-frame histogram of the q channel, for density-map export.

        Returns (times, edges, counts) with counts shaped
        (n_frames, bins). A common range keeps rows comparable; by
        default it spans the widest frame.
        """
        qs = [state.q.ravel() for _, state in self.frames]
        if lim is None:
            lim = max(float(np.abs(q).max()) for q in qs)
        edges = np.linspace(-lim, lim, bins + 1)
        counts = np.stack([np.histogram(q, bins=edges)[0] for q in qs])
        return self.times(), edges, counts


def _forward_step(params, q, p, s, dt, zeta, noise_scale):
    # Drift F x; diffusion touches only s.
    g = params.gamma
    qn = q + p * dt
    pn = p + (-q + g * s) * dt
    sn = s + (-g * p - params.xi * s) * dt
    sn = sn + noise_scale * diffusion_coefficient(params) * np.sqrt(dt) * zeta
    return qn, pn, sn


def forward_simulate(params: DynamicsParams, q0: np.ndarray, cfg: EMConfig, rng) -> Trajectory:
    """Integrate the forward dynamics from data q0.

    Momentum and acceleration start at N(0, (alpha/L) I) as in the
    training kernel; q0 is taken as given. Draw order: p0, s0, then one
    (batch, dim) normal block per step.
    """
    q = np.asarray(q0, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    n, d = q.shape
    sd0 = np.sqrt(params.alpha / params.lipschitz)
    p = sd0 * rng.standard_normal((n, d))
    s = sd0 * rng.standard_normal((n, d))
    dt = cfg.horizon / cfg.n_steps

    frames = [(0.0, PhaseState(q=q, p=p, s=s))]
    for k in range(cfg.n_steps):
        zeta = rng.standard_normal((n, d))
        q, p, s = _forward_step(params, q, p, s, dt, zeta, cfg.noise_scale)
        if not (np.isfinite(q).all() and np.isfinite(p).all() and np.isfinite(s).all()):
            raise SimulationError(k + 1, "forward")
        frames.append((cfg.horizon * (k + 1) / cfg.n_steps, PhaseState(q=q, p=p, s=s)))
    return Trajectory(frames=tuple(frames))


def reverse_sample(
    params: DynamicsParams,
    score,
    cfg: EMConfig,
    rng,
    n_samples: int,
    dim: int = 2,
) -> np.ndarray:
    """Draw n_samples d-vectors by integrating the reverse dynamics.

    Starts from the equilibrium N(0, I/L) on all three channels and
    steps sampler time tau from 0 to horizon, querying the score at
    forward time t = horizon - tau. score maps (PhaseState, t) to a
    (batch, dim) array estimating the s-channel score of the forward
    marginal at t. Returns the terminal q batch.
    """
    sd = np.sqrt(1.0 / params.lipschitz)
    q = sd * rng.standard_normal((n_samples, dim))
    p = sd * rng.standard_normal((n_samples, dim))
    s = sd * rng.standard_normal((n_samples, dim))
    g, xi, L = params.gamma, params.xi, params.lipschitz
    diff = diffusion_coefficient(params)
    dt = cfg.horizon / cfg.n_steps

    for k in range(cfg.n_steps):
        t = cfg.horizon * (cfg.n_steps - k) / cfg.n_steps
        sc = np.asarray(score(PhaseState(q=q, p=p, s=s), t), dtype=float)
        if sc.shape != (n_samples, dim):
            raise ValueError(f"score returned shape {sc.shape}, expected {(n_samples, dim)}")
        zeta = rng.standard_normal((n_samples, dim))
        qn = q - p * dt
        pn = p + (q - g * s) * dt
        sn = s + (g * p + xi * s + (2.0 * xi / L) * sc) * dt
        sn = sn + cfg.noise_scale * diff * np.sqrt(dt) * zeta
        q, p, s = qn, pn, sn
        if not (np.isfinite(q).all() and np.isfinite(p).all() and np.isfinite(s).all()):
            raise SimulationError(k + 1, "reverse")
    return q
