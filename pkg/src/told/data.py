"""Toy dataset generators: a three-mode Gaussian mixture and a 2-D spiral.

The mixture is the 1-D forward-convergence benchmark; the spiral (swiss
roll) is the 2-D training benchmark. The spiral is normalized by its
analytic population moments rather than per-batch statistics so every
batch is identically distributed and the normalization is exactly
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GmmSpec",
    "SwissRollSpec",
    "default_gmm",
    "sample_gmm",
    "swiss_roll_moments",
    "sample_swiss_roll",
    "write_samples_csv",
    "read_samples_csv",
]


@dataclass(frozen=True)
class GmmSpec:
    """1-D mixture; components are (weight, mean, variance) triples."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), float(m), float(v)) for w, m, v in self.components)
        if not comps:
            raise ValueError("mixture needs at least one component")
        total = sum(w for w, _, _ in comps)
        if any(w <= 0 for w, _, _ in comps) or abs(total - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if any(v <= 0 for _, _, v in comps):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "components", comps)

    def mean(self) -> float:
        return sum(w * m for w, m, _ in self.components)

    def variance(self) -> float:
        mu = self.mean()
        return sum(w * (v + m * m) for w, m, v in self.components) - mu * mu


def default_gmm() -> GmmSpec:
    """The benchmark mixture 0.2 N(0, 0.5) + 0.4 N(5, 1) + 0.4 N(-5, 1)."""
    return GmmSpec(components=((0.2, 0.0, 0.5), (0.4, 5.0, 1.0), (0.4, -5.0, 1.0)))


def sample_gmm(spec: GmmSpec, n: int, rng) -> np.ndarray:
    """n scalar draws: categorical component choice, then a Gaussian draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    weights = np.array([w for w, _, _ in spec.components])
    means = np.array([m for _, m, _ in spec.components])
    stds = np.sqrt([v for _, _, v in spec.components])
    comp = rng.choice(len(weights), size=n, p=weights)
    eps = rng.standard_normal(n)
    return means[comp] + stds[comp] * eps


@dataclass(frozen=True)
class SwissRollSpec:
    """2-D spiral (theta cos theta, theta sin theta), theta uniform.

    theta spans [1.5 pi, 1.5 pi + 2 pi n_turns]; the cloud is shifted
    and scaled by its analytic moments to zero mean and per-axis std
    `scale`, then optional isotropic noise (in output units) is added.
    """

    n_turns: float = 1.5
    noise_std: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0 or self.n_turns <= 0 or self.noise_std < 0:
            raise ValueError("scale and n_turns must be positive, noise_std nonnegative")

    @property
    def theta_range(self) -> tuple[float, float]:
        lo = 1.5 * np.pi
        return lo, lo + 2.0 * np.pi * self.n_turns


def swiss_roll_moments(spec: SwissRollSpec):
    """Population mean and std of the raw (unnormalized) spiral.

    Closed forms over theta ~ U(a, b):
      E[th cos th]      from d/dth (cos th + th sin th)
      E[th sin th]      from d/dth (sin th - th cos th)
      E[th^2 cos^2 th]  from th^3/6 + (th^2/4 - 1/8) sin 2th + (th/4) cos 2th
    and E[th^2 sin^2 th] = E[th^2] - E[th^2 cos^2 th].
    """
    a, b = spec.theta_range
    w = b - a

    def anti_c(th):
        return np.cos(th) + th * np.sin(th)

    def anti_s(th):
        return np.sin(th) - th * np.cos(th)

    def anti_c2(th):
        return th ** 3 / 6.0 + (th ** 2 / 4.0 - 0.125) * np.sin(2 * th) + (th / 4.0) * np.cos(2 * th)

    ec = (anti_c(b) - anti_c(a)) / w
    es = (anti_s(b) - anti_s(a)) / w
    e2 = (b ** 3 - a ** 3) / (3.0 * w)
    ec2 = (anti_c2(b) - anti_c2(a)) / w
    es2 = e2 - ec2
    mean = np.array([ec, es])
    std = np.sqrt(np.array([ec2 - ec * ec, es2 - es * es]))
    return mean, std


def sample_swiss_roll(spec: SwissRollSpec, n: int, rng) -> np.ndarray:
    """n normalized 2-D spiral points. Draw order: theta, then noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    a, b = spec.theta_range
    theta = rng.uniform(a, b, n)
    raw = np.stack([theta * np.cos(theta), theta * np.sin(theta)], axis=1)
    mean, std = swiss_roll_moments(spec)
    out = (raw - mean) / std * spec.scale
    if spec.noise_std > 0:
        out = out + spec.noise_std * rng.standard_normal((n, 2))
    return out


def write_samples_csv(path, samples: np.ndarray) -> None:
    arr = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w") as fh:
        fh.write(",".join(f"x{i}" for i in range(arr.shape[1])) + "\n")
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_samples_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
