"""Sample-set comparison metrics.

Gaussian-Frechet distance (the FID computation applied to raw feature
vectors), exact 1-D Wasserstein between empirical distributions, and
Welch's unequal-variance t-test for comparing score populations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

__all__ = [
    "MetricError",
    "FrechetResult",
    "TTestResult",
    "gaussian_frechet",
    "wasserstein_1d",
    "wasserstein_1d_gaussian",
    "welch_t_test",
]

_EIG_CLAMP = -1e-10


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class FrechetResult:
    distance: float
    mean_diff_sq: float
    trace_term: float
    n_x: int
    n_y: int


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(S)
    if vals.min() < _EIG_CLAMP:
        raise MetricError(f"matrix has negative eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def gaussian_frechet(X: np.ndarray, Y: np.ndarray) -> FrechetResult:
    """Frechet distance between Gaussian fits of two sample sets.

    ||mu_x - mu_y||^2 + tr(Sx) + tr(Sy) - 2 tr((Sx^1/2 Sy Sx^1/2)^1/2),
    with the matrix square roots taken through symmetric
    eigendecompositions and eigenvalues below -1e-10 rejected as
    degenerate (tinier negatives are clamped to zero).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X.shape[1]
    if X.shape[0] < d + 1 or Y.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} samples per set")

    mu_x, mu_y = X.mean(axis=0), Y.mean(axis=0)
    sx = np.cov(X, rowvar=False).reshape(d, d)
    sy = np.cov(Y, rowvar=False).reshape(d, d)
    for name, s in (("X", sx), ("Y", sy)):
        if np.linalg.matrix_rank(s, tol=1e-12) < d:
            raise MetricError(f"degenerate covariance for {name}")

    rx = _psd_sqrt(sx)
    cross = _psd_sqrt(rx @ sy @ rx)
    mean_diff_sq = float(((mu_x - mu_y) ** 2).sum())
    trace_term = float(np.trace(sx) + np.trace(sy) - 2.0 * np.trace(cross))
    return FrechetResult(
        distance=mean_diff_sq + trace_term,
        mean_diff_sq=mean_diff_sq,
        trace_term=trace_term,
        n_x=X.shape[0],
        n_y=Y.shape[0],
    )


def wasserstein_1d(X: np.ndarray, Y: np.ndarray) -> float:
    """Exact W1 between the empirical laws of two scalar samples.

    Integrates |F_X^{-1}(u) - F_Y^{-1}(u)| over the union of both
    samples' quantile breakpoints, so unequal sizes are handled without
    interpolation error.
    """
    xs = np.sort(np.asarray(X, dtype=float).ravel())
    ys = np.sort(np.asarray(Y, dtype=float).ravel())
    if xs.size == 0 or ys.size == 0:
        raise ValueError("empty sample")
    n, m = xs.size, ys.size
    cuts = np.union1d(np.arange(1, n) / n, np.arange(1, m) / m)
    edges = np.concatenate([[0.0], cuts, [1.0]])
    widths = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    xi = np.minimum((mids * n).astype(int), n - 1)
    yi = np.minimum((mids * m).astype(int), m - 1)
    return float(np.sum(widths * np.abs(xs[xi] - ys[yi])))


def wasserstein_1d_gaussian(X, mu: float, sigma: float) -> float:
    """Exact W1 between an empirical scalar sample and N(mu, sigma^2).

    Splits [0, 1] at the sample's quantile breakpoints; on each segment
    the empirical quantile is a constant x, so the integral of
    |x - Q(u)| against the Gaussian quantile Q has the closed form
    x(2c - a - b) - 2A(c) + A(a) + A(b) with c the clipped crossing
    point and A(u) = mu u - sigma phi(Phi^{-1}(u)) the antiderivative
    of Q. No sampling noise on the reference side.
    """
    from scipy.special import ndtr, ndtri

    xs = np.sort(np.asarray(X, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("empty sample")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = xs.size
    a = np.arange(n) / n
    b = np.arange(1, n + 1) / n

    def anti(u):
        q = ndtri(u)
        return mu * u - sigma * np.exp(-q * q / 2.0) / np.sqrt(2.0 * np.pi)

    c = np.clip(ndtr((xs - mu) / sigma), a, b)
    seg = xs * (2.0 * c - a - b) - 2.0 * anti(c) + anti(a) + anti(b)
    return float(seg.sum())


def welch_t_test(a, b) -> TTestResult:
    """Two-sided Welch t-test (unequal variances, Welch-Satterthwaite dof)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise MetricError("both groups have zero variance")
    sa, sb = va / a.size, vb / b.size
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return TTestResult(t_statistic=float(t), degrees_of_freedom=float(dof), p_value=p)
