"""The two third-order Langevin schemes and their analytic perturbation kernels.

A scheme is the drift/diffusion pair

    F = [[0, 1, 0], [-1, 0, gamma], [0, -gamma, -xi]],   G = diag(0, 0, sqrt(2 xi / L)),

acting on phase triples x = (q, p, s) per dimension. TOLD uses
(gamma, xi) = (sqrt(10), 6), giving F real eigenvalues {-1, -2, -3};
the critically damped variant TOLD++ uses (2 sqrt(2), 3 sqrt(3)),
collapsing the spectrum to a triple eigenvalue -sqrt(3), the fastest
non-oscillatory decay available to this family.

Both transition matrices exp(F t) are exact: TOLD++ through the
nilpotent identity exp(Ft) = e^{lt} [I + t(F-lI) + t^2/2 (F-lI)^2]
(l = -sqrt(3)), TOLD through Lagrange interpolation over its distinct
eigenvalues. Every entry is a polynomial-times-exponential, so the
kernel covariance integrals reduce to an antiderivative table for
integral s^k e^{a s} ds and the whole kernel stays closed-form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from math import factorial

import numpy as np

from .mat3 import cholesky_six, conditional_precision_six

__all__ = [
    "Scheme",
    "DynamicsParams",
    "TransitionMatrix",
    "KernelMoments",
    "PhaseState",
    "drift_matrix",
    "diffusion_coefficient",
    "transition",
    "mean",
    "covariance",
    "kernel_sample",
]

SQRT3 = np.sqrt(3.0)

GAMMA_TOLD = np.sqrt(10.0)
XI_TOLD = 6.0
GAMMA_TOLDPP = 2.0 * np.sqrt(2.0)
XI_TOLDPP = 3.0 * SQRT3


class Scheme(enum.Enum):
    TOLD = "told"
    TOLDPP = "told++"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        key = name.strip().lower()
        if key == "told":
            return cls.TOLD
        if key in ("told++", "toldpp"):
            return cls.TOLDPP
        raise ValueError(f"unknown scheme {name!r}, expected 'told' or 'told++'")


_SCHEME_PARAMS = {
    Scheme.TOLD: (GAMMA_TOLD, XI_TOLD),
    Scheme.TOLDPP: (GAMMA_TOLDPP, XI_TOLDPP),
}


@dataclass(frozen=True)
class DynamicsParams:
    """Scheme tuple (gamma, xi, L, alpha, T); gamma and xi are fixed by the scheme."""

    scheme: Scheme
    gamma: float
    xi: float
    lipschitz: float
    alpha: float
    horizon: float

    def __post_init__(self):
        g, x = _SCHEME_PARAMS[self.scheme]
        if self.gamma != g or self.xi != x:
            raise ValueError(f"({self.gamma}, {self.xi}) is not the {self.scheme.value} pair")
        for name in ("lipschitz", "alpha", "horizon"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive, got {v}")

    @classmethod
    def create(cls, scheme, lipschitz=4.0, alpha=0.1, horizon=1.0) -> "DynamicsParams":
        if isinstance(scheme, str):
            scheme = Scheme.parse(scheme)
        g, x = _SCHEME_PARAMS[scheme]
        return cls(scheme, g, x, float(lipschitz), float(alpha), float(horizon))


@dataclass(frozen=True)
class TransitionMatrix:
    """exp(F t) at one time; f holds the nine entries f_ij(t)."""

    t: float
    f: np.ndarray


@dataclass(frozen=True)
class KernelMoments:
    """Analytic kernel moments at time t.

    cov and chol hold six entries each in (qq, qp, qs, pp, ps, ss) and
    (lqq, lpq, lpp, lsq, lsp, lss) order; entries are arrays when t is.
    l_t is the conditional precision of the s channel given (q, p).
    """

    t: np.ndarray
    mean_coeffs: np.ndarray
    cov: tuple
    chol: tuple
    l_t: np.ndarray

    def cov_matrix(self) -> np.ndarray:
        qq, qp, qs, pp, ps, ss = self.cov
        return np.array([[qq, qp, qs], [qp, pp, ps], [qs, ps, ss]], dtype=float)

    def chol_matrix(self) -> np.ndarray:
        lqq, lpq, lpp, lsq, lsp, lss = self.chol
        z = np.zeros_like(np.asarray(lqq, dtype=float))
        return np.array([[lqq, z, z], [lpq, lpp, z], [lsq, lsp, lss]], dtype=float)


@dataclass(frozen=True)
class PhaseState:
    """Batch of (position, momentum, acceleration) d-vectors."""

    q: np.ndarray
    p: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        q, p, s = (np.asarray(a, dtype=float) for a in (self.q, self.p, self.s))
        if not (q.shape == p.shape == s.shape):
            raise ValueError(f"q/p/s shapes differ: {q.shape}, {p.shape}, {s.shape}")
        if not (np.isfinite(q).all() and np.isfinite(p).all() and np.isfinite(s).all()):
            raise ValueError("phase state contains non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "s", s)

    @property
    def dim(self) -> int:
        return self.q.shape[-1]

    def stack(self) -> np.ndarray:
        return np.stack([self.q, self.p, self.s])


def drift_matrix(params: DynamicsParams) -> np.ndarray:
    g, x = params.gamma, params.xi
    return np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, g], [0.0, -g, -x]])


def diffusion_coefficient(params: DynamicsParams) -> float:
    return float(np.sqrt(2.0 * params.xi / params.lipschitz))


def _expoly_terms(scheme: Scheme):
    """exp(Ft) as a sum of e^{rate t} * (matrix polynomial in t).

    Returns a list of (rate, [C0, C1, ...]) with exp(Ft) =
    sum_terms e^{rate t} sum_k C_k t^k.
    """
    g, x = _SCHEME_PARAMS[scheme]
    F = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, g], [0.0, -g, -x]])
    if scheme is Scheme.TOLDPP:
        N = F + SQRT3 * np.eye(3)
        return [(-SQRT3, [np.eye(3), N, N @ N / 2.0])]
    lams = (-1.0, -2.0, -3.0)
    terms = []
    for k, lk in enumerate(lams):
        P = np.eye(3)
        for j, lj in enumerate(lams):
            if j != k:
                P = P @ (F - lj * np.eye(3)) / (lk - lj)
        terms.append((lk, [P]))
    return terms


_EXPOLY = {s: _expoly_terms(s) for s in Scheme}


def _noise_pair_terms(scheme: Scheme):
    """Expolys of the products f_a3(s) f_b3(s) for the six (a, b) pairs."""
    col3 = {}
    for rate, mats in _EXPOLY[scheme]:
        for i in range(3):
            coeffs = np.array([m[i, 2] for m in mats])
            col3.setdefault(i, []).append((rate, coeffs))
    pairs = {}
    for a, b in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)):
        acc = {}
        for r1, c1 in col3[a]:
            for r2, c2 in col3[b]:
                key = round(r1 + r2, 12)
                prod = np.convolve(c1, c2)
                if key in acc:
                    n = max(len(acc[key]), len(prod))
                    merged = np.zeros(n)
                    merged[: len(acc[key])] += acc[key]
                    merged[: len(prod)] += prod
                    acc[key] = merged
                else:
                    acc[key] = prod
        pairs[(a, b)] = [(float(r), c) for r, c in acc.items()]
    return pairs


_NOISE_PAIRS = {s: _noise_pair_terms(s) for s in Scheme}


def _eval_transition(scheme: Scheme, t: np.ndarray) -> np.ndarray:
    """Entries of exp(Ft), shape (3, 3) + t.shape."""
    out = np.zeros((3, 3) + t.shape)
    for rate, mats in _EXPOLY[scheme]:
        poly = np.zeros((3, 3) + t.shape)
        tk = np.ones(t.shape)
        for C in mats:
            poly += C.reshape((3, 3) + (1,) * t.ndim) * tk
            tk = tk * t
        out += poly * np.exp(rate * t)
    return out


def poly_exp_integral(coeffs, rate: float, t: np.ndarray) -> np.ndarray:
    """integral_0^t sum_k coeffs[k] s^k e^{rate s} ds.

    Hybrid evaluation: a 30-term series in (rate*t) where |rate*t| <= 1,
    the integration-by-parts closed form elsewhere. The split avoids the
    catastrophic cancellation the closed form suffers near rate*t = 0.
    """
    t = np.asarray(t, dtype=float)
    x = rate * t
    out = np.zeros(t.shape)
    small = np.abs(x) <= 1.0
    large = ~small
    for k, ck in enumerate(coeffs):
        if ck == 0.0:
            continue
        ik = np.zeros(t.shape)
        if small.any():
            ts, xs = t[small], x[small]
            acc = np.zeros(ts.shape)
            term = np.ones(ts.shape)
            for m in range(30):
                acc += term / (k + m + 1)
                term = term * xs / (m + 1)
            ik[small] = ts ** (k + 1) * acc
        if large.any():
            tl, xl = t[large], x[large]
            total = np.zeros(tl.shape)
            a0 = 0.0
            for j in range(k + 1):
                aj = (-1.0) ** (k - j) * factorial(k) / factorial(j) / rate ** (k - j + 1)
                total += aj * tl ** j
                if j == 0:
                    a0 = aj
            ik[large] = np.exp(xl) * total - a0
        out += ck * ik
    return out


def transition(params: DynamicsParams, t) -> TransitionMatrix:
    """exp(F t); accepts scalar t (f is 3x3) or an array (f is (3,3)+t.shape)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time must be nonnegative")
    scalar = t_arr.ndim == 0
    f = _eval_transition(params.scheme, np.atleast_1d(t_arr))
    if scalar:
        f = f[:, :, 0]
    return TransitionMatrix(t=t, f=f)


def mean(params: DynamicsParams, x0: PhaseState, t) -> PhaseState:
    """Kernel mean exp(Ft) x0, applied independently per dimension."""
    f = transition(params, t).f
    if f.ndim == 3:
        f = f[:, :, :, None]
    q = f[0, 0] * x0.q + f[0, 1] * x0.p + f[0, 2] * x0.s
    p = f[1, 0] * x0.q + f[1, 1] * x0.p + f[1, 2] * x0.s
    s = f[2, 0] * x0.q + f[2, 1] * x0.p + f[2, 2] * x0.s
    return PhaseState(q=q, p=p, s=s)


def _cov_entries(params: DynamicsParams, t: np.ndarray, f: np.ndarray):
    s0 = params.alpha / params.lipschitz
    scale = 2.0 * params.xi / params.lipschitz
    pairs = _NOISE_PAIRS[params.scheme]
    out = []
    for a, b in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)):
        v = s0 * (f[a, 0] * f[b, 0] + f[a, 1] * f[b, 1] + f[a, 2] * f[b, 2])
        for rate, coeffs in pairs[(a, b)]:
            v = v + scale * poly_exp_integral(coeffs, rate, t)
        out.append(v)
    return tuple(out)


def covariance(params: DynamicsParams, t, jitter: bool = False) -> KernelMoments:
    """Closed-form kernel moments at time t (scalar or array).

    Gives the six covariance entries, their Cholesky factors, and the
    conditional precision l_t. jitter is reserved for the training path;
    verification paths leave it off so formula bugs surface as errors.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("time must be nonnegative")
    scalar = t_arr.ndim == 0
    tv = np.atleast_1d(t_arr)
    f = _eval_transition(params.scheme, tv)
    cov = _cov_entries(params, tv, f)
    chol = cholesky_six(*cov, jitter=jitter)
    l_t = conditional_precision_six(*cov)
    if scalar:
        f = f[:, :, 0]
        cov = tuple(float(v[0]) for v in cov)
        chol = tuple(float(v[0]) for v in chol)
        l_t = float(l_t[0])
    return KernelMoments(t=t, mean_coeffs=f, cov=cov, chol=chol, l_t=l_t)


def kernel_sample(params: DynamicsParams, q0: np.ndarray, t, rng, jitter: bool = False):
    """One forward-kernel draw per sample.

    Draws p0, s0 ~ N(0, (alpha/L) I), forms the kernel mean from
    (q0, p0, s0), then adds correlated noise through the Cholesky factor
    of the full covariance. Returns (z_t, eps3, l_t) with eps3 the
    third-channel standard normal and l_t the conditional precision,
    the two ingredients of the denoising loss.

    t may be a scalar or one value per sample. Draw order is fixed
    (p0, s0, eps1, eps2, eps3) so seeded runs are reproducible.
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.ndim != 2:
        raise ValueError(f"q0 must be (batch, dim), got shape {q0.shape}")
    n, d = q0.shape
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr <= 0) or np.any(t_arr > params.horizon):
        raise ValueError("t must lie in (0, horizon]")
    if t_arr.shape not in ((1,), (n,)):
        raise ValueError(f"t must be scalar or length {n}, got shape {t_arr.shape}")

    sd0 = np.sqrt(params.alpha / params.lipschitz)
    p0 = sd0 * rng.standard_normal((n, d))
    s0 = sd0 * rng.standard_normal((n, d))
    e1 = rng.standard_normal((n, d))
    e2 = rng.standard_normal((n, d))
    e3 = rng.standard_normal((n, d))

    f = _eval_transition(params.scheme, t_arr)
    cov = _cov_entries(params, t_arr, f)
    lqq, lpq, lpp, lsq, lsp, lss = cholesky_six(*cov, jitter=jitter)
    l_t = conditional_precision_six(*cov)

    col = lambda a: a[:, None]
    mu_q = col(f[0, 0]) * q0 + col(f[0, 1]) * p0 + col(f[0, 2]) * s0
    mu_p = col(f[1, 0]) * q0 + col(f[1, 1]) * p0 + col(f[1, 2]) * s0
    mu_s = col(f[2, 0]) * q0 + col(f[2, 1]) * p0 + col(f[2, 2]) * s0
    z = PhaseState(
        q=mu_q + col(lqq) * e1,
        p=mu_p + col(lpq) * e1 + col(lpp) * e2,
        s=mu_s + col(lsq) * e1 + col(lsp) * e2 + col(lss) * e3,
    )
    if np.asarray(t, dtype=float).ndim == 0:
        l_t = float(l_t[0])
    return z, e3, l_t
