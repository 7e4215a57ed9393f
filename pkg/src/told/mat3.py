"""Small exact linear algebra for the 3x3 drift matrices.

Everything here is closed-form or plain series arithmetic on 3x3 real
matrices: characteristic polynomial of the drift family, cubic root
finding with a Newton polish, a scaling-and-squaring series exponential
used as an oracle for the analytic transition matrices, and Cholesky /
conditional-precision helpers for the kernel covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DecompositionError",
    "CubicRoots",
    "char_poly_coeffs",
    "cubic_roots",
    "expm_series",
    "cholesky3",
    "cholesky_six",
    "conditional_precision",
    "conditional_precision_six",
]

_DISC_TOL = 1e-10
_IMAG_TOL = 1e-9
_PIVOT_FLOOR = 1e-14


class DecompositionError(ValueError):
    """Cholesky pivot fell below the positive-definiteness floor."""

    def __init__(self, pivot_index, pivot_value):
        self.pivot_index = pivot_index
        self.pivot_value = pivot_value
        super().__init__(
            f"non-positive-definite matrix: pivot {pivot_index} = {pivot_value:.3e}"
        )


@dataclass(frozen=True)
class CubicRoots:
    """Roots of a monic cubic, sorted by real part ascending.

    discriminant > 0: three distinct real roots; < 0: one real root and
    a conjugate pair; within 1e-10 of 0: treated as repeated.
    """

    roots: np.ndarray
    all_real: bool
    max_real_root: float | None
    discriminant: float


def char_poly_coeffs(gamma: float, xi: float) -> tuple[float, float, float]:
    """Lower coefficients (c2, c1, c0) of det(lambda*I - F) for the drift family.

    F = [[0,1,0],[-1,0,gamma],[0,-gamma,-xi]] has characteristic polynomial
    lambda^3 + xi*lambda^2 + (gamma^2+1)*lambda + xi.
    """
    if not (np.isfinite(gamma) and np.isfinite(xi)) or gamma <= 0 or xi <= 0:
        raise ValueError(f"gamma and xi must be finite and positive, got ({gamma}, {xi})")
    return (xi, gamma * gamma + 1.0, xi)


def _polish(root: complex, c2: float, c1: float, c0: float) -> complex:
    # One Newton step, kept only if it shrinks the residual. Near a
    # repeated root p' is tiny and the raw step can be O(1) garbage.
    deriv = 3.0 * root * root + 2.0 * c2 * root + c1
    if abs(deriv) < 1e-8:
        return root
    val = ((root + c2) * root + c1) * root + c0
    cand = root - val / deriv
    cand_val = ((cand + c2) * cand + c1) * cand + c0
    return cand if abs(cand_val) < abs(val) else root


def cubic_roots(c2: float, c1: float, c0: float) -> CubicRoots:
    """All roots of lambda^3 + c2 lambda^2 + c1 lambda + c0.

    Trigonometric/Cardano closed forms, one Newton polish per root,
    imaginary parts below 1e-9 zeroed before the all_real test.
    """
    if not all(np.isfinite(c) for c in (c2, c1, c0)):
        raise ValueError("cubic coefficients must be finite")
    shift = c2 / 3.0
    p = c1 - c2 * c2 / 3.0
    q = c0 - c2 * c1 / 3.0 + 2.0 * c2 ** 3 / 27.0
    disc = -4.0 * p ** 3 - 27.0 * q * q

    if abs(disc) < _DISC_TOL:
        if p >= -_DISC_TOL:
            # triple root; the depressed origin preserves the exact root sum,
            # unlike cbrt(q) which amplifies coefficient roundoff by ^(1/3)
            y = np.zeros(3, dtype=complex)
        else:
            a = np.copysign(np.sqrt(-p / 3.0), q)
            y = np.array([-2.0 * a, a, a], dtype=complex)
    elif disc > 0.0:
        m = 2.0 * np.sqrt(-p / 3.0)
        theta = np.arccos(np.clip(3.0 * q / (p * m), -1.0, 1.0))
        y = np.array(
            [m * np.cos((theta - 2.0 * np.pi * k) / 3.0) for k in range(3)],
            dtype=complex,
        )
    else:
        rad = np.sqrt(q * q / 4.0 + p ** 3 / 27.0)
        u = np.cbrt(-q / 2.0 + rad)
        v = np.cbrt(-q / 2.0 - rad)
        re, im = -(u + v) / 2.0, (u - v) * np.sqrt(3.0) / 2.0
        y = np.array([u + v, complex(re, im), complex(re, -im)], dtype=complex)

    roots = y - shift
    roots = np.array([_polish(r, c2, c1, c0) for r in roots])
    roots.imag[np.abs(roots.imag) <= _IMAG_TOL] = 0.0
    order = np.lexsort((roots.imag, roots.real))
    roots = roots[order]
    all_real = bool(np.all(roots.imag == 0.0))
    max_real = float(roots.real[-1]) if all_real else None
    return CubicRoots(
        roots=roots,
        all_real=all_real,
        max_real_root=max_real,
        discriminant=float(disc),
    )


def expm_series(M: np.ndarray, t: float) -> np.ndarray:
    """exp(M*t) by scaling-and-squaring of a 20-term Taylor series.

    Series oracle for the closed-form transitions; accurate to about
    1e-12 entrywise for ||M*t|| up to 50.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    A = np.asarray(M, dtype=float) * t
    norm = np.abs(A).sum(axis=1).max()
    squarings = 0
    while norm > 0.5:
        A = A / 2.0
        norm /= 2.0
        squarings += 1
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, 21):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def cholesky_six(sqq, sqp, sqs, spp, sps, sss, jitter: bool = False):
    """Lower Cholesky factor of symmetric 3x3 matrices in six-entry form.

    Inputs may be scalars or equal-shape arrays: entries (qq, qp, qs,
    pp, ps, ss) of the covariance. Returns (lqq, lpq, lpp, lsq, lsp,
    lss). A pivot at or below 1e-14 raises DecompositionError with the
    failing pivot index; with jitter=True, 1e-12 * trace/3 is added to
    the diagonal and the factorization retried once before raising.
    """
    sqq, sqp, sqs, spp, sps, sss = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (sqq, sqp, sqs, spp, sps, sss))
    )
    for attempt in range(2):
        if attempt == 1:
            if not jitter:
                break
            eps = 1e-12 * (sqq + spp + sss) / 3.0
            sqq, spp, sss = sqq + eps, spp + eps, sss + eps
        bad = None
        if np.any(sqq <= _PIVOT_FLOOR):
            bad = (0, float(np.min(sqq)))
        if bad is None:
            lqq = np.sqrt(sqq)
            lpq = sqp / lqq
            lsq = sqs / lqq
            d2 = spp - lpq * lpq
            if np.any(d2 <= _PIVOT_FLOOR):
                bad = (1, float(np.min(d2)))
        if bad is None:
            lpp = np.sqrt(d2)
            lsp = (sps - lsq * lpq) / lpp
            d3 = sss - lsq * lsq - lsp * lsp
            if np.any(d3 <= _PIVOT_FLOOR):
                bad = (2, float(np.min(d3)))
        if bad is None:
            return lqq, lpq, lpp, lsq, lsp, np.sqrt(d3)
    raise DecompositionError(*bad)


def cholesky3(sigma: np.ndarray, jitter: bool = False) -> np.ndarray:
    """Lower-triangular L with L @ L.T = sigma for a symmetric PD 3x3."""
    S = np.asarray(sigma, dtype=float)
    if S.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {S.shape}")
    if np.abs(S - S.T).max() > 1e-12:
        raise ValueError("matrix is not symmetric within 1e-12")
    lqq, lpq, lpp, lsq, lsp, lss = cholesky_six(
        S[0, 0], S[0, 1], S[0, 2], S[1, 1], S[1, 2], S[2, 2], jitter=jitter
    )
    return np.array([[lqq, 0.0, 0.0], [lpq, lpp, 0.0], [lsq, lsp, lss]])


def conditional_precision_six(sqq, sqp, sqs, spp, sps, sss):
    """Inverse conditional std of the third channel given the first two.

    Schur-complement form: the conditional variance of s given (q, p) is
    sss minus the projection through the leading 2x2 block; the returned
    precision equals 1 / L33 of the Cholesky factor.
    """
    det2 = sqq * spp - sqp * sqp
    cond_var = sss - (sqs * sqs * spp - 2.0 * sqs * sps * sqp + sps * sps * sqq) / det2
    if np.any(np.asarray(cond_var) <= 0.0) or np.any(np.asarray(det2) <= 0.0):
        raise DecompositionError(2, float(np.min(cond_var)))
    return 1.0 / np.sqrt(cond_var)


def conditional_precision(sigma: np.ndarray) -> float:
    S = np.asarray(sigma, dtype=float)
    if S.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {S.shape}")
    return float(
        conditional_precision_six(S[0, 0], S[0, 1], S[0, 2], S[1, 1], S[1, 2], S[2, 2])
    )
