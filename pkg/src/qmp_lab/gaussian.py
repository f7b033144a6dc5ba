"""Gaussian message operators shared by the QMP solver and its state evolution.

The four compact operators are

* :func:`ext`  -- extrinsic (precision-subtracted) diagonal belief,
* :func:`lex`  -- LMMSE combination of a natural-form likelihood with a
  diagonal Gaussian prior,
* :func:`pex`  -- rank-one leave-one-out downdate of a broadcast belief,
* :func:`ez`   -- mean and variance of the bilinear form ``x_check^H A x``.

All of them are pure functions of numpy arrays and work in either real or
complex arithmetic; nothing here promotes a real input to complex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

V_FLOOR = 1e-11
V_CEIL = 1e11
JITTER_STEPS = 4


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a precision matrix cannot be factorized even after jitter."""


class DegenerateDowndateError(ArithmeticError):
    """Raised by :func:`pex` when the Sherman-Morrison denominator vanishes."""


@dataclass(frozen=True)
class DiagGaussian:
    """Independent Gaussian beliefs, one (mean, variance) per coordinate."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        if np.shape(self.mean) != np.shape(self.variance):
            raise ValueError("mean and variance must have the same shape")


@dataclass(frozen=True)
class FullGaussian:
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class NaturalGaussian:
    """Relaxed Gaussian-like factor ``exp(-x^H L x / 2 + Re(b^H x))``.

    ``precision`` may be rank deficient; no positivity is required.
    """

    precision: np.ndarray
    shift: np.ndarray


def hermitian_part(C):
    """Return ``(C + C^H) / 2``."""
    return 0.5 * (C + np.conj(np.swapaxes(C, -1, -2)))


def _check_same_length(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"length mismatch: {sorted(shapes)}")


def ext(m_hat, v_hat, m1, v1, v_floor=V_FLOOR, v_ceil=V_CEIL):
    """Divide the belief ``(m1, v1)`` out of the posterior ``(m_hat, v_hat)``.

    Computes ``v2 = 1 / (1/v_hat - 1/v1)`` and
    ``m2 = v2 * (m_hat/v_hat - m1/v1)`` elementwise.  Coordinates whose raw
    extrinsic variance is negative or non-finite are replaced by an
    uninformative message: variance ``v_ceil`` and mean ``m_hat``.  All other
    variances are clipped to ``[v_floor, v_ceil]``.

    Parameters
    ----------
    m_hat, v_hat : array_like
        Posterior mean and variance.
    m1, v1 : array_like
        Incoming (cavity) mean and variance.

    Returns
    -------
    DiagGaussian
    """
    m_hat, v_hat, m1, v1 = (np.asarray(a) for a in (m_hat, v_hat, m1, v1))
    _check_same_length(m_hat, v_hat, m1, v1)
    for a in (m_hat, v_hat, m1, v1):
        if not np.all(np.isfinite(a)):
            raise ValueError("ext received non-finite input")
    v_hat = np.maximum(v_hat.real, v_floor)
    v1 = np.maximum(v1.real, v_floor)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prec = 1.0 / v_hat - 1.0 / v1
        v2 = 1.0 / prec
        m2 = v2 * (m_hat / v_hat - m1 / v1)
    bad = ~np.isfinite(v2) | (v2 <= 0) | ~np.isfinite(m2)
    v2 = np.where(bad, v_ceil, np.clip(v2, v_floor, v_ceil))
    m2 = np.where(bad, m_hat, m2)
    return DiagGaussian(m2, v2)


def gaussian_product(a: DiagGaussian, b: DiagGaussian) -> DiagGaussian:
    """Precision-weighted product of two diagonal Gaussian beliefs.

    An infinite variance on either side acts as a flat factor.
    """
    va = np.asarray(a.variance, dtype=float)
    vb = np.asarray(b.variance, dtype=float)
    _check_same_length(a.mean, va, b.mean, vb)
    pa = np.where(np.isinf(va), 0.0, 1.0 / va)
    pb = np.where(np.isinf(vb), 0.0, 1.0 / vb)
    v = 1.0 / (pa + pb)
    ma = np.where(np.isinf(va), 0.0, np.asarray(a.mean) * pa)
    mb = np.where(np.isinf(vb), 0.0, np.asarray(b.mean) * pb)
    return DiagGaussian(v * (ma + mb), v)


def cho_inverse(P, max_tries=JITTER_STEPS):
    """Invert a Hermitian positive-definite matrix with escalating jitter.

    The first attempt uses no jitter; subsequent attempts add
    ``1e-12 * trace/N * 10**k`` to the diagonal.

    Returns
    -------
    inverse : ndarray
    factor : tuple
        The ``scipy.linalg.cho_factor`` result, reusable with ``cho_solve``.
    """
    n = P.shape[0]
    scale = abs(np.trace(P).real) / n or 1.0
    eye = np.eye(n)
    jitter = 0.0
    for k in range(max_tries + 1):
        try:
            factor = scipy.linalg.cho_factor(P + jitter * eye, lower=True,
                                             check_finite=True)
            inv = scipy.linalg.cho_solve(factor, eye.astype(P.dtype))
            return hermitian_part(inv), factor
        except (np.linalg.LinAlgError, ValueError):
            jitter = 1e-12 * scale * 10.0 ** k
    raise SingularMatrixError(
        f"precision matrix not positive definite after {max_tries} jitter steps")


def lex(b, Lambda, m, v):
    """LMMSE posterior of a natural-form likelihood times a diagonal prior.

    ``C_hat = (Lambda + diag(1/v))^{-1}`` and ``m_hat = C_hat (b + m/v)``.

    Returns
    -------
    FullGaussian
    """
    b, Lambda, m, v = (np.asarray(a) for a in (b, Lambda, m, v))
    n = m.shape[0]
    if Lambda.shape != (n, n) or b.shape != (n,) or v.shape != (n,):
        raise ValueError("lex: inconsistent dimensions")
    v = np.real(v)
    P = hermitian_part(Lambda) + np.diag(1.0 / v)
    C_hat, factor = cho_inverse(P)
    rhs = b + m / v
    m_hat = scipy.linalg.cho_solve(factor, rhs)
    return FullGaussian(m_hat, C_hat)


def downdate_denominator(C_hat, m_z, v_z, a_h, m_h):
    """``v_z + |m_z|^2 a_h - m_h C_hat m_h^H`` together with ``C_hat m_h^H``."""
    u = C_hat @ np.conj(m_h)
    quad = np.real(m_h @ u)
    return v_z + abs(m_z) ** 2 * a_h - quad, u


def pex(m_hat, C_hat, m_z, v_z, a_h, m_h, d_floor_rel=1e-12):
    """Leave one rank-one likelihood term out of a broadcast belief.

    Given the broadcast posterior ``(m_hat, C_hat)`` and a measurement whose
    linearized likelihood is ``N(m_z | m_h x, v_z + |m_z|^2 a_h)``, returns
    the belief with that term removed, via Sherman-Morrison::

        d = v_z + |m_z|^2 a_h - m_h C_hat m_h^H
        C = C_hat + C_hat m_h^H m_h C_hat / d
        m = m_hat - (m_z - m_h m_hat) / d * C_hat m_h^H

    Raises
    ------
    DegenerateDowndateError
        If ``d`` is below ``d_floor_rel * (v_z + tr(C_hat)/N)``.
    """
    m_hat = np.asarray(m_hat)
    C_hat = np.asarray(C_hat)
    m_h = np.asarray(m_h)
    d, u = downdate_denominator(C_hat, m_z, v_z, a_h, m_h)
    d_floor = d_floor_rel * (abs(v_z) + abs(np.trace(C_hat).real) / C_hat.shape[0])
    if not np.isfinite(d) or d < d_floor:
        raise DegenerateDowndateError(f"downdate denominator {d:.3e} below floor")
    C = hermitian_part(C_hat + np.outer(u, np.conj(u)) / d)
    m = m_hat - (m_z - m_h @ m_hat) / d * u
    return FullGaussian(m, C)


def ez(m_h, C_h, m_x, C_x):
    """Mean and variance of ``z = x_check^H A x`` for independent Gaussians.

    With ``m_h = m_check^H A`` and ``C_h = A^H C_check A``::

        m_z = m_h m_x
        v_z = tr(C_h C_x) + m_h C_x m_h^H + m_x^H C_h m_x

    The variance is floored at zero.
    """
    m_h, C_h, m_x, C_x = (np.asarray(a) for a in (m_h, C_h, m_x, C_x))
    n = m_x.shape[0]
    if m_h.shape != (n,) or C_h.shape != (n, n) or C_x.shape != (n, n):
        raise ValueError("ez: inconsistent dimensions")
    m_z = m_h @ m_x
    v_z = (np.sum(C_h * C_x.T)
           + m_h @ C_x @ np.conj(m_h)
           + np.conj(m_x) @ (C_h @ m_x))
    return m_z, max(float(np.real(v_z)), 0.0)
