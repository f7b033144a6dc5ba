"""Scalar posterior-moment maps for the prior and likelihood nodes.

A denoiser is any callable ``(m, v) -> PosteriorMoments`` that returns the
mean and variance of ``f(a) N(a | m, v)`` normalized, elementwise.  Custom
(e.g. learned) denoisers can be handed to the solver through the same
signature; they are expected to satisfy ``variance <= v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, log_ndtr

from .gaussian import V_FLOOR
from .model import ChannelSpec, PriorSpec

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PosteriorMoments:
    mean: np.ndarray
    variance: np.ndarray


Denoiser = Callable[[np.ndarray, np.ndarray], PosteriorMoments]


def _gaussian_combine(m, v, m0, v0):
    m, v = np.asarray(m), np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p0 = np.where(np.isinf(v0), 0.0, 1.0 / v0)
        v_hat = 1.0 / (1.0 / v + p0)
        m_hat = v_hat * (m / v + np.where(np.isinf(v0), 0.0, m0 * p0))
    return PosteriorMoments(m_hat, v_hat)


def channel_posterior_awgn(y, m, v, v_w) -> PosteriorMoments:
    """Posterior of ``z`` under ``N(z | m, v)`` and ``y = z + N(0, v_w)``.

    ``v_w == 0`` pins the posterior at ``y`` with zero variance.
    """
    y, m, v = np.asarray(y), np.asarray(m), np.asarray(v, dtype=float)
    if not (y.shape == m.shape == v.shape):
        raise ValueError("y, m and v must have the same shape")
    if v_w == 0:
        return PosteriorMoments(y.copy(), np.zeros_like(v))
    return _gaussian_combine(m, v, y, v_w)


def prior_posterior_gaussian(m, v, prior_mean, prior_var) -> PosteriorMoments:
    return _gaussian_combine(m, v, prior_mean, prior_var)


def prior_posterior_bernoulli01(m, v, rho) -> PosteriorMoments:
    """Posterior moments for ``p(x) = (1 - rho) delta(x) + rho delta(x - 1)``.

    The posterior probability of the atom at one is a logistic function of
    ``logit(rho) + (2m - 1) / (2v)``, which avoids forming the two Gaussian
    densities (they underflow together for small ``v``).
    """
    m = np.real(np.asarray(m)).astype(float)
    v = np.asarray(v, dtype=float)
    if rho <= 0.0:
        p = np.zeros(np.broadcast(m, v).shape)
    elif rho >= 1.0:
        p = np.ones(np.broadcast(m, v).shape)
    else:
        logit = np.log(rho) - np.log1p(-rho)
        p = expit(logit + (2.0 * m - 1.0) / (2.0 * v))
    return PosteriorMoments(p, p * (1.0 - p))


def _log_ndtr_diff(lo, hi):
    """``log(Phi(hi) - Phi(lo))`` for ``lo < hi``, accurate in both tails."""
    lo, hi = np.broadcast_arrays(lo, hi)
    out = np.empty(lo.shape)
    upper = lo >= 0
    lower = hi <= 0
    mid = ~(upper | lower)
    with np.errstate(divide="ignore", invalid="ignore"):
        la, lb = log_ndtr(-lo[upper]), log_ndtr(-hi[upper])
        out[upper] = la + np.log1p(-np.exp(lb - la))
        la, lb = log_ndtr(hi[lower]), log_ndtr(lo[lower])
        out[lower] = la + np.log1p(-np.exp(lb - la))
        out[mid] = np.log(-np.expm1(log_ndtr(lo[mid]) - log_ndtr(hi[mid]))) + log_ndtr(hi[mid])
    return out


def prior_posterior_uniform(m, v, a, b) -> PosteriorMoments:
    """Truncated-normal moments for the uniform prior on ``[a, b]``.

    With ``alpha = (a - m)/sqrt(v)``, ``beta = (b - m)/sqrt(v)`` and
    ``C = Phi(beta) - Phi(alpha)``::

        mean = m + sqrt(v) (phi(alpha) - phi(beta)) / C
        var  = v [1 + (alpha phi(alpha) - beta phi(beta)) / C
                    - ((phi(alpha) - phi(beta)) / C)^2]

    ``C`` is handled in log space.  If it still underflows, or cancellation
    leaves the moments outside their admissible range, the nearest bound is
    returned with variance ``V_FLOOR``.
    """
    m = np.real(np.asarray(m))
    v = np.asarray(v, dtype=float)
    m, v = np.broadcast_arrays(m, v)
    s = np.sqrt(v)
    alpha = (a - m) / s
    beta = (b - m) / s
    log_c = _log_ndtr_diff(alpha, beta)
    with np.errstate(over="ignore", invalid="ignore"):
        ra = np.exp(-0.5 * alpha ** 2 - _LOG_SQRT_2PI - log_c)
        rb = np.exp(-0.5 * beta ** 2 - _LOG_SQRT_2PI - log_c)
        diff = ra - rb
        m_hat = m + s * diff
        v_hat = v * (1.0 + alpha * ra - beta * rb - diff ** 2)
    bad = (~np.isfinite(log_c) | ~np.isfinite(m_hat)
           | ~np.isfinite(v_hat) | (m_hat < a) | (m_hat > b) | (v_hat < 0))
    if np.any(bad):
        nearest = np.where(m < 0.5 * (a + b), a, b)
        m_hat = np.where(bad, nearest, m_hat)
        v_hat = np.where(bad, V_FLOOR, v_hat)
    return PosteriorMoments(m_hat, np.minimum(v_hat, v))


def prior_second_moment(prior: PriorSpec) -> float:
    return prior.second_moment


def prior_denoiser(prior: PriorSpec) -> Denoiser:
    """Return the posterior-moment map matching ``prior``."""
    if prior.kind == "gaussian":
        mean, var = prior.params
        return lambda m, v: prior_posterior_gaussian(m, v, mean, var)
    if prior.kind == "bernoulli01":
        (rho,) = prior.params
        return lambda m, v: prior_posterior_bernoulli01(m, v, rho)
    if prior.kind == "uniform":
        a, b = prior.params
        return lambda m, v: prior_posterior_uniform(m, v, a, b)
    raise ValueError(f"no denoiser for prior kind {prior.kind!r}")


def channel_denoiser(channel: ChannelSpec, y) -> Denoiser:
    """Bind observations ``y`` into the likelihood-node posterior map."""
    if channel.kind == "awgn":
        return lambda m, v: channel_posterior_awgn(y, m, v, channel.noise_var)
    raise ValueError(f"no denoiser for channel kind {channel.kind!r}")
