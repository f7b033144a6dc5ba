"""Fast built-in oracle checks, runnable without the test suite."""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .denoisers import prior_posterior_bernoulli01, prior_posterior_uniform
from .gaussian import ext, gaussian_product, lex, pex


def _spd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T / n + np.eye(n)


def check_lex(rng):
    n = 8
    L = _spd(rng, n) - np.eye(n)
    b, m = rng.standard_normal(n), rng.standard_normal(n)
    v = rng.uniform(0.5, 2.0, n)
    out = lex(b, L, m, v)
    C = np.linalg.inv(L + np.diag(1 / v))
    return np.max(np.abs(out.covariance - C)) < 1e-10 and np.allclose(out.mean, C @ (b + m / v), atol=1e-10)


def check_pex(rng):
    n = 8
    C_hat = np.linalg.inv(_spd(rng, n))
    m_hat, h = rng.standard_normal(n), 0.3 * rng.standard_normal(n)
    m_z, v_z, a = 0.7, 2.0, 0.3
    out = pex(m_hat, C_hat, m_z, v_z, a, h)
    direct = np.linalg.inv(np.linalg.inv(C_hat) - np.outer(h, h) / (v_z + m_z ** 2 * a))
    return np.linalg.norm(out.covariance - direct) / np.linalg.norm(direct) < 1e-8


def check_ext_roundtrip(rng):
    m_hat, m1 = rng.standard_normal(16), rng.standard_normal(16)
    v1 = rng.uniform(1.0, 2.0, 16)
    v_hat = v1 * rng.uniform(0.2, 0.8, 16)
    e = ext(m_hat, v_hat, m1, v1)
    back = gaussian_product(e, type(e)(m1, v1))
    return np.allclose(back.mean, m_hat, atol=1e-10) and np.allclose(back.variance, v_hat, rtol=1e-10)


def check_denoisers(_rng):
    worst = 0.0
    for m in (-1.0, 0.3, 0.8, 2.5):
        for v in (1e-3, 0.1, 3.0):
            w0 = 0.45 * np.exp(-m * m / (2 * v))
            w1 = 0.55 * np.exp(-(1 - m) ** 2 / (2 * v))
            p = prior_posterior_bernoulli01(np.array([m]), np.array([v]), 0.55).mean[0]
            if w0 + w1 > 0:
                worst = max(worst, abs(p - w1 / (w0 + w1)))
            s = np.sqrt(v)
            lo, hi = max(0.1, m - 12 * s), min(2.1, m + 12 * s)
            if lo < hi:
                f = lambda x, k: x ** k * np.exp(-(x - m) ** 2 / (2 * v))
                z = integrate.quad(f, lo, hi, args=(0,), epsabs=0, epsrel=1e-12)[0]
                if z > 1e-200:
                    mean = integrate.quad(f, lo, hi, args=(1,), epsabs=0, epsrel=1e-12)[0] / z
                    u = prior_posterior_uniform(np.array([m]), np.array([v]), 0.1, 2.1)
                    worst = max(worst, abs(u.mean[0] - mean))
    return worst < 1e-6


CHECKS = {"lex": check_lex, "pex": check_pex, "ext": check_ext_roundtrip,
          "denoisers": check_denoisers}


def run_selfcheck(verbose=False, seed=0) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for name, fn in CHECKS.items():
        passed = bool(fn(rng))
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
