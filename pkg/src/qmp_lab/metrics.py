"""Error metrics and QQ-plot data shared by all solvers."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm


def aligned_mse(estimate, truth, field="real", prior=None):
    """Per-coordinate squared error after removing the global ambiguity.

    The model only identifies the signal up to ``x -> e^{i theta} x``
    (complex) or ``x -> -x`` (real).  The optimal phase is
    ``theta = arg(estimate^H truth)``; the optimal sign is picked by
    comparison.  Priors supported on ``[0, inf)`` break the symmetry, so no
    alignment is applied for them.
    """
    est = np.asarray(estimate)
    x = np.asarray(truth)
    if est.size == 0:
        raise ValueError("aligned_mse of empty vectors")
    if est.shape != x.shape:
        raise ValueError("estimate and truth must have the same shape")
    n = est.size
    if prior is not None and prior.nonnegative:
        return float(np.sum(np.abs(est - x) ** 2) / n)
    if field == "complex":
        inner = np.vdot(est, x)
        phase = np.exp(1j * np.angle(inner)) if inner != 0 else 1.0
        return float(np.sum(np.abs(phase * est - x) ** 2) / n)
    return float(min(np.sum(np.abs(est - x) ** 2), np.sum(np.abs(est + x) ** 2)) / n)


def qq_data(residuals):
    """Sorted sample quantiles paired with standard-normal quantiles.

    Plotting positions are ``(k - 0.5) / n``.

    Returns
    -------
    sample, theoretical : ndarray
    """
    r = np.sort(np.real(np.asarray(residuals, dtype=complex if np.iscomplexobj(residuals) else float)))
    n = r.size
    if n < 2:
        raise ValueError("qq_data needs at least two residuals")
    probs = (np.arange(1, n + 1) - 0.5) / n
    return r, norm.ppf(probs)
