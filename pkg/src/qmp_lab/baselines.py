"""Wirtinger Flow (WF) and thresholded WF reference solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .metrics import aligned_mse
from .model import GqeInstance, PriorSpec, quadratic_forms
from .solver import IterationRecord


@dataclass(frozen=True)
class WfConfig:
    """Gradient-descent settings.

    The step at iteration ``t`` is ``min(1 - exp(-t / ramp), 1) * mu0 / |x0|^2``
    where ``x0`` is the spectral initializer.
    """

    mu0: float = 0.2
    ramp: float = 30.0
    iters: int = 300
    threshold: float = 0.1
    seed: Optional[int] = 0
    divergence: float = 1e12

    def __post_init__(self):
        if not self.mu0 >= 0:
            raise ValueError("mu0 must be >= 0")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.ramp > 0:
            raise ValueError("ramp must be > 0")
        if not self.threshold >= 0:
            raise ValueError("threshold must be >= 0")


@dataclass
class WfOutput:
    mean: np.ndarray
    records: list
    termination: str


def spectral_init(instance: GqeInstance) -> np.ndarray:
    """Leading eigenvector of ``(1/M) sum_i y_i (A_i + A_i^H)/2``.

    The scale ``s`` is fitted by least squares so that ``s^2 v^H A_i v``
    matches ``y``.  In real mode the sign is chosen to make the entries sum
    to a nonnegative value.
    """
    A = instance.matrices
    y = instance.observations
    S = np.einsum("k,kij->ij", y, A) / instance.m
    S = 0.5 * (S + np.conj(S.T))
    _, vecs = np.linalg.eigh(S)
    v = vecs[:, -1]
    q = quadratic_forms(A, v)
    denom = np.sum(np.abs(q) ** 2)
    s2 = max(float(np.real(np.vdot(q, y))) / denom, 0.0) if denom > 0 else 0.0
    if instance.scalar_field == "real":
        v = np.real(v)
        if v.sum() < 0:
            v = -v
    return np.sqrt(s2) * v


def loss(instance: GqeInstance, x):
    """``(1/2M) sum_i |y_i - x^H A_i x|^2``."""
    r = instance.observations - quadratic_forms(instance.matrices, x)
    return float(np.sum(np.abs(r) ** 2) / (2 * instance.m))


def gradient(instance: GqeInstance, x):
    """Wirtinger gradient of :func:`loss`.

    In real mode this is the ordinary gradient
    ``-(1/M) sum_i r_i (A_i + A_i^T) x``.
    """
    A = instance.matrices
    r = instance.observations - quadratic_forms(A, x)
    ax = np.einsum("kij,j->ki", A, x)
    ahx = np.einsum("kji,j->ki", np.conj(A), x)
    if instance.scalar_field == "real":
        return -(r @ (ax + ahx)) / instance.m
    # d/d conj(x) of |r|^2 / 2 summed; conj(r) pairs with A^H x
    return -(np.conj(r) @ ax + r @ ahx) / (2 * instance.m)


def _threshold(x, prior: Optional[PriorSpec], tau):
    if prior is None or tau == 0:
        return x
    if prior.kind == "bernoulli01":
        xr = np.real(x)
        target = (xr > 0.5).astype(float)
        u = xr - target
        shrunk = target + np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)
        return shrunk.astype(x.dtype)
    if prior.kind == "uniform":
        a, b = prior.params
        return np.clip(np.real(x), a, b).astype(x.dtype)
    return x


def _descend(instance, config, prior, tau, solver_id):
    # ``prior`` sets the MSE alignment rule; the projection is off when tau == 0
    x = spectral_init(instance)
    if instance.scalar_field == "complex":
        x = x.astype(complex)
    x = _threshold(x, prior, tau)
    scale = max(float(np.sum(np.abs(x) ** 2)), np.finfo(float).tiny)
    records = []
    termination = "max_iters"
    for t in range(1, config.iters + 1):
        mu = min(1.0 - np.exp(-t / config.ramp), 1.0) * config.mu0 / scale
        nxt = _threshold(x - mu * gradient(instance, x), prior, tau)
        if not np.all(np.isfinite(nxt)) or loss(instance, nxt) > config.divergence:
            termination = "diverged"
            break
        x = nxt
        records.append(IterationRecord(
            solver=solver_id, seed=config.seed, iteration=t,
            mse=aligned_mse(x, instance.signal, instance.scalar_field, prior)))
    return WfOutput(x, records, termination)


def run_wf(instance: GqeInstance, config: WfConfig = WfConfig(),
           prior: Optional[PriorSpec] = None) -> WfOutput:
    """Plain WF from the spectral initializer.

    ``prior`` is used only for the MSE alignment rule.  On divergence the
    run stops and the last finite iterate is returned with
    ``termination == "diverged"``.
    """
    return _descend(instance, config, prior, 0.0, "wf")


def run_twf(instance: GqeInstance, prior: PriorSpec,
            config: WfConfig = WfConfig()) -> WfOutput:
    """WF with a soft projection onto the prior support after every step.

    For ``bernoulli01`` each entry is soft-thresholded toward the nearer of
    0 and 1 by ``config.threshold``; for ``uniform`` entries are clipped to
    ``[a, b]``.  ``threshold == 0`` disables the projection, reproducing
    :func:`run_wf` exactly.
    """
    return _descend(instance, config, prior, config.threshold, "twf")
