"""Quadratic message passing (QMP) for generalized quadratic equations.

Every measurement ``z_i = x_check^H A_i x`` is split into two linear
"views": with ``x_check`` frozen at a type-2 belief, ``z_i`` is linear in
``x`` (row ``m2^H A_i``); with ``x`` frozen at a type-1 belief it is linear
in ``x_check`` (row ``m1^H A_i^H`` after conjugation).  Each view contributes
one rank-one term to a natural-form likelihood on the signal, and the
per-measurement beliefs are recovered from the broadcast belief by rank-one
downdates.

Per-measurement covariances always have the form ``B + alpha_i u_i u_i^H``
with a shared base ``B`` (the previous broadcast covariance), so they are
stored as ``(u_i, alpha_i)`` and never materialized inside the iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import gaussian
from .denoisers import Denoiser, channel_denoiser, prior_denoiser
from .gaussian import (V_CEIL, V_FLOOR, DiagGaussian, FullGaussian,
                       NaturalGaussian, SingularMatrixError, ext, lex)
from .metrics import aligned_mse
from .model import ChannelSpec, GqeInstance, PriorSpec

logger = logging.getLogger(__name__)


class QmpNumericalError(RuntimeError):
    """Irrecoverable numerical failure, tagged with the iteration index."""

    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class QmpConfig:
    """Solver settings.

    ``damping`` is the weight kept from the previous message: 0 disables
    damping, and the fresh extrinsic message is mixed in with weight
    ``1 - damping``.  ``belief_damping`` applies the same mixing to the
    per-measurement means; without it the uniform-prior runs settle into a
    slowly decaying period-2 oscillation.
    """

    max_iters: int = 30
    damping: float = 0.4
    belief_damping: float = 0.3
    init: str = "prior"
    tol: float = 1e-8
    v_floor: float = V_FLOOR
    v_ceil: float = V_CEIL
    init_jitter: float = 0.01
    seed: Optional[int] = 0
    record_residuals: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("damping", "belief_damping"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.init not in ("prior", "spectral"):
            raise ValueError("init must be 'prior' or 'spectral'")


@dataclass
class MeasurementBeliefs:
    """Stacked Gaussian beliefs ``N(means[i], base + alpha[i] u[i] u[i]^H)``."""

    means: np.ndarray
    base: np.ndarray
    u: np.ndarray
    alpha: np.ndarray

    def covariance(self, i):
        u = self.u[i]
        return self.base + self.alpha[i] * np.outer(u, np.conj(u))

    def full(self, i) -> FullGaussian:
        return FullGaussian(self.means[i], self.covariance(i))

    def quad(self, g):
        """``g_i^H C_i g_i`` for a stack of vectors ``g``."""
        base = np.real(np.einsum("ki,ij,kj->k", np.conj(g), self.base, g, optimize=True))
        proj = np.einsum("ki,ki->k", np.conj(self.u), g)
        return base + self.alpha * np.abs(proj) ** 2

    def traces(self):
        return (np.trace(self.base).real
                + self.alpha * np.real(np.einsum("ki,ki->k", np.conj(self.u), self.u)))


@dataclass
class QmpState:
    """All message parameters carried between iterations."""

    z_plus: DiagGaussian
    z_minus: Optional[DiagGaussian]
    xt_plus: DiagGaussian
    xt_minus: Optional[DiagGaussian]
    beliefs1: MeasurementBeliefs
    beliefs2: MeasurementBeliefs
    a1: Optional[np.ndarray] = None
    a2: Optional[np.ndarray] = None
    aggregate: Optional[NaturalGaussian] = None
    broadcast: Optional[FullGaussian] = None
    posterior: Optional[DiagGaussian] = None
    lmmse: Optional[FullGaussian] = None
    t: int = 1
    fallbacks: int = 0
    # cached row vectors of the linear views, rebuilt each backward pass
    _am1: Optional[np.ndarray] = field(default=None, repr=False)
    _ahm2: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class IterationRecord:
    solver: str
    seed: Optional[int]
    iteration: int
    mse: float
    se_v_hat_x: float = float("nan")
    residual_samples: np.ndarray = field(default_factory=lambda: np.empty(0))
    v_hat_x: float = float("nan")

    @property
    def mse_db(self):
        return 10.0 * np.log10(self.mse) if self.mse > 0 else -np.inf


@dataclass
class QmpOutput:
    mean: np.ndarray
    variance: np.ndarray
    records: list
    termination: str
    state: QmpState


def _dtype(instance):
    return complex if instance.scalar_field == "complex" else float


def _apply(A, X):
    """``A_k x_k`` for stacks ``A`` (M, N, N) and ``X`` (M, N)."""
    return np.einsum("kij,kj->ki", A, X, optimize=True)


def _apply_h(A, X):
    """``A_k^H x_k``, computed as ``conj(x_k^H A_k)`` to avoid copying ``A``."""
    if np.iscomplexobj(A) or np.iscomplexobj(X):
        return np.conj(np.matmul(np.conj(X)[:, None, :], A)[:, 0, :])
    return np.matmul(X[:, None, :], A)[:, 0, :]


def _damp(fresh: DiagGaussian, old: Optional[DiagGaussian], eta: float) -> DiagGaussian:
    if old is None or eta == 0.0:
        return fresh
    mean = (1.0 - eta) * fresh.mean + eta * old.mean
    log_var = (1.0 - eta) * np.log(fresh.variance) + eta * np.log(old.variance)
    return DiagGaussian(mean, np.exp(log_var))


def _real_prior_view(xt_minus: DiagGaussian, complex_mode: bool, prior: PriorSpec):
    """Real-supported priors in complex mode only see the real part."""
    if complex_mode and prior.kind != "gaussian":
        return np.real(xt_minus.mean), 0.5 * xt_minus.variance
    return xt_minus.mean, xt_minus.variance


def _ez_all(A, b1: MeasurementBeliefs, b2: MeasurementBeliefs):
    """The Ez step (mean and variance of x_check^H A x) for every measurement at once.

    ``m_z = m2^H A m1`` and
    ``v_z = tr(A^H C2 A C1) + m2^H A C1 A^H m2 + m1^H A^H C2 A m1``.
    The trace is expanded around the shared base ``B`` of both stacks.
    """
    M, N, _ = A.shape
    B = b1.base
    if not np.shares_memory(B, b2.base) and not np.array_equal(B, b2.base):
        raise ValueError("belief stacks must share the same base covariance")
    am1 = _apply(A, b1.means)
    ahm2 = _apply_h(A, b2.means)
    m_z = np.einsum("ki,ki->k", np.conj(b2.means), am1)

    # tr(A^H B A B) = sum(conj(A) * (B A B)); done as two large GEMMs
    if _is_scaled_identity(B):
        tr_bb = B[0, 0].real ** 2 * np.sum(np.abs(A) ** 2, axis=(1, 2))
    else:
        AB = (A.reshape(M * N, N) @ B).reshape(M, N, N)
        BAB = np.matmul(B, AB)
        A_bar = np.conj(A) if np.iscomplexobj(A) else A
        tr_bb = np.real(np.einsum("kij,kij->k", A_bar, BAB))
    au1 = _apply(A, b1.u)
    ahu2 = _apply_h(A, b2.u)
    quad_b = lambda g: np.real(np.einsum("ki,ij,kj->k", np.conj(g), B, g, optimize=True))
    cross = np.einsum("ki,ki->k", np.conj(b2.u), au1)
    trace = (tr_bb + b1.alpha * quad_b(au1) + b2.alpha * quad_b(ahu2)
             + b1.alpha * b2.alpha * np.abs(cross) ** 2)
    v_z = trace + b1.quad(ahm2) + b2.quad(am1)
    return m_z, np.maximum(np.real(v_z), 0.0)


def _is_scaled_identity(B):
    d = B[0, 0]
    return np.allclose(B, d * np.eye(B.shape[0]), rtol=0, atol=0)


def init_state(instance: GqeInstance, prior: PriorSpec, config: QmpConfig) -> QmpState:
    """Initial messages.

    The signal-side message starts at the prior mean plus a small seeded
    jitter (the all-equal point is a spurious fixed point of the quadratic
    model) with the prior variance; every per-measurement belief copies it
    with isotropic covariance; the z messages come from one forward
    evaluation of the Ez step.
    """
    rng = np.random.default_rng(config.seed)
    M, N = instance.m, instance.n
    dt = _dtype(instance)
    t_x = prior.second_moment
    eps = rng.standard_normal(N)
    if dt is complex:
        eps = (eps + 1j * rng.standard_normal(N)) / np.sqrt(2)
    v0 = max(prior.variance, config.v_floor)
    if config.init == "spectral":
        from .baselines import spectral_init
        m0 = spectral_init(instance).astype(dt)
    else:
        m0 = (prior.mean + config.init_jitter * np.sqrt(t_x) * eps).astype(dt)
    base = v0 * np.eye(N, dtype=dt)
    means = np.broadcast_to(m0, (M, N)).copy()
    zeros_u = np.zeros((M, N), dtype=dt)
    b1 = MeasurementBeliefs(means, base, zeros_u, np.zeros(M))
    b2 = MeasurementBeliefs(means.copy(), base, zeros_u.copy(), np.zeros(M))
    m_z, v_z = _ez_all(instance.matrices, b1, b2)
    if dt is float:
        m_z = np.real(m_z)
    v_z = np.clip(v_z, config.v_floor, config.v_ceil)
    return QmpState(z_plus=DiagGaussian(m_z, v_z), z_minus=None,
                    xt_plus=DiagGaussian(m0.copy(), np.full(N, v0)), xt_minus=None,
                    beliefs1=b1, beliefs2=b2)


def likelihood_aggregate(A, z_minus: DiagGaussian, b1: MeasurementBeliefs,
                         b2: MeasurementBeliefs):
    """The ``a`` scalars and the natural-form aggregate ``(b, Lambda)``.

    Returns
    -------
    a1, a2 : ndarray of shape (M,)
    aggregate : NaturalGaussian
    am1, ahm2 : ndarray of shape (M, N)
        ``A_i m1_i`` and ``A_i^H m2_i``, the two rank-one directions.
    """
    am1 = _apply(A, b1.means)
    ahm2 = _apply_h(A, b2.means)
    g1 = _apply_h(A, am1)
    g2 = _apply(A, ahm2)
    n1 = np.real(np.einsum("ki,ki->k", np.conj(am1), am1))
    n2 = np.real(np.einsum("ki,ki->k", np.conj(ahm2), ahm2))
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = b1.quad(g1) / n1 ** 2
        a2 = b2.quad(g2) / n2 ** 2
    a1 = np.where(np.isfinite(a1), a1, V_CEIL)
    a2 = np.where(np.isfinite(a2), a2, V_CEIL)

    m_z, v_z = z_minus.mean, z_minus.variance
    w = np.abs(m_z) ** 2
    d1 = v_z + w * a1
    d2 = v_z + w * a2
    shift = ahm2.T @ (m_z / d2) + am1.T @ (np.conj(m_z) / d1)
    Lambda = (ahm2.T / d2) @ np.conj(ahm2) + (am1.T / d1) @ np.conj(am1)
    Lambda = gaussian.hermitian_part(Lambda)
    return a1, a2, NaturalGaussian(Lambda, shift), am1, ahm2


def backward_pass(state: QmpState, instance: GqeInstance, channel: ChannelSpec,
                  config: QmpConfig) -> QmpState:
    """Backward pass: from the z messages back to the signal."""
    A = instance.matrices
    post_z = channel_denoiser(channel, instance.observations)(
        state.z_plus.mean, state.z_plus.variance)
    fresh = ext(post_z.mean, post_z.variance, state.z_plus.mean, state.z_plus.variance,
                config.v_floor, config.v_ceil)
    z_minus = _damp(fresh, state.z_minus, config.damping)

    a1, a2, agg, am1, ahm2 = likelihood_aggregate(A, z_minus, state.beliefs1, state.beliefs2)
    try:
        post = lex(agg.shift, agg.precision, state.xt_plus.mean, state.xt_plus.variance)
    except SingularMatrixError as exc:
        raise QmpNumericalError(str(exc), state.t) from exc
    v_hat = np.real(np.diag(post.covariance))
    fresh = ext(post.mean, v_hat, state.xt_plus.mean, state.xt_plus.variance,
                config.v_floor, config.v_ceil)
    xt_minus = _damp(fresh, state.xt_minus, config.damping)
    return replace(state, z_minus=z_minus, xt_minus=xt_minus, a1=a1, a2=a2,
                   aggregate=agg, lmmse=post, _am1=am1, _ahm2=ahm2)


def _pex_all(broadcast: FullGaussian, m_z, v_z, a, rows_h, d_floor_rel=1e-12):
    """Leave-one-out (Pex) beliefs for every measurement.

    ``rows_h[k]`` is the conjugate transpose of the row ``m_h``, i.e. the
    direction ``m_h^H``.  Degenerate downdates fall back to the broadcast
    belief and are counted.
    """
    C_hat = broadcast.covariance
    u = rows_h @ C_hat.T
    quad = np.real(np.einsum("ki,ki->k", np.conj(rows_h), u))
    d = v_z + np.abs(m_z) ** 2 * a - quad
    resid = m_z - np.einsum("ki,i->k", np.conj(rows_h), broadcast.mean)
    d_floor = d_floor_rel * (np.abs(v_z) + np.trace(C_hat).real / C_hat.shape[0])
    bad = ~np.isfinite(d) | (d < d_floor)
    d_safe = np.where(bad, 1.0, d)
    alpha = np.where(bad, 0.0, 1.0 / d_safe)
    means = broadcast.mean[None, :] - (np.where(bad, 0.0, resid / d_safe))[:, None] * u
    return MeasurementBeliefs(means, C_hat, u, alpha), int(bad.sum())


def forward_pass(state: QmpState, instance: GqeInstance, prior: PriorSpec,
                 config: QmpConfig, denoiser: Optional[Denoiser] = None) -> QmpState:
    """Forward pass: from the prior back out to the z messages."""
    A = instance.matrices
    complex_mode = instance.scalar_field == "complex"
    denoise = denoiser or prior_denoiser(prior)
    m_in, v_in = _real_prior_view(state.xt_minus, complex_mode, prior)
    post = denoise(m_in, v_in)
    post_mean = np.asarray(post.mean, dtype=_dtype(instance))
    post_var = np.asarray(post.variance, dtype=float)
    posterior = DiagGaussian(post_mean, post_var)
    xt_plus = ext(post_mean, post_var, state.xt_minus.mean, state.xt_minus.variance,
                  config.v_floor, config.v_ceil)

    agg = state.aggregate
    try:
        broadcast = lex(agg.shift, agg.precision, xt_plus.mean, xt_plus.variance)
    except SingularMatrixError as exc:
        raise QmpNumericalError(str(exc), state.t) from exc

    m_z, v_z = state.z_minus.mean, state.z_minus.variance
    # type-1 belief leaves out the view through m2 (row m2^H A)
    b1, bad1 = _pex_all(broadcast, m_z, v_z, state.a2, state._ahm2)
    # type-2 belief leaves out the view through m1 (row m1^H A^H)
    b2, bad2 = _pex_all(broadcast, np.conj(m_z), v_z, state.a1, state._am1)
    e = config.belief_damping
    if e:
        b1.means = (1.0 - e) * b1.means + e * state.beliefs1.means
        b2.means = (1.0 - e) * b2.means + e * state.beliefs2.means
    if bad1 or bad2:
        logger.debug("iteration %d: %d degenerate downdates", state.t, bad1 + bad2)

    mz_new, vz_new = _ez_all(A, b1, b2)
    if not complex_mode:
        mz_new = np.real(mz_new)
    z_plus = DiagGaussian(mz_new, np.clip(vz_new, config.v_floor, config.v_ceil))
    return replace(state, xt_plus=xt_plus, posterior=posterior, broadcast=broadcast,
                   beliefs1=b1, beliefs2=b2, z_plus=z_plus,
                   fallbacks=state.fallbacks + bad1 + bad2, t=state.t + 1)


def run(instance: GqeInstance, prior: PriorSpec, channel: ChannelSpec,
        config: QmpConfig = QmpConfig(), denoiser: Optional[Denoiser] = None,
        solver_id: str = "qmp") -> QmpOutput:
    """Run QMP for up to ``config.max_iters`` iterations.

    One record is produced per iteration with the aligned MSE of the
    posterior mean against ``instance.signal``.
    """
    state = init_state(instance, prior, config)
    records = []
    termination = "max_iters"
    prev = None
    for t in range(1, config.max_iters + 1):
        state = backward_pass(state, instance, channel, config)
        state = forward_pass(state, instance, prior, config, denoiser)
        est = state.posterior.mean
        if not np.all(np.isfinite(est)):
            raise QmpNumericalError("non-finite posterior mean", t)
        resid = np.empty(0)
        if config.record_residuals:
            resid = normalized_residuals(state, instance.signal)
        records.append(IterationRecord(
            solver=solver_id, seed=config.seed, iteration=t,
            mse=aligned_mse(est, instance.signal, instance.scalar_field, prior),
            residual_samples=resid,
            v_hat_x=float(np.mean(state.posterior.variance))))
        if prev is not None:
            scale = max(np.linalg.norm(est), np.finfo(float).tiny)
            if np.linalg.norm(est - prev) / scale < config.tol:
                termination = "converged"
                break
        prev = est.copy()
    return QmpOutput(state.posterior.mean, state.posterior.variance, records,
                     termination, state)


def normalized_residuals(state: QmpState, signal):
    """``(m_x^- - x) / sqrt(v_x^-)`` for the current backward message."""
    m, v = state.xt_minus.mean, state.xt_minus.variance
    return np.real(m - signal) / np.sqrt(v)
