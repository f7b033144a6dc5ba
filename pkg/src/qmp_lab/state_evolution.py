"""Scalar state evolution (SE) predicting the per-iteration variances of QMP.

The recursion tracks a handful of scalars.  Quantities the scalar model
cannot express in closed form, namely the spectra of the likelihood
precision built from per-measurement mean vectors, are obtained by Monte
Carlo over ensembles of sampled means pushed through the actual
measurement matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .denoisers import prior_denoiser
from .gaussian import V_CEIL, V_FLOOR, ext
from .model import ChannelSpec, PriorSpec

LEAVE_OUT = ("none", "type1_first", "type2_first")


class SeDomainError(ValueError):
    pass


@dataclass(frozen=True)
class SeConfig:
    """Knobs of the SE recursion.

    ``damping`` mirrors the solver's damping of the two extrinsic variances
    (applied in the log domain).  ``mc_samples`` is the number of Monte-Carlo ensemble trials used for
    the eigenvalue expectations; ``quad_nodes`` the Gauss-Hermite order of
    the scalar integrals (Gauss-Legendre of the same order is used over
    the uniform prior's support).
    """

    iters: int = 30
    mc_samples: int = 64
    quad_nodes: int = 61
    seed: Optional[int] = 0
    damping: float = 0.4
    init_jitter: float = 0.01

    def __post_init__(self):
        if min(self.iters, self.mc_samples, self.quad_nodes) < 1:
            raise ValueError("SE counts must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass
class SeState:
    """SE scalars of one iteration plus the current mean ensembles."""

    v_z_plus: float
    v_x_plus: float
    c1: float
    c2: float
    t_x: float
    t_a: float
    t_z: float
    mx1: np.ndarray = field(repr=False)
    mx2: np.ndarray = field(repr=False)
    ma1: np.ndarray = field(repr=False)
    ma2: np.ndarray = field(repr=False)
    m_xt_plus: np.ndarray = field(repr=False)
    q_z: float = np.nan
    v_hat_z: float = np.nan
    v_z_minus: float = np.nan
    w_z: float = np.nan
    a1: float = np.nan
    a2: float = np.nan
    w1: float = np.nan
    w2: float = np.nan
    v_hat_x_minus: float = np.nan
    v_x_minus: float = np.nan
    q_x: float = np.nan
    v_hat_x_plus: float = np.nan


@dataclass
class SeTrajectory:
    """Per-iteration SE output; index ``t-1`` holds iteration ``t``."""

    v_hat_x: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.v_hat_x)


def _extrinsic_variance(v_post, v_in):
    """Scalar ``(1/v_post - 1/v_in)^{-1}`` with the operator clamping rules."""
    return float(ext(np.zeros(1), np.array([v_post]), np.zeros(1), np.array([v_in])).variance[0])


# --- scalar integrals --------------------------------------------------------

def _hermite(nodes):
    """Probabilists' Gauss-Hermite rule normalized to integrate N(0, 1)."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return x, w / np.sqrt(2.0 * np.pi)


def _split_normal_rule(cut, nodes, width=12.0):
    """Nodes/weights integrating N(0, 1) over ``[-width, width]`` split at ``cut``.

    Gauss-Legendre on each side of a kink or steep transition of the
    integrand converges where a single Gauss-Hermite rule stalls.
    """
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    edges = [-width, width]
    if -width < cut < width:
        edges.insert(1, float(cut))
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (hi - lo) * gx + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * gw)
    x, w = np.concatenate(xs), np.concatenate(ws)
    return x, w * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def qz_integral(v_z_plus, t_z, channel: ChannelSpec, cfg: SeConfig = SeConfig()):
    """``E[ E[z | y]^2 ]`` when ``z ~ N(sqrt(t_z - v) xi, v)`` and ``y ~ p(y | z)``.

    For the AWGN channel the inner integrals over ``z`` and ``y`` are
    Gaussian-conjugate: conditioned on ``xi``, ``E[z | y]`` is Gaussian in
    ``y`` with mean ``mu = sqrt(t_z - v) xi`` and variance ``v^2/(v + v_w)``.
    The remaining expectation over ``xi`` uses Gauss-Hermite quadrature.
    """
    v = float(v_z_plus)
    if not v > 0:
        raise SeDomainError("v_z_plus must be positive")
    if v > t_z:
        raise SeDomainError(f"v_z_plus={v:.4g} exceeds T_z={t_z:.4g}")
    if channel.kind != "awgn":
        raise ValueError(f"unsupported channel {channel.kind!r}")
    v_w = channel.noise_var
    spread = v * v / (v + v_w) if np.isfinite(v_w) else 0.0
    xi, w = _hermite(cfg.quad_nodes)
    mu2 = (t_z - v) * xi ** 2
    q = float(np.sum(w * (mu2 + spread)))
    return min(max(q, 0.0), t_z)


def _qx_terms(v, prior: PriorSpec, cfg: SeConfig):
    """``(E[m_hat^2], E[v_hat])`` of the scalar channel ``zeta = x + n``.

    The two add up to ``T_x``; the second is returned directly so that
    small posterior variances are not lost to the cancellation in ``T_x - q``.
    """
    u, wu = _hermite(cfg.quad_nodes)
    denoise = prior_denoiser(prior)
    s = np.sqrt(v)
    if prior.kind == "gaussian":
        mean, var = prior.params
        # posterior mean is affine in zeta; closed form
        gain = var / (var + v)
        return mean ** 2 + gain ** 2 * (var + v), var * v / (var + v)
    if prior.kind == "bernoulli01":
        (rho,) = prior.params
        q = mmse = 0.0
        # the posterior mean crosses 1/2 at zeta_c; split the rule there
        zeta_c = 0.5 + v * np.log((1.0 - rho) / rho) if 0.0 < rho < 1.0 else 0.5
        for atom, weight in ((0.0, 1.0 - rho), (1.0, rho)):
            if weight == 0.0:
                continue
            uu, ww = _split_normal_rule((zeta_c - atom) / s, cfg.quad_nodes)
            post = denoise(atom + s * uu, np.full_like(uu, v))
            q += weight * np.sum(ww * post.mean ** 2)
            mmse += weight * np.sum(ww * post.variance)
        return float(q), float(mmse)
    if prior.kind == "uniform":
        a, b = prior.params
        gx, gw = np.polynomial.legendre.leggauss(cfg.quad_nodes)
        x = 0.5 * (b - a) * gx + 0.5 * (a + b)
        w = 0.5 * gw[:, None] * wu[None, :]  # uniform density on [a, b] times N(0, 1)
        zeta = x[:, None] + s * u[None, :]
        post = denoise(zeta, np.full_like(zeta, v))
        return float(np.sum(w * post.mean ** 2)), float(np.sum(w * post.variance))
    raise ValueError(f"unsupported prior {prior.kind!r}")


def qx_integral(v_x_minus, prior: PriorSpec, cfg: SeConfig = SeConfig()):
    """``E[ E[x | x + n]^2 ]`` with ``x ~ prior`` and ``n ~ N(0, v)``.

    ``T_x - q`` is the MMSE of the scalar channel ``zeta = x + n``.
    """
    v = float(v_x_minus)
    if not v > 0:
        raise SeDomainError("v_x_minus must be positive")
    q, _ = _qx_terms(v, prior, cfg)
    return float(min(max(q, 0.0), prior.second_moment))


def x_mmse(v_x_minus, prior: PriorSpec, cfg: SeConfig = SeConfig()):
    """``T_x - q_x`` evaluated as the average posterior variance."""
    v = float(v_x_minus)
    if not v > 0:
        raise SeDomainError("v_x_minus must be positive")
    _, mmse = _qx_terms(v, prior, cfg)
    return float(min(max(mmse, V_FLOOR), prior.second_moment))


def z_terms(v_z_plus, channel: ChannelSpec):
    """``(v_hat_z, v_z_minus)`` for the AWGN channel in closed form.

    ``v_hat_z = T_z - q_z = v v_w / (v + v_w)`` and the extrinsic variance is
    exactly ``v_w``; both are evaluated without the subtractions.
    """
    v, v_w = float(v_z_plus), channel.noise_var
    if not np.isfinite(v_w):
        return v, V_CEIL
    v_hat = v * v_w / (v + v_w) if v + v_w > 0 else 0.0
    return max(v_hat, V_FLOOR), float(min(max(v_w, V_FLOOR), V_CEIL))


# --- Monte-Carlo pieces -------------------------------------------------------

def _gram_eigs(ma1, ma2, w1, w2, leave_out):
    if leave_out not in LEAVE_OUT:
        raise ValueError(f"leave_out must be one of {LEAVE_OUT}")
    if not (w1 > 0 and w2 > 0):
        raise ValueError("w1 and w2 must be positive")
    ma1 = np.asarray(ma1)
    ma2 = np.asarray(ma2)
    if ma1.ndim == 2:
        ma1, ma2 = ma1[None], ma2[None]
    if leave_out == "type1_first":
        ma1 = ma1[:, :, 1:]
    elif leave_out == "type2_first":
        ma2 = ma2[:, :, 1:]
    G = (ma2 @ np.conj(np.swapaxes(ma2, 1, 2))) / w2 \
        + (ma1 @ np.conj(np.swapaxes(ma1, 1, 2))) / w1
    G = 0.5 * (G + np.conj(np.swapaxes(G, 1, 2)))
    try:
        lam = np.linalg.eigvalsh(G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigen_expectation: eigensolver failed ({exc})") from exc
    return np.maximum(lam, 0.0)


def eigen_expectation(ma1, ma2, w1, w2, shift, leave_out="none"):
    """Average of ``1/(lambda + shift)`` over the spectrum of the Gram mix.

    The matrix is ``ma2 ma2^H / w2 + ma1 ma1^H / w1`` where the columns of
    ``ma1`` and ``ma2`` are the per-measurement directions.  ``leave_out``
    drops the first column of one family.  Stacked inputs of shape
    ``(trials, N, M)`` are averaged over the leading axis.
    """
    if not shift > 0:
        raise ValueError("shift must be positive")
    lam = _gram_eigs(ma1, ma2, w1, w2, leave_out)
    return float(np.mean(1.0 / (lam + shift)))


def lmmse_terms(ma1, ma2, w1, w2, shift):
    """``(v_hat, v_ext)``: the averaged LMMSE variance and its extrinsic part.

    ``v_ext = (1/v_hat - shift)^{-1}`` is evaluated through
    ``g = E[lambda/(lambda + shift)]`` as ``(1 - g) / (shift g)``, which
    stays accurate when ``shift`` dwarfs the spectrum.
    """
    if not shift > 0:
        raise ValueError("shift must be positive")
    lam = _gram_eigs(ma1, ma2, w1, w2, "none")
    v_hat = float(np.mean(1.0 / (lam + shift)))
    g = float(np.mean(lam / (lam + shift)))
    v_ext = (1.0 - g) / (shift * g) if g > 0 else V_CEIL
    return v_hat, float(min(max(v_ext, V_FLOOR), V_CEIL))


def sample_mean_ensembles(center, spread, A, rng, trials=None):
    """Draw per-measurement mean vectors and their images under ``A``.

    Parameters
    ----------
    center : ndarray of shape (trials, N)
        Central signal-side means, one vector per trial.
    spread : (float, float)
        Per-entry variances of the type-1 and type-2 samples; negative
        values are clamped to zero.
    A : ndarray of shape (M, N, N)

    Returns
    -------
    mx1, mx2 : ndarray of shape (trials, N, M)
        Sampled means, one column per measurement.
    ma1, ma2 : ndarray of shape (trials, N, M)
        ``A_k mx1[:, k]`` and ``A_k^H mx2[:, k]``.
    """
    center = np.atleast_2d(center)
    K, N = center.shape
    M = A.shape[0]
    cplx = np.iscomplexobj(A) or np.iscomplexobj(center)
    out = []
    for s in spread:
        s = max(float(s), 0.0)
        noise = rng.standard_normal((K, N, M))
        if cplx:
            noise = (noise + 1j * rng.standard_normal((K, N, M))) / np.sqrt(2)
        out.append(center[:, :, None] + np.sqrt(s) * noise)
    mx1, mx2 = out
    ma1 = np.einsum("kij,tjk->tik", A, mx1, optimize=True)
    ma2 = np.einsum("kji,tjk->tik", np.conj(A), mx2, optimize=True)
    return mx1, mx2, ma1, ma2


def _z_plus_variance(c1, c2, A, ma1, ma2):
    """``v_z^+`` from the three-term trace formula."""
    M = A.shape[0]
    tr_aa = np.sum(np.abs(A) ** 2)
    e2 = np.mean(np.sum(np.abs(ma2) ** 2, axis=(1, 2)))
    e1 = np.mean(np.sum(np.abs(ma1) ** 2, axis=(1, 2)))
    return float((c1 * c2 * tr_aa + c1 * e2 + c2 * e1) / M)


def _propagate_prior_means(prior, v_x_minus, rng, trials, n, cplx):
    """Monte-Carlo draw of the extrinsic prior-side means.

    Pushes a fresh signal through the decoupled scalar channel
    ``zeta = x + n``, the prior denoiser and the extrinsic division, exactly
    as the solver does coordinatewise.
    """
    x = np.stack([prior.sample(rng, n) for _ in range(trials)]).real
    zeta = x + np.sqrt(v_x_minus) * rng.standard_normal(x.shape)
    v_in = np.full_like(zeta, v_x_minus)
    post = prior_denoiser(prior)(zeta, v_in)
    m_plus = ext(post.mean, np.maximum(post.variance, V_FLOOR), zeta, v_in).mean
    return m_plus.astype(complex) if cplx else m_plus


def _damp_scalar(fresh, old, eta):
    if old is None or not np.isfinite(old) or eta == 0.0:
        return fresh
    return float(np.exp((1 - eta) * np.log(fresh) + eta * np.log(old)))


def initial_state(prior: PriorSpec, A, cfg: SeConfig, rng) -> SeState:
    """Mirror of the solver's initialization in SE variables."""
    M, N, _ = A.shape
    cplx = np.iscomplexobj(A)
    t_x = prior.second_moment
    t_a = float(np.mean(np.abs(A) ** 2))
    t_z = N ** 2 * t_a * t_x
    v0 = max(prior.variance, V_FLOOR)
    eps = rng.standard_normal((cfg.mc_samples, N))
    center = prior.mean + cfg.init_jitter * np.sqrt(t_x) * eps
    if cplx:
        center = center.astype(complex)
    mx1, mx2, ma1, ma2 = sample_mean_ensembles(center, (0.0, 0.0), A, rng)
    v_z = _z_plus_variance(v0, v0, A, ma1, ma2)
    return SeState(v_z_plus=v_z, v_x_plus=v0, c1=v0, c2=v0, t_x=t_x, t_a=t_a,
                   t_z=t_z, mx1=mx1, mx2=mx2, ma1=ma1, ma2=ma2, m_xt_plus=center)


def se_step(s: SeState, prior: PriorSpec, channel: ChannelSpec, A, cfg: SeConfig,
            rng, prev: Optional[SeState] = None) -> SeState:
    """One pass of the SE recursion; returns the state for iteration t+1.

    The returned state also carries the iteration-t intermediates
    (``v_hat_x_plus`` is the prediction for the posterior variance
    produced at iteration t).
    """
    M, N, _ = A.shape
    t_z = s.t_z
    v_zp = min(s.v_z_plus, t_z * (1 - 1e-12))
    q_z = qz_integral(v_zp, t_z, channel, cfg)
    v_hat_z, v_z_minus = z_terms(v_zp, channel)
    v_z_minus = _damp_scalar(v_z_minus, prev.v_z_minus if prev else None, cfg.damping)
    w_z = t_z + v_z_minus

    e1 = np.mean(np.sum(np.abs(s.mx1) ** 2, axis=(1, 2))) / M
    e2 = np.mean(np.sum(np.abs(s.mx2) ** 2, axis=(1, 2))) / M
    # all-zero means (symmetric priors) carry no quadratic-form information
    a1 = s.c1 / e1 if e1 > 0 else V_CEIL
    a2 = s.c2 / e2 if e2 > 0 else V_CEIL
    w1 = v_z_minus + w_z * a1
    w2 = v_z_minus + w_z * a2

    v_hat_x_minus, v_x_minus = lmmse_terms(s.ma1, s.ma2, w1, w2, 1.0 / s.v_x_plus)
    v_x_minus = _damp_scalar(v_x_minus, prev.v_x_minus if prev else None, cfg.damping)

    q_x = qx_integral(v_x_minus, prior, cfg)
    v_hat_x_plus = x_mmse(v_x_minus, prior, cfg)
    v_x_plus = _extrinsic_variance(v_hat_x_plus, v_x_minus)

    c1 = eigen_expectation(s.ma1, s.ma2, w1, w2, 1.0 / v_x_plus, "type2_first")
    c2 = eigen_expectation(s.ma1, s.ma2, w1, w2, 1.0 / v_x_plus, "type1_first")

    cplx = np.iscomplexobj(A)
    center = _propagate_prior_means(prior, v_x_minus, rng, cfg.mc_samples, N, cplx)
    mx1, mx2, ma1, ma2 = sample_mean_ensembles(
        center, (v_x_plus - c1, v_x_plus - c2), A, rng)
    v_z_plus = _z_plus_variance(c1, c2, A, ma1, ma2)

    done = SeState(v_z_plus=s.v_z_plus, v_x_plus=s.v_x_plus, c1=s.c1, c2=s.c2,
                   t_x=s.t_x, t_a=s.t_a, t_z=t_z, mx1=s.mx1, mx2=s.mx2, ma1=s.ma1,
                   ma2=s.ma2, m_xt_plus=s.m_xt_plus, q_z=q_z, v_hat_z=v_hat_z,
                   v_z_minus=v_z_minus, w_z=w_z, a1=a1, a2=a2, w1=w1, w2=w2,
                   v_hat_x_minus=v_hat_x_minus, v_x_minus=v_x_minus, q_x=q_x,
                   v_hat_x_plus=v_hat_x_plus)
    nxt = SeState(v_z_plus=min(v_z_plus, V_CEIL), v_x_plus=v_x_plus, c1=c1, c2=c2,
                  t_x=s.t_x, t_a=s.t_a, t_z=t_z, mx1=mx1, mx2=mx2, ma1=ma1,
                  ma2=ma2, m_xt_plus=center)
    return done, nxt


def run_se(prior: PriorSpec, channel: ChannelSpec, A, cfg: SeConfig = SeConfig()):
    """Iterate the SE for ``cfg.iters`` steps.

    Parameters
    ----------
    A : ndarray of shape (M, N, N)
        Measurement matrices; normally those of the instance under test.

    Returns
    -------
    SeTrajectory
        ``v_hat_x[t-1]`` predicts the mean posterior variance (equivalently
        the MSE) of the posterior mean produced at solver iteration ``t``.
    """
    A = np.asarray(A)
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(prior, A, cfg, rng)
    traj = SeTrajectory()
    prev = None
    for _ in range(cfg.iters):
        done, state = se_step(state, prior, channel, A, cfg, rng, prev)
        traj.v_hat_x.append(done.v_hat_x_plus)
        traj.states.append(done)
        prev = done
    return traj
