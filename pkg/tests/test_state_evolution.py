import numpy as np
import pytest

from qmp_lab import gaussian
from qmp_lab.gaussian import V_FLOOR
from qmp_lab.model import ChannelSpec, PriorSpec, generate_instance
from qmp_lab.state_evolution import (SeConfig, SeDomainError, _z_plus_variance, eigen_expectation,
                                     lmmse_terms, qx_integral, qz_integral, run_se,
                                     sample_mean_ensembles, x_mmse, z_terms)

P01 = PriorSpec.bernoulli01(0.55)


# ---- q_z ---------------------------------------------------------------------

def test_qz_noiseless_and_uninformative_limits():
    assert qz_integral(0.4, 2.0, ChannelSpec.awgn(0.0)) == pytest.approx(2.0, rel=1e-12)
    assert qz_integral(0.4, 2.0, ChannelSpec.awgn(np.inf)) == pytest.approx(1.6, rel=1e-12)
    assert qz_integral(0.4, 2.0, ChannelSpec.awgn(1e12)) == pytest.approx(1.6, rel=1e-9)


def test_qz_frozen_value_and_monte_carlo():
    # closed form (T - v) + v^2/(v + v_w) at T=1, v=0.5, v_w=0.5
    q = qz_integral(0.5, 1.0, ChannelSpec.awgn(0.5))
    assert q == pytest.approx(0.75, abs=1e-12)
    # 10^6 samples of E[z|y]^2: 0.75058, stderr 1.06e-3
    assert abs(q - 0.7505798004347053) <= 3 * 0.0010616545299326381


def test_qz_domain_errors():
    with pytest.raises(SeDomainError):
        qz_integral(0.0, 1.0, ChannelSpec.awgn(0.1))
    with pytest.raises(SeDomainError):
        qz_integral(1.5, 1.0, ChannelSpec.awgn(0.1))


# ---- q_x ---------------------------------------------------------------------

def test_qx_limits():
    assert qx_integral(1e-10, P01) == pytest.approx(0.55, rel=1e-6)
    assert qx_integral(1e8, P01) == pytest.approx(0.55 ** 2, rel=1e-4)
    g = PriorSpec.gaussian(0.5, 2.0)
    assert qx_integral(1e-12, g) == pytest.approx(g.second_moment, rel=1e-9)
    assert qx_integral(1e12, g) == pytest.approx(0.25, rel=1e-9)
    u = PriorSpec.uniform(0.0, 1.0)
    assert qx_integral(1e-8, u) == pytest.approx(1 / 3, rel=1e-3)
    assert qx_integral(1e8, u) == pytest.approx(0.25, rel=1e-6)


def test_qx_frozen_value_and_monte_carlo():
    q = qx_integral(0.1, P01)
    # 40-digit quadrature over the two-atom mixture
    assert q == pytest.approx(0.50806348612521564, abs=1e-12)
    # 10^6 scalar-channel draws: 0.50850, stderr 4.62e-4
    assert abs(q - 0.5085042601075638) <= 3 * 0.0004620764641967814


@pytest.mark.parametrize("prior", [P01, PriorSpec.uniform(0.1, 2.1)])
@pytest.mark.parametrize("v", [1e-3, 0.05, 0.3, 2.0, 10.0])
def test_qx_stable_under_node_doubling(prior, v):
    lo = qx_integral(v, prior, SeConfig(quad_nodes=61))
    hi = qx_integral(v, prior, SeConfig(quad_nodes=122))
    assert abs(lo - hi) <= 1e-6 * abs(hi)


@pytest.mark.parametrize("v", [1e-3, 0.4, 1.9])
def test_qz_stable_under_node_doubling(v):
    lo = qz_integral(v, 2.0, ChannelSpec.awgn(0.1), SeConfig(quad_nodes=61))
    hi = qz_integral(v, 2.0, ChannelSpec.awgn(0.1), SeConfig(quad_nodes=122))
    assert abs(lo - hi) <= 1e-6 * abs(hi)


def test_qx_domain_error():
    with pytest.raises(SeDomainError):
        qx_integral(-1.0, P01)


@pytest.mark.parametrize("prior", [P01, PriorSpec.uniform(0.1, 2.1), PriorSpec.gaussian(0.3, 2.0)])
@pytest.mark.parametrize("v", [0.05, 0.5, 4.0])
def test_direct_mmse_equals_second_moment_gap(prior, v):
    assert x_mmse(v, prior) == pytest.approx(prior.second_moment - qx_integral(v, prior), abs=1e-12)


def test_direct_mmse_resolves_tiny_values():
    # far below the resolution of T_x - q in double precision
    tiny = x_mmse(0.004, P01)
    assert 0 < tiny < 1e-11 or tiny == V_FLOOR
    assert x_mmse(0.02, P01) < x_mmse(0.03, P01) < x_mmse(0.05, P01)


@pytest.mark.parametrize("v_w", [0.0, 0.1, 2.0, np.inf])
def test_z_terms_match_quadrature(v_w):
    ch = ChannelSpec.awgn(v_w)
    v_hat, v_minus = z_terms(0.4, ch)
    assert v_hat == pytest.approx(max(2.0 - qz_integral(0.4, 2.0, ch), V_FLOOR), abs=1e-12)
    if np.isfinite(v_w):
        assert v_minus == pytest.approx(max(v_w, V_FLOOR))
        # stable for v far below v_w, where 1/v_hat - 1/v cancels
        assert z_terms(1e-10, ch)[1] == pytest.approx(max(v_w, V_FLOOR))


# ---- eigen expectation --------------------------------------------------------

def test_eigen_zero_means_returns_shift_inverse():
    z = np.zeros((6, 4))
    assert eigen_expectation(z, z, 1.0, 1.0, 1 / 0.3) == pytest.approx(0.3)


def test_eigen_rank_one_formula():
    u = np.array([[1.0], [2.0], [-1.0]])
    w2, s = 0.5, 2.0
    got = eigen_expectation(np.zeros((3, 1)), u, 1.0, w2, s)
    ref = (2 / s + 1 / (u[:, 0] @ u[:, 0] / w2 + s)) / 3
    assert got == pytest.approx(ref, rel=1e-12)
    # dropping the only type-2 column leaves the zero matrix
    assert eigen_expectation(np.zeros((3, 1)), u, 1.0, w2, s, "type2_first") == pytest.approx(1 / s)


@pytest.mark.parametrize("n", [4, 17, 32])
@pytest.mark.parametrize("cplx", [False, True])
def test_eigen_equals_normalized_trace_inverse(n, cplx):
    rng = np.random.default_rng(n)
    m = 2 * n
    mk = lambda: rng.standard_normal((n, m)) + (1j * rng.standard_normal((n, m)) if cplx else 0)
    ma1, ma2 = mk(), mk()
    w1, w2, s = 0.7, 1.3, 0.9
    G = ma2 @ np.conj(ma2.T) / w2 + ma1 @ np.conj(ma1.T) / w1
    ref = np.real(np.trace(np.linalg.inv(G + s * np.eye(n)))) / n
    assert eigen_expectation(ma1, ma2, w1, w2, s) == pytest.approx(ref, rel=1e-10)
    G1 = ma2[:, 1:] @ np.conj(ma2[:, 1:].T) / w2 + ma1 @ np.conj(ma1.T) / w1
    ref1 = np.real(np.trace(np.linalg.inv(G1 + s * np.eye(n)))) / n
    assert eigen_expectation(ma1, ma2, w1, w2, s, "type2_first") == pytest.approx(ref1, rel=1e-10)


def test_lmmse_terms_extrinsic():
    rng = np.random.default_rng(0)
    ma1, ma2 = rng.standard_normal((8, 16)), rng.standard_normal((8, 16))
    v_hat, v_ext = lmmse_terms(ma1, ma2, 0.7, 1.3, 0.9)
    assert v_hat == pytest.approx(eigen_expectation(ma1, ma2, 0.7, 1.3, 0.9), rel=1e-14)
    assert v_ext == pytest.approx(1 / (1 / v_hat - 0.9), rel=1e-10)
    # huge shift: the extrinsic tends to 1/mean(lambda) where the subtraction would fail
    lam = np.linalg.eigvalsh(ma2 @ ma2.T / 1.3 + ma1 @ ma1.T / 0.7)
    assert lmmse_terms(ma1, ma2, 0.7, 1.3, 1e13)[1] == pytest.approx(1 / lam.mean(), rel=1e-6)


def test_eigen_rejects_bad_arguments():
    z = np.zeros((2, 2))
    with pytest.raises(ValueError):
        eigen_expectation(z, z, 1.0, 1.0, 1.0, "both")
    with pytest.raises(ValueError):
        eigen_expectation(z, z, 0.0, 1.0, 1.0)


# ---- ensembles -----------------------------------------------------------------

def test_ensembles_zero_spread_and_images():
    inst = generate_instance(5, 7, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=0)
    A = inst.matrices
    c = np.random.default_rng(0).standard_normal((2, 5))
    mx1, mx2, ma1, ma2 = sample_mean_ensembles(c, (0.0, -1.0), A, np.random.default_rng(1))
    np.testing.assert_array_equal(mx1, np.repeat(c[:, :, None], 7, axis=2))
    np.testing.assert_array_equal(mx2, mx1)
    for k in range(7):
        np.testing.assert_allclose(ma1[0, :, k], A[k] @ c[0], atol=1e-12)
        np.testing.assert_allclose(ma2[1, :, k], A[k].T @ c[1], atol=1e-12)


def test_ensemble_moments_and_determinism():
    A = np.stack([np.eye(3)] * 200)
    c = np.full((50, 3), 0.7)
    mx1, mx2, _, _ = sample_mean_ensembles(c, (0.25, 4.0), A, np.random.default_rng(3))
    k = mx1.size
    assert abs(mx1.mean() - 0.7) <= 4 * 0.5 / np.sqrt(k)
    assert mx1.var() == pytest.approx(0.25, rel=0.05)
    assert mx2.var() == pytest.approx(4.0, rel=0.05)
    again = sample_mean_ensembles(c, (0.25, 4.0), A, np.random.default_rng(3))
    np.testing.assert_array_equal(again[0], mx1)


def test_z_plus_variance_matches_per_measurement_ez():
    inst = generate_instance(6, 5, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=2)
    A = inst.matrices
    rng = np.random.default_rng(0)
    c = rng.standard_normal((1, 6))
    _, _, ma1, ma2 = sample_mean_ensembles(c, (0.0, 0.0), A, rng)
    c1, c2 = 0.3, 0.8
    ref = np.mean([gaussian.ez(c[0] @ Ak, c2 * Ak.T @ Ak, c[0], c1 * np.eye(6))[1] for Ak in A])
    assert _z_plus_variance(c1, c2, A, ma1, ma2) == pytest.approx(ref, rel=1e-10)


# ---- full recursion -------------------------------------------------------------

def test_run_se_shape_bounds_and_determinism():
    inst = generate_instance(16, 64, P01, ChannelSpec.awgn(0.1), seed=0)
    cfg = SeConfig(iters=6, mc_samples=8)
    traj = run_se(P01, ChannelSpec.awgn(0.1), inst.matrices, cfg)
    assert len(traj) == 6 and len(traj.states) == 6
    v = np.array(traj.v_hat_x)
    assert np.all(np.isfinite(v)) and np.all(v >= V_FLOOR) and np.all(v <= P01.second_moment)
    again = run_se(P01, ChannelSpec.awgn(0.1), inst.matrices, cfg)
    assert again.v_hat_x == traj.v_hat_x


@pytest.mark.parametrize("prior", [P01, PriorSpec.uniform(0.1, 2.1)])
def test_monotone_information_noiseless_undamped(prior):
    ch = ChannelSpec.awgn(0.0)
    inst = generate_instance(32, 128, prior, ch, seed=0)
    v = np.array(run_se(prior, ch, inst.matrices, SeConfig(iters=10, damping=0.0,
                                                             mc_samples=16)).v_hat_x)
    rises = v[1:] > v[:-1]
    assert rises.sum() <= 1
    assert np.all(v[1:][rises] <= 1.05 * v[:-1][rises])


def test_zero_mean_gaussian_prior_is_uninformative_not_nan():
    g = PriorSpec.gaussian()
    inst = generate_instance(8, 32, g, ChannelSpec.awgn(0.1), seed=0)
    v = run_se(g, ChannelSpec.awgn(0.1), inst.matrices, SeConfig(iters=3, mc_samples=4)).v_hat_x
    assert np.all(np.isfinite(v))


def test_se_config_validation():
    with pytest.raises(ValueError):
        SeConfig(iters=0)
    with pytest.raises(ValueError):
        SeConfig(damping=1.0)
