import numpy as np
import pytest

from qmp_lab.baselines import (WfConfig, _threshold, gradient, loss, run_twf, run_wf,
                               spectral_init)
from qmp_lab.model import ChannelSpec, GqeInstance, PriorSpec, generate_instance

P01 = PriorSpec.bernoulli01(0.55)
UNI = PriorSpec.uniform(0.1, 2.1)


def numeric_gradient(inst, x, h=1e-6):
    """Central differences; complex mode returns the conj-Wirtinger gradient."""
    g = np.zeros(x.shape, dtype=complex if np.iscomplexobj(x) else float)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        d = (loss(inst, x + e) - loss(inst, x - e)) / (2 * h)
        if np.iscomplexobj(x):
            d_im = (loss(inst, x + 1j * e) - loss(inst, x - 1j * e)) / (2 * h)
            g[j] = 0.5 * (d + 1j * d_im)
        else:
            g[j] = d
    return g


@pytest.mark.parametrize("field", ["real", "complex"])
def test_gradient_matches_finite_differences(field):
    inst = generate_instance(6, 20, PriorSpec.gaussian(), ChannelSpec.awgn(0.1), field, seed=3)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(6) + (1j * rng.standard_normal(6) if field == "complex" else 0)
    g, ref = gradient(inst, x), numeric_gradient(inst, x)
    assert np.max(np.abs(g - ref)) <= 1e-5 * max(1.0, np.max(np.abs(ref)))


def test_truth_is_stationary_without_noise():
    inst = generate_instance(8, 32, P01, ChannelSpec.awgn(0.0), seed=1)
    assert loss(inst, inst.signal) == pytest.approx(0.0, abs=1e-28)
    np.testing.assert_allclose(gradient(inst, inst.signal), 0.0, atol=1e-12)


def test_zero_step_keeps_spectral_start():
    inst = generate_instance(8, 32, P01, ChannelSpec.awgn(0.1), seed=2)
    out = run_wf(inst, WfConfig(mu0=0.0, iters=5), P01)
    np.testing.assert_array_equal(out.mean, spectral_init(inst))
    mse = [r.mse for r in out.records]
    assert len(mse) == 5 and len(set(mse)) == 1


def test_spectral_init_recovers_rank_one_signal():
    # A_i = I makes every observation |x|^2; eigenvector direction is arbitrary but the norm is fixed
    x = np.array([1.0, 2.0, 2.0])
    A = np.stack([np.eye(3)] * 4)
    inst = GqeInstance(A, x, np.full(4, x @ x))
    assert np.linalg.norm(spectral_init(inst)) == pytest.approx(3.0)
    assert spectral_init(inst).sum() >= 0


def test_twf_zero_threshold_reproduces_wf():
    inst = generate_instance(12, 48, P01, ChannelSpec.awgn(0.1), seed=4)
    cfg = WfConfig(threshold=0.0, iters=40)
    wf, twf = run_wf(inst, cfg, P01), run_twf(inst, P01, cfg)
    assert wf.mean.tobytes() == twf.mean.tobytes()
    assert [r.mse for r in wf.records] == [r.mse for r in twf.records]
    assert {r.solver for r in twf.records} == {"twf"}


def test_twf_uniform_iterates_stay_in_support():
    inst = generate_instance(12, 48, UNI, ChannelSpec.awgn(0.05), seed=5)
    out = run_twf(inst, UNI, WfConfig(iters=30))
    assert np.all((out.mean >= 0.1) & (out.mean <= 2.1))


def test_threshold_rules():
    x = np.array([0.05, 0.3, 0.7, 1.5])
    np.testing.assert_allclose(_threshold(x, P01, 0.1), [0.0, 0.2, 0.8, 1.4])
    np.testing.assert_array_equal(_threshold(x, UNI, 0.1), [0.1, 0.3, 0.7, 1.5])
    assert _threshold(x, None, 0.1) is x


def test_wf_reduces_loss_and_records():
    inst = generate_instance(16, 64, P01, ChannelSpec.awgn(0.1), seed=0)
    out = run_wf(inst, WfConfig(iters=100), P01)
    assert out.termination == "max_iters" and len(out.records) == 100
    assert loss(inst, out.mean) < loss(inst, spectral_init(inst))
    assert [r.iteration for r in out.records] == list(range(1, 101))


def test_divergence_is_reported_and_iterate_kept_finite():
    inst = generate_instance(8, 32, P01, ChannelSpec.awgn(0.1), seed=0)
    out = run_wf(inst, WfConfig(mu0=1e6, ramp=1e-3, iters=50, divergence=1e6))
    assert out.termination == "diverged"
    assert np.all(np.isfinite(out.mean))


def test_config_validation():
    for bad in (dict(mu0=-1.0), dict(iters=0), dict(ramp=0.0), dict(threshold=-0.1)):
        with pytest.raises(ValueError):
            WfConfig(**bad)
