import numpy as np
import pytest

from qmp_lab.model import (ChannelSpec, GqeInstance, ParameterError, PriorSpec,
                           forward, generate_instance)


def test_prior_second_moments():
    assert PriorSpec.bernoulli01(0.3).second_moment == pytest.approx(0.3)
    assert PriorSpec.uniform(0, 1).second_moment == pytest.approx(1 / 3)
    assert PriorSpec.gaussian(1, 1).second_moment == pytest.approx(2.0)


@pytest.mark.parametrize("bad", [
    lambda: PriorSpec.gaussian(0, 0), lambda: PriorSpec.bernoulli01(1.2),
    lambda: PriorSpec.uniform(1, 1), lambda: PriorSpec("laplace", (1,)),
    lambda: ChannelSpec.awgn(-1.0)])
def test_invalid_parameters(bad):
    with pytest.raises(ParameterError):
        bad()


def test_rho_one_gives_all_ones_and_sum_of_entries():
    inst = generate_instance(2, 1, PriorSpec.bernoulli01(1.0), ChannelSpec.awgn(0), seed=5)
    np.testing.assert_array_equal(inst.signal, [1.0, 1.0])
    assert inst.observations[0] == pytest.approx(inst.matrices[0].sum())


def test_full_scale_instance_shape():
    inst = generate_instance(256, 1024, PriorSpec.bernoulli01(0.55), ChannelSpec.awgn(0.1), seed=0)
    assert inst.matrices.shape == (1024, 256, 256)
    assert set(np.unique(inst.signal)) <= {0.0, 1.0}


def test_uniform_signal_in_bounds():
    inst = generate_instance(8, 32, PriorSpec.uniform(0.1, 2.1), ChannelSpec.awgn(0.05), seed=1)
    assert np.all((inst.signal >= 0.1) & (inst.signal <= 2.1))


def test_entry_variance_close_to_one_over_n():
    n = 64
    inst = generate_instance(n, 8, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=3)
    for A in inst.matrices:
        stderr = np.sqrt(2.0 / n ** 2) / n
        assert abs(A.var() - 1 / n) <= 5 * stderr


def test_seed_reproducibility():
    a = generate_instance(6, 10, PriorSpec.gaussian(), ChannelSpec.awgn(0.1), "complex", seed=9)
    b = generate_instance(6, 10, PriorSpec.gaussian(), ChannelSpec.awgn(0.1), "complex", seed=9)
    for name in ("matrices", "signal", "observations"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_forward_trivial_cases():
    inst = generate_instance(4, 3, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=0)
    np.testing.assert_array_equal(forward(inst, np.zeros(4)), np.zeros(3))
    eye = GqeInstance(np.stack([np.eye(4)] * 2), np.ones(4), np.zeros(2))
    x = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(forward(eye, x), [x @ x] * 2)


def test_forward_matches_double_loop():
    inst = generate_instance(5, 4, PriorSpec.gaussian(), ChannelSpec.awgn(0), "complex", seed=4)
    x = inst.signal
    for i, A in enumerate(inst.matrices):
        ref = sum(np.conj(x[j]) * A[j, k] * x[k] for j in range(5) for k in range(5))
        assert forward(inst, x)[i] == pytest.approx(ref, abs=1e-12)


def test_forward_dimension_mismatch():
    inst = generate_instance(4, 3, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=0)
    with pytest.raises(ParameterError):
        forward(inst, np.ones(5))


def test_phase_and_sign_invariance():
    c = generate_instance(5, 6, PriorSpec.gaussian(), ChannelSpec.awgn(0), "complex", seed=2)
    np.testing.assert_allclose(forward(c, np.exp(0.7j) * c.signal), forward(c, c.signal), atol=1e-12)
    r = generate_instance(5, 6, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=2)
    np.testing.assert_allclose(forward(r, -r.signal), forward(r, r.signal), atol=1e-12)


def test_noiseless_consistency_and_real_closure():
    inst = generate_instance(6, 12, PriorSpec.uniform(0, 1), ChannelSpec.awgn(0), seed=8)
    np.testing.assert_allclose(inst.observations, forward(inst, inst.signal), atol=1e-12)
    assert not np.iscomplexobj(inst.observations)


def test_instance_is_read_only():
    inst = generate_instance(3, 2, PriorSpec.gaussian(), ChannelSpec.awgn(0), seed=0)
    with pytest.raises(ValueError):
        inst.signal[0] = 1.0


@pytest.mark.parametrize("field", ["real", "complex"])
def test_save_load_round_trip(tmp_path, field):
    prior, channel = PriorSpec.uniform(0.1, 2.1), ChannelSpec.awgn(0.05)
    inst = generate_instance(5, 7, prior, channel, field, seed=1)
    path = tmp_path / "inst.npz"
    inst.save(path, prior, channel)
    back, header = GqeInstance.load(path)
    assert header["version"] == 1 and header["scalar_field"] == field
    assert PriorSpec.from_dict(header["prior"]) == prior
    assert ChannelSpec.from_dict(header["channel"]) == channel
    for name in ("matrices", "signal", "observations"):
        np.testing.assert_array_equal(getattr(back, name), getattr(inst, name))


def test_inconsistent_instance_rejected():
    with pytest.raises(ParameterError):
        GqeInstance(np.zeros((2, 3, 3)), np.zeros(3), np.zeros(3))
    with pytest.raises(ParameterError):
        GqeInstance(np.zeros((2, 3, 3)), np.zeros(3, complex), np.zeros(2))
