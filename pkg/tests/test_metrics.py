import numpy as np
import pytest

from qmp_lab.metrics import aligned_mse, qq_data
from qmp_lab.model import PriorSpec


def test_sign_alignment_real():
    x = np.array([1.0, -2.0, 0.5])
    assert aligned_mse(-x, x, "real", PriorSpec.gaussian()) == 0.0
    assert aligned_mse(x, x) == 0.0


def test_phase_alignment_complex():
    x = np.array([1 + 1j, -0.5j, 2.0])
    assert aligned_mse(np.exp(1j * np.pi / 4) * x, x, "complex") == pytest.approx(0.0, abs=1e-28)


def test_nonnegative_prior_skips_alignment():
    x = np.array([1.0, 0.0, 1.0])
    assert aligned_mse(-x, x, "real", PriorSpec.bernoulli01(0.5)) == pytest.approx(8 / 3)


def test_aligned_mse_errors():
    with pytest.raises(ValueError):
        aligned_mse(np.array([]), np.array([]))
    with pytest.raises(ValueError):
        aligned_mse(np.ones(2), np.ones(3))


def test_qq_standard_normal_sample():
    fails = 0
    for seed in range(100):
        r = np.random.default_rng(seed).standard_normal(10_000)
        s, q = qq_data(r)
        # extreme order statistics are noisy; compare the central 95%
        inner = slice(250, -250)
        fails += np.max(np.abs(s[inner] - q[inner])) >= 0.1
    assert fails <= 1


def test_qq_constant_and_symmetric():
    s, q = qq_data(np.full(7, 2.5))
    assert np.all(s == 2.5) and np.all(np.diff(q) > 0)
    s, q = qq_data(np.array([-3.0, -1.0, 0.0, 1.0, 3.0]))
    np.testing.assert_allclose(s, -s[::-1])
    np.testing.assert_allclose(q, -q[::-1], atol=1e-15)


def test_qq_needs_two_points():
    with pytest.raises(ValueError):
        qq_data(np.array([1.0]))
