"""Input checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .model import FIELDS, ChannelSpec, ParameterError, PriorSpec


def _check_2d(X, field, **kw):
    # check_array refuses complex input; validate the real/imaginary view instead
    if field == "complex":
        X = np.asarray(X, dtype=np.complex128)
        parts = check_array(np.concatenate([X.real, X.imag], axis=-1), dtype=np.float64,
                            ensure_all_finite=True, **kw)
        half = parts.shape[-1] // 2
        return parts[..., :half] + 1j * parts[..., half:]
    return check_array(X, dtype=np.float64, ensure_all_finite=True, **kw)


def check_matrices(A, field="real"):
    """Validate a stack of square measurement matrices of shape (M, N, N).

    A single (N, N) matrix is promoted to a stack of one.
    """
    A = np.asarray(A)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"expected matrices of shape (M, N, N), got {A.shape}")
    m, n, _ = A.shape
    if field == "real" and np.iscomplexobj(A):
        if np.any(np.imag(A) != 0):
            raise ValueError("complex matrices given for a real-field problem")
        A = np.real(A)
    return _check_2d(A.reshape(m, n * n), field).reshape(m, n, n)


def check_observations(y, m, field="real"):
    y = np.asarray(y)
    if field == "real" and np.iscomplexobj(y):
        if np.any(np.imag(y) != 0):
            raise ValueError("complex observations given for a real-field problem")
        y = np.real(y)
    if y.ndim != 1:
        raise ValueError("observations must be one-dimensional")
    y = _check_2d(y, field, ensure_2d=False)
    check_consistent_length(np.empty(m), y)
    return y


def check_field(field):
    if field not in FIELDS:
        raise ValueError(f"field must be one of {FIELDS}, got {field!r}")
    return field


def make_prior(kind, params) -> PriorSpec:
    """Build a :class:`PriorSpec` from estimator-style arguments."""
    try:
        return PriorSpec(kind, tuple(params))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad parameters {params!r} for prior {kind!r}") from exc


def make_channel(noise_var) -> ChannelSpec:
    return ChannelSpec.awgn(noise_var)
