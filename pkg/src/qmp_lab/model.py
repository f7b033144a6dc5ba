"""Generalized quadratic equations model ``y_i = Q(x^H A_i x)``.

Holds the problem instance, the prior / channel descriptions, a seeded
synthetic generator and the forward map.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INSTANCE_FORMAT = "qmp_lab.instance"
INSTANCE_VERSION = 1

FIELDS = ("real", "complex")


class ParameterError(ValueError):
    """Invalid prior, channel or instance parameters."""


@dataclass(frozen=True)
class PriorSpec:
    """Separable prior on the entries of the signal.

    Use the constructors :meth:`gaussian`, :meth:`bernoulli01` and
    :meth:`uniform` rather than building one by hand.
    """

    kind: str
    params: tuple = ()
    second_moment: float = field(init=False)

    def __post_init__(self):
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        if self.kind == "gaussian":
            mean, var = p
            if not var > 0:
                raise ParameterError("gaussian prior needs variance > 0")
            t = mean ** 2 + var
        elif self.kind == "bernoulli01":
            (rho,) = p
            if not 0.0 <= rho <= 1.0:
                raise ParameterError("bernoulli01 prior needs 0 <= rho <= 1")
            t = rho
        elif self.kind == "uniform":
            a, b = p
            if not a < b:
                raise ParameterError("uniform prior needs a < b")
            t = (a * a + a * b + b * b) / 3.0
        else:
            raise ParameterError(f"unknown prior kind {self.kind!r}")
        object.__setattr__(self, "second_moment", t)

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0):
        return cls("gaussian", (mean, variance))

    @classmethod
    def bernoulli01(cls, rho):
        return cls("bernoulli01", (rho,))

    @classmethod
    def uniform(cls, a, b):
        return cls("uniform", (a, b))

    @property
    def mean(self) -> float:
        if self.kind == "gaussian":
            return self.params[0]
        if self.kind == "bernoulli01":
            return self.params[0]
        a, b = self.params
        return 0.5 * (a + b)

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def nonnegative(self) -> bool:
        """True when the support lies in ``[0, inf)``, so no sign ambiguity."""
        if self.kind == "bernoulli01":
            return True
        if self.kind == "uniform":
            return self.params[0] >= 0.0
        return False

    def sample(self, rng, size, field="real"):
        if self.kind == "gaussian":
            mean, var = self.params
            if field == "complex":
                noise = (rng.standard_normal(size) + 1j * rng.standard_normal(size))
                return mean + np.sqrt(var / 2) * noise
            return mean + np.sqrt(var) * rng.standard_normal(size)
        if self.kind == "bernoulli01":
            return (rng.random(size) < self.params[0]).astype(float)
        a, b = self.params
        return rng.uniform(a, b, size)

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["params"]))


@dataclass(frozen=True)
class ChannelSpec:
    """Observation channel ``p(y | z)``; only additive white Gaussian noise."""

    kind: str = "awgn"
    noise_var: float = 0.0

    def __post_init__(self):
        if self.kind != "awgn":
            raise ParameterError(f"unknown channel kind {self.kind!r}")
        if not self.noise_var >= 0:
            raise ParameterError("awgn channel needs noise_var >= 0")

    @classmethod
    def awgn(cls, noise_var):
        return cls("awgn", float(noise_var))

    def to_dict(self):
        return {"kind": self.kind, "noise_var": self.noise_var}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["noise_var"]))


@dataclass(frozen=True, eq=False)
class GqeInstance:
    """A generalized quadratic equations problem.

    Attributes
    ----------
    matrices : ndarray of shape (m, n, n)
        Measurement matrices ``A_i``.
    signal : ndarray of shape (n,)
        Ground truth.
    observations : ndarray of shape (m,)
        Noisy quadratic measurements ``y``.
    scalar_field : {"real", "complex"}
    """

    matrices: np.ndarray
    signal: np.ndarray
    observations: np.ndarray
    scalar_field: str = "real"

    def __post_init__(self):
        A = self.matrices
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ParameterError("matrices must have shape (m, n, n)")
        if self.signal.shape != (A.shape[1],):
            raise ParameterError("signal length does not match matrices")
        if self.observations.shape != (A.shape[0],):
            raise ParameterError("observation count does not match matrices")
        if self.scalar_field not in FIELDS:
            raise ParameterError(f"scalar_field must be one of {FIELDS}")
        if self.scalar_field == "real":
            for arr in (A, self.signal, self.observations):
                if np.iscomplexobj(arr):
                    raise ParameterError("complex data in a real instance")
        for arr in (A, self.signal, self.observations):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    @property
    def m(self) -> int:
        return self.matrices.shape[0]

    def save(self, path, prior=None, channel=None):
        """Write the instance to a ``.npz`` container with a versioned header."""
        header = {"format": INSTANCE_FORMAT, "version": INSTANCE_VERSION,
                  "scalar_field": self.scalar_field, "n": self.n, "m": self.m,
                  "prior": prior.to_dict() if prior else None,
                  "channel": channel.to_dict() if channel else None}
        arrays = {}
        for name in ("matrices", "signal", "observations"):
            arr = getattr(self, name)
            arrays[name + "_re"] = np.ascontiguousarray(arr.real, dtype=np.float64)
            if self.scalar_field == "complex":
                arrays[name + "_im"] = np.ascontiguousarray(arr.imag, dtype=np.float64)
        buf = io.BytesIO()
        np.savez(buf, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path):
        """Read an instance written by :meth:`save`.

        Returns
        -------
        instance : GqeInstance
        header : dict
            Includes the prior/channel descriptions when they were saved.
        """
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("format") != INSTANCE_FORMAT:
                raise ParameterError("not a qmp_lab instance file")
            if header.get("version") != INSTANCE_VERSION:
                raise ParameterError(f"unsupported instance version {header.get('version')}")
            complex_mode = header["scalar_field"] == "complex"
            parts = {}
            for name in ("matrices", "signal", "observations"):
                arr = data[name + "_re"]
                if complex_mode:
                    arr = arr + 1j * data[name + "_im"]
                parts[name] = arr
        return cls(scalar_field=header["scalar_field"], **parts), header


def _standard_normal(rng, size, scalar_field):
    if scalar_field == "complex":
        return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)
    return rng.standard_normal(size)


def generate_instance(n, m, prior, channel, field="real", seed=None):
    """Draw a synthetic instance.

    Entries of every ``A_i`` are i.i.d. zero mean with variance ``1/n``
    (circularly-symmetric in complex mode), the signal is i.i.d. from
    ``prior`` and ``y_i = x^H A_i x + w_i`` with ``w_i`` drawn from the
    channel noise.
    """
    if n < 1 or m < 1:
        raise ParameterError("n and m must be >= 1")
    if field not in FIELDS:
        raise ParameterError(f"field must be one of {FIELDS}")
    if not isinstance(prior, PriorSpec) or not isinstance(channel, ChannelSpec):
        raise ParameterError("prior and channel must be PriorSpec / ChannelSpec")
    rng = np.random.default_rng(seed)
    A = _standard_normal(rng, (m, n, n), field) / np.sqrt(n)
    x = prior.sample(rng, n, field)
    if field == "real":
        x = np.real(x).astype(float)
    else:
        x = x.astype(complex)
    z = quadratic_forms(A, x)
    w = np.sqrt(channel.noise_var) * _standard_normal(rng, m, field)
    y = z + w
    if field == "real":
        y = np.real(y)
    return GqeInstance(A, x, y, field)


def quadratic_forms(A, x):
    """``z_i = x^H A_i x`` for a stack of matrices."""
    return np.einsum("j,kjl,l->k", np.conj(x), A, x, optimize=True)


def forward(instance: GqeInstance, x):
    """Evaluate the noiseless measurement map ``z_i = x^H A_i x``."""
    x = np.asarray(x)
    if x.shape != (instance.n,):
        raise ParameterError(f"x must have shape ({instance.n},), got {x.shape}")
    z = quadratic_forms(instance.matrices, x)
    if instance.scalar_field == "real":
        z = np.real(z)
    return z
