"""scikit-learn style wrappers around the solvers.

``fit(A, y)`` takes the stack of measurement matrices (M, N, N) and the
observations (M,) and recovers the signal, stored in ``coef_``.
``predict(A)`` evaluates the quadratic forms ``coef_^H A_i coef_`` for
new matrices.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import baselines, solver
from ._validation import (check_field, check_matrices, check_observations,
                          make_channel, make_prior)
from .model import GqeInstance, quadratic_forms


class _QuadraticBase(RegressorMixin, BaseEstimator):

    def _instance(self, A, y):
        field = check_field(self.field)
        A = check_matrices(A, field)
        y = check_observations(y, A.shape[0], field)
        dt = complex if field == "complex" else float
        # ground truth is unknown here; zeros make the recorded MSE ||est||^2/n
        return GqeInstance(A, np.zeros(A.shape[1], dtype=dt), y, field)

    def predict(self, A):
        """Quadratic forms of the fitted signal under new matrices."""
        check_is_fitted(self, "coef_")
        A = check_matrices(A, self.field)
        if A.shape[1] != self.n_features_in_:
            raise ValueError(f"matrices are {A.shape[1]}x{A.shape[1]}, "
                             f"fitted signal has length {self.n_features_in_}")
        z = quadratic_forms(A, self.coef_)
        return np.real(z) if self.field == "real" else z


class QMPRegressor(_QuadraticBase):
    """Bayesian signal recovery with quadratic message passing.

    Parameters
    ----------
    prior : {"gaussian", "bernoulli01", "uniform"}, default="gaussian"
    prior_params : tuple, default=(0.0, 1.0)
        ``(mean, variance)``, ``(rho,)`` or ``(a, b)`` depending on ``prior``.
    noise_var : float, default=0.0
        Variance of the additive Gaussian observation noise.
    field : {"real", "complex"}, default="real"
    max_iters, damping, belief_damping, init, tol, random_state
        Forwarded to :class:`~qmp_lab.solver.QmpConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Posterior mean of the signal.
    variance_ : ndarray of shape (n_features,)
        Posterior variances.
    n_iter_ : int
    termination_ : str
    n_features_in_ : int
    """

    def __init__(self, prior="gaussian", prior_params=(0.0, 1.0), noise_var=0.0,
                 field="real", max_iters=30, damping=0.4, belief_damping=0.3,
                 init="prior", tol=1e-8, random_state=0):
        self.prior = prior
        self.prior_params = prior_params
        self.noise_var = noise_var
        self.field = field
        self.max_iters = max_iters
        self.damping = damping
        self.belief_damping = belief_damping
        self.init = init
        self.tol = tol
        self.random_state = random_state

    def fit(self, A, y):
        """Run QMP on the measurements ``(A, y)``.

        Returns
        -------
        self : QMPRegressor
        """
        inst = self._instance(A, y)
        prior = make_prior(self.prior, self.prior_params)
        config = solver.QmpConfig(max_iters=self.max_iters, damping=self.damping,
                                  belief_damping=self.belief_damping, init=self.init,
                                  tol=self.tol, seed=self.random_state)
        out = solver.run(inst, prior, make_channel(self.noise_var), config)
        self.coef_ = out.mean
        self.variance_ = out.variance
        self.n_iter_ = len(out.records)
        self.termination_ = out.termination
        self.n_features_in_ = inst.n
        return self


class WFRegressor(_QuadraticBase):
    """Wirtinger Flow from the spectral initializer.

    With ``threshold > 0`` and a ``bernoulli01``/``uniform`` prior this is
    the thresholded variant.
    """

    def __init__(self, mu0=0.2, ramp=30.0, iters=300, threshold=0.0, prior=None,
                 prior_params=(), field="real", random_state=0):
        self.mu0 = mu0
        self.ramp = ramp
        self.iters = iters
        self.threshold = threshold
        self.prior = prior
        self.prior_params = prior_params
        self.field = field
        self.random_state = random_state

    def fit(self, A, y):
        inst = self._instance(A, y)
        config = baselines.WfConfig(mu0=self.mu0, ramp=self.ramp, iters=self.iters,
                                    threshold=self.threshold, seed=self.random_state)
        if self.prior is None:
            out = baselines.run_wf(inst, config)
        else:
            out = baselines.run_twf(inst, make_prior(self.prior, self.prior_params), config)
        self.coef_ = out.mean
        self.n_iter_ = len(out.records)
        self.termination_ = out.termination
        self.n_features_in_ = inst.n
        return self
