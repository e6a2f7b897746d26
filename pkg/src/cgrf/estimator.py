"""scikit-learn style regressor over (constrained) Gaussian random fields."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .constrained import ConstrainedField, ConstraintSet, GaussianField
from .gp import Dataset, condition, log_marginal_likelihood, tune_hyperparams


class CGRFRegressor(RegressorMixin, BaseEstimator):
    """Gaussian-process regression with a boundary-constrained prior.

    Parameters
    ----------
    constraints : ConstraintSet
        Domain, boundary constraints, base kernel and base mean.  A set with
        no constraints gives ordinary GP regression.
    kernel : Kernel, optional
        Replaces the base kernel of ``constraints`` when given.  This is the
        parameter hyperparameter searches modify.
    noise_sd : float, default=0.0
        Standard deviation of the Gaussian measurement error.
    constrained : bool, default=True
        Use the constrained field; ``False`` drops the constraints and keeps
        the same base kernel and mean.

    Attributes
    ----------
    field_ : ConstrainedField
        Prior used for the fit.
    posterior_ : Posterior
        Conditioned field.
    n_features_in_ : int
    """

    def __init__(self, constraints=None, kernel=None, noise_sd=0.0, constrained=True):
        self.constraints = constraints
        self.kernel = kernel
        self.noise_sd = noise_sd
        self.constrained = constrained

    def _prior(self):
        cs = self.constraints
        if not isinstance(cs, ConstraintSet):
            raise TypeError("constraints must be a ConstraintSet")
        if self.kernel is not None:
            cs = cs.with_kernel(self.kernel)
        if self.constrained and cs.constraints:
            return ConstrainedField(cs)
        return GaussianField(cs.domain, cs.base_kernel, cs.base_mean)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.noise_sd < 0 or not np.isfinite(self.noise_sd):
            raise ValueError("noise_sd must be finite and >= 0")
        self.field_ = self._prior()
        if X.shape[1] != self.field_.dim:
            raise ValueError(f"X has {X.shape[1]} features, the domain has dimension {self.field_.dim}")
        self.n_features_in_ = X.shape[1]
        self.data_ = Dataset(X, y, float(self.noise_sd))
        self.posterior_ = condition(self.field_, self.data_)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict(self, X, return_std=False, op=None):
        """Posterior mean (and standard deviation) of ``op u`` at ``X``."""
        X = self._check_X(X)
        return self.posterior_.predict(X, op, return_std)

    def sample_y(self, X, n_samples=1, random_state=0):
        """Joint posterior draws, shape ``(n_points, n_samples)``."""
        X = self._check_X(X)
        return self.posterior_.sample(X, n_samples, int(random_state))

    def log_marginal_likelihood(self):
        check_is_fitted(self, "posterior_")
        return log_marginal_likelihood(self.field_, self.data_)


def _with_hyperparams(est, params):
    kernel = est.kernel if est.kernel is not None else est.constraints.base_kernel
    ls = list(getattr(kernel, "lengthscales", ()))
    for name, value in params.items():
        if name.startswith("lengthscale_"):
            ls[int(name.split("_")[1])] = value
    new_kernel = kernel.with_params(params.get("precision"), tuple(ls) if ls else None)
    out = clone(est).set_params(kernel=new_kernel)
    if "noise_sd" in params:
        out.set_params(noise_sd=params["noise_sd"])
    return out


def tune_estimator(est, X_train, y_train, X_val, y_val, grid, objective="mspe", budget=50, restarts=0):
    """Tune ``est`` over ``grid`` (names ``precision``, ``lengthscale_<k>``,
    ``noise_sd``) and return ``(TuneResult, refitted estimator)``."""
    fixed_noise = float(est.noise_sd)

    def family(**params):
        e = _with_hyperparams(est, params)
        return e._prior(), float(params.get("noise_sd", fixed_noise))

    train = Dataset(check_array(X_train), np.asarray(y_train, dtype=float), fixed_noise)
    val = Dataset(check_array(X_val), np.asarray(y_val, dtype=float))
    result = tune_hyperparams(family, train, val, objective, budget, grid, restarts)
    best = _with_hyperparams(est, result.params).fit(X_train, y_train)
    return result, best
