"""Least-squares learners: OLS, the single-predictor base model and LASSO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import select
from .base import Estimator, check_Xy, register


@dataclass(frozen=True)
class BaseModelCoefficient:
    """Multiplier from third-party counts to total counts (plus optional intercept)."""

    beta: float
    intercept: float = 0.0

    def predict(self, x):
        return self.intercept + self.beta * np.asarray(x, dtype=float)


def fit_naive_base(third_party, observed, *, intercept=False) -> BaseModelCoefficient:
    """Least squares of observed on third-party counts.

    Through the origin by default: ``beta = sum(x*y) / sum(x^2)``.
    """
    x = np.asarray(third_party, dtype=float)
    y = np.asarray(observed, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("third_party and observed must be aligned 1-D vectors")
    if len(x) < 2:
        raise ValueError("need at least 2 paired observations")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite counts")
    if not np.any(x != 0):
        raise ValueError("third-party predictor is all zero")
    if not intercept:
        return BaseModelCoefficient(float(np.dot(x, y) / np.dot(x, x)))
    xm, ym = x.mean(), y.mean()
    sxx = float(np.dot(x - xm, x - xm))
    if sxx == 0.0:
        raise ValueError("third-party predictor is constant; intercept model is singular")
    beta = float(np.dot(x - xm, y - ym) / sxx)
    return BaseModelCoefficient(beta, float(ym - beta * xm))


def ols_fit(X, y, intercept=True):
    X, y = check_Xy(X, y)
    A = np.column_stack([np.ones(len(y)), X]) if intercept else X
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    if intercept:
        return float(coef[0]), coef[1:]
    return 0.0, coef


@register
class OLS(Estimator):
    family = "ols"
    defaults = {"intercept": True}

    def fit(self, X, y):
        self.intercept_, self.coef_ = ols_fit(X, y, self.params["intercept"])
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.intercept_ + check_Xy(X) @ self.coef_

    def state(self):
        return {"intercept": self.intercept_}, {"coef": self.coef_}

    def _restore(self, meta, arrays):
        self.intercept_ = float(meta["intercept"])
        self.coef_ = np.array(arrays["coef"], dtype=float)


@register
class NaiveBase(Estimator):
    """Observed count as a multiple of one column (the third-party count)."""

    family = "naive_base"
    defaults = {"column": 0, "intercept": False}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        self.coefficient_ = fit_naive_base(X[:, self.params["column"]], y, intercept=self.params["intercept"])
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.coefficient_.predict(check_Xy(X)[:, self.params["column"]])

    def state(self):
        return {"beta": self.coefficient_.beta, "intercept": self.coefficient_.intercept}, {}

    def _restore(self, meta, arrays):
        self.coefficient_ = BaseModelCoefficient(float(meta["beta"]), float(meta["intercept"]))


@register
class Lasso(Estimator):
    """LASSO on internally standardized features; penalty by k-fold CV when not given."""

    family = "lasso"
    defaults = {"lam": None, "n_folds": 5, "n_lambdas": 50}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        scaler = select.fit_scaler(X)
        Z = scaler.transform(X)
        lam = self.params["lam"]
        if lam is None:
            lam, _, _ = select.lasso_cv(Z, y, n_folds=self.params["n_folds"],
                                        n_lambdas=self.params["n_lambdas"], seed=self.seed)
        res = select.lasso_fit(Z, y, lam, tol=1e-8, max_iter=5000)
        # back to raw units
        coef = np.where(scaler.constant, 0.0, res.coef / scaler.scale)
        self.coef_ = coef
        self.intercept_ = float(res.intercept - np.dot(coef, scaler.mean))
        self.lam_ = float(lam)
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.intercept_ + check_Xy(X) @ self.coef_

    def state(self):
        return {"intercept": self.intercept_, "lam": self.lam_}, {"coef": self.coef_}

    def _restore(self, meta, arrays):
        self.intercept_ = float(meta["intercept"])
        self.lam_ = float(meta["lam"])
        self.coef_ = np.array(arrays["coef"], dtype=float)
