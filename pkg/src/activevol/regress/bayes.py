"""Gaussian naive Bayes over equal-frequency bins of the target."""

from __future__ import annotations

import warnings

import numpy as np

from .base import Estimator, check_Xy, register


def equal_frequency_bins(y, n_bins):
    """Bin label per row: rows sorted by y (stable) and cut into ``n_bins`` near-equal runs."""
    y = np.asarray(y, dtype=float)
    order = np.argsort(y, kind="stable")
    labels = np.empty(len(y), dtype=np.int64)
    labels[order] = (np.arange(len(y)) * n_bins) // len(y)
    return labels


def gaussian_log_posterior(X, log_prior, mean, var):
    """Unnormalized log posterior per (row, bin) under independent Gaussians."""
    X = np.asarray(X, dtype=float)
    ll = -0.5 * (np.log(2.0 * np.pi * var).sum(axis=1)[None, :]
                 + (((X[:, None, :] - mean[None, :, :]) ** 2) / var[None, :, :]).sum(axis=2))
    return ll + log_prior[None, :]


@register
class BinnedGaussianNB(Estimator):
    """Target discretized into equal-frequency bins; prediction is the posterior-weighted bin mean."""

    family = "gnb_binned"
    defaults = {"n_bins": 10, "var_smoothing": 1e-9}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        k = int(self.params["n_bins"])
        n = len(y)
        if k < 2:
            raise ValueError("n_bins must be >= 2")
        if len(np.unique(y)) < k:
            raise ValueError(f"target has fewer than n_bins={k} distinct values")
        if 2 * k > n:
            raise ValueError(f"n_bins={k} leaves fewer than 2 rows per bin for {n} rows (degenerate)")
        labels = equal_frequency_bins(y, k)
        counts = np.bincount(labels, minlength=k).astype(float)
        mean = np.zeros((k, X.shape[1]))
        var = np.zeros((k, X.shape[1]))
        ybar = np.zeros(k)
        for c in range(k):
            rows = labels == c
            mean[c] = X[rows].mean(axis=0)
            var[c] = X[rows].var(axis=0)
            ybar[c] = y[rows].mean()
        floor = self.params["var_smoothing"] * float(X.var(axis=0).max())
        if floor <= 0.0:
            floor = 1e-12
        degenerate = [c for c in range(k) if np.all(var[c] == 0.0)]
        if degenerate:
            warnings.warn(f"gnb_binned: bins {degenerate} have zero variance on every feature; "
                          f"variance floor {floor:.3g} applied", RuntimeWarning, stacklevel=2)
        self.var_floor_ = floor
        self.log_prior_ = np.log(counts / n)
        self.mean_ = mean
        self.var_ = np.maximum(var, floor)
        self.bin_target_mean_ = ybar
        self.fitted = True
        return self

    def predict_proba(self, X):
        self._check_fitted()
        lp = gaussian_log_posterior(check_Xy(X), self.log_prior_, self.mean_, self.var_)
        lp -= lp.max(axis=1, keepdims=True)
        p = np.exp(lp)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.predict_proba(X) @ self.bin_target_mean_

    def state(self):
        return ({"var_floor": self.var_floor_},
                {"log_prior": self.log_prior_, "mean": self.mean_, "var": self.var_,
                 "bin_target_mean": self.bin_target_mean_})

    def _restore(self, meta, arrays):
        self.var_floor_ = float(meta["var_floor"])
        for name in ("log_prior", "mean", "var", "bin_target_mean"):
            setattr(self, name + "_", np.array(arrays[name], dtype=float))


def fit_gnb_binned(X, y, n_bins=10, **kw) -> BinnedGaussianNB:
    return BinnedGaussianNB(n_bins=n_bins, **kw).fit(X, y)
