"""Gradient boosting under squared loss and Drucker's AdaBoost.R2."""

from __future__ import annotations

import math

import numpy as np

from ._tree import BinMapper, PackedTrees, build_tree, trees_from_arrays, trees_to_arrays
from .base import Estimator, check_Xy, derive_seed, register


@register
class GradientBoosting(Estimator):
    """``F_0 = mean(y)``; stage ``m`` fits a depth-limited tree to the residuals and adds ``lr * h_m``."""

    family = "gbrt"
    defaults = {"n_stages": 300, "learning_rate": 0.05, "max_depth": 3, "min_samples_leaf": 1, "max_bins": 255}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        P = self.params
        if P["n_stages"] < 1:
            raise ValueError("n_stages must be >= 1")
        lr = float(P["learning_rate"])
        if not 0.0 < lr <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        bins = BinMapper(P["max_bins"]).fit(X)
        Xb = bins.transform(X)
        self.init_ = float(y.mean())
        F = np.full(len(y), self.init_)
        self.train_loss_ = [float(np.mean((y - F) ** 2))]
        trees = []
        for m in range(P["n_stages"]):
            tree = build_tree(Xb, bins.n_bins_, bins.edge_table_, y - F, max_depth=P["max_depth"],
                              min_samples_leaf=P["min_samples_leaf"], seed=derive_seed(self.seed, m))
            tree.value = tree.value * lr
            F = F + tree.predict(X)
            trees.append(tree)
            self.train_loss_.append(float(np.mean((y - F) ** 2)))
        self.trees_ = trees
        self._packed = PackedTrees(trees)
        self.n_features_ = X.shape[1]
        self.fitted = True
        return self

    def staged_predict(self, X):
        """Predictions after 0, 1, ..., n_stages stages (row 0 is ``F_0``)."""
        self._check_fitted()
        per = self._packed.predict_all(check_Xy(X))
        out = np.empty((per.shape[0] + 1, per.shape[1]))
        out[0] = self.init_
        np.cumsum(per, axis=0, out=out[1:])
        out[1:] += self.init_
        return out

    def predict(self, X):
        self._check_fitted()
        per = self._packed.predict_all(check_Xy(X))
        F = np.full(per.shape[1], self.init_)
        for row in per:  # same summation order as fit
            F = F + row
        return F

    @property
    def feature_importances_(self):
        self._check_fitted()
        g = sum(t.feature_gains(self.n_features_) for t in self.trees_)
        return g / g.sum() if g.sum() > 0 else g

    def state(self):
        return ({"init": self.init_, "train_loss": self.train_loss_, "n_features": self.n_features_},
                trees_to_arrays(self.trees_))

    def _restore(self, meta, arrays):
        self.init_ = float(meta["init"])
        self.train_loss_ = list(meta["train_loss"])
        self.n_features_ = int(meta["n_features"])
        self.trees_ = trees_from_arrays(arrays)
        self._packed = PackedTrees(self.trees_)


def weighted_median(values, weights):
    """Weighted median per column of ``values`` (stages x rows).

    The lowest value whose cumulative weight reaches half the total.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    order = np.argsort(values, axis=0, kind="stable")
    cum = np.cumsum(weights[order], axis=0)
    idx = np.argmax(cum >= 0.5 * cum[-1], axis=0)
    cols = np.arange(values.shape[1])
    out = values[order[idx, cols], cols]
    return out[0] if squeeze else out


@register
class AdaBoostR2(Estimator):
    """AdaBoost.R2 with linear loss over weight-resampled depth-limited trees."""

    family = "adaboost_r2"
    defaults = {"n_stages": 100, "base_depth": 4, "min_samples_leaf": 1, "max_bins": 255}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        P = self.params
        if P["n_stages"] < 1:
            raise ValueError("n_stages must be >= 1")
        n = len(y)
        bins = BinMapper(P["max_bins"]).fit(X)
        Xb = bins.transform(X)
        w = np.full(n, 1.0 / n)
        trees, alphas, losses = [], [], []
        self.early_stop_ = None
        for m in range(P["n_stages"]):
            rng = np.random.default_rng(derive_seed(self.seed, m))
            rows = np.sort(rng.choice(n, size=n, replace=True, p=w))
            tree = build_tree(Xb, bins.n_bins_, bins.edge_table_, y, rows, max_depth=P["base_depth"],
                              min_samples_leaf=P["min_samples_leaf"])
            err = np.abs(y - tree.predict(X))
            dmax = float(err.max())
            if dmax == 0.0:
                # perfect stage: it alone determines the ensemble
                trees, alphas, losses = [tree], [1.0], [0.0]
                self.early_stop_ = {"stage": m, "reason": "perfect fit"}
                break
            L = err / dmax
            lbar = float(np.dot(w, L))
            losses.append(lbar)
            if lbar >= 0.5:
                self.early_stop_ = {"stage": m, "reason": f"average loss {lbar:.6g} >= 0.5"}
                if not trees:
                    trees.append(tree)
                    alphas.append(1.0)
                break
            beta = lbar / (1.0 - lbar)
            trees.append(tree)
            alphas.append(math.log(1.0 / beta))
            w = w * np.power(beta, 1.0 - L)
            w /= w.sum()
        self.trees_ = trees
        self.stage_weights_ = np.array(alphas)
        self.stage_losses_ = losses
        self._packed = PackedTrees(trees)
        self.n_features_ = X.shape[1]
        self.fitted = True
        return self

    @property
    def n_stages_(self):
        return len(self.trees_)

    def predict(self, X):
        self._check_fitted()
        return weighted_median(self._packed.predict_all(check_Xy(X)), self.stage_weights_)

    def state(self):
        return ({"stage_losses": self.stage_losses_, "early_stop": self.early_stop_, "n_features": self.n_features_},
                {"stage_weights": self.stage_weights_, **trees_to_arrays(self.trees_)})

    def _restore(self, meta, arrays):
        self.stage_losses_ = list(meta["stage_losses"])
        self.early_stop_ = meta["early_stop"]
        self.n_features_ = int(meta["n_features"])
        self.stage_weights_ = np.array(arrays["stage_weights"], dtype=float)
        self.trees_ = trees_from_arrays(arrays)
        self._packed = PackedTrees(self.trees_)


def fit_gbrt(X, y, n_stages=300, learning_rate=0.05, max_depth=3, seed=0, **kw) -> GradientBoosting:
    return GradientBoosting(n_stages=n_stages, learning_rate=learning_rate, max_depth=max_depth,
                            seed=seed, **kw).fit(X, y)


def fit_adaboost_r2(X, y, n_stages=100, base_depth=4, seed=0, **kw) -> AdaBoostR2:
    return AdaBoostR2(n_stages=n_stages, base_depth=base_depth, seed=seed, **kw).fit(X, y)
