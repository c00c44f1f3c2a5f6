"""CART regression tree and random forest."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._tree import BinMapper, PackedTrees, Tree, build_tree, trees_from_arrays, trees_to_arrays
from .base import Estimator, check_Xy, derive_seed, register


def _tree_state(trees, n_features):
    return {"n_features": n_features}, trees_to_arrays(trees)


@register
class DecisionTree(Estimator):
    """Greedy binary splits minimizing weighted child variance; leaves predict means."""

    family = "cart"
    defaults = {"max_depth": 12, "min_samples_leaf": 5, "max_bins": 255}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        bins = BinMapper(self.params["max_bins"]).fit(X)
        self.tree_ = build_tree(bins.transform(X), bins.n_bins_, bins.edge_table_, y,
                                max_depth=self.params["max_depth"],
                                min_samples_leaf=self.params["min_samples_leaf"])
        self.n_features_ = X.shape[1]
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.tree_.predict(check_Xy(X))

    @property
    def feature_importances_(self):
        self._check_fitted()
        g = self.tree_.feature_gains(self.n_features_)
        return g / g.sum() if g.sum() > 0 else g

    def state(self):
        return _tree_state([self.tree_], self.n_features_)

    def _restore(self, meta, arrays):
        self.tree_ = trees_from_arrays(arrays)[0]
        self.n_features_ = int(meta["n_features"])


def resolve_mtry(mtry, p):
    if mtry is None:
        return max(1, math.ceil(p / 3))
    if mtry == "all":
        return p
    mtry = int(mtry)
    if mtry > p:
        raise ValueError(f"mtry={mtry} exceeds the feature count {p}")
    if mtry < 1:
        raise ValueError("mtry must be >= 1")
    return mtry


def bootstrap_rows(seed, tree_index, n):
    """Bootstrap sample (with replacement) for one tree; stream depends only on (seed, tree_index)."""
    rng = np.random.default_rng(derive_seed(seed, tree_index, 0))
    return np.sort(rng.integers(0, n, n))


def tree_split_seed(seed, tree_index):
    return derive_seed(seed, tree_index, 1)


@register
class RandomForest(Estimator):
    """Bagged CART trees with ``mtry`` candidate features per split; predicts the tree mean.

    Tree ``t`` draws its bootstrap rows and feature subsets from streams seeded
    by ``(seed, t)`` only, so results do not depend on how trees are scheduled
    across threads.
    """

    family = "random_forest"
    defaults = {"n_trees": 300, "max_depth": None, "min_samples_leaf": 5, "mtry": None,
                "bootstrap": True, "max_bins": 255}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        n, p = X.shape
        P = self.params
        if P["n_trees"] < 1:
            raise ValueError("n_trees must be >= 1")
        mtry = resolve_mtry(P["mtry"], p)
        bins = BinMapper(P["max_bins"]).fit(X)
        Xb = bins.transform(X)

        def grow(t):
            rows = bootstrap_rows(self.seed, t, n) if P["bootstrap"] else np.arange(n)
            tree = build_tree(Xb, bins.n_bins_, bins.edge_table_, y, rows, max_depth=P["max_depth"],
                              min_samples_leaf=P["min_samples_leaf"], mtry=mtry,
                              seed=tree_split_seed(self.seed, t))
            return tree, rows

        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                grown = list(pool.map(grow, range(P["n_trees"])))
        else:
            grown = [grow(t) for t in range(P["n_trees"])]
        self.trees_ = [g[0] for g in grown]
        self.n_features_ = p
        self.mtry_ = mtry
        self._packed = PackedTrees(self.trees_)

        # out-of-bag estimate: each row averaged over trees whose bootstrap missed it
        per_tree = self._packed.predict_all(X)
        oob_sum = np.zeros(n)
        oob_cnt = np.zeros(n)
        for t, (_, rows) in enumerate(grown):
            miss = np.ones(n, dtype=bool)
            miss[rows] = False
            oob_sum[miss] += per_tree[t, miss]
            oob_cnt[miss] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            self.oob_prediction_ = np.where(oob_cnt > 0, oob_sum / oob_cnt, np.nan)
        ok = oob_cnt > 0
        self.oob_mse_ = float(np.mean((y[ok] - self.oob_prediction_[ok]) ** 2)) if ok.any() else float("nan")
        self.fitted = True
        return self

    def predict_trees(self, X):
        self._check_fitted()
        return self._packed.predict_all(check_Xy(X))

    def predict(self, X):
        per_tree = self.predict_trees(X)
        return per_tree.sum(axis=0) / per_tree.shape[0]

    @property
    def feature_importances_(self):
        self._check_fitted()
        g = np.zeros(self.n_features_)
        for t in self.trees_:
            g += t.feature_gains(self.n_features_)
        return g / g.sum() if g.sum() > 0 else g

    def state(self):
        meta, arrays = _tree_state(self.trees_, self.n_features_)
        meta.update(mtry=self.mtry_, oob_mse=self.oob_mse_)
        return meta, arrays

    def _restore(self, meta, arrays):
        self.trees_ = trees_from_arrays(arrays)
        self.n_features_ = int(meta["n_features"])
        self.mtry_ = int(meta["mtry"])
        self.oob_mse_ = float(meta["oob_mse"])
        self._packed = PackedTrees(self.trees_)


def fit_cart(X, y, max_depth=12, min_samples_leaf=5, **kw) -> DecisionTree:
    return DecisionTree(max_depth=max_depth, min_samples_leaf=min_samples_leaf, **kw).fit(X, y)


def fit_random_forest(X, y, n_trees=300, max_depth=None, min_samples_leaf=5, mtry=None, seed=0, **kw) -> RandomForest:
    threads = kw.pop("threads", 1)
    return RandomForest(n_trees=n_trees, max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                        mtry=mtry, seed=seed, threads=threads, **kw).fit(X, y)
