"""Linear epsilon-insensitive support vector regression."""

from __future__ import annotations

import numpy as np

from .base import Estimator, check_Xy, derive_seed, register
from .neural import looks_standardized


def svr_objective(X, y, w, b, epsilon, C):
    """``0.5 * ||w||^2 + C * sum(max(0, |y - Xw - b| - epsilon))``."""
    r = np.abs(y - X @ w - b) - epsilon
    return 0.5 * float(w @ w) + C * float(np.maximum(r, 0.0).sum())


@register
class LinearSVR(Estimator):
    """Stochastic subgradient descent on the primal objective.

    The problem is solved on a centred, scaled target with ``C`` and ``epsilon``
    rescaled to match, which leaves the minimizer unchanged. After each epoch
    the full objective is evaluated; an epoch that raises it is rolled back and
    the step size halved, so ``objective_`` is non-increasing.
    """

    family = "linear_svr"
    defaults = {"epsilon": None, "C": 1.0, "epochs": 50, "lr": 0.1, "batch": 64, "allow_unscaled": False}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        P = self.params
        if not P["allow_unscaled"] and not looks_standardized(X):
            raise ValueError("linear_svr needs standardized inputs (select.standardize); pass allow_unscaled=True")
        if P["C"] <= 0:
            raise ValueError("C must be > 0")
        n, p = X.shape
        sd = float(y.std())
        eps = 0.1 * sd if P["epsilon"] is None else float(P["epsilon"])
        if eps < 0:
            raise ValueError("epsilon must be >= 0")
        self.epsilon_ = eps
        self.y_mean_ = float(y.mean())
        self.y_scale_ = sd if sd > 0 else 1.0
        t = (y - self.y_mean_) / self.y_scale_
        e = eps / self.y_scale_
        C = float(P["C"]) / self.y_scale_
        # J = objective / (C n): same minimizer, O(1) gradients
        reg = 1.0 / (C * n)
        rng = np.random.default_rng(derive_seed(self.seed, 0))
        w = np.zeros(p)
        b = 0.0
        lr0 = float(P["lr"])
        bs = max(1, int(P["batch"]))
        best = svr_objective(X, t, w, b, e, C)
        self.objective_ = [best * self.y_scale_ ** 2]
        step = 0
        for _ in range(int(P["epochs"])):
            w_try, b_try = w.copy(), b
            order = rng.permutation(n)
            for s in range(0, n, bs):
                idx = order[s:s + bs]
                step += 1
                r = t[idx] - X[idx] @ w_try - b_try
                sgn = np.where(r > e, -1.0, np.where(r < -e, 1.0, 0.0))
                gw = reg * w_try + X[idx].T @ sgn / len(idx)
                gb = float(sgn.mean())
                eta = lr0 / np.sqrt(step)
                w_try -= eta * gw
                b_try -= eta * gb
            obj = svr_objective(X, t, w_try, b_try, e, C)
            if obj <= best:
                w, b, best = w_try, b_try, obj
            else:
                lr0 *= 0.5
            self.objective_.append(best * self.y_scale_ ** 2)
        self.coef_ = w * self.y_scale_
        self.intercept_ = self.y_mean_ + b * self.y_scale_
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.intercept_ + check_Xy(X) @ self.coef_

    def state(self):
        return ({"intercept": self.intercept_, "epsilon": self.epsilon_, "objective": self.objective_},
                {"coef": self.coef_})

    def _restore(self, meta, arrays):
        self.intercept_ = float(meta["intercept"])
        self.epsilon_ = float(meta["epsilon"])
        self.objective_ = list(meta["objective"])
        self.coef_ = np.array(arrays["coef"], dtype=float)


def fit_linear_svr(X, y, epsilon=None, C=1.0, epochs=50, lr=0.1, seed=0, **kw) -> LinearSVR:
    return LinearSVR(epsilon=epsilon, C=C, epochs=epochs, lr=lr, seed=seed, **kw).fit(X, y)
