"""Standardization, LASSO coefficients, variance inflation factors and GINI importances."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .featurize import FeatureMatrix, feature_label

INF_MARKER = "inf"


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        Z = (X - self.mean) / self.scale
        if self.constant.any():
            Z[:, self.constant] = 0.0
        return Z

    def inverse_transform(self, Z):
        Z = np.asarray(Z, dtype=float)
        X = Z * self.scale + self.mean
        if self.constant.any():
            X[:, self.constant] = self.mean[self.constant]
        return X

    def to_arrays(self, prefix="scaler/"):
        return {f"{prefix}mean": self.mean, f"{prefix}scale": self.scale, f"{prefix}constant": self.constant}

    @classmethod
    def from_arrays(cls, arrays, prefix="scaler/"):
        return cls(np.array(arrays[f"{prefix}mean"]), np.array(arrays[f"{prefix}scale"]),
                   np.array(arrays[f"{prefix}constant"]).astype(bool))


def fit_scaler(X) -> Scaler:
    """Column means and population standard deviations; zero-variance columns are flagged constant."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = ~(std > 1e-12 * np.maximum(1.0, np.abs(mean)))
    scale = np.where(constant, 1.0, std)
    return Scaler(mean, scale, constant)


def standardize(matrix):
    """Return (standardized copy, scaler). Accepts a FeatureMatrix or a 2-D array.

    Non-constant columns end with mean 0 and population std 1; constant columns
    become 0 and are flagged in ``scaler.constant``.
    """
    X = matrix.X if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=float)
    scaler = fit_scaler(X)
    Z = scaler.transform(X)
    if isinstance(matrix, FeatureMatrix):
        return dataclasses.replace(matrix, X=Z), scaler
    return Z, scaler


def unstandardize(Z, scaler: Scaler):
    return scaler.inverse_transform(Z)


@dataclass
class LassoResult:
    coef: np.ndarray
    intercept: float
    lam: float
    n_sweeps: int
    converged: bool
    objective: list = field(default_factory=list)


def lasso_objective(X, y, coef, intercept, lam):
    r = y - intercept - X @ coef
    return 0.5 * float(r @ r) / len(y) + lam * float(np.abs(coef).sum())


def soft_threshold(z, gamma):
    return math.copysign(max(abs(z) - gamma, 0.0), z)


def _zero_bound(Xc, yc):
    return float(np.max(np.abs(Xc.T @ yc))) / len(yc) if Xc.shape[1] else 0.0


def lambda_max(X, y):
    """Smallest penalty at which every coefficient is zero (centered y)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return _zero_bound(X - X.mean(axis=0), y - y.mean())


def lasso_fit(X, y, lam, *, tol=1e-10, max_iter=10_000, coef0=None, fit_intercept=True) -> LassoResult:
    """Cyclic coordinate descent for ``(1/2N)||y - b - X beta||^2 + lam * ||beta||_1``.

    Each coordinate update is a soft-threshold. Stops when the largest
    coefficient change in a sweep is below ``tol`` or after ``max_iter`` sweeps.
    The objective after every sweep is kept in ``objective``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("lasso_fit: non-finite input")
    if lam < 0:
        raise ValueError("lasso_fit: lambda must be >= 0")
    n, p = X.shape
    if fit_intercept:
        xm = X.mean(axis=0)
        ym = y.mean()
    else:
        xm = np.zeros(p)
        ym = 0.0
    Xc = X - xm
    yc = y - ym
    if lam > 0 and lam >= _zero_bound(Xc, yc):
        # beta = 0 satisfies the optimality conditions exactly; skip sweeps that could leave rounding residue
        beta = np.zeros(p)
        intercept = ym if fit_intercept else 0.0
        return LassoResult(beta, intercept, float(lam), 0, True, [lasso_objective(Xc, yc, beta, 0.0, lam)])
    Xc = np.asfortranarray(Xc)
    col_sq = (Xc * Xc).sum(axis=0) / n
    beta = np.zeros(p) if coef0 is None else np.array(coef0, dtype=float)
    r = yc - Xc @ beta
    trace = []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            xj = Xc[:, j]
            old = beta[j]
            z = float(xj @ r) / n + col_sq[j] * old
            new = soft_threshold(z, lam) / col_sq[j]
            if new != old:
                r -= (new - old) * xj
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        trace.append(lasso_objective(Xc, yc, beta, 0.0, lam))
        if max_delta < tol:
            converged = True
            break
    intercept = ym - float(xm @ beta) if fit_intercept else 0.0
    return LassoResult(beta, intercept, float(lam), sweeps, converged, trace)


def lasso_path(X, y, lambdas, **kw):
    """Fits along decreasing penalties with warm starts."""
    out = []
    coef = None
    for lam in lambdas:
        res = lasso_fit(X, y, lam, coef0=coef, **kw)
        coef = res.coef
        out.append(res)
    return out


def lambda_grid(X, y, n=50, decades=4.0):
    lmax = lambda_max(X, y)
    if lmax == 0.0:
        return np.zeros(1)
    return lmax * np.logspace(0.0, -decades, n)


def lasso_cv(X, y, *, n_folds=5, n_lambdas=50, decades=4.0, seed=0, tol=1e-8, max_iter=2000):
    """Pick the penalty minimising k-fold mean squared error over a log grid.

    Returns (best lambda, grid, mean CV error per grid point).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = lambda_grid(X, y, n_lambdas, decades)
    perm = np.random.default_rng(seed).permutation(len(y))
    folds = np.array_split(perm, n_folds)
    err = np.zeros(len(grid))
    for k in range(n_folds):
        val = folds[k]
        tr = np.concatenate([folds[i] for i in range(n_folds) if i != k])
        for i, res in enumerate(lasso_path(X[tr], y[tr], grid, tol=tol, max_iter=max_iter)):
            pred = res.intercept + X[val] @ res.coef
            err[i] += float(np.mean((y[val] - pred) ** 2)) / n_folds
    best = int(np.argmin(err))
    return float(grid[best]), grid, err


def _r2_on_others(X, j):
    n = X.shape[0]
    others = np.delete(X, j, axis=1)
    A = np.column_stack([np.ones(n), others])
    target = X[:, j]
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    resid = target - A @ coef
    ss_tot = float(((target - target.mean()) ** 2).sum())
    ss_res = float(resid @ resid)
    return ss_res, ss_tot


def vif(X) -> np.ndarray:
    """Variance inflation factor per column (intercept included in each auxiliary fit).

    Perfectly collinear (or constant) columns get ``math.inf``.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p < 2:
        raise ValueError("VIF needs at least 2 features")
    if n <= p:
        raise ValueError(f"VIF needs more rows than features (got {n} rows, {p} features); "
                         "no ridge-stabilised fallback is enabled")
    out = np.empty(p)
    for j in range(p):
        ss_res, ss_tot = _r2_on_others(X, j)
        if ss_tot == 0.0 or ss_res <= 1e-10 * ss_tot:
            out[j] = math.inf
        else:
            out[j] = max(1.0, ss_tot / ss_res)
    return out


def gini_importance(forest) -> np.ndarray:
    """Normalized total variance reduction per feature of a fitted tree ensemble."""
    imp = getattr(forest, "feature_importances_", None)
    if imp is None:
        raise ValueError("gini_importance needs a fitted forest")
    return np.asarray(imp, dtype=float)


@dataclass
class FeatureRecord:
    name: str
    label: str
    lasso_coefficient_abs: float
    vif: float
    gini: float | None = None


@dataclass
class SelectionReport:
    features: list
    lambda_used: float
    lambda_grid: list = field(default_factory=list)
    cv_error: list = field(default_factory=list)
    lasso_sweeps: int = 0
    lasso_converged: bool = True

    @property
    def ranking(self):
        """Feature names by descending |LASSO coefficient|; ties alphabetical."""
        return [f.name for f in sorted(self.features, key=lambda f: (-f.lasso_coefficient_abs, f.name))]

    def to_frame(self):
        rows = []
        by_name = {f.name: f for f in self.features}
        for name in self.ranking:
            f = by_name[name]
            rows.append({"feature": f.name, "label": f.label, "lasso": f.lasso_coefficient_abs,
                         "vif": f.vif, "gini": f.gini})
        return pd.DataFrame(rows, columns=["feature", "label", "lasso", "vif", "gini"])

    def write(self, csv_path, json_path=None):
        df = self.to_frame()
        df["vif"] = [INF_MARKER if math.isinf(v) else v for v in df["vif"]]
        df.to_csv(csv_path, index=False, lineterminator="\n")
        if json_path is not None:
            side = {"lambda_used": self.lambda_used, "lambda_grid": list(map(float, self.lambda_grid)),
                    "cv_error": list(map(float, self.cv_error)), "lasso_sweeps": self.lasso_sweeps,
                    "lasso_converged": self.lasso_converged, "ranking": self.ranking,
                    "standardization": "population std, features only; response unscaled"}
            with open(json_path, "w") as fh:
                json.dump(side, fh, indent=2)


def selection_report(matrix: FeatureMatrix, *, forest=None, seed=0, n_folds=5, n_lambdas=50) -> SelectionReport:
    """LASSO (|coef| on standardized features at the CV-chosen penalty), VIF and, if a forest is given, GINI."""
    if matrix.target is None:
        raise ValueError("selection needs a matrix with targets")
    Z, scaler = standardize(matrix.X)
    y = matrix.target
    lam, grid, err = lasso_cv(Z, y, n_folds=n_folds, n_lambdas=n_lambdas, seed=seed)
    res = lasso_fit(Z, y, lam, tol=1e-8, max_iter=5000)
    v = vif(matrix.X)
    gini = gini_importance(forest) if forest is not None else None
    feats = []
    for j, name in enumerate(matrix.schema):
        feats.append(FeatureRecord(name=name, label=feature_label(name, matrix.mode),
                                   lasso_coefficient_abs=abs(float(res.coef[j])), vif=float(v[j]),
                                   gini=None if gini is None else float(gini[j])))
    return SelectionReport(feats, lam, list(grid), list(err), res.n_sweeps, res.converged)
