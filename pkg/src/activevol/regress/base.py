from __future__ import annotations

import numpy as np

REGISTRY: dict[str, type] = {}


def register(cls):
    REGISTRY[cls.family] = cls
    return cls


def derive_seed(seed, *path) -> int:
    """Independent 63-bit seed for a sub-unit (tree, fold, member) of a seeded fit."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def check_Xy(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.isfinite(X).all():
        raise ValueError("X has non-finite entries")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ValueError("y must align with the rows of X")
    if not np.isfinite(y).all():
        raise ValueError("y has non-finite entries")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    return X, y


class Estimator:
    """Minimal fit/predict learner with array-based state for serialization.

    Subclasses set ``family`` and ``defaults``; ``params`` holds the resolved
    hyperparameters. ``state()`` returns (JSON-able meta, dict of arrays) and
    ``from_state`` rebuilds a fitted instance from them.
    """

    family = ""
    defaults: dict = {}

    def __init__(self, seed=0, threads=1, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise TypeError(f"{self.family}: unknown parameters {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        self.seed = int(seed)
        self.threads = int(threads)
        self.fitted = False

    def fit(self, X, y):
        raise NotImplementedError

    def predict(self, X):
        raise NotImplementedError

    def _check_fitted(self):
        if not self.fitted:
            raise ValueError(f"{self.family} model is not fitted")

    def state(self) -> tuple[dict, dict]:
        raise NotImplementedError

    def _restore(self, meta, arrays):
        raise NotImplementedError

    @classmethod
    def from_state(cls, params, seed, meta, arrays):
        est = cls(seed=seed, **params)
        est._restore(meta, arrays)
        est.fitted = True
        return est


def sub_arrays(arrays, prefix):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def prefixed(arrays, prefix):
    return {f"{prefix}{k}": v for k, v in arrays.items()}
