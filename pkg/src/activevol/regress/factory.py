"""Building learners by family name and (de)serializing nested estimator state."""

from __future__ import annotations

import numpy as np

from .. import select
from .base import REGISTRY, Estimator, prefixed, sub_arrays

# families that consume standardized inputs; the pipeline scales for them
NEEDS_SCALING = frozenset({"mlp", "linear_svr"})


class Scaled(Estimator):
    """Standardizes X with a scaler fitted on the training rows, then delegates."""

    family = "scaled"

    def __init__(self, inner: Estimator):
        self.inner = inner
        self.params = inner.params
        self.seed = inner.seed
        self.threads = inner.threads
        self.fitted = inner.fitted

    def fit(self, X, y):
        self.scaler_ = select.fit_scaler(X)
        self.inner.fit(self.scaler_.transform(X), y)
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.inner.predict(self.scaler_.transform(X))

    def __getattr__(self, name):
        if name == "inner":
            raise AttributeError(name)
        return getattr(self.inner, name)


def build_estimator(family, params=None, seed=0, threads=1, scale=None) -> Estimator:
    """A fresh learner; MLP and linear SVR are wrapped in :class:`Scaled` unless ``scale`` is False."""
    if family not in REGISTRY:
        raise ValueError(f"unknown model family {family!r}; known: {sorted(REGISTRY)}")
    est = REGISTRY[family](seed=seed, threads=threads, **dict(params or {}))
    if scale is None:
        scale = family in NEEDS_SCALING
    return Scaled(est) if scale else est


def family_of(est) -> str:
    return est.inner.family if isinstance(est, Scaled) else est.family


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return v.item()
    return v


def estimator_state(est) -> tuple[dict, dict]:
    """(meta, arrays) for any fitted learner, including wrappers and ensembles."""
    scaled = isinstance(est, Scaled)
    inner = est.inner if scaled else est
    meta, arrays = inner.state()
    out_meta = {"family": inner.family, "params": _jsonable(inner.params), "seed": inner.seed,
                "scaled": scaled, "state": _jsonable(meta)}
    out_arrays = prefixed(arrays, "est/")
    if scaled:
        out_arrays.update(est.scaler_.to_arrays("scaler/"))
    return out_meta, out_arrays


def estimator_from_state(meta, arrays) -> Estimator:
    cls = REGISTRY[meta["family"]]
    est = cls.from_state(meta["params"], meta["seed"], meta["state"], sub_arrays(arrays, "est/"))
    if meta["scaled"]:
        wrapped = Scaled(est)
        wrapped.scaler_ = select.Scaler.from_arrays(arrays, "scaler/")
        wrapped.fitted = True
        return wrapped
    return est
