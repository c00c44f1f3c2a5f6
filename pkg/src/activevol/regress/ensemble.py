"""Voting and stacking over other learner families."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .base import Estimator, check_Xy, derive_seed, prefixed, register, sub_arrays
from .factory import build_estimator, estimator_from_state, estimator_state, family_of


def normalize_spec(spec) -> dict:
    """``"rf"`` or ``{"family": ..., "params": {...}}`` -> dict form."""
    if isinstance(spec, str):
        return {"family": spec, "params": {}}
    if isinstance(spec, dict) and "family" in spec:
        return {"family": spec["family"], "params": dict(spec.get("params") or {})}
    raise ValueError(f"bad member spec {spec!r}")


def _members_state(members):
    metas, arrays = [], {}
    for i, m in enumerate(members):
        meta, arr = estimator_state(m)
        metas.append(meta)
        arrays.update(prefixed(arr, f"m{i}/"))
    return metas, arrays


def _members_from_state(metas, arrays):
    return [estimator_from_state(meta, sub_arrays(arrays, f"m{i}/")) for i, meta in enumerate(metas)]


def _run(tasks, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda f: f(), tasks))
    return [f() for f in tasks]


@register
class Voting(Estimator):
    """Unweighted mean of member predictions."""

    family = "voting"
    defaults = {"members": ("ols", "mlp", "random_forest")}

    def fit(self, X, y, prefit=None):
        X, y = check_Xy(X, y)
        if prefit is not None:
            members = list(prefit)
        else:
            specs = [normalize_spec(s) for s in self.params["members"]]
            members = [build_estimator(s["family"], s["params"], derive_seed(self.seed, i), self.threads)
                       for i, s in enumerate(specs)]
            for m in members:
                m.fit(X, y)
        if len(members) < 2:
            raise ValueError("voting needs at least 2 members")
        self.members_ = members
        self.fitted = True
        return self

    def member_predictions(self, X):
        self._check_fitted()
        X = check_Xy(X)
        return np.vstack([m.predict(X) for m in self.members_])

    def predict(self, X):
        return np.mean(self.member_predictions(X), axis=0)

    def state(self):
        metas, arrays = _members_state(self.members_)
        return {"members": metas}, arrays

    def _restore(self, meta, arrays):
        self.members_ = _members_from_state(meta["members"], arrays)


def inner_folds(n, k, seed):
    """Fold label per row from a seeded shuffle split into ``k`` near-equal groups."""
    perm = np.random.default_rng(derive_seed(seed, 0)).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    for i, idx in enumerate(np.array_split(perm, k)):
        labels[idx] = i
    return labels


@register
class Stacking(Estimator):
    """Meta learner over out-of-fold base predictions; bases refit on all rows for prediction.

    ``audit_`` records, per training row, which inner fold produced its
    meta-features and how many rows were scored by a model that had seen them
    (always zero by construction, checked rather than assumed).
    """

    family = "stacking"
    defaults = {"base": ("ols", "random_forest", "gbrt", "adaboost_r2"), "meta": "ols", "k_inner": 3}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        n = len(y)
        k = int(self.params["k_inner"])
        if k < 2:
            raise ValueError("k_inner must be >= 2")
        if k > n:
            raise ValueError(f"k_inner={k} exceeds the {n} training rows")
        bases = [normalize_spec(s) for s in self.params["base"]]
        if not bases:
            raise ValueError("stacking needs at least one base learner")
        meta_spec = normalize_spec(self.params["meta"])
        fold = inner_folds(n, k, self.seed)
        Z = np.full((n, len(bases)), np.nan)
        produced_by = np.full(n, -1, dtype=np.int64)
        leaked = 0

        def oof(i, b):
            spec = bases[b]
            tr = np.flatnonzero(fold != i)
            va = np.flatnonzero(fold == i)
            est = build_estimator(spec["family"], spec["params"], derive_seed(self.seed, 1, i, b), self.threads)
            try:
                est.fit(X[tr], y[tr])
            except Exception as exc:
                raise ValueError(f"stacking inner fold {i} ({len(tr)} training rows) is too small or "
                                 f"otherwise unusable for base learner {spec['family']!r}: {exc}") from exc
            return i, b, tr, va, est.predict(X[va])

        tasks = [lambda i=i, b=b: oof(i, b) for i in range(k) for b in range(len(bases))]
        for i, b, tr, va, pred in _run(tasks, self.threads):
            Z[va, b] = pred
            produced_by[va] = i
            seen = np.zeros(n, dtype=bool)
            seen[tr] = True
            leaked += int(seen[va].sum())
        if np.isnan(Z).any():
            raise ValueError("stacking: some rows received no out-of-fold prediction")
        self.meta_ = build_estimator(meta_spec["family"], meta_spec["params"], derive_seed(self.seed, 3), self.threads)
        self.meta_.fit(Z, y)
        finals = [lambda b=b: build_estimator(bases[b]["family"], bases[b]["params"], derive_seed(self.seed, 2, b),
                                              self.threads).fit(X, y) for b in range(len(bases))]
        self.bases_ = _run(finals, self.threads)
        self.meta_features_ = Z
        self.audit_ = {"k_inner": k, "fold_sizes": np.bincount(fold, minlength=k).tolist(),
                       "rows_without_meta_feature": int((produced_by < 0).sum()), "leaked_rows": leaked}
        self.fold_of_row_ = fold
        self.fitted = True
        return self

    def base_predictions(self, X):
        self._check_fitted()
        X = check_Xy(X)
        return np.column_stack([m.predict(X) for m in self.bases_])

    def predict(self, X):
        return self.meta_.predict(self.base_predictions(X))

    @property
    def base_families(self):
        return [family_of(b) for b in self.bases_]

    def state(self):
        metas, arrays = _members_state(self.bases_)
        mmeta, marr = estimator_state(self.meta_)
        arrays.update(prefixed(marr, "meta/"))
        return {"bases": metas, "meta": mmeta, "audit": self.audit_}, arrays

    def _restore(self, meta, arrays):
        self.bases_ = _members_from_state(meta["bases"], arrays)
        self.meta_ = estimator_from_state(meta["meta"], sub_arrays(arrays, "meta/"))
        self.audit_ = meta["audit"]
