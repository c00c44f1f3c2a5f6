"""Spatial train/test splitting, joint site/date cross-validation folds and the benchmark harness."""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .featurize import FeatureMatrix
from .metrics import all_metrics, mae, r2, rmse
from .regress.base import derive_seed
from .regress.model import train

log = logging.getLogger(__name__)

__all__ = ["r2", "mae", "rmse", "all_metrics", "spatial_split", "spatio_temporal_folds", "FoldPlan",
           "make_plan", "benchmark", "family_seed", "BenchmarkReport", "FOLD_RULE"]

FOLD_RULE = ("sites shuffled (seeded) into k groups; distinct dates cut into k contiguous blocks; "
             "fold i validates every training row whose site is in group i and fits on rows whose site "
             "is not in group i and whose date is not in block i")

METRICS = ("r2", "mae", "rmse")
PHASES = ("training", "cv", "testing")


def spatial_split(sites, test_fraction=0.2, seed=0):
    """Site-level split. Returns (train_sites, test_sites) as sorted tuples.

    ``sites`` may be ids or a mapping id -> location; only the ids matter.
    The number of test sites is ``round(n * test_fraction)``.
    """
    ids = sorted(set(sites.keys() if isinstance(sites, dict) else sites))
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    if len(ids) < 2:
        raise ValueError("spatial split needs at least 2 sites")
    n_test = int(round(len(ids) * test_fraction))
    if n_test == 0 or n_test == len(ids):
        raise ValueError(f"test_fraction={test_fraction} with {len(ids)} sites leaves one side empty")
    perm = np.random.default_rng(seed).permutation(len(ids))
    test = tuple(sorted(ids[i] for i in perm[:n_test]))
    train_ = tuple(sorted(ids[i] for i in perm[n_test:]))
    return train_, test


def _key(site, date):
    return f"{site}|{np.datetime_as_string(np.datetime64(date, 'D'))}"


@dataclass
class FoldPlan:
    """Held-out test sites plus k joint site/date folds over the training rows.

    Rows are identified by (site_id, date) keys. ``folds[i]`` is a pair of
    sorted key lists (fit keys, validate keys).
    """

    test_sites: tuple
    train_sites: tuple
    folds: list
    k: int
    seed: int
    site_groups: list = field(default_factory=list)
    date_blocks: list = field(default_factory=list)
    test_fraction: float | None = None
    rule: str = FOLD_RULE

    def to_dict(self):
        return {"test_sites": list(self.test_sites), "train_sites": list(self.train_sites),
                "folds": [[list(a), list(b)] for a, b in self.folds], "k": self.k, "seed": self.seed,
                "site_groups": [list(g) for g in self.site_groups],
                "date_blocks": [list(b) for b in self.date_blocks],
                "test_fraction": self.test_fraction, "rule": self.rule}

    @classmethod
    def from_dict(cls, d):
        return cls(test_sites=tuple(d["test_sites"]), train_sites=tuple(d["train_sites"]),
                   folds=[(list(a), list(b)) for a, b in d["folds"]], k=int(d["k"]), seed=int(d["seed"]),
                   site_groups=[list(g) for g in d["site_groups"]], date_blocks=[list(b) for b in d["date_blocks"]],
                   test_fraction=d.get("test_fraction"), rule=d.get("rule", FOLD_RULE))

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path):
        s = str(text_or_path)
        if not s.lstrip().startswith("{"):
            s = Path(s).read_text()
        return cls.from_dict(json.loads(s))

    def __eq__(self, other):
        return isinstance(other, FoldPlan) and self.to_dict() == other.to_dict()

    def verify(self) -> dict:
        """Mechanical hygiene checks; every count must be 0 and ``partition`` True."""
        test, train_ = set(self.test_sites), set(self.train_sites)
        out = {"site_overlap_train_test": len(test & train_), "folds": []}
        all_val = []
        for i, (fit, val) in enumerate(self.folds):
            fs = {k.split("|", 1)[0] for k in fit}
            vs = {k.split("|", 1)[0] for k in val}
            fit_pairs = {tuple(k.split("|", 1)) for k in fit}
            same_site_date = sum(1 for k in val if tuple(k.split("|", 1)) in fit_pairs)
            out["folds"].append({"fold": i, "n_fit": len(fit), "n_validate": len(val),
                                 "validate_sites_in_fit": len(vs & fs),
                                 "validate_keys_in_fit": same_site_date,
                                 "test_sites_used": len((fs | vs) & test)})
            all_val.extend(val)
        train_keys = {k for f in self.folds for part in f for k in part}
        out["partition"] = len(all_val) == len(set(all_val)) and set(all_val) == train_keys
        return out


def spatio_temporal_folds(site_ids, dates, k=10, seed=0):
    """Joint site/date folds over training rows given as aligned ``site_ids`` and ``dates``.

    Returns (folds, site_groups, date_blocks); see ``FOLD_RULE``.
    """
    site_ids = np.asarray(site_ids, dtype=object)
    dates = np.asarray(dates, dtype="datetime64[D]")
    if site_ids.shape != dates.shape:
        raise ValueError("site_ids and dates must align")
    usites = sorted(set(site_ids.tolist()))
    udates = np.unique(dates)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(usites) < k:
        raise ValueError(f"need at least k={k} sites, got {len(usites)}")
    if len(udates) < k:
        raise ValueError(f"need at least k={k} distinct dates, got {len(udates)}")
    perm = np.random.default_rng(seed).permutation(len(usites))
    groups = [sorted(usites[j] for j in part) for part in np.array_split(perm, k)]
    blocks = np.array_split(udates, k)
    group_of = {s: g for g, members in enumerate(groups) for s in members}
    block_of = {d: b for b, part in enumerate(blocks) for d in part.tolist()}
    keys = np.array([_key(s, d) for s, d in zip(site_ids, dates)], dtype=object)
    if len(set(keys.tolist())) != len(keys):
        raise ValueError("training rows must have unique (site, date) keys")
    g = np.array([group_of[s] for s in site_ids], dtype=np.int64)
    b = np.array([block_of[d] for d in dates.tolist()], dtype=np.int64)
    folds = []
    for i in range(k):
        val = sorted(keys[g == i].tolist())
        fit = sorted(keys[(g != i) & (b != i)].tolist())
        folds.append((fit, val))
    date_blocks = [[str(d) for d in part] for part in blocks]
    return folds, groups, date_blocks


def make_plan(matrix: FeatureMatrix, test_fraction=0.2, k=10, seed=0) -> FoldPlan:
    """Spatial split of the matrix's count sites followed by joint folds on the training side."""
    if matrix.site_ids is None:
        raise ValueError("fold planning needs site_ids on the matrix")
    train_sites, test_sites = spatial_split(matrix.site_ids.tolist(), test_fraction, derive_seed(seed, 0))
    mask = np.isin(matrix.site_ids, np.array(train_sites, dtype=object))
    folds, groups, blocks = spatio_temporal_folds(matrix.site_ids[mask], matrix.dates[mask], k,
                                                  derive_seed(seed, 1))
    return FoldPlan(test_sites, train_sites, folds, k, int(seed), groups, blocks, test_fraction)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class BenchmarkReport:
    rows: list            # dicts: family, status, error, metrics {phase: {metric: value}}, cv_std {...}
    provenance: dict
    predictions: pd.DataFrame

    def to_long_frame(self):
        out = []
        for row in self.rows:
            for phase in PHASES:
                for m in METRICS:
                    val = row["metrics"].get(phase, {}).get(m, math.nan)
                    std = row["cv_std"].get(m, math.nan) if phase == "cv" else math.nan
                    out.append({"family": row["family"], "status": row["status"], "phase": phase,
                                "metric": m, "value": val, "std": std})
        return pd.DataFrame(out, columns=["family", "status", "phase", "metric", "value", "std"])

    def to_table(self):
        """One row per family: R2/MAE/RMSE for training, CV (mean and std) and held-out testing."""
        out = []
        for row in self.rows:
            rec = {"family": row["family"], "status": row["status"]}
            for phase in PHASES:
                for m in METRICS:
                    rec[f"{phase}_{m}"] = row["metrics"].get(phase, {}).get(m, math.nan)
                    if phase == "cv":
                        rec[f"cv_{m}_std"] = row["cv_std"].get(m, math.nan)
            out.append(rec)
        return pd.DataFrame(out)

    def metric(self, family, phase, name):
        for row in self.rows:
            if row["family"] == family:
                return row["metrics"].get(phase, {}).get(name, math.nan)
        raise KeyError(family)

    def write(self, out_dir, prefix="benchmark"):
        """Writes ``<prefix>.csv`` (long), ``<prefix>_table.csv``, ``<prefix>_provenance.json``
        and ``<prefix>_predictions.csv``; returns the paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"long": out_dir / f"{prefix}.csv", "table": out_dir / f"{prefix}_table.csv",
                 "provenance": out_dir / f"{prefix}_provenance.json",
                 "predictions": out_dir / f"{prefix}_predictions.csv"}
        for key, df in (("long", self.to_long_frame()), ("table", self.to_table()), ("predictions", self.predictions)):
            buf = io.StringIO()
            df.to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
            paths[key].write_text(buf.getvalue())
        paths["provenance"].write_text(json.dumps(self.provenance, indent=2, sort_keys=True, default=str))
        return paths


def _split_keys(matrix):
    return np.array([_key(s, d) for s, d in zip(matrix.site_ids, matrix.dates)], dtype=object)


def family_seed(seed, families, family) -> int:
    """Seed of ``family``'s full-training fit; fold fits derive from it."""
    return derive_seed(seed, list(families).index(family))


def benchmark(families, plan: FoldPlan, matrix: FeatureMatrix, *, configs=None, seed=0, threads=1,
              run_cv=True, prefit=None) -> BenchmarkReport:
    """Training, cross-validated and held-out test metrics per family.

    A family that raises is reported with status ``failed`` and the rest continue.
    Every fit/score pair is logged in the provenance with the number of shared
    (site, date) keys, which must be zero. ``prefit`` maps family -> a model
    already fitted on the plan's training rows with ``family_seed``; it is used
    instead of refitting when its seed and schema match.
    """
    if matrix.target is None:
        raise ValueError("benchmark needs a matrix with targets")
    configs = configs or {}
    keys = _split_keys(matrix)
    index = {k: i for i, k in enumerate(keys.tolist())}
    sites = matrix.site_ids
    train_mask = np.isin(sites, np.array(plan.train_sites, dtype=object))
    test_mask = np.isin(sites, np.array(plan.test_sites, dtype=object))
    train_idx = np.flatnonzero(train_mask)
    test_idx = np.flatnonzero(test_mask)
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise ValueError("plan does not match matrix: empty training or test rows")
    fold_idx = []
    for fit, val in plan.folds:
        try:
            fold_idx.append((np.array([index[k] for k in fit], dtype=np.int64),
                             np.array([index[k] for k in val], dtype=np.int64)))
        except KeyError as exc:
            raise ValueError(f"plan key {exc} not present in the matrix") from None
    y = matrix.target
    rows = []
    pred_frames = []
    prov = {"rule": plan.rule, "k": plan.k, "plan_seed": plan.seed, "test_fraction": plan.test_fraction,
            "seed": seed, "test_sites": list(plan.test_sites), "train_sites": list(plan.train_sites),
            "site_groups": plan.site_groups, "date_blocks": plan.date_blocks, "plan_checks": plan.verify(),
            "schema": list(matrix.schema), "schema_hash": matrix.schema_hash, "families": {}}

    def audit(fit_idx, score_idx):
        shared = np.intersect1d(keys[fit_idx].astype(str), keys[score_idx].astype(str)).size
        shared_sites = np.intersect1d(sites[fit_idx].astype(str), sites[score_idx].astype(str)).size
        return {"n_fit": int(len(fit_idx)), "n_scored": int(len(score_idx)), "shared_keys": int(shared),
                "shared_sites": int(shared_sites)}

    def dump(family, phase, fold, idx, pred):
        pred_frames.append(pd.DataFrame({
            "family": family, "phase": phase, "fold": fold, "site_id": sites[idx], "link_id": matrix.link_ids[idx],
            "date": np.datetime_as_string(matrix.dates[idx], unit="D"), "observed": y[idx], "predicted": pred}))

    for fam_i, family in enumerate(families):
        cfg = dict(configs.get(family, {}))
        fseed = derive_seed(seed, fam_i)
        entry = {"config": cfg, "config_hash": config_hash(cfg), "seed": fseed, "fits": []}
        row = {"family": family, "status": "ok", "error": "", "metrics": {}, "cv_std": {}}
        try:
            full = (prefit or {}).get(family)
            if full is None or full.seed != fseed or full.schema_hash != matrix.schema_hash:
                full = train(family, matrix.take(train_idx), cfg, fseed, threads)
            row["metrics"]["training"] = all_metrics(y[train_idx], full.predict(matrix.take(train_idx)))
            entry["params"] = full.estimator.params
            if run_cv:
                per_fold = []
                for i, (fi, vi) in enumerate(fold_idx):
                    m = train(family, matrix.take(fi), cfg, derive_seed(fseed, i + 1), threads)
                    pred = m.predict(matrix.take(vi))
                    per_fold.append(all_metrics(y[vi], pred))
                    dump(family, "cv", i, vi, pred)
                    entry["fits"].append({"phase": "cv", "fold": i, **audit(fi, vi)})
                row["metrics"]["cv"] = {k: float(np.mean([f[k] for f in per_fold])) for k in METRICS}
                row["cv_std"] = {k: float(np.std([f[k] for f in per_fold], ddof=1)) for k in METRICS}
                row["cv_folds"] = per_fold
            # test set scored once, by the model fitted on all training rows
            pred = full.predict(matrix.take(test_idx))
            row["metrics"]["testing"] = all_metrics(y[test_idx], pred)
            dump(family, "testing", -1, test_idx, pred)
            entry["fits"].append({"phase": "testing", "fold": -1, **audit(train_idx, test_idx)})
        except Exception as exc:  # noqa: BLE001 - a failing family must not stop the run
            log.warning("benchmark: %s failed: %s", family, exc)
            row["status"] = "failed"
            row["error"] = f"{type(exc).__name__}: {exc}"
        entry["status"] = row["status"]
        entry["error"] = row["error"]
        prov["families"][family] = entry
        rows.append(row)
    prov["leakage_free"] = all(f["shared_keys"] == 0 and f["shared_sites"] == 0
                               for e in prov["families"].values() for f in e["fits"])
    cols = ["family", "phase", "fold", "site_id", "link_id", "date", "observed", "predicted"]
    preds = pd.concat(pred_frames, ignore_index=True) if pred_frames else pd.DataFrame(columns=cols)
    return BenchmarkReport(rows, prov, preds)
