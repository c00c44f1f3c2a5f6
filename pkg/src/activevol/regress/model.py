"""Uniform train/predict interface with schema checks and a self-describing model file."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

from ..featurize import THIRD_PARTY, FeatureMatrix
from ..metrics import all_metrics
from .base import REGISTRY
from .ensemble import Voting
from .factory import build_estimator, estimator_from_state, estimator_state, family_of

FAMILIES = ("ols", "naive_base", "lasso", "cart", "random_forest", "gbrt", "adaboost_r2", "mlp",
            "linear_svr", "gnb_binned", "voting", "stacking")
FORMAT = "activevol-model/1"


class SchemaMismatch(ValueError):
    pass


@dataclass
class TrainedModel:
    family: str
    estimator: object
    schema: tuple
    schema_hash: str
    seed: int
    mode: str | None = None
    training_metrics: dict = field(default_factory=dict)

    @property
    def params(self):
        return self.estimator.params

    def check_schema(self, matrix: FeatureMatrix):
        if matrix.schema_hash != self.schema_hash:
            raise SchemaMismatch(f"matrix schema {matrix.schema_hash} does not match model schema {self.schema_hash}")

    def predict(self, matrix: FeatureMatrix) -> np.ndarray:
        self.check_schema(matrix)
        return self.estimator.predict(matrix.X)

    def predict_array(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise SchemaMismatch(f"expected {len(self.schema)} feature columns")
        return self.estimator.predict(X)

    # persistence: a zip of .npy members (readable by np.load) with fixed timestamps

    def to_bytes(self) -> bytes:
        emeta, arrays = estimator_state(self.estimator)
        meta = {"format": FORMAT, "family": self.family, "schema": list(self.schema),
                "schema_hash": self.schema_hash, "seed": self.seed, "mode": self.mode,
                "training_metrics": self.training_metrics, "estimator": emeta}
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            items = [("__meta__", np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8))]
            items += sorted(arrays.items())
            for name, arr in items:
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                member = io.BytesIO()
                np.lib.format.write_array(member, np.asarray(arr), allow_pickle=False)
                zf.writestr(info, member.getvalue())
        return buf.getvalue()

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path}: not an activevol model file")
        est = estimator_from_state(meta["estimator"], arrays)
        return cls(family=meta["family"], estimator=est, schema=tuple(meta["schema"]),
                   schema_hash=meta["schema_hash"], seed=int(meta["seed"]), mode=meta["mode"],
                   training_metrics=meta["training_metrics"])


def _wrap(family, est, matrix, seed):
    return TrainedModel(family=family, estimator=est, schema=tuple(matrix.schema), schema_hash=matrix.schema_hash,
                        seed=int(seed), mode=matrix.mode,
                        training_metrics=all_metrics(matrix.target, est.predict(matrix.X)))


def train(family, matrix: FeatureMatrix, config=None, seed=0, threads=1) -> TrainedModel:
    """Fit ``family`` on a training matrix. ``config`` holds the family's hyperparameters."""
    if family not in FAMILIES or family not in REGISTRY:
        raise ValueError(f"unknown model family {family!r}; known: {list(FAMILIES)}")
    if matrix.target is None:
        raise ValueError("training needs a matrix with targets")
    params = dict(config or {})
    if family == "naive_base" and "column" not in params:
        if THIRD_PARTY not in matrix.schema:
            raise ValueError(f"naive_base needs the {THIRD_PARTY!r} feature in the schema")
        params["column"] = list(matrix.schema).index(THIRD_PARTY)
    est = build_estimator(family, params, seed, threads)
    est.fit(matrix.X, matrix.target)
    return _wrap(family, est, matrix, seed)


def fit_voting(members, matrix: FeatureMatrix, seed=0, threads=1) -> TrainedModel:
    """Voting over member specs (trained here) or already trained models on the same schema."""
    if len(members) < 2:
        raise ValueError("voting needs at least 2 members")
    prefit, specs = [], []
    for m in members:
        if isinstance(m, TrainedModel):
            if m.schema_hash != matrix.schema_hash:
                raise SchemaMismatch(f"voting member {m.family} was trained on schema {m.schema_hash}, "
                                     f"matrix has {matrix.schema_hash}")
            prefit.append(m.estimator)
        else:
            specs.append(m)
    if prefit and specs:
        raise ValueError("mix of trained models and specs is not supported; train members first")
    if prefit:
        est = Voting(seed=seed, threads=threads, members=[family_of(e) for e in prefit])
        est.fit(matrix.X, matrix.target, prefit=prefit)
    else:
        est = Voting(seed=seed, threads=threads, members=list(specs)).fit(matrix.X, matrix.target)
    return _wrap("voting", est, matrix, seed)


def fit_stacking(matrix: FeatureMatrix, base_specs=None, meta_spec="ols", k_inner=3, seed=0, threads=1) -> TrainedModel:
    params = {"meta": meta_spec, "k_inner": k_inner}
    if base_specs is not None:
        params["base"] = list(base_specs)
    return train("stacking", matrix, params, seed, threads)
