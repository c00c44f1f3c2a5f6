"""Network-wide estimates, ratio outliers via Kneedle, mitigation and trip aggregation."""

from __future__ import annotations

import io
import json
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .datamodel import Mode
from .featurize import FeatureMatrix

log = logging.getLogger(__name__)

UNASSIGNED = "UNASSIGNED"
STRATEGIES = ("cap", "fallback")


@dataclass(frozen=True)
class InferenceResult:
    link_id: str
    date: np.datetime64
    estimate: float
    base_count: float | None
    ratio: float | None
    outlier: bool
    mitigated_estimate: float


@dataclass(frozen=True, eq=False)
class InferenceResults:
    """Columnar link/date estimates; ``ratio`` and ``base_count`` use NaN for absent."""

    link_ids: np.ndarray
    dates: np.ndarray
    raw: np.ndarray
    estimate: np.ndarray
    base_count: np.ndarray
    outlier: np.ndarray
    mitigated: np.ndarray
    n_floored: int = 0
    elbow: float | None = None
    strategy: str | None = None

    def __post_init__(self):
        n = len(self.link_ids)
        for name in ("dates", "raw", "estimate", "base_count", "outlier", "mitigated"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} does not align with link_ids")
        for name in ("link_ids", "dates", "raw", "estimate", "base_count", "outlier", "mitigated"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.link_ids)

    @property
    def ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.base_count > 0, self.estimate / self.base_count, np.nan)

    def __iter__(self):
        r = self.ratio
        for i in range(len(self)):
            base = None if np.isnan(self.base_count[i]) else float(self.base_count[i])
            yield InferenceResult(self.link_ids[i], self.dates[i], float(self.estimate[i]), base,
                                  None if np.isnan(r[i]) else float(r[i]), bool(self.outlier[i]),
                                  float(self.mitigated[i]))

    def accounting(self) -> dict:
        """Row counts that add up to the total: floored, mitigated and unchanged."""
        floored = int((self.raw < 0).sum())
        changed = int((self.mitigated != self.estimate).sum())
        mitigated = int(self.outlier.sum())
        return {"total": len(self), "floored": floored, "mitigated": mitigated,
                "mitigated_changed": changed, "unchanged": len(self) - floored - mitigated}

    def flagged_link_fraction(self) -> float:
        """Share of distinct links with at least one outlier row."""
        links = np.unique(self.link_ids)
        if len(links) == 0:
            return 0.0
        return len(np.unique(self.link_ids[self.outlier])) / len(links)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "link_id": self.link_ids, "date": np.datetime_as_string(self.dates, unit="D"),
            "raw_prediction": self.raw, "estimate": self.estimate, "base_count": self.base_count,
            "ratio": self.ratio, "outlier": self.outlier.astype(bool), "mitigated_estimate": self.mitigated})

    def write_csv(self, path):
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, lineterminator="\n", float_format="%.17g")
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read_csv(cls, path, *, elbow=None, strategy=None) -> "InferenceResults":
        df = pd.read_csv(path, dtype={"link_id": str, "date": str}, keep_default_na=True,
                         float_precision="round_trip")
        raw = df["raw_prediction"].to_numpy(dtype=float)
        return cls(df["link_id"].to_numpy(dtype=object), df["date"].to_numpy().astype("datetime64[D]"), raw,
                   df["estimate"].to_numpy(dtype=float), df["base_count"].to_numpy(dtype=float),
                   df["outlier"].to_numpy(dtype=bool), df["mitigated_estimate"].to_numpy(dtype=float),
                   int((raw < 0).sum()), elbow, strategy)

    def write_geojson(self, path, links):
        """One LineString feature per link with its mean estimate, ratio and outlier share."""
        geom = {l.link_id: l.geometry for l in links}
        df = self.to_frame()
        g = df.groupby("link_id", sort=True)
        agg = pd.DataFrame({"estimate": g["estimate"].mean(), "base_count": g["base_count"].mean(),
                            "ratio": g["ratio"].mean(), "outlier": g["outlier"].any(),
                            "outlier_days": g["outlier"].sum(), "mitigated_estimate": g["mitigated_estimate"].mean(),
                            "n_days": g.size()})
        feats = []
        for link_id, row in agg.iterrows():
            if link_id not in geom:
                raise KeyError(f"no geometry for link {link_id!r}")
            props = {"link_id": link_id}
            for k, v in row.items():
                v = v.item() if hasattr(v, "item") else v
                props[k] = None if isinstance(v, float) and math.isnan(v) else v
            feats.append({"type": "Feature", "properties": props,
                          "geometry": {"type": "LineString", "coordinates": [list(c) for c in geom[link_id]]}})
        Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": feats}))


def predict_network(model, matrix: FeatureMatrix) -> InferenceResults:
    """Estimates for every (link, date) row of an inference matrix; negatives floored at 0 and counted."""
    raw = np.asarray(model.predict(matrix), dtype=float)
    est = np.maximum(raw, 0.0)
    n_floored = int((raw < 0).sum())
    if n_floored:
        log.info("predict_network: floored %d negative predictions", n_floored)
    base = np.asarray(matrix.base_counts, dtype=float)
    return InferenceResults(matrix.link_ids, matrix.dates, raw, est, base, np.zeros(len(raw), dtype=bool),
                            est.copy(), n_floored)


@dataclass(frozen=True)
class Knee:
    rank: int           # 0-based position in the descending sort
    value: float
    difference: float


def kneedle_elbow(values) -> Knee | None:
    """Elbow of the descending rank curve of ``values``; None when the curve is a straight line.

    Both axes are scaled to [0, 1]; the elbow is where the curve falls furthest
    below the chord joining its end points.
    """
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    if not np.isfinite(v).all():
        raise ValueError("kneedle_elbow: non-finite values")
    if len(np.unique(v)) < 3:
        raise ValueError("kneedle_elbow needs at least 3 distinct values")
    n = len(v)
    x = np.arange(n) / (n - 1)
    y = (v - v[-1]) / (v[0] - v[-1])
    diff = (1.0 - x) - y
    i = int(np.argmax(diff))
    if diff[i] < 1e-9:
        return None
    return Knee(rank=i, value=float(v[i]), difference=float(diff[i]))


def mitigate(results: InferenceResults, elbow, strategy="cap", base_beta=None) -> InferenceResults:
    """Flag rows with ratio strictly above ``elbow`` and replace their estimate.

    ``cap`` sets it to ``elbow * base_count``; ``fallback`` to ``base_beta * base_count``.
    Other rows keep their estimate unchanged.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    if elbow is None or not elbow > 0:
        raise ValueError("elbow must be > 0")
    if strategy == "fallback" and base_beta is None:
        raise ValueError("fallback mitigation needs base_beta")
    ratio = results.ratio
    out = np.zeros(len(results), dtype=bool)
    ok = ~np.isnan(ratio)
    out[ok] = ratio[ok] > elbow
    mitigated = results.estimate.copy()
    factor = elbow if strategy == "cap" else float(base_beta)
    mitigated[out] = factor * results.base_count[out]
    return replace(results, outlier=out, mitigated=mitigated, elbow=float(elbow), strategy=strategy)


@dataclass(frozen=True)
class AggregationParams:
    d: float        # average trip distance, km
    gamma: float    # effective distance factor

    def __post_init__(self):
        if not (self.d > 0 and math.isfinite(self.d)):
            raise ValueError("d must be a positive distance in km")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def km_per_trip(self):
        return self.d / self.gamma

    @classmethod
    def for_mode(cls, mode) -> "AggregationParams":
        return DEFAULT_AGGREGATION[Mode(mode).value]


DEFAULT_AGGREGATION = {"walk": AggregationParams(1.0, 0.5), "cycle": AggregationParams(4.7, 1.0)}


def _lengths_km(links_or_lengths) -> Mapping[str, float]:
    if isinstance(links_or_lengths, Mapping):
        return links_or_lengths
    return {l.link_id: l.length_km for l in links_or_lengths}


def _estimates(results, use_mitigated):
    if isinstance(results, InferenceResults):
        vals = results.mitigated if use_mitigated else results.estimate
        return results.link_ids, vals
    ids = np.array([r.link_id for r in results], dtype=object)
    vals = np.array([r.mitigated_estimate if use_mitigated else r.estimate for r in results], dtype=float)
    return ids, vals


def _link_km(ids, vals, lengths):
    try:
        l = np.array([lengths[i] for i in ids], dtype=float)
    except KeyError as exc:
        raise KeyError(f"no length for link {exc.args[0]!r}") from None
    return vals * l


def aggregate_trips(results, lengths, params: AggregationParams, *, use_mitigated=True) -> dict:
    """``total_km = sum(estimate * length_km)``; ``total_trips = total_km / (d / gamma)``.

    ``lengths`` maps link_id -> km, or is a sequence of links. Sums use
    correctly rounded summation so totals do not depend on row order.
    """
    ids, vals = _estimates(results, use_mitigated)
    km = math.fsum(_link_km(ids, vals, _lengths_km(lengths)).tolist())
    return {"total_km": km, "total_trips": km / params.km_per_trip}


def rollup_by_lga(results, links, params: AggregationParams, *, lengths=None, use_mitigated=True) -> dict:
    """Per-LGA km and trips; links without an LGA go under ``UNASSIGNED``."""
    links = list(links)
    lga = {l.link_id: (l.lga_id or UNASSIGNED) for l in links}
    lengths = _lengths_km(lengths if lengths is not None else links)
    ids, vals = _estimates(results, use_mitigated)
    km = _link_km(ids, vals, lengths)
    groups: dict[str, list] = {}
    for i, k in zip(ids, km.tolist()):
        if i not in lga:
            raise KeyError(f"link {i!r} missing from the link table")
        groups.setdefault(lga[i], []).append(k)
    out = {}
    for g in sorted(groups):
        total = math.fsum(groups[g])
        out[g] = {"km": total, "trips": total / params.km_per_trip}
    return out


def weekday_weekend_totals(results: InferenceResults, lengths, params: AggregationParams, *, use_mitigated=True) -> dict:
    """Trips per day averaged within weekdays (Mon-Fri) and weekend days; a class with no dates is omitted."""
    lengths = _lengths_km(lengths)
    vals = results.mitigated if use_mitigated else results.estimate
    km = _link_km(results.link_ids, vals, lengths)
    dow = (results.dates.astype("datetime64[D]").astype(np.int64) + 3) % 7   # 0 = Monday
    out = {}
    for name, mask in (("weekday_trips_per_day", dow < 5), ("weekend_trips_per_day", dow >= 5)):
        days = np.unique(results.dates[mask])
        if len(days) == 0:
            continue
        out[name] = math.fsum(km[mask].tolist()) / params.km_per_trip / len(days)
    return out


def aggregation_summary(results: InferenceResults, links, params: AggregationParams) -> dict:
    """Network totals per average day, LGA rollups, day-class totals and row accounting."""
    links = list(links)
    n_days = len(np.unique(results.dates))
    tot = aggregate_trips(results, links, params)
    lgas = rollup_by_lga(results, links, params)
    return {
        "d_km": params.d, "gamma": params.gamma, "n_days": n_days, "n_rows": len(results),
        "n_links": len(np.unique(results.link_ids)),
        "total_km": tot["total_km"], "total_trips": tot["total_trips"],
        "km_per_day": tot["total_km"] / n_days if n_days else 0.0,
        "trips_per_day": tot["total_trips"] / n_days if n_days else 0.0,
        "by_lga_per_day": {k: {"km": v["km"] / n_days, "trips": v["trips"] / n_days} for k, v in lgas.items()},
        **weekday_weekend_totals(results, links, params),
        "elbow": results.elbow, "strategy": results.strategy, "accounting": results.accounting(),
        "n_floored": results.n_floored,
    }


__all__ = ["InferenceResult", "InferenceResults", "predict_network", "Knee", "kneedle_elbow", "mitigate",
           "AggregationParams", "DEFAULT_AGGREGATION", "aggregate_trips", "rollup_by_lga",
           "weekday_weekend_totals", "aggregation_summary", "UNASSIGNED"]
