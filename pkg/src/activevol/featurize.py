"""Assembly of the (link, date) feature matrix.

Every model consumes a :class:`FeatureMatrix`: an immutable table of named
numeric columns keyed by ``(link_id, date)``, optionally carrying the observed
count as target. Rows exist only where a third-party count exists; censored
(link, date) pairs are reported, never filled.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .datamodel import (
    CountObservation,
    LgaRecord,
    LinkRecord,
    Mode,
    StationKind,
    StationObservation,
    StationRecord,
    ThirdPartyCounts,
    ZoneRecord,
)
from .geofeatures import assign_nearest_station, zone_attributes

# thresholds of the dummy variables; comparisons are strict as worded
HOT_TMAX_C = 30.0
COLD_TMAX_C = 10.0
RAINY_PRECIP_MM = 50.0
POOR_AIR_PM25 = 10.0
LOW_VISIBILITY_NEPH = 2.3
FLAT_MAX_SLOPE_PCT = 7.5
PRE_COVID_BEFORE = np.datetime64("2020-02-01")
LOCKDOWNS = (
    (np.datetime64("2020-03-16"), np.datetime64("2020-05-15")),
    (np.datetime64("2021-06-23"), np.datetime64("2021-09-15")),
)

LINK_FEATURES = ("avg_slope_pct", "max_slope_pct", "max_slope_lt_7_5",
                 "footway", "residential", "tertiary", "dedicated_bicycle")
ZONE_FEATURES = ("population_density", "median_income", "lum_entropy", "parkland_pct")
LGA_FEATURES = ("poi_density", "pct_walk_only", "pct_walk_linked")
WEATHER_FEATURES = ("precip_mm", "tmin_c", "tmax_c", "hot_day", "cold_day", "rainy_day")
AIR_FEATURES = ("pm25", "pm10", "neph", "no", "no2", "o3", "poor_air", "low_visibility")
CALENDAR_FEATURES = ("weekday", "pre_covid", "lockdown")
THIRD_PARTY = "third_party_count"

ALL_FEATURES = (THIRD_PARTY, *LINK_FEATURES, *ZONE_FEATURES, *LGA_FEATURES,
                *WEATHER_FEATURES, *AIR_FEATURES, *CALENDAR_FEATURES)
DUMMY_FEATURES = frozenset({"max_slope_lt_7_5", "footway", "residential", "tertiary", "dedicated_bicycle",
                            "hot_day", "cold_day", "rainy_day", "poor_air", "low_visibility",
                            "weekday", "pre_covid", "lockdown"})

# station variable each daily feature is read from (dummies via their source)
STATION_SOURCE = {
    "precip_mm": ("weather", "precip_mm"), "rainy_day": ("weather", "precip_mm"),
    "tmin_c": ("weather", "tmin_c"),
    "tmax_c": ("weather", "tmax_c"), "hot_day": ("weather", "tmax_c"), "cold_day": ("weather", "tmax_c"),
    "pm25": ("air", "pm25"), "poor_air": ("air", "pm25"),
    "pm10": ("air", "pm10"), "neph": ("air", "neph"), "low_visibility": ("air", "neph"),
    "no": ("air", "no"), "no2": ("air", "no2"), "o3": ("air", "o3"),
}

FEATURE_SETS = {
    # final walking variables, in LASSO rank order
    ("walk", "final"): (
        THIRD_PARTY, "poi_density", "population_density", "pct_walk_linked", "avg_slope_pct",
        "weekday", "median_income", "precip_mm", "parkland_pct", "lum_entropy", "tmin_c",
        "tertiary", "tmax_c", "footway", "residential", "pm10",
    ),
    ("cycle", "final"): (
        THIRD_PARTY, "population_density", "max_slope_pct", "lum_entropy", "pm25", "weekday", "pre_covid",
    ),
    # candidate variables screened before the final selection
    ("walk", "initial"): (
        THIRD_PARTY, "population_density", "poi_density", "pct_walk_linked", "no", "tmin_c",
        "avg_slope_pct", "no2", "o3", "parkland_pct", "weekday", "pm10", "median_income", "pm25",
        "lum_entropy", "tertiary", "precip_mm", "neph", "residential", "tmax_c", "footway", "max_slope_pct",
    ),
    ("cycle", "initial"): (
        THIRD_PARTY, "population_density", "pm25", "neph", "avg_slope_pct", "pm10", "lum_entropy",
        "lockdown", "tmax_c", "precip_mm", "weekday", "max_slope_pct", "dedicated_bicycle", "pre_covid",
        "median_income",
    ),
}

LABELS = {
    THIRD_PARTY: {"walk": "Mobile phone-based walking count", "cycle": "Strava cycling count"},
    "avg_slope_pct": "Average slope (%)", "max_slope_pct": "Maximum slope (%)",
    "max_slope_lt_7_5": "Maximum slope below 7.5% (dummy)", "footway": "Footway links (OSM)",
    "residential": "Residential links (OSM)", "tertiary": "Tertiary links (OSM)",
    "dedicated_bicycle": "Bicycle infrastructure", "population_density": "Population density",
    "median_income": "Median personal income", "lum_entropy": "Land use mix entropy",
    "parkland_pct": "Parkland land use", "poi_density": "Place of Interest (POI) density",
    "pct_walk_only": "Percentage of walking-only trips", "pct_walk_linked": "Percentage of linked walking trips",
    "precip_mm": "Precipitation", "tmin_c": "Minimum temperature (C)", "tmax_c": "Maximum temperature (C)",
    "hot_day": "Hot day (dummy)", "cold_day": "Cold day (dummy)", "rainy_day": "Rainy day (dummy)",
    "pm25": "PM2.5", "pm10": "PM10", "neph": "NEPH", "no": "NO (nitric oxide)", "no2": "NO2 (nitrogen dioxide)",
    "o3": "O3 (ozone)", "poor_air": "Poor air quality (dummy)", "low_visibility": "Low visibility (dummy)",
    "weekday": "Weekend/Weekday", "pre_covid": "Pre-COVID", "lockdown": "COVID lockdown",
}


def feature_label(name, mode="walk"):
    label = LABELS.get(name, name)
    return label[Mode(mode).value] if isinstance(label, dict) else label


def resolve_feature_set(feature_set, mode) -> tuple[str, ...]:
    """Named set ('final', 'initial', 'all') or an explicit list of feature names."""
    mode = Mode(mode).value
    if isinstance(feature_set, str):
        if feature_set == "all":
            names = tuple(f for f in ALL_FEATURES if not (f == "dedicated_bicycle" and mode == "walk"))
        elif (mode, feature_set) in FEATURE_SETS:
            names = FEATURE_SETS[(mode, feature_set)]
        else:
            raise ValueError(f"unknown feature set {feature_set!r}")
    else:
        names = tuple(feature_set)
    unknown = [n for n in names if n not in ALL_FEATURES]
    if unknown:
        raise ValueError(f"unknown features {unknown}; known: {list(ALL_FEATURES)}")
    if len(set(names)) != len(names):
        raise ValueError("feature set has duplicate names")
    return names


def schema_hash(schema: Sequence[str]) -> str:
    return hashlib.sha256("\x1f".join(schema).encode()).hexdigest()[:16]


def _weekday_index(dates):
    """Monday=0 .. Sunday=6 for datetime64[D] values (1970-01-01 was a Thursday)."""
    return (np.asarray(dates, dtype="datetime64[D]").astype("int64") + 3) % 7


def derive_dummies(raw: Mapping) -> dict:
    """0/1 indicators from a joined per-(link, date) record.

    ``raw`` may hold scalars or equal-length arrays under any of ``tmax_c``,
    ``precip_mm``, ``pm25``, ``neph``, ``max_slope_pct`` and ``date``. Only the
    dummies whose sources are present are returned.
    """
    out = {}

    def ind(x):
        return np.asarray(x).astype(float) if np.ndim(x) else float(x)

    if "tmax_c" in raw:
        t = np.asarray(raw["tmax_c"], dtype=float)
        out["hot_day"] = ind(t > HOT_TMAX_C)
        out["cold_day"] = ind(t < COLD_TMAX_C)
    if "precip_mm" in raw:
        out["rainy_day"] = ind(np.asarray(raw["precip_mm"], dtype=float) > RAINY_PRECIP_MM)
    if "pm25" in raw:
        out["poor_air"] = ind(np.asarray(raw["pm25"], dtype=float) > POOR_AIR_PM25)
    if "neph" in raw:
        out["low_visibility"] = ind(np.asarray(raw["neph"], dtype=float) < LOW_VISIBILITY_NEPH)
    if "max_slope_pct" in raw:
        out["max_slope_lt_7_5"] = ind(np.asarray(raw["max_slope_pct"], dtype=float) < FLAT_MAX_SLOPE_PCT)
    if "date" in raw:
        d = raw["date"]
        d = np.asarray(d if not isinstance(d, dt.date) else np.datetime64(d, "D"), dtype="datetime64[D]")
        out["weekday"] = ind(_weekday_index(d) < 5)
        out["pre_covid"] = ind(d < PRE_COVID_BEFORE)
        lock = np.zeros(d.shape, dtype=bool)
        for lo, hi in LOCKDOWNS:
            lock |= (d >= lo) & (d <= hi)
        out["lockdown"] = ind(lock)
    return out


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Immutable named-column table keyed by (link_id, date)."""

    schema: tuple
    link_ids: np.ndarray
    dates: np.ndarray
    X: np.ndarray
    base_counts: np.ndarray
    target: np.ndarray | None = None
    site_ids: np.ndarray | None = None
    mode: str = "walk"

    def __post_init__(self):
        schema = tuple(self.schema)
        if len(set(schema)) != len(schema):
            raise ValueError("schema has duplicate names")
        X = np.array(self.X, dtype=np.float64, order="C").reshape(-1, len(schema))
        n = X.shape[0]
        if not np.isfinite(X).all():
            raise ValueError("feature matrix has non-finite entries")
        link_ids = np.asarray(self.link_ids, dtype=object)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        base = np.asarray(self.base_counts, dtype=float)
        if not (len(link_ids) == len(dates) == len(base) == n):
            raise ValueError("feature matrix key columns do not align with rows")
        arrays = {"schema": schema, "X": X, "link_ids": link_ids, "dates": dates, "base_counts": base}
        if self.target is not None:
            y = np.asarray(self.target, dtype=float)
            if y.shape != (n,):
                raise ValueError("target does not align 1:1 with rows")
            arrays["target"] = y
        if self.site_ids is not None:
            s = np.asarray(self.site_ids, dtype=object)
            if s.shape != (n,):
                raise ValueError("site_ids do not align with rows")
            arrays["site_ids"] = s
        for k, v in arrays.items():
            if isinstance(v, np.ndarray):
                v.setflags(write=False)
            object.__setattr__(self, k, v)
        object.__setattr__(self, "mode", Mode(self.mode).value)

    def __len__(self):
        return self.X.shape[0]

    @property
    def schema_hash(self):
        return schema_hash(self.schema)

    @property
    def n_features(self):
        return len(self.schema)

    def column(self, name):
        return self.X[:, self.schema.index(name)]

    def take(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx)
        return FeatureMatrix(
            schema=self.schema, link_ids=self.link_ids[idx], dates=self.dates[idx], X=self.X[idx],
            base_counts=self.base_counts[idx],
            target=None if self.target is None else self.target[idx],
            site_ids=None if self.site_ids is None else self.site_ids[idx], mode=self.mode,
        )

    def select(self, names) -> "FeatureMatrix":
        idx = [self.schema.index(n) for n in names]
        return dataclasses.replace(self, schema=tuple(names), X=self.X[:, idx])

    def digest(self) -> str:
        """Hash over schema, keys and every numeric byte."""
        h = hashlib.sha256()
        h.update(self.schema_hash.encode())
        h.update("\x1f".join(self.link_ids.tolist()).encode())
        h.update(self.dates.astype("int64").tobytes())
        h.update(self.X.tobytes())
        h.update(self.base_counts.tobytes())
        if self.target is not None:
            h.update(self.target.tobytes())
        if self.site_ids is not None:
            h.update("\x1f".join(self.site_ids.tolist()).encode())
        return h.hexdigest()

    def to_frame(self) -> pd.DataFrame:
        cols = {"link_id": self.link_ids, "date": np.datetime_as_string(self.dates, unit="D")}
        if self.site_ids is not None:
            cols["site_id"] = self.site_ids
        if self.target is not None:
            cols["observed_count"] = self.target
        cols["base_count"] = self.base_counts
        for j, name in enumerate(self.schema):
            cols[name] = self.X[:, j]
        return pd.DataFrame(cols)

    def to_csv(self, path):
        """Audit export: a ``# mode=..;schema_hash=..`` line, then the key and feature columns."""
        path = Path(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# mode={self.mode};schema_hash={self.schema_hash}\n")
            self.to_frame().to_csv(fh, index=False, lineterminator="\n", float_format="%.17g")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().strip()
            meta = dict(kv.split("=", 1) for kv in first.lstrip("# ").split(";"))
            df = pd.read_csv(fh, dtype={"link_id": str, "site_id": str, "date": str}, keep_default_na=False,
                             float_precision="round_trip")
        key_cols = {"link_id", "date", "site_id", "observed_count", "base_count"}
        schema = tuple(c for c in df.columns if c not in key_cols)
        m = cls(
            schema=schema,
            link_ids=df["link_id"].to_numpy(dtype=object),
            dates=df["date"].to_numpy().astype("datetime64[D]"),
            X=df[list(schema)].to_numpy(dtype=float),
            base_counts=df["base_count"].to_numpy(dtype=float),
            target=df["observed_count"].to_numpy(dtype=float) if "observed_count" in df else None,
            site_ids=df["site_id"].to_numpy(dtype=object) if "site_id" in df else None,
            mode=meta.get("mode", "walk"),
        )
        if "schema_hash" in meta and meta["schema_hash"] != m.schema_hash:
            raise ValueError(f"{path}: schema_hash mismatch")
        return m


@dataclass
class BuildReport:
    mode: str
    purpose: str
    schema: list
    schema_hash: str
    n_rows: int
    imputation: dict = field(default_factory=dict)
    imputed_cells: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    inference: dict = field(default_factory=dict)
    unassigned: dict = field(default_factory=dict)
    negative_pollutant_cells: int = 0

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _station_grid(obs, kind, var, station_ids, day0, n_days, window):
    """Dense (station, day) grid of one variable after imputation.

    Returns (values, imputed_mask). Gaps are filled by carrying the last value
    forward for at most ``window`` days, then by the station's mean over all
    its readings, then by the mean across stations of that kind.
    """
    index = {s: i for i, s in enumerate(station_ids)}
    raw = np.full((len(station_ids), n_days), np.nan)
    for o in obs:
        if o.kind.value != kind:
            continue
        v = o.values.get(var)
        if v is None and var == "tmax_c":
            v = o.values.get("temp_c")
        if v is None:
            continue
        i = index.get(o.station_id)
        if i is None:
            continue
        d = (np.datetime64(o.date, "D") - day0).astype(int)
        if 0 <= d < n_days:
            raw[i, d] = v
    missing = np.isnan(raw)
    filled = pd.DataFrame(raw.T).ffill(limit=window).to_numpy().T if window > 0 else raw.copy()
    with np.errstate(invalid="ignore"):
        counts = (~missing).sum(axis=1)
        station_mean = np.where(counts > 0, np.nansum(raw, axis=1) / np.maximum(counts, 1), np.nan)
    if np.isnan(station_mean).all():
        return None, None
    global_mean = np.nanmean(station_mean)
    station_mean = np.where(np.isnan(station_mean), global_mean, station_mean)
    gaps = np.isnan(filled)
    filled[gaps] = np.broadcast_to(station_mean[:, None], filled.shape)[gaps]
    return filled, missing


def build_matrix(
    links: Sequence[LinkRecord],
    zones: Sequence[ZoneRecord],
    lgas: Sequence[LgaRecord],
    station_obs: Sequence[StationObservation],
    third_party: ThirdPartyCounts,
    mode,
    *,
    counts: Sequence[CountObservation] | None = None,
    dates=None,
    link_ids=None,
    feature_set="final",
    stations: Sequence[StationRecord] | None = None,
    imputation_window_days: int = 7,
) -> tuple[FeatureMatrix, BuildReport]:
    """Join every source into a FeatureMatrix.

    Training mode (``counts`` given): one row per count observation whose link
    has a third-party count that day; target = observed count. Inference mode:
    one row per requested (link, date) with a third-party count; ``dates``
    defaults to every date in the third-party table. Rows are sorted by
    link_id, then date.
    """
    mode = Mode(mode)
    schema = resolve_feature_set(feature_set, mode)
    links = sorted(links, key=lambda l: l.link_id)
    link_index = {l.link_id: i for i, l in enumerate(links)}
    if stations:
        if any(l.weather_station_id is None for l in links) and any(s.kind is StationKind.WEATHER for s in stations):
            links = assign_nearest_station(links, stations, StationKind.WEATHER)
        if any(l.air_station_id is None for l in links) and any(s.kind is StationKind.AIR for s in stations):
            links = assign_nearest_station(links, stations, StationKind.AIR)

    tp = third_party.lookup()
    report = BuildReport(mode=mode.value, purpose="training" if counts is not None else "inference",
                         schema=list(schema), schema_hash=schema_hash(schema), n_rows=0,
                         imputation={"carry_forward_days": imputation_window_days,
                                     "fallback": "station historical mean, then mean across stations"})

    if counts is not None:
        rows = []
        no_link = censored = 0
        for c in counts:
            if c.mode is not mode:
                continue
            if c.link_id not in link_index:
                no_link += 1
                continue
            day = np.datetime64(c.date, "D")
            base = c.third_party_count
            if base is None:
                base = tp.get((c.link_id, int(day.astype("int64"))))
            if base is None:
                censored += 1
                continue
            rows.append((c.link_id, day, c.site_id, float(c.observed_count), float(base)))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        seen = set()
        for r in rows:
            if (r[0], r[1]) in seen:
                raise ValueError(f"two count sites on link {r[0]} for {r[1]}; training rows must be unique per (link, date)")
            seen.add((r[0], r[1]))
        report.training = {"count_observations": sum(1 for c in counts if c.mode is mode),
                           "joined_rows": len(rows), "censored_no_third_party": censored,
                           "unknown_link": no_link}
        row_link = np.array([link_index[r[0]] for r in rows], dtype=np.int64)
        row_date = np.array([r[1] for r in rows], dtype="datetime64[D]")
        row_site = np.array([r[2] for r in rows], dtype=object)
        target = np.array([r[3] for r in rows], dtype=float)
        base = np.array([r[4] for r in rows], dtype=float)
    else:
        wanted_links = sorted(set(link_ids) if link_ids is not None else link_index)
        unknown = [l for l in wanted_links if l not in link_index]
        if unknown:
            raise ValueError(f"requested links not in the network: {unknown[:5]}")
        if dates is None:
            req_dates = np.unique(third_party.dates)
        else:
            req_dates = np.unique(np.asarray([np.datetime64(d, "D") for d in dates], dtype="datetime64[D]"))
        tp_frame = pd.DataFrame({"l": third_party.link_ids, "d": third_party.dates.astype("int64"),
                                 "c": third_party.counts})
        tp_frame = tp_frame[tp_frame["l"].isin(set(wanted_links)) & tp_frame["d"].isin(set(req_dates.astype("int64").tolist()))]
        tp_frame = tp_frame.sort_values(["l", "d"], kind="stable")
        requested = len(wanted_links) * len(req_dates)
        covered = set(tp_frame["l"].unique().tolist())
        report.inference = {"requested_pairs": requested, "rows_with_third_party": int(len(tp_frame)),
                            "no_data_pairs": requested - int(len(tp_frame)),
                            "no_data_links": [l for l in wanted_links if l not in covered],
                            "dates": [str(d) for d in req_dates]}
        row_link = np.array([link_index[l] for l in tp_frame["l"].tolist()], dtype=np.int64)
        row_date = tp_frame["d"].to_numpy().astype("datetime64[D]")
        row_site = None
        target = None
        base = tp_frame["c"].to_numpy(dtype=float)

    n = len(row_link)
    report.n_rows = n
    cols: dict[str, np.ndarray] = {}
    imputed: dict[str, int] = {}

    # link-level static features
    if any(f in schema for f in LINK_FEATURES):
        avg = np.array([l.avg_slope_pct for l in links])
        mx = np.array([l.max_slope_pct for l in links])
        static = {"avg_slope_pct": avg, "max_slope_pct": mx,
                  "max_slope_lt_7_5": derive_dummies({"max_slope_pct": mx})["max_slope_lt_7_5"]}
        for t in ("footway", "residential", "tertiary", "dedicated_bicycle"):
            static[t] = np.array([float(t in l.tags) for l in links])
        for f in LINK_FEATURES:
            if f in schema:
                cols[f] = static[f][row_link]

    # zone and LGA features; unassigned links take the mean over known zones
    if any(f in schema for f in ZONE_FEATURES):
        attrs = zone_attributes(zones)
        unassigned = [l.link_id for l in links if l.zone_id not in attrs]
        report.unassigned["zone"] = len(unassigned)
        for f in ZONE_FEATURES:
            if f not in schema:
                continue
            known = np.array([a[f] for a in attrs.values()], dtype=float)
            known = known[np.isfinite(known)]
            if known.size == 0:
                raise ValueError(f"feature {f!r} has no upstream source (no zone provides it)")
            fill = float(known.mean())
            per_link = np.array([attrs.get(l.zone_id, {}).get(f, np.nan) for l in links], dtype=float)
            gap = ~np.isfinite(per_link)
            per_link[gap] = fill
            cols[f] = per_link[row_link]
            imputed[f] = int(gap[row_link].sum())
    if any(f in schema for f in LGA_FEATURES):
        by_id = {g.lga_id: g for g in lgas}
        report.unassigned["lga"] = sum(1 for l in links if l.lga_id not in by_id)
        for f in LGA_FEATURES:
            if f not in schema:
                continue
            if not by_id:
                raise ValueError(f"feature {f!r} has no upstream source (no LGA records)")

            def value(g):
                return g.poi_density if f == "poi_density" else 100.0 * getattr(g, f)

            fill = float(np.mean([value(g) for g in by_id.values()]))
            per_link = np.array([value(by_id[l.lga_id]) if l.lga_id in by_id else np.nan for l in links])
            gap = np.isnan(per_link)
            per_link[gap] = fill
            cols[f] = per_link[row_link]
            imputed[f] = int(gap[row_link].sum())

    # daily station features
    daily = [f for f in schema if f in STATION_SOURCE]
    if daily:
        obs_days = [np.datetime64(o.date, "D") for o in station_obs]
        lo = min(obs_days + ([row_date.min()] if n else []))
        hi = max(obs_days + ([row_date.max()] if n else []))
        n_days = int((hi - lo).astype(int)) + 1
        day_idx = (row_date - lo).astype(np.int64)
        grids = {}
        for f in daily:
            kind, var = STATION_SOURCE[f]
            attr = "weather_station_id" if kind == "weather" else "air_station_id"
            ids = sorted({getattr(l, attr) for l in links if getattr(l, attr) is not None})
            if any(getattr(l, attr) is None for l in links):
                raise ValueError(f"feature {f!r} has no upstream source: some links have no {kind} station")
            if (kind, var) not in grids:
                vals, missing = _station_grid(station_obs, kind, var, ids, lo, n_days, imputation_window_days)
                if vals is None:
                    raise ValueError(f"feature {f!r} has no upstream source: no {kind} station reports {var}")
                sidx = np.array([ids.index(getattr(l, attr)) for l in links], dtype=np.int64)
                grids[(kind, var)] = (vals, missing, sidx)
            vals, missing, sidx = grids[(kind, var)]
            s = sidx[row_link]
            v = vals[s, day_idx]
            imputed[f] = int(missing[s, day_idx].sum())
            if f == var or (f == "tmax_c" and var == "tmax_c"):
                cols[f] = v
            else:
                src = {"rainy_day": "precip_mm", "hot_day": "tmax_c", "cold_day": "tmax_c",
                       "poor_air": "pm25", "low_visibility": "neph"}[f]
                cols[f] = derive_dummies({src: v})[f]
            if var in ("pm25", "pm10", "neph", "no", "no2", "o3") and f == var:
                report.negative_pollutant_cells += int((v < 0).sum())

    if any(f in schema for f in CALENDAR_FEATURES):
        cal = derive_dummies({"date": row_date})
        for f in CALENDAR_FEATURES:
            if f in schema:
                cols[f] = cal[f]
    if THIRD_PARTY in schema:
        cols[THIRD_PARTY] = base

    X = np.column_stack([cols[f] for f in schema]) if n else np.empty((0, len(schema)))
    report.imputed_cells = {f: imputed[f] for f in schema if imputed.get(f)}
    link_arr = np.array([links[i].link_id for i in row_link], dtype=object)
    matrix = FeatureMatrix(schema=schema, link_ids=link_arr, dates=row_date, X=X, base_counts=base,
                           target=target, site_ids=row_site, mode=mode.value)
    return matrix, report
