"""Record types, file ingestion and descriptive statistics for raw inputs.

Links come as a GeoJSON FeatureCollection of LineStrings or as CSV with a WKT
``geometry`` column. Every other table is CSV with a header row and ISO-8601
dates. Any path ending in ``.gz`` is read and written gzip-compressed.

Missing values are represented by absence (an empty CSV cell, a key missing
from a mapping, ``None``), never by a numeric sentinel.
"""

from __future__ import annotations

import datetime as dt
import gzip
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from ._geo import polyline_length_m

log = logging.getLogger(__name__)


class Mode(str, Enum):
    WALK = "walk"
    CYCLE = "cycle"


class StationKind(str, Enum):
    WEATHER = "weather"
    AIR = "air"


LINK_TAGS = ("footway", "residential", "tertiary", "dedicated_bicycle")
WEATHER_VARS = ("precip_mm", "tmin_c", "tmax_c", "temp_c")
AIR_VARS = ("pm25", "pm10", "neph", "no", "no2", "o3")
STATION_VARS = WEATHER_VARS + AIR_VARS
POLLUTANTS = frozenset(AIR_VARS)


class ParseError(ValueError):
    """A malformed input row. ``row`` is the 1-based data row (header excluded)."""

    def __init__(self, path, row, message):
        self.path = str(path)
        self.row = row
        where = f"{self.path}, row {row}" if row is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class IngestReport:
    """Accounting for a lenient load: ``accepted + len(rejected) == total``."""

    total: int = 0
    accepted: int = 0
    rejected: list = field(default_factory=list)
    warnings: dict = field(default_factory=dict)

    def warn(self, key, n=1):
        self.warnings[key] = self.warnings.get(key, 0) + n


@dataclass(frozen=True)
class LinkRecord:
    link_id: str
    mode: Mode
    length_m: float
    geometry: tuple
    avg_slope_pct: float = 0.0
    max_slope_pct: float = 0.0
    tags: frozenset = frozenset()
    zone_id: str | None = None
    lga_id: str | None = None
    weather_station_id: str | None = None
    air_station_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "geometry", tuple((float(x), float(y)) for x, y in self.geometry))
        object.__setattr__(self, "tags", frozenset(self.tags))
        if not self.link_id:
            raise ValueError("empty link_id")
        if not (math.isfinite(self.length_m) and self.length_m > 0):
            raise ValueError(f"link {self.link_id}: length_m must be > 0, got {self.length_m}")
        if len(self.geometry) < 2:
            raise ValueError(f"link {self.link_id}: geometry needs at least 2 points")
        for lon, lat in self.geometry:
            if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
                raise ValueError(f"link {self.link_id}: coordinate ({lon}, {lat}) out of range")
        if not (0.0 <= self.avg_slope_pct <= self.max_slope_pct):
            raise ValueError(
                f"link {self.link_id}: need 0 <= avg_slope_pct <= max_slope_pct, "
                f"got {self.avg_slope_pct}, {self.max_slope_pct}"
            )
        unknown = self.tags - set(LINK_TAGS)
        if unknown:
            raise ValueError(f"link {self.link_id}: unknown tags {sorted(unknown)}")
        if "dedicated_bicycle" in self.tags and self.mode is not Mode.CYCLE:
            raise ValueError(f"link {self.link_id}: dedicated_bicycle tag on a {self.mode.value} link")

    @property
    def length_km(self):
        return self.length_m / 1000.0


@dataclass(frozen=True)
class ZoneRecord:
    zone_id: str
    area_sqkm: float
    population: float
    median_weekly_income_aud: float
    land_use_areas: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.area_sqkm > 0:
            raise ValueError(f"zone {self.zone_id}: area_sqkm must be > 0")
        if self.population < 0 or self.median_weekly_income_aud < 0:
            raise ValueError(f"zone {self.zone_id}: population and income must be >= 0")
        for name, area in self.land_use_areas.items():
            if not area >= 0:
                raise ValueError(f"zone {self.zone_id}: land-use area {name!r} must be >= 0")
        object.__setattr__(self, "land_use_areas", dict(sorted(self.land_use_areas.items())))

    @property
    def population_density(self):
        return self.population / self.area_sqkm


@dataclass(frozen=True)
class LgaRecord:
    lga_id: str
    area_sqkm: float
    poi_count: float
    pct_walk_only: float
    pct_walk_linked: float

    def __post_init__(self):
        if not self.area_sqkm > 0:
            raise ValueError(f"LGA {self.lga_id}: area_sqkm must be > 0")
        if self.poi_count < 0:
            raise ValueError(f"LGA {self.lga_id}: poi_count must be >= 0")
        for name in ("pct_walk_only", "pct_walk_linked"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"LGA {self.lga_id}: {name} must be a fraction in [0, 1], got {v}")

    @property
    def poi_density(self):
        return self.poi_count / self.area_sqkm


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    kind: StationKind
    lon: float
    lat: float

    def __post_init__(self):
        object.__setattr__(self, "kind", StationKind(self.kind))


@dataclass(frozen=True)
class StationObservation:
    station_id: str
    kind: StationKind
    date: dt.date
    values: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "kind", StationKind(self.kind))
        unknown = set(self.values) - set(STATION_VARS)
        if unknown:
            raise ValueError(f"station {self.station_id}: unknown variables {sorted(unknown)}")
        for k, v in self.values.items():
            if not math.isfinite(v):
                raise ValueError(f"station {self.station_id} {self.date}: {k} is not finite")
        if self.values.get("precip_mm", 0.0) < 0:
            raise ValueError(f"station {self.station_id} {self.date}: negative precipitation")

    @property
    def negative_pollutants(self):
        return sorted(k for k, v in self.values.items() if k in POLLUTANTS and v < 0)


@dataclass(frozen=True)
class CountObservation:
    site_id: str
    link_id: str
    date: dt.date
    mode: Mode
    observed_count: float
    third_party_count: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not (math.isfinite(self.observed_count) and self.observed_count >= 0):
            raise ValueError(f"site {self.site_id} {self.date}: observed_count must be >= 0")
        tp = self.third_party_count
        if tp is not None and not (math.isfinite(tp) and tp >= 0):
            raise ValueError(f"site {self.site_id} {self.date}: third_party_count must be >= 0")


@dataclass(frozen=True)
class ThirdPartyCounts:
    """Columnar table of daily third-party counts; censored (link, date) pairs are absent."""

    mode: Mode
    link_ids: np.ndarray
    dates: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        link_ids = np.asarray(self.link_ids, dtype=object)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        counts = np.asarray(self.counts, dtype=float)
        if not (len(link_ids) == len(dates) == len(counts)):
            raise ValueError("third-party columns differ in length")
        if len(counts) and not (np.isfinite(counts).all() and (counts >= 0).all()):
            raise ValueError("third-party counts must be finite and >= 0")
        for a in (link_ids, dates, counts):
            a.setflags(write=False)
        object.__setattr__(self, "link_ids", link_ids)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return len(self.counts)

    def lookup(self):
        """Mapping (link_id, numpy day) -> count."""
        return dict(zip(zip(self.link_ids.tolist(), self.dates.astype("int64").tolist()), self.counts.tolist()))


@dataclass(frozen=True)
class DescriptiveStats:
    n: int
    min: float
    mean: float
    median: float
    max: float
    std: float


def descriptive_stats(values) -> DescriptiveStats:
    """Min, mean, median, max and population standard deviation (divides by N)."""
    a = np.asarray(values, dtype=float).ravel()
    if a.size == 0:
        raise ValueError("descriptive_stats needs at least one value")
    if not np.isfinite(a).all():
        raise ValueError("descriptive_stats got non-finite values")
    a = np.sort(a)
    return DescriptiveStats(
        n=int(a.size),
        min=float(a[0]),
        mean=float(a.mean()),
        median=float(np.median(a)),
        max=float(a[-1]),
        std=float(a.std(ddof=0)),
    )


def describe_table(columns: Mapping[str, Sequence[float]]) -> pd.DataFrame:
    """Descriptive statistics per named column, one row each (population std)."""
    rows = []
    for name, values in columns.items():
        s = descriptive_stats(values)
        rows.append({"variable": name, "n": s.n, "min": s.min, "mean": s.mean,
                     "median": s.median, "max": s.max, "std_population": s.std})
    return pd.DataFrame(rows, columns=["variable", "n", "min", "mean", "median", "max", "std_population"])


# --------------------------------------------------------------------------- io


def _open_text(path, mode="rt"):
    path = Path(path)
    newline = "" if "w" in mode else None
    if path.suffix == ".gz":
        if "w" in mode:
            # mtime=0 keeps compressed output byte-stable across runs
            raw = gzip.GzipFile(path, "wb", compresslevel=1, mtime=0)
            return io.TextIOWrapper(raw, encoding="utf-8", newline=newline)
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline=newline)


def _is_geojson(path):
    name = Path(path).name.lower()
    if name.endswith(".gz"):
        name = name[:-3]
    return name.endswith(".geojson") or name.endswith(".json")


def _read_csv(path, required):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, compression="infer", encoding="utf-8")
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ParseError(path, None, f"missing required columns {missing}")
    return df


def _num(path, row, name, text, *, required=True):
    text = text.strip()
    if text == "":
        if required:
            raise ParseError(path, row, f"{name} is empty")
        return None
    try:
        v = float(text)
    except ValueError:
        raise ParseError(path, row, f"{name}={text!r} is not a number") from None
    if not math.isfinite(v):
        raise ParseError(path, row, f"{name}={text!r} is not finite")
    return v


def _date(path, row, text):
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(path, row, f"date {text!r} is not ISO-8601 (YYYY-MM-DD)") from None


def _bool(text):
    return text.strip().lower() in ("1", "true", "yes", "t", "y")


def _opt(text):
    text = (text or "").strip()
    return text or None


def _collect(report, path, rows):
    """Run row parsers; raise on the first failure unless a report collects them."""
    out = []
    for row, parse in rows:
        if report is not None:
            report.total += 1
        try:
            rec = parse()
        except ParseError as exc:
            if report is None:
                raise
            report.rejected.append((row, str(exc)))
            continue
        except ValueError as exc:
            err = ParseError(path, row, str(exc))
            if report is None:
                raise err from None
            report.rejected.append((row, str(err)))
            continue
        out.append(rec)
        if report is not None:
            report.accepted += 1
    return out


def _parse_wkt_linestring(text):
    import shapely.wkt
    from shapely.errors import ShapelyError

    try:
        geom = shapely.wkt.loads(text)
    except (ShapelyError, ValueError) as exc:
        raise ValueError(f"bad WKT geometry: {exc}") from None
    if geom.geom_type != "LineString":
        raise ValueError(f"geometry must be a LineString, got {geom.geom_type}")
    return [(float(x), float(y)) for x, y, *_ in geom.coords]


def _link_from_props(props, coords, mode):
    link_mode = props.get("mode") or mode
    if mode is not None and Mode(link_mode) is not Mode(mode):
        raise ValueError(f"link {props.get('link_id')}: mode {link_mode} but loading {Mode(mode).value}")
    length = props.get("length_m")
    if length in (None, ""):
        if len(coords) < 2:
            raise ValueError("geometry needs at least 2 points")
        length = polyline_length_m(coords)
    avg = props.get("avg_slope_pct")
    mx = props.get("max_slope_pct")
    tags = frozenset(t for t in LINK_TAGS if _bool(str(props.get(t, ""))))
    return LinkRecord(
        link_id=str(props.get("link_id") or ""),
        mode=link_mode,
        length_m=float(length),
        geometry=coords,
        avg_slope_pct=float(avg) if avg not in (None, "") else 0.0,
        max_slope_pct=float(mx) if mx not in (None, "") else 0.0,
        tags=tags,
        zone_id=_opt(props.get("zone_id")),
        lga_id=_opt(props.get("lga_id")),
        weather_station_id=_opt(props.get("weather_station_id")),
        air_station_id=_opt(props.get("air_station_id")),
    )


def load_links(path, mode=None, *, report: IngestReport | None = None) -> list[LinkRecord]:
    """Read a link network from GeoJSON or CSV+WKT.

    ``length_m`` is computed along the polyline (haversine) when the column is
    absent or empty. Duplicate ``link_id`` values are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if _is_geojson(path):
        with _open_text(path) as fh:
            doc = json.load(fh)
        if doc.get("type") != "FeatureCollection":
            raise ParseError(path, None, "expected a GeoJSON FeatureCollection")

        def parser(feat):
            geom = feat.get("geometry") or {}
            if geom.get("type") != "LineString":
                raise ValueError(f"geometry must be a LineString, got {geom.get('type')}")
            coords = [(float(p[0]), float(p[1])) for p in geom.get("coordinates", [])]
            return _link_from_props(feat.get("properties") or {}, coords, mode)

        items = [(i + 1, (lambda f=f: parser(f))) for i, f in enumerate(doc.get("features", []))]
    else:
        df = _read_csv(path, ["link_id", "geometry"])
        records = df.to_dict("records")
        items = [
            (i + 1, (lambda r=r: _link_from_props(r, _parse_wkt_linestring(r["geometry"]), mode)))
            for i, r in enumerate(records)
        ]

    seen = set()

    def unique(row, parse):
        def run():
            rec = parse()
            if rec.link_id in seen:
                raise ParseError(path, row, f"duplicate link_id {rec.link_id!r}")
            seen.add(rec.link_id)
            return rec
        return run

    return _collect(report, path, [(row, unique(row, p)) for row, p in items])


def load_zones(path, *, report: IngestReport | None = None) -> list[ZoneRecord]:
    df = _read_csv(path, ["zone_id", "area_sqkm", "population", "median_weekly_income_aud"])
    lu_cols = [c for c in df.columns if c.startswith("lu_")]
    seen = set()

    def parse(i, r):
        zid = r["zone_id"].strip()
        if zid in seen:
            raise ParseError(path, i, f"duplicate zone_id {zid!r}")
        lu = {}
        for c in lu_cols:
            v = _num(path, i, c, r[c], required=False)
            if v is not None:
                lu[c[3:]] = v
        rec = ZoneRecord(
            zone_id=zid,
            area_sqkm=_num(path, i, "area_sqkm", r["area_sqkm"]),
            population=_num(path, i, "population", r["population"]),
            median_weekly_income_aud=_num(path, i, "median_weekly_income_aud", r["median_weekly_income_aud"]),
            land_use_areas=lu,
        )
        seen.add(zid)
        return rec

    return _collect(report, path, [(i + 1, (lambda i=i + 1, r=r: parse(i, r))) for i, r in enumerate(df.to_dict("records"))])


def load_lgas(path, *, report: IngestReport | None = None) -> list[LgaRecord]:
    df = _read_csv(path, ["lga_id", "area_sqkm", "poi_count", "pct_walk_only", "pct_walk_linked"])
    seen = set()

    def parse(i, r):
        lid = r["lga_id"].strip()
        if lid in seen:
            raise ParseError(path, i, f"duplicate lga_id {lid!r}")
        rec = LgaRecord(
            lga_id=lid,
            area_sqkm=_num(path, i, "area_sqkm", r["area_sqkm"]),
            poi_count=_num(path, i, "poi_count", r["poi_count"]),
            pct_walk_only=_num(path, i, "pct_walk_only", r["pct_walk_only"]),
            pct_walk_linked=_num(path, i, "pct_walk_linked", r["pct_walk_linked"]),
        )
        seen.add(lid)
        return rec

    return _collect(report, path, [(i + 1, (lambda i=i + 1, r=r: parse(i, r))) for i, r in enumerate(df.to_dict("records"))])


def load_stations(path, *, report: IngestReport | None = None) -> list[StationRecord]:
    df = _read_csv(path, ["station_id", "kind", "lon", "lat"])
    seen = set()

    def parse(i, r):
        key = (r["station_id"].strip(), r["kind"].strip())
        if key in seen:
            raise ParseError(path, i, f"duplicate station {key}")
        rec = StationRecord(key[0], key[1], _num(path, i, "lon", r["lon"]), _num(path, i, "lat", r["lat"]))
        seen.add(key)
        return rec

    return _collect(report, path, [(i + 1, (lambda i=i + 1, r=r: parse(i, r))) for i, r in enumerate(df.to_dict("records"))])


def load_station_observations(path, *, report: IngestReport | None = None) -> list[StationObservation]:
    """Daily station readings; empty cells are absent values.

    Negative pollutant readings are kept and counted under
    ``report.warnings['negative_pollutant']`` (and logged).
    """
    df = _read_csv(path, ["station_id", "kind", "date"])
    var_cols = [c for c in STATION_VARS if c in df.columns]
    seen = set()
    negatives = 0

    def parse(i, r):
        nonlocal negatives
        values = {}
        for c in var_cols:
            v = _num(path, i, c, r[c], required=False)
            if v is not None:
                values[c] = v
        obs = StationObservation(r["station_id"].strip(), r["kind"].strip(), _date(path, i, r["date"]), values)
        key = (obs.station_id, obs.kind, obs.date)
        if key in seen:
            raise ParseError(path, i, f"duplicate station observation {obs.station_id} {obs.date}")
        seen.add(key)
        if obs.negative_pollutants:
            negatives += 1
        return obs

    out = _collect(report, path, [(i + 1, (lambda i=i + 1, r=r: parse(i, r))) for i, r in enumerate(df.to_dict("records"))])
    if negatives:
        log.warning("%s: %d observations carry negative pollutant readings (kept)", path, negatives)
        if report is not None:
            report.warn("negative_pollutant", negatives)
    return out


def load_counts(path, mode=None, *, require_integer=True, report: IngestReport | None = None) -> list[CountObservation]:
    """Official counts paired with the third-party count for the same link and day.

    ``(site_id, date)`` must be unique per mode.
    """
    df = _read_csv(path, ["site_id", "link_id", "date", "mode", "observed_count"])
    has_tp = "third_party_count" in df.columns
    seen = set()

    def parse(i, r):
        obs = CountObservation(
            site_id=r["site_id"].strip(),
            link_id=r["link_id"].strip(),
            date=_date(path, i, r["date"]),
            mode=r["mode"].strip(),
            observed_count=_num(path, i, "observed_count", r["observed_count"]),
            third_party_count=_num(path, i, "third_party_count", r["third_party_count"], required=False) if has_tp else None,
        )
        if mode is not None and obs.mode is not Mode(mode):
            raise ParseError(path, i, f"mode {obs.mode.value} but loading {Mode(mode).value}")
        if require_integer and obs.observed_count != round(obs.observed_count):
            raise ParseError(path, i, f"observed_count {obs.observed_count} is not integer-valued")
        key = (obs.site_id, obs.date, obs.mode)
        if key in seen:
            raise ParseError(path, i, f"duplicate (site_id, date) {obs.site_id} {obs.date}")
        seen.add(key)
        return obs

    return _collect(report, path, [(i + 1, (lambda i=i + 1, r=r: parse(i, r))) for i, r in enumerate(df.to_dict("records"))])


def load_third_party(path, mode) -> ThirdPartyCounts:
    """Columnar loader for the (possibly large) daily third-party count table."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, dtype={"link_id": str, "date": str}, keep_default_na=False, compression="infer",
                     float_precision="round_trip")
    for c in ("link_id", "date", "count"):
        if c not in df.columns:
            raise ParseError(path, None, f"missing required column {c!r}")
    counts = pd.to_numeric(df["count"], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(counts) | (counts < 0))
    if bad.size:
        raise ParseError(path, int(bad[0]) + 1, f"count={df['count'].iloc[bad[0]]!r} must be a number >= 0")
    dates = pd.to_datetime(df["date"], format="%Y-%m-%d", errors="coerce")
    bad = np.flatnonzero(dates.isna().to_numpy())
    if bad.size:
        raise ParseError(path, int(bad[0]) + 1, f"date {df['date'].iloc[bad[0]]!r} is not ISO-8601")
    if "mode" in df.columns:
        wrong = np.flatnonzero(df["mode"].to_numpy() != Mode(mode).value)
        if wrong.size:
            raise ParseError(path, int(wrong[0]) + 1, f"mode {df['mode'].iloc[wrong[0]]!r} but loading {Mode(mode).value}")
    keys = pd.DataFrame({"l": df["link_id"], "d": df["date"]})
    dup = np.flatnonzero(keys.duplicated().to_numpy())
    if dup.size:
        raise ParseError(path, int(dup[0]) + 1, f"duplicate (link_id, date) {df['link_id'].iloc[dup[0]]} {df['date'].iloc[dup[0]]}")
    return ThirdPartyCounts(
        mode=mode,
        link_ids=df["link_id"].to_numpy(dtype=object),
        dates=dates.to_numpy().astype("datetime64[D]"),
        counts=counts,
    )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    import csv

    with _open_text(path, "wt") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_links(path, links: Iterable[LinkRecord]):
    """Write links as GeoJSON (``.geojson``/``.json``) or CSV with WKT geometry."""
    links = list(links)
    if _is_geojson(path):
        feats = []
        for l in links:
            props = {
                "link_id": l.link_id, "mode": l.mode.value, "length_m": l.length_m,
                "avg_slope_pct": l.avg_slope_pct, "max_slope_pct": l.max_slope_pct,
                **{t: t in l.tags for t in LINK_TAGS},
                "zone_id": l.zone_id, "lga_id": l.lga_id,
                "weather_station_id": l.weather_station_id, "air_station_id": l.air_station_id,
            }
            feats.append({"type": "Feature", "properties": props,
                          "geometry": {"type": "LineString", "coordinates": [list(p) for p in l.geometry]}})
        with _open_text(path, "wt") as fh:
            json.dump({"type": "FeatureCollection", "features": feats}, fh)
        return
    header = ["link_id", "mode", "length_m", "avg_slope_pct", "max_slope_pct", *LINK_TAGS,
              "zone_id", "lga_id", "weather_station_id", "air_station_id", "geometry"]
    rows = []
    for l in links:
        wkt = "LINESTRING (" + ", ".join(f"{x!r} {y!r}" for x, y in l.geometry) + ")"
        rows.append([l.link_id, l.mode.value, l.length_m, l.avg_slope_pct, l.max_slope_pct,
                     *[int(t in l.tags) for t in LINK_TAGS],
                     l.zone_id, l.lga_id, l.weather_station_id, l.air_station_id, wkt])
    _write_csv(path, header, rows)


def write_zones(path, zones: Iterable[ZoneRecord]):
    zones = list(zones)
    classes = sorted({c for z in zones for c in z.land_use_areas})
    header = ["zone_id", "area_sqkm", "population", "median_weekly_income_aud", *[f"lu_{c}" for c in classes]]
    _write_csv(path, header, [
        [z.zone_id, z.area_sqkm, z.population, z.median_weekly_income_aud, *[z.land_use_areas.get(c) for c in classes]]
        for z in zones
    ])


def write_lgas(path, lgas: Iterable[LgaRecord]):
    _write_csv(path, ["lga_id", "area_sqkm", "poi_count", "pct_walk_only", "pct_walk_linked"],
               [[g.lga_id, g.area_sqkm, g.poi_count, g.pct_walk_only, g.pct_walk_linked] for g in lgas])


def write_stations(path, stations: Iterable[StationRecord]):
    _write_csv(path, ["station_id", "kind", "lon", "lat"],
               [[s.station_id, s.kind.value, s.lon, s.lat] for s in stations])


def write_station_observations(path, observations: Iterable[StationObservation]):
    _write_csv(path, ["station_id", "kind", "date", *STATION_VARS],
               [[o.station_id, o.kind.value, o.date.isoformat(), *[o.values.get(v) for v in STATION_VARS]]
                for o in observations])


def write_counts(path, counts: Iterable[CountObservation]):
    _write_csv(path, ["site_id", "link_id", "date", "mode", "observed_count", "third_party_count"],
               [[c.site_id, c.link_id, c.date.isoformat(), c.mode.value, c.observed_count, c.third_party_count]
                for c in counts])


def write_third_party(path, table: ThirdPartyCounts):
    df = pd.DataFrame({
        "link_id": table.link_ids,
        "date": np.datetime_as_string(table.dates, unit="D"),
        "mode": table.mode.value,
        "count": table.counts,
    })
    compression = {"method": "gzip", "mtime": 0, "compresslevel": 1} if str(path).endswith(".gz") else None
    df.to_csv(path, index=False, compression=compression, lineterminator="\n")
