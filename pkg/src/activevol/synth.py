"""Synthetic worlds with known volumes, third-party sampling bias, censoring and count sites.

True daily volume is log-linear in the same features the pipeline builds, plus
a hidden per-link effect. The third-party count is the volume divided by a
planted multiplier, distorted by feature-dependent sampling bias and
multiplicative noise, and censored below a threshold. A planted set of
"extreme" links carries a hidden volume suppression that no feature sees, so
feature-driven models overestimate there (or, with ``extreme_kind="undercount"``,
only the third-party count is suppressed).
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import datamodel as dm
from ._geo import polyline_length_m
from .datamodel import (CountObservation, LgaRecord, LinkRecord, Mode, StationKind, StationObservation,
                        StationRecord, ThirdPartyCounts, ZoneRecord)
from .featurize import build_matrix
from .infer import AggregationParams, aggregate_trips, InferenceResults
from .metrics import r2

DEFAULT_BETA = {"walk": 1.78, "cycle": 3.16}
DEFAULT_CENSOR = {"walk": 40.0, "cycle": 5.0}
DEFAULT_MEDIAN_VOLUME = {"walk": 600.0, "cycle": 80.0}
# log-volume effect per standardized feature
DEFAULT_EFFECTS = {
    "walk": {"population_density": 0.45, "poi_density": 0.35, "avg_slope_pct": -0.3, "weekday": 0.2,
             "precip_mm": -0.2},
    "cycle": {"population_density": 0.35, "max_slope_pct": -0.4, "lum_entropy": 0.3, "weekday": -0.2,
              "pm25": -0.15},
}
# log sampling-rate effect per standardized feature (third-party over/under-representation)
DEFAULT_BIAS = {
    "walk": {"median_income": 0.35, "weekday": -0.25, "pct_walk_linked": 0.2},
    "cycle": {"population_density": -0.3, "weekday": 0.25, "pre_covid": 0.2},
}
LAND_USE_CLASSES = ("residential", "commercial", "industrial", "parkland", "education", "transport")
BBOX = (150.6, -34.2, 151.3, -33.6)   # lon0, lat0, lon1, lat1


@dataclass
class SynthConfig:
    n_links: int = 10_000
    n_zones: int = 400
    n_lgas: int = 6
    n_stations: int = 6           # per kind (weather and air)
    n_sites: int = 600
    site_day_fraction: float = 0.25          # share of days each site is counted
    start_date: str = "2020-01-01"
    n_days: int = 90
    mode: str = "walk"
    planted_beta: float | None = None        # default per mode
    noise_sigma: float = 0.25                # third-party multiplicative noise (log sd)
    censor_threshold: float | None = None    # default per mode; 0 disables
    feature_effect_weights: dict | None = None
    bias_weights: dict | None = None
    median_volume: float | None = None
    link_effect_sigma: float = 0.4           # hidden per-link log-volume effect
    day_noise_sigma: float = 0.1
    observation_noise: float = 0.05
    extreme_fraction: float = 0.1
    extreme_factor: tuple = (4.0, 8.0)       # U(lo, hi) divisor applied on extreme links
    extreme_kind: str = "suppressed"         # "suppressed": true volume (and so the count) divided;
                                             # "undercount": only the third-party count divided
    site_selection: str = "volume"           # or "uniform"
    integer_counts: bool = True
    station_missing_rate: float = 0.02
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode(self.mode).value
        if self.planted_beta is None:
            self.planted_beta = DEFAULT_BETA[self.mode]
        if self.censor_threshold is None:
            self.censor_threshold = DEFAULT_CENSOR[self.mode]
        if self.feature_effect_weights is None:
            self.feature_effect_weights = dict(DEFAULT_EFFECTS[self.mode])
        if self.bias_weights is None:
            self.bias_weights = dict(DEFAULT_BIAS[self.mode])
        if self.median_volume is None:
            self.median_volume = DEFAULT_MEDIAN_VOLUME[self.mode]
        self.extreme_factor = tuple(float(v) for v in self.extreme_factor)
        if self.extreme_kind not in ("suppressed", "undercount"):
            raise ValueError("extreme_kind must be 'suppressed' or 'undercount'")
        if not 1.0 <= self.extreme_factor[0] <= self.extreme_factor[1]:
            raise ValueError("extreme_factor must be (lo, hi) with 1 <= lo <= hi")
        if not self.planted_beta > 0:
            raise ValueError("planted_beta must be > 0")
        if self.noise_sigma < 0 or self.censor_threshold < 0 or self.observation_noise < 0:
            raise ValueError("noise levels and censor_threshold must be >= 0")
        if not 1 <= self.n_sites <= self.n_links:
            raise ValueError("need 1 <= n_sites <= n_links")
        if min(self.n_zones, self.n_lgas, self.n_stations, self.n_days) < 1:
            raise ValueError("zone, LGA, station and day counts must be >= 1")
        if not 0.0 < self.site_day_fraction <= 1.0:
            raise ValueError("site_day_fraction must lie in (0, 1]")
        if not 0.0 <= self.extreme_fraction < 1.0:
            raise ValueError("extreme_fraction must lie in [0, 1)")
        if self.site_selection not in ("volume", "uniform"):
            raise ValueError("site_selection must be 'volume' or 'uniform'")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["extreme_factor"] = list(self.extreme_factor)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path):
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    @property
    def dates(self):
        d0 = np.datetime64(self.start_date, "D")
        return d0 + np.arange(self.n_days)


@dataclass
class Truth:
    link_ids: np.ndarray          # sorted
    dates: np.ndarray
    volume: np.ndarray            # (n_links, n_days) true daily volume
    extreme: np.ndarray           # bool per link
    factor: np.ndarray            # per link extreme divisor (1 on normal links)
    log_volume_features: dict = field(default_factory=dict)


@dataclass
class World:
    config: SynthConfig
    links: list
    zones: list
    lgas: list
    stations: list
    station_obs: list
    third_party: ThirdPartyCounts
    counts: list
    truth: Truth

    def link_lengths_km(self):
        return {l.link_id: l.length_km for l in self.links}


def _rng(seed, part):
    return np.random.default_rng(np.random.SeedSequence([int(seed), part]))


def _grid_cell(lon, lat, n_cells):
    """Row-major cell index over BBOX for a near-square grid of ``n_cells`` cells."""
    nx = max(1, int(math.ceil(math.sqrt(n_cells))))
    ny = max(1, int(math.ceil(n_cells / nx)))
    fx = (lon - BBOX[0]) / (BBOX[2] - BBOX[0])
    fy = (lat - BBOX[1]) / (BBOX[3] - BBOX[1])
    ix = np.clip((fx * nx).astype(int), 0, nx - 1)
    iy = np.clip((fy * ny).astype(int), 0, ny - 1)
    return np.minimum(iy * nx + ix, n_cells - 1)


def _make_static(cfg: SynthConfig):
    mode = Mode(cfg.mode)
    rng = _rng(cfg.seed, 1)
    zones = []
    for i in range(cfg.n_zones):
        area = float(rng.uniform(0.2, 2.0))
        pop = float(np.round(area * rng.lognormal(math.log(3000), 0.8)))
        income = float(np.round(rng.lognormal(math.log(900), 0.3), 2))
        weights = rng.dirichlet(np.full(len(LAND_USE_CLASSES), 0.8))
        present = rng.random(len(LAND_USE_CLASSES)) < 0.8
        present[0] = True
        lu = {c: float(np.round(w * area, 6)) for c, w, p in zip(LAND_USE_CLASSES, weights, present) if p and w * area > 1e-6}
        zones.append(ZoneRecord(f"Z{i:04d}", area, pop, income, lu))
    lgas = []
    for i in range(cfg.n_lgas):
        area = float(rng.uniform(20, 120))
        walk_only = float(np.round(rng.uniform(0.05, 0.3), 4))
        lgas.append(LgaRecord(f"LGA{i:02d}", area, float(np.round(area * rng.lognormal(math.log(40), 0.5))),
                              walk_only, float(np.round(rng.uniform(0.1, 0.5), 4))))
    stations = []
    for kind, prefix in ((StationKind.WEATHER, "W"), (StationKind.AIR, "A")):
        for i in range(cfg.n_stations):
            stations.append(StationRecord(f"{prefix}{i:02d}", kind, float(rng.uniform(BBOX[0], BBOX[2])),
                                          float(rng.uniform(BBOX[1], BBOX[3]))))
    # links: short straight segments scattered over the region
    lon = rng.uniform(BBOX[0], BBOX[2], cfg.n_links)
    lat = rng.uniform(BBOX[1], BBOX[3], cfg.n_links)
    half_len = rng.lognormal(math.log(90 if mode is Mode.WALK else 200), 0.5, cfg.n_links)
    bearing = rng.uniform(0, 2 * math.pi, cfg.n_links)
    dlat = half_len * np.cos(bearing) / 111_320.0
    dlon = half_len * np.sin(bearing) / (111_320.0 * np.cos(np.radians(lat)))
    avg = np.round(np.abs(rng.normal(0, 3, cfg.n_links)), 3)
    mx = np.round(avg + np.abs(rng.normal(0, 3, cfg.n_links)), 3)
    tag_pool = ("footway", "residential", "tertiary")
    tag_idx = rng.integers(0, 3, cfg.n_links)
    bike = rng.random(cfg.n_links) < 0.3
    zone_of = _grid_cell(lon, lat, cfg.n_zones)
    lga_of = _grid_cell(lon, lat, cfg.n_lgas)
    links = []
    width = len(str(cfg.n_links - 1))
    for i in range(cfg.n_links):
        coords = ((round(float(lon[i] - dlon[i]), 7), round(float(lat[i] - dlat[i]), 7)),
                  (round(float(lon[i] + dlon[i]), 7), round(float(lat[i] + dlat[i]), 7)))
        tags = {tag_pool[tag_idx[i]]}
        if mode is Mode.CYCLE and bike[i]:
            tags.add("dedicated_bicycle")
        links.append(LinkRecord(
            link_id=f"L{i:0{width}d}", mode=mode, length_m=round(polyline_length_m(coords), 3), geometry=coords,
            avg_slope_pct=float(avg[i]), max_slope_pct=float(mx[i]), tags=frozenset(tags),
            zone_id=zones[zone_of[i]].zone_id, lga_id=lgas[lga_of[i]].lga_id))
    return links, zones, lgas, stations


def _make_station_obs(cfg: SynthConfig, stations):
    rng = _rng(cfg.seed, 2)
    dates = cfg.dates
    doy = (dates - dates.astype("datetime64[Y]")).astype(int)
    season = np.cos(2 * np.pi * (doy - 15) / 365.25)     # +1 mid-January (southern summer)
    # region-wide daily weather with station jitter
    rain = np.where(rng.random(len(dates)) < 0.3, rng.exponential(12.0, len(dates)), 0.0)
    tmax = 22 + 7 * season + rng.normal(0, 3, len(dates))
    tmin = tmax - rng.uniform(6, 12, len(dates))
    pm25 = np.maximum(0.5, rng.lognormal(math.log(7), 0.5, len(dates)))
    obs = []
    for s in stations:
        for d in range(len(dates)):
            date = dt.date.fromisoformat(str(dates[d]))
            if s.kind is StationKind.WEATHER:
                vals = {"precip_mm": round(float(max(0.0, rain[d] * rng.uniform(0.6, 1.4))), 2),
                        "tmax_c": round(float(tmax[d] + rng.normal(0, 1)), 2),
                        "tmin_c": round(float(tmin[d] + rng.normal(0, 1)), 2)}
            else:
                p = pm25[d] * rng.uniform(0.7, 1.3)
                vals = {"pm25": round(float(p), 3), "pm10": round(float(p * rng.uniform(1.5, 2.5)), 3),
                        "neph": round(float(p / 3 + rng.normal(0, 0.3)), 3),
                        "no": round(float(rng.lognormal(math.log(5), 0.6)), 3),
                        "no2": round(float(rng.lognormal(math.log(10), 0.4)), 3),
                        "o3": round(float(rng.lognormal(math.log(20), 0.3)), 3)}
            vals = {k: v for k, v in vals.items() if rng.random() >= cfg.station_missing_rate}
            if vals:
                obs.append(StationObservation(s.station_id, s.kind, date, vals))
    return obs


def _standardize_columns(X, clip=3.0):
    """Z-scores clipped to +-``clip`` so skewed features cannot dominate the volume."""
    sd = X.std(axis=0)
    return np.clip((X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0), -clip, clip)


def generate_world(config: SynthConfig) -> World:
    """Build a full synthetic bundle from ``config`` (single-threaded, deterministic per seed)."""
    cfg = config
    links, zones, lgas, stations = _make_static(cfg)
    station_obs = _make_station_obs(cfg, stations)
    dates = cfg.dates
    n_l, n_d = len(links), len(dates)

    # every (link, date) feature the pipeline can build, from the pipeline itself
    every = ThirdPartyCounts(cfg.mode, np.repeat([l.link_id for l in links], n_d), np.tile(dates, n_l),
                             np.ones(n_l * n_d))
    needed = sorted(set(cfg.feature_effect_weights) | set(cfg.bias_weights))
    full, _ = build_matrix(links, zones, lgas, station_obs, every, cfg.mode, feature_set=needed or ["weekday"],
                           stations=stations)
    # rows are sorted by link then date, and links are generated in sorted id order
    Z = _standardize_columns(full.X) if len(full.schema) else np.zeros((n_l * n_d, 0))
    col = {n: Z[:, j] for j, n in enumerate(full.schema)}

    rng = _rng(cfg.seed, 3)
    link_eff = rng.normal(0, cfg.link_effect_sigma, n_l)
    logv = math.log(cfg.median_volume) + np.repeat(link_eff, n_d) + rng.normal(0, cfg.day_noise_sigma, n_l * n_d)
    for name, w in cfg.feature_effect_weights.items():
        logv = logv + w * col[name]
    volume = np.exp(logv)

    bias = np.zeros(n_l * n_d)
    for name, w in cfg.bias_weights.items():
        bias = bias + w * col[name]
    bias = np.exp(bias)
    bias /= bias.mean()

    n_ext = int(round(cfg.extreme_fraction * n_l))
    extreme = np.zeros(n_l, dtype=bool)
    extreme[rng.choice(n_l, n_ext, replace=False)] = True
    factor = np.ones(n_l)
    factor[extreme] = rng.uniform(*cfg.extreme_factor, n_ext)
    # hidden from every feature: the pipeline can only see it through the third-party count
    if cfg.extreme_kind == "suppressed":
        volume = volume / np.repeat(factor, n_d)
        under = np.ones(n_l)
    else:
        under = factor

    s = cfg.noise_sigma
    noise = rng.lognormal(-0.5 * s * s, s, n_l * n_d) if s > 0 else np.ones(n_l * n_d)
    tp = volume / cfg.planted_beta * bias * noise / np.repeat(under, n_d)
    if cfg.integer_counts:
        tp = np.round(tp)
    keep = tp >= cfg.censor_threshold if cfg.censor_threshold > 0 else np.ones(len(tp), dtype=bool)
    link_col = full.link_ids
    third = ThirdPartyCounts(cfg.mode, link_col[keep], full.dates[keep], tp[keep])

    # count sites: probability proportional to mean volume (or uniform)
    vol2 = volume.reshape(n_l, n_d)
    p = vol2.mean(axis=1) if cfg.site_selection == "volume" else np.ones(n_l)
    site_links = np.sort(rng.choice(n_l, cfg.n_sites, replace=False, p=p / p.sum()))
    counts = []
    o = cfg.observation_noise
    for k, li in enumerate(site_links):
        eps = rng.lognormal(-0.5 * o * o, o, n_d) if o > 0 else np.ones(n_d)
        obs = vol2[li] * eps
        if cfg.integer_counts:
            obs = np.round(obs)
        counted = rng.random(n_d) < cfg.site_day_fraction
        for d in np.flatnonzero(counted):
            counts.append(CountObservation(f"S{k:04d}", links[li].link_id, dt.date.fromisoformat(str(dates[d])),
                                           Mode(cfg.mode), float(obs[d])))
    truth = Truth(np.array([l.link_id for l in links], dtype=object), dates, vol2, extreme, factor)
    return World(cfg, links, zones, lgas, stations, station_obs, third, counts, truth)


BUNDLE_FILES = {"links": "links.geojson", "zones": "zones.csv", "lgas": "lgas.csv", "stations": "stations.csv",
                "station_obs": "station_observations.csv", "counts": "counts.csv",
                "third_party": "third_party.csv.gz", "truth": "truth.csv.gz", "truth_links": "truth_links.csv"}


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_bundle(world: World, out_dir) -> dict:
    """Write every table in the datamodel formats plus truth files and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = {k: out / v for k, v in BUNDLE_FILES.items()}
    dm.write_links(p["links"], world.links)
    dm.write_zones(p["zones"], world.zones)
    dm.write_lgas(p["lgas"], world.lgas)
    dm.write_stations(p["stations"], world.stations)
    dm.write_station_observations(p["station_obs"], world.station_obs)
    dm.write_counts(p["counts"], world.counts)
    dm.write_third_party(p["third_party"], world.third_party)
    t = world.truth
    n_l, n_d = t.volume.shape
    truth = pd.DataFrame({"link_id": np.repeat(t.link_ids, n_d),
                          "date": np.tile(np.datetime_as_string(t.dates, unit="D"), n_l),
                          "true_volume": t.volume.ravel()})
    truth.to_csv(p["truth"], index=False, lineterminator="\n", float_format="%.17g",
                 compression={"method": "gzip", "mtime": 0, "compresslevel": 1})
    pd.DataFrame({"link_id": t.link_ids, "extreme": t.extreme.astype(int), "factor": t.factor}).to_csv(
        p["truth_links"], index=False, lineterminator="\n", float_format="%.17g")
    manifest = {"seed": world.config.seed, "config": world.config.to_dict(),
                "files": {k: {"path": v.name, "sha256": file_sha256(v)} for k, v in p.items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


@dataclass
class Bundle:
    """A synthetic bundle read back through the datamodel loaders."""

    config: SynthConfig
    links: list
    zones: list
    lgas: list
    stations: list
    station_obs: list
    third_party: ThirdPartyCounts
    counts: list
    truth: Truth
    manifest: dict

    @property
    def seed(self):
        return self.config.seed


def load_bundle(path) -> Bundle:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    cfg = SynthConfig.from_dict(manifest["config"])
    f = {k: path / v["path"] for k, v in manifest["files"].items()}
    links = dm.load_links(f["links"], cfg.mode)
    truth_df = pd.read_csv(f["truth"], dtype={"link_id": str, "date": str},
                           float_precision="round_trip")
    tl = pd.read_csv(f["truth_links"], dtype={"link_id": str}, float_precision="round_trip")
    ids = tl["link_id"].to_numpy(dtype=object)
    dates = np.unique(truth_df["date"].to_numpy().astype("datetime64[D]"))
    vol = truth_df["true_volume"].to_numpy(dtype=float).reshape(len(ids), len(dates))
    truth = Truth(ids, dates, vol, tl["extreme"].to_numpy().astype(bool), tl["factor"].to_numpy(dtype=float))
    return Bundle(cfg, links, dm.load_zones(f["zones"]), dm.load_lgas(f["lgas"]), dm.load_stations(f["stations"]),
                  dm.load_station_observations(f["station_obs"]), dm.load_third_party(f["third_party"], cfg.mode),
                  dm.load_counts(f["counts"], cfg.mode, require_integer=cfg.integer_counts), truth, manifest)


def true_volume_lookup(truth: Truth, link_ids, dates):
    li = {l: i for i, l in enumerate(truth.link_ids.tolist())}
    d0 = truth.dates[0]
    rows = np.array([li[l] for l in link_ids], dtype=np.int64)
    cols = (np.asarray(dates, dtype="datetime64[D]") - d0).astype(np.int64)
    return truth.volume[rows, cols]


def oracle_report(bundle, *, seed, beta_hat=None, results: InferenceResults | None = None, params=None,
                  test_r2: dict | None = None) -> dict:
    """Recovery of planted quantities by pipeline outputs produced with ``seed``.

    Any of ``beta_hat`` (fitted naive multiplier), ``results`` (mitigated
    inference results) and ``test_r2`` (family -> held-out R^2) may be given.
    """
    if int(seed) != int(bundle.config.seed):
        raise ValueError(f"outputs were produced with seed {seed}, bundle has seed {bundle.config.seed}")
    cfg = bundle.config
    rep = {"seed": cfg.seed, "mode": cfg.mode, "planted_beta": cfg.planted_beta}
    if beta_hat is not None:
        rep["beta_hat"] = float(beta_hat)
        rep["beta_relative_error"] = abs(float(beta_hat) - cfg.planted_beta) / cfg.planted_beta
    if results is not None:
        params = params or AggregationParams.for_mode(cfg.mode)
        truth = true_volume_lookup(bundle.truth, results.link_ids, results.dates)
        lengths = {l.link_id: l.length_km for l in bundle.links}
        est = aggregate_trips(results, lengths, params)
        tru = aggregate_trips(dataclasses.replace(results, mitigated=truth), lengths, params)
        rep["link_r2_estimate"] = r2(truth, results.estimate) if np.var(truth) > 0 else float("nan")
        rep["link_r2_mitigated"] = r2(truth, results.mitigated) if np.var(truth) > 0 else float("nan")
        rep["estimated_trips"] = est["total_trips"]
        rep["true_trips"] = tru["total_trips"]
        rep["trip_relative_error"] = abs(est["total_trips"] - tru["total_trips"]) / tru["total_trips"] \
            if tru["total_trips"] > 0 else float("nan")
        ext = dict(zip(bundle.truth.link_ids.tolist(), bundle.truth.extreme.tolist()))
        planted = np.array([ext[l] for l in results.link_ids], dtype=bool)
        flagged = np.asarray(results.outlier, dtype=bool)
        tp = int((planted & flagged).sum())
        rep["outlier_rows_flagged"] = int(flagged.sum())
        rep["outlier_rows_planted"] = int(planted.sum())
        rep["outlier_precision"] = tp / int(flagged.sum()) if flagged.any() else float("nan")
        rep["outlier_recall"] = tp / int(planted.sum()) if planted.any() else float("nan")
    if test_r2:
        order = sorted(test_r2, key=lambda k: (-(test_r2[k] if test_r2[k] == test_r2[k] else -math.inf), k))
        rep["test_r2"] = {k: test_r2[k] for k in order}
        rep["ranking_by_test_r2"] = order
    return rep
