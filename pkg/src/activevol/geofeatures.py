"""Static per-link geographic features.

Nearest weather/air station, zone and LGA membership, slopes from sampled
elevation profiles and the land-use mix entropy of a zone.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ._geo import haversine_m, polyline_midpoint
from .datamodel import LinkRecord, ParseError, StationKind, StationRecord, ZoneRecord, _open_text


@dataclass(frozen=True)
class LandUseProfile:
    """Fractions of a zone's land-use area per class, over classes with nonzero area."""

    proportions: Mapping[str, float]

    def __post_init__(self):
        props = {k: float(v) for k, v in self.proportions.items() if v > 0}
        if not props:
            raise ValueError("land-use profile needs at least one class with nonzero area")
        if any(not 0.0 < v <= 1.0 for v in props.values()):
            raise ValueError("proportions must lie in (0, 1]")
        total = math.fsum(props.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"proportions sum to {total}, expected 1")
        object.__setattr__(self, "proportions", dict(sorted(props.items())))

    @property
    def n_classes(self):
        return len(self.proportions)

    @classmethod
    def from_areas(cls, areas: Mapping[str, float]) -> "LandUseProfile":
        nonzero = {k: float(v) for k, v in areas.items() if v > 0}
        total = math.fsum(nonzero.values())
        if total <= 0:
            raise ValueError("land-use profile needs at least one class with nonzero area")
        return cls({k: v / total for k, v in nonzero.items()})


def lum_entropy(profile: LandUseProfile | Mapping[str, float]) -> float:
    """Land-use mix entropy in [0, 1].

    ``-sum(p_i ln p_i) / ln(n)`` with n the number of classes present. A single
    class gives 0 (the 0/0 limit). A plain mapping is read as raw areas.
    """
    if not isinstance(profile, LandUseProfile):
        profile = LandUseProfile.from_areas(profile)
    n = profile.n_classes
    if n == 1:
        return 0.0
    h = -math.fsum(p * math.log(p) for p in profile.proportions.values())
    return min(1.0, max(0.0, h / math.log(n)))


def parkland_pct(areas: Mapping[str, float]) -> float:
    total = math.fsum(v for v in areas.values() if v > 0)
    if total <= 0:
        return 0.0
    return 100.0 * areas.get("parkland", 0.0) / total


def link_midpoints(links: Sequence[LinkRecord]) -> np.ndarray:
    """(n, 2) array of (lon, lat) midpoints along each link."""
    return np.array([polyline_midpoint(l.geometry) for l in links], dtype=float).reshape(-1, 2)


def nearest_station_index(points: np.ndarray, stations: Sequence[StationRecord]) -> np.ndarray:
    """Index into ``stations`` of the closest station to each (lon, lat) point.

    Stations are compared in ``station_id`` order, so exact distance ties go
    to the lowest id.
    """
    order = sorted(range(len(stations)), key=lambda i: stations[i].station_id)
    slon = np.array([stations[i].lon for i in order])
    slat = np.array([stations[i].lat for i in order])
    out = np.empty(len(points), dtype=np.int64)
    # chunked to bound the (points x stations) distance matrix
    for start in range(0, len(points), 4096):
        p = points[start:start + 4096]
        d = haversine_m(p[:, :1], p[:, 1:2], slon[None, :], slat[None, :])
        out[start:start + len(p)] = np.asarray(order)[np.argmin(d, axis=1)]
    return out


def assign_nearest_station(links: Sequence[LinkRecord], stations: Sequence[StationRecord], kind) -> list[LinkRecord]:
    """Attach the great-circle nearest station of ``kind`` to every link (by midpoint)."""
    kind = StationKind(kind)
    pool = [s for s in stations if s.kind is kind]
    if not pool:
        raise ValueError(f"no {kind.value} stations to assign from")
    if not links:
        return []
    idx = nearest_station_index(link_midpoints(links), pool)
    attr = "weather_station_id" if kind is StationKind.WEATHER else "air_station_id"
    return [dataclasses.replace(l, **{attr: pool[i].station_id}) for l, i in zip(links, idx)]


def slopes_from_elevation(samples: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Average (length-weighted) and maximum absolute slope in percent.

    ``samples`` are (chainage_m, elevation_m) pairs with strictly increasing
    chainage.
    """
    a = np.asarray(samples, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2 or a.shape[1] != 2:
        raise ValueError("need at least 2 (chainage_m, elevation_m) samples")
    run = np.diff(a[:, 0])
    if np.any(run <= 0):
        raise ValueError("chainage must be strictly increasing (duplicate or reversed chainage)")
    seg = np.abs(np.diff(a[:, 1])) / run * 100.0
    avg = float(np.sum(seg * run) / np.sum(run))
    return avg, max(float(seg.max()), avg)


def load_elevation_profiles(path) -> dict[str, list[tuple[float, float]]]:
    """CSV (link_id, chainage_m, elevation_m) -> per-link samples sorted by chainage."""
    path = Path(path)
    df = pd.read_csv(path, dtype={"link_id": str}, compression="infer", float_precision="round_trip")
    for c in ("link_id", "chainage_m", "elevation_m"):
        if c not in df.columns:
            raise ParseError(path, None, f"missing required column {c!r}")
    bad = np.flatnonzero(~np.isfinite(df[["chainage_m", "elevation_m"]].to_numpy(dtype=float)).all(axis=1))
    if bad.size:
        raise ParseError(path, int(bad[0]) + 1, "chainage_m and elevation_m must be finite numbers")
    out: dict[str, list] = {}
    for lid, grp in df.groupby("link_id", sort=True):
        g = grp.sort_values("chainage_m", kind="stable")
        out[lid] = list(zip(g["chainage_m"].astype(float), g["elevation_m"].astype(float)))
    return out


def apply_elevation_profiles(links: Sequence[LinkRecord], profiles: Mapping[str, Sequence]) -> list[LinkRecord]:
    out = []
    for l in links:
        samples = profiles.get(l.link_id)
        if samples is None:
            out.append(l)
            continue
        try:
            avg, mx = slopes_from_elevation(samples)
        except ValueError as exc:
            raise ValueError(f"link {l.link_id}: {exc}") from None
        out.append(dataclasses.replace(l, avg_slope_pct=avg, max_slope_pct=mx))
    return out


def load_polygons(path, id_property) -> dict:
    """GeoJSON Polygon/MultiPolygon features -> {id: shapely geometry}."""
    from shapely.geometry import shape

    with _open_text(path) as fh:
        doc = json.load(fh)
    out = {}
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") not in ("Polygon", "MultiPolygon"):
            raise ParseError(path, i + 1, f"expected Polygon/MultiPolygon, got {geom.get('type')}")
        pid = (feat.get("properties") or {}).get(id_property)
        if pid in (None, ""):
            raise ParseError(path, i + 1, f"feature lacks {id_property!r}")
        out[str(pid)] = shape(geom)
    return out


def _locate(points: np.ndarray, polygons: Mapping[str, object]) -> list[str | None]:
    """Polygon id containing each point; boundary counts as inside, lowest id wins overlaps."""
    import shapely
    from shapely.strtree import STRtree

    ids = sorted(polygons)
    if not ids or len(points) == 0:
        return [None] * len(points)
    tree = STRtree([polygons[i] for i in ids])
    pts = shapely.points(points)
    pairs = tree.query(pts, predicate="intersects")
    found: list[str | None] = [None] * len(points)
    for p, g in sorted(zip(pairs[0].tolist(), pairs[1].tolist())):
        if found[p] is None:
            found[p] = ids[g]
    return found


@dataclass
class ZonalJoinResult:
    links: list
    unassigned_zone: list
    unassigned_lga: list


def zonal_join(links: Sequence[LinkRecord], zones=None, lgas=None, *, zone_polygons=None, lga_polygons=None) -> ZonalJoinResult:
    """Give every link a zone and LGA.

    Explicit ids already on a link pass through; otherwise the link midpoint is
    located in the supplied polygons. Links still without an id (or whose id is
    not among the known zones/LGAs) are listed as unassigned, never fatal.
    """
    zone_ids = {z.zone_id for z in zones} if zones is not None else None
    lga_ids = {g.lga_id for g in lgas} if lgas is not None else None
    need = [i for i, l in enumerate(links) if (l.zone_id is None and zone_polygons) or (l.lga_id is None and lga_polygons)]
    mids = link_midpoints([links[i] for i in need]) if need else np.empty((0, 2))
    zfound = dict(zip(need, _locate(mids, zone_polygons))) if zone_polygons else {}
    gfound = dict(zip(need, _locate(mids, lga_polygons))) if lga_polygons else {}

    out, unz, ung = [], [], []
    for i, l in enumerate(links):
        z = l.zone_id if l.zone_id is not None else zfound.get(i)
        g = l.lga_id if l.lga_id is not None else gfound.get(i)
        if z is not None and zone_ids is not None and z not in zone_ids:
            z = None
        if g is not None and lga_ids is not None and g not in lga_ids:
            g = None
        if z is None:
            unz.append(l.link_id)
        if g is None:
            ung.append(l.link_id)
        out.append(l if (z, g) == (l.zone_id, l.lga_id) else dataclasses.replace(l, zone_id=z, lga_id=g))
    return ZonalJoinResult(out, unz, ung)


def zone_attributes(zones: Sequence[ZoneRecord]) -> dict[str, dict[str, float]]:
    """Per-zone static features: population density, income, entropy, parkland share."""
    out = {}
    for z in zones:
        try:
            ent = lum_entropy(z.land_use_areas)
        except ValueError:
            ent = float("nan")
        out[z.zone_id] = {
            "population_density": z.population_density,
            "median_income": z.median_weekly_income_aud,
            "lum_entropy": ent,
            "parkland_pct": parkland_pct(z.land_use_areas),
        }
    return out
