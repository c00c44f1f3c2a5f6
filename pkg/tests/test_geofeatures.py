import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activevol._geo import haversine_m, polyline_midpoint
from activevol.datamodel import LinkRecord, StationRecord, ZoneRecord
from activevol.geofeatures import (LandUseProfile, apply_elevation_profiles, assign_nearest_station,
                                   load_elevation_profiles, load_polygons, lum_entropy, slopes_from_elevation,
                                   zonal_join, zone_attributes)


def _link(i, coords, **kw):
    return LinkRecord(f"L{i}", "walk", 100.0, coords, **kw)


def test_entropy_examples():
    assert lum_entropy({"residential": 1.0}) == 0.0
    assert lum_entropy({"a": 1, "b": 1, "c": 1, "d": 1}) == pytest.approx(1.0, abs=1e-12)
    # hand evaluation: -(0.7 ln 0.7 + 0.3 ln 0.3) / ln 2
    assert lum_entropy(LandUseProfile({"a": 0.7, "b": 0.3})) == pytest.approx(0.8813, abs=1e-4)


def test_entropy_ignores_zero_classes():
    assert lum_entropy({"a": 2.0, "b": 2.0, "c": 0.0}) == pytest.approx(1.0)


def test_profile_validation():
    with pytest.raises(ValueError):
        LandUseProfile({"a": 0.5, "b": 0.4})
    with pytest.raises(ValueError):
        lum_entropy({"a": 0.0})


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=1, max_size=8), st.floats(0.1, 100.0), st.randoms())
def test_entropy_scale_and_permutation_invariant(areas, scale, r):
    base = {f"c{i}": a for i, a in enumerate(areas)}
    e = lum_entropy(base)
    assert 0.0 <= e <= 1.0
    assert lum_entropy({k: v * scale for k, v in base.items()}) == pytest.approx(e, abs=1e-12)
    vals = list(areas)
    r.shuffle(vals)
    assert lum_entropy({f"c{i}": a for i, a in enumerate(vals)}) == pytest.approx(e, abs=1e-12)


def test_entropy_increases_toward_even_split():
    shares = np.linspace(0.999, 0.5, 50)
    ent = [lum_entropy({"a": p, "b": 1 - p}) for p in shares]
    assert np.all(np.diff(ent) > 0)


def test_slopes_examples():
    assert slopes_from_elevation([(0, 3), (50, 3), (100, 3)]) == (0.0, 0.0)
    assert slopes_from_elevation([(0, 0), (100, 5)]) == (5.0, 5.0)
    assert slopes_from_elevation([(0, 0), (100, 5), (200, 5)]) == (2.5, 5.0)
    with pytest.raises(ValueError, match="chainage"):
        slopes_from_elevation([(0, 0), (0, 5)])


def test_elevation_profiles_file(tmp_path):
    p = tmp_path / "elev.csv"
    p.write_text("link_id,chainage_m,elevation_m\nL0,100,5\nL0,0,0\nL0,200,5\n")
    prof = load_elevation_profiles(p)
    assert prof["L0"][0] == (0.0, 0.0)
    (l,) = apply_elevation_profiles([_link(0, [(151, -33.8), (151.001, -33.8)])], prof)
    assert (l.avg_slope_pct, l.max_slope_pct) == (2.5, 5.0)


def test_single_station_takes_all():
    links = [_link(i, [(151 + i * 0.01, -33.8), (151.001 + i * 0.01, -33.8)]) for i in range(5)]
    out = assign_nearest_station(links, [StationRecord("w9", "weather", 150.0, -34.0)], "weather")
    assert {l.weather_station_id for l in out} == {"w9"}
    with pytest.raises(ValueError):
        assign_nearest_station(links, [StationRecord("a1", "air", 150.0, -34.0)], "weather")


def test_equidistant_tie_goes_to_lowest_id():
    link = _link(0, [(0.0, -0.001), (0.0, 0.001)])
    stations = [StationRecord("b", "air", 0.01, 0.0), StationRecord("a", "air", -0.01, 0.0)]
    (out,) = assign_nearest_station([link], stations, "air")
    assert out.air_station_id == "a"


def test_nearest_station_matches_brute_force(rng):
    links = []
    for i in range(100):
        lon, lat = rng.uniform(150.5, 151.5), rng.uniform(-34.2, -33.5)
        links.append(_link(i, [(lon, lat), (lon + rng.normal(0, 0.002), lat + rng.normal(0, 0.002))]))
    stations = [StationRecord(f"s{j}", "weather", rng.uniform(150.5, 151.5), rng.uniform(-34.2, -33.5))
                for j in range(5)]
    out = assign_nearest_station(links, stations, "weather")
    for l, o in zip(links, out):
        mlon, mlat = polyline_midpoint(l.geometry)
        d = [haversine_m(mlon, mlat, s.lon, s.lat) for s in stations]
        assert o.weather_station_id == stations[int(np.argmin(d))].station_id


def _square(x0, y0, size):
    return [[x0, y0], [x0 + size, y0], [x0 + size, y0 + size], [x0, y0 + size], [x0, y0]]


def test_zonal_join_polygons(tmp_path):
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"zone_id": "Z1"}, "geometry": {"type": "Polygon", "coordinates": [_square(0, 0, 1)]}},
        {"type": "Feature", "properties": {"zone_id": "Z2"}, "geometry": {"type": "Polygon", "coordinates": [_square(2, 0, 1)]}},
    ]}
    path = tmp_path / "zones.geojson"
    path.write_text(json.dumps(doc))
    polys = load_polygons(path, "zone_id")
    links = [_link(0, [(0.2, 0.5), (0.4, 0.5)]), _link(1, [(2.5, 0.2), (2.5, 0.4)]),
             _link(2, [(5.0, 5.0), (5.1, 5.0)]), _link(3, [(5.0, 5.0), (5.1, 5.0)], zone_id="Z2")]
    zones = [ZoneRecord("Z1", 1, 1, 1), ZoneRecord("Z2", 1, 1, 1)]
    res = zonal_join(links, zones, zone_polygons=polys)
    assert [l.zone_id for l in res.links] == ["Z1", "Z2", None, "Z2"]
    assert res.unassigned_zone == ["L2"]


def test_zone_attributes():
    attrs = zone_attributes([ZoneRecord("z", 2.0, 100, 700, {"parkland": 1.0, "residential": 3.0})])
    assert attrs["z"]["population_density"] == 50.0
    assert attrs["z"]["parkland_pct"] == 25.0
    assert attrs["z"]["lum_entropy"] == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.75)) / math.log(2))
