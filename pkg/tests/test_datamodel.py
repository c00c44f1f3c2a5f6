import datetime as dt
import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activevol import datamodel as dm
from activevol.datamodel import (CountObservation, IngestReport, LgaRecord, LinkRecord, ParseError,
                                 StationObservation, ZoneRecord, descriptive_stats, describe_table)

R = 6_371_000.0


def _link(link_id="a", mode="walk", **kw):
    return LinkRecord(link_id=link_id, mode=mode, length_m=kw.pop("length_m", 100.0),
                      geometry=kw.pop("geometry", [(151.0, -33.8), (151.001, -33.8)]), **kw)


def test_link_invariants():
    with pytest.raises(ValueError, match="length_m"):
        _link(length_m=0.0)
    with pytest.raises(ValueError, match="2 points"):
        _link(geometry=[(151.0, -33.8)])
    with pytest.raises(ValueError, match="avg_slope_pct"):
        _link(avg_slope_pct=3.0, max_slope_pct=2.0)
    with pytest.raises(ValueError, match="dedicated_bicycle"):
        _link(tags={"dedicated_bicycle"})
    assert "dedicated_bicycle" in _link(mode="cycle", tags={"dedicated_bicycle"}).tags


def test_zone_and_lga_invariants():
    z = ZoneRecord("z", 2.0, 500, 800, {"residential": 1.0})
    assert z.population_density == 250.0
    with pytest.raises(ValueError):
        ZoneRecord("z", 0.0, 1, 1)
    with pytest.raises(ValueError, match="fraction"):
        LgaRecord("g", 1.0, 5, 1.2, 0.1)
    assert LgaRecord("g", 4.0, 8, 0.1, 0.2).poi_density == 2.0


def test_station_observation_rules():
    obs = StationObservation("s", "air", dt.date(2020, 1, 1), {"pm25": -6.81})
    assert obs.negative_pollutants == ["pm25"]
    with pytest.raises(ValueError, match="precipitation"):
        StationObservation("s", "weather", dt.date(2020, 1, 1), {"precip_mm": -1.0})
    with pytest.raises(ValueError, match="unknown"):
        StationObservation("s", "weather", dt.date(2020, 1, 1), {"wind": 3.0})


def test_count_observation_nonnegative():
    with pytest.raises(ValueError):
        CountObservation("s", "l", dt.date(2020, 1, 1), "walk", -1.0)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_links_csv(tmp_path):
    p = _write(tmp_path, "links.csv",
               "link_id,mode,length_m,geometry\n"
               "a,walk,100,\"LINESTRING (151 -33.8, 151.001 -33.8)\"\n"
               "b,walk,50,\"LINESTRING (151 -33.8, 151 -33.801)\"\n")
    links = dm.load_links(p, "walk")
    assert [l.link_id for l in links] == ["a", "b"]
    assert links[1].length_m == 50.0


def test_duplicate_link_id_names_the_id(tmp_path):
    p = _write(tmp_path, "links.csv",
               "link_id,geometry\n"
               "a,\"LINESTRING (151 -33.8, 151.001 -33.8)\"\n"
               "a,\"LINESTRING (151 -33.8, 151.002 -33.8)\"\n")
    with pytest.raises(ParseError, match="duplicate link_id 'a'"):
        dm.load_links(p, "walk")


def test_three_point_polyline_length(tmp_path):
    # two 60 m steps along the equator; the oracle is a spherical arc length
    step = 60.0 / (R * math.pi / 180.0)
    p = _write(tmp_path, "links.csv",
               f"link_id,mode,geometry\nx,walk,\"LINESTRING (0 0, {step!r} 0, {2 * step!r} 0)\"\n")
    (link,) = dm.load_links(p)
    assert link.length_m == pytest.approx(120.0, abs=1e-6)


def test_malformed_geometry_names_row(tmp_path):
    p = _write(tmp_path, "links.csv", "link_id,geometry\na,\"LINESTRING (151 -33.8, 151.001 -33.8)\"\nb,POINT (1 2)\n")
    with pytest.raises(ParseError, match="row 2"):
        dm.load_links(p, "walk")


def test_lenient_ingestion_accounts_for_every_row(tmp_path):
    p = _write(tmp_path, "links.csv",
               "link_id,length_m,geometry\n"
               "a,10,\"LINESTRING (151 -33.8, 151.001 -33.8)\"\n"
               "b,-5,\"LINESTRING (151 -33.8, 151.001 -33.8)\"\n"
               "c,10,not wkt\n")
    rep = IngestReport()
    links = dm.load_links(p, "walk", report=rep)
    assert len(links) == 1
    assert rep.accepted + len(rep.rejected) == rep.total == 3


def test_gzip_is_transparent(tmp_path):
    p = tmp_path / "lgas.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write("lga_id,area_sqkm,poi_count,pct_walk_only,pct_walk_linked\ng1,2,4,0.1,0.2\n")
    (g,) = dm.load_lgas(p)
    assert g.poi_density == 2.0


def test_counts_reject_duplicates_and_fractions(tmp_path):
    dup = _write(tmp_path, "c1.csv", "site_id,link_id,date,mode,observed_count\ns,a,2020-01-01,walk,3\ns,a,2020-01-01,walk,4\n")
    with pytest.raises(ParseError, match="duplicate"):
        dm.load_counts(dup)
    frac = _write(tmp_path, "c2.csv", "site_id,link_id,date,mode,observed_count\ns,a,2020-01-01,walk,3.5\n")
    with pytest.raises(ParseError, match="integer"):
        dm.load_counts(frac)


def test_missing_station_values_are_absent(tmp_path):
    p = _write(tmp_path, "obs.csv", "station_id,kind,date,precip_mm,tmax_c\nw1,weather,2020-01-01,,25.5\n")
    (obs,) = dm.load_station_observations(p)
    assert obs.values == {"tmax_c": 25.5}


def test_negative_pollutants_kept_and_counted(tmp_path):
    p = _write(tmp_path, "obs.csv", "station_id,kind,date,pm25\na1,air,2020-01-01,-6.81\na1,air,2020-01-02,4\n")
    rep = IngestReport()
    obs = dm.load_station_observations(p, report=rep)
    assert obs[0].values["pm25"] == -6.81
    assert rep.warnings["negative_pollutant"] == 1


def test_round_trip_every_table(tmp_path, small_world):
    w = small_world
    for ext in ("geojson", "csv"):
        dm.write_links(tmp_path / f"l.{ext}", w.links)
        assert dm.load_links(tmp_path / f"l.{ext}", w.config.mode) == w.links
    dm.write_zones(tmp_path / "z.csv", w.zones)
    assert dm.load_zones(tmp_path / "z.csv") == w.zones
    dm.write_lgas(tmp_path / "g.csv", w.lgas)
    assert dm.load_lgas(tmp_path / "g.csv") == w.lgas
    dm.write_stations(tmp_path / "s.csv", w.stations)
    assert dm.load_stations(tmp_path / "s.csv") == w.stations
    dm.write_station_observations(tmp_path / "o.csv", w.station_obs)
    assert dm.load_station_observations(tmp_path / "o.csv") == w.station_obs
    dm.write_counts(tmp_path / "c.csv", w.counts)
    assert dm.load_counts(tmp_path / "c.csv", w.config.mode) == w.counts
    dm.write_third_party(tmp_path / "t.csv.gz", w.third_party)
    t = dm.load_third_party(tmp_path / "t.csv.gz", w.config.mode)
    np.testing.assert_array_equal(t.counts, w.third_party.counts)
    np.testing.assert_array_equal(t.dates, w.third_party.dates)
    assert t.link_ids.tolist() == w.third_party.link_ids.tolist()


def test_descriptive_stats_examples():
    s = descriptive_stats([5])
    assert (s.min, s.mean, s.median, s.max, s.std) == (5, 5, 5, 5, 0)
    s = descriptive_stats([0, 0, 3, 4])
    assert (s.mean, s.median) == (1.75, 1.5)
    assert descriptive_stats([1, 2, 3]).std == pytest.approx(math.sqrt(2 / 3), abs=1e-12)
    with pytest.raises(ValueError):
        descriptive_stats([])


def test_describe_table_layout():
    df = describe_table({"a": [1, 2, 3], "b": [4.0]})
    assert list(df.columns) == ["variable", "n", "min", "mean", "median", "max", "std_population"]
    assert df["n"].tolist() == [3, 1]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40), st.randoms())
def test_descriptive_stats_properties(values, r):
    s = descriptive_stats(values)
    assert s.min <= s.median <= s.max
    assert s.std >= 0
    shuffled = list(values)
    r.shuffle(shuffled)
    t = descriptive_stats(shuffled)
    assert (t.min, t.median, t.max) == (s.min, s.median, s.max)
    assert t.mean == pytest.approx(s.mean, rel=1e-12, abs=1e-9)
