import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activevol.datamodel import (CountObservation, LgaRecord, LinkRecord, StationObservation, StationRecord,
                                 ThirdPartyCounts, ZoneRecord)
from activevol.featurize import (ALL_FEATURES, DUMMY_FEATURES, FEATURE_SETS, FeatureMatrix, build_matrix,
                                 derive_dummies, resolve_feature_set)

D0 = dt.date(2020, 3, 30)


def _tiny(n_days=10, drop_days=(), **link_kw):
    link = LinkRecord("L1", "walk", 250.0, [(151.0, -33.8), (151.002, -33.8)], avg_slope_pct=2.0,
                      max_slope_pct=4.0, tags={"footway"}, zone_id="Z1", lga_id="G1", **link_kw)
    zone = ZoneRecord("Z1", 2.0, 1000, 900, {"residential": 1.0, "parkland": 1.0})
    lga = LgaRecord("G1", 10.0, 50, 0.3, 0.4)
    stations = [StationRecord("W1", "weather", 151.0, -33.8), StationRecord("A1", "air", 151.0, -33.8)]
    obs = []
    for d in range(n_days):
        day = D0 + dt.timedelta(days=d)
        if d not in drop_days:
            obs.append(StationObservation("W1", "weather", day, {"precip_mm": float(d), "tmin_c": 10.0 + d,
                                                                  "tmax_c": 20.0 + d}))
        obs.append(StationObservation("A1", "air", day, {"pm25": 5.0, "pm10": 12.0 + d, "neph": 1.0}))
    days = np.array([np.datetime64(D0 + dt.timedelta(days=d), "D") for d in range(n_days)])
    tp = ThirdPartyCounts("walk", ["L1"] * n_days, days, 100.0 + np.arange(n_days))
    return link, zone, lga, stations, obs, tp


def test_dummy_thresholds_are_strict():
    assert derive_dummies({"tmax_c": 31.0})["hot_day"] == 1.0
    assert derive_dummies({"tmax_c": 30.0})["hot_day"] == 0.0
    assert derive_dummies({"tmax_c": 10.0})["cold_day"] == 0.0
    assert derive_dummies({"tmax_c": 9.9})["cold_day"] == 1.0
    assert derive_dummies({"precip_mm": 50.0})["rainy_day"] == 0.0
    assert derive_dummies({"pm25": 10.5})["poor_air"] == 1.0
    assert derive_dummies({"neph": 2.3})["low_visibility"] == 0.0
    assert derive_dummies({"max_slope_pct": 7.5})["max_slope_lt_7_5"] == 0.0
    assert derive_dummies({"max_slope_pct": 7.4})["max_slope_lt_7_5"] == 1.0


def test_calendar_flags():
    d = derive_dummies({"date": dt.date(2020, 4, 1)})
    assert (d["lockdown"], d["pre_covid"], d["weekday"]) == (1.0, 0.0, 1.0)
    d = derive_dummies({"date": dt.date(2020, 1, 31)})
    assert d["pre_covid"] == 1.0
    d = derive_dummies({"date": np.array(["2020-05-15", "2020-05-16", "2021-06-23", "2021-09-16"], dtype="datetime64[D]")})
    np.testing.assert_array_equal(d["lockdown"], [1, 0, 1, 0])
    d = derive_dummies({"date": np.array(["2024-06-01", "2024-06-03"], dtype="datetime64[D]")})  # Sat, Mon
    np.testing.assert_array_equal(d["weekday"], [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 80), st.floats(0, 300), st.floats(-10, 100), st.floats(0, 10), st.floats(0, 40),
       st.dates(dt.date(2019, 1, 1), dt.date(2022, 12, 31)))
def test_dummies_are_binary(t, p, pm, neph, slope, day):
    out = derive_dummies({"tmax_c": t, "precip_mm": p, "pm25": pm, "neph": neph, "max_slope_pct": slope, "date": day})
    assert set(out) == {"hot_day", "cold_day", "rainy_day", "poor_air", "low_visibility", "max_slope_lt_7_5",
                        "weekday", "pre_covid", "lockdown"}
    assert all(v in (0.0, 1.0) for v in out.values())


def test_feature_sets():
    assert len(resolve_feature_set("final", "walk")) == 16
    assert resolve_feature_set("final", "cycle")[0] == "third_party_count"
    assert "dedicated_bicycle" not in resolve_feature_set("all", "walk")
    with pytest.raises(ValueError, match="unknown features"):
        resolve_feature_set(["bogus"], "walk")
    with pytest.raises(ValueError, match="duplicate"):
        resolve_feature_set(["pm25", "pm25"], "walk")


def test_one_link_one_date_walk_final_row():
    link, zone, lga, stations, obs, tp = _tiny()
    m, rep = build_matrix([link], [zone], [lga], obs, tp, "walk", dates=["2020-04-01"], stations=stations)
    assert m.schema == FEATURE_SETS[("walk", "final")]
    assert m.X.shape == (1, 16)
    row = dict(zip(m.schema, m.X[0]))
    assert row["third_party_count"] == 102.0
    assert row["poi_density"] == 5.0
    assert row["population_density"] == 500.0
    assert row["pct_walk_linked"] == 40.0
    assert row["avg_slope_pct"] == 2.0
    assert row["weekday"] == 1.0
    assert row["median_income"] == 900.0
    assert row["precip_mm"] == 2.0
    assert row["parkland_pct"] == 50.0
    assert row["lum_entropy"] == pytest.approx(1.0)
    assert (row["tmin_c"], row["tmax_c"], row["pm10"]) == (12.0, 22.0, 14.0)
    assert (row["tertiary"], row["footway"], row["residential"]) == (0.0, 1.0, 0.0)
    assert rep.n_rows == 1


def test_training_mode_joins_counts():
    link, zone, lga, stations, obs, tp = _tiny()
    counts = [CountObservation("S1", "L1", D0 + dt.timedelta(days=d), "walk", 200.0 + d) for d in (0, 3, 5)]
    counts.append(CountObservation("S2", "ZZ", D0, "walk", 10.0))
    m, rep = build_matrix([link], [zone], [lga], obs, tp, "walk", counts=counts, stations=stations)
    np.testing.assert_array_equal(m.target, [200.0, 203.0, 205.0])
    np.testing.assert_array_equal(m.base_counts, [100.0, 103.0, 105.0])
    assert rep.training["joined_rows"] == 3
    assert rep.training["unknown_link"] == 1


def test_missing_station_day_carried_forward():
    link, zone, lga, stations, obs, tp = _tiny(drop_days=(4, 5))
    m, rep = build_matrix([link], [zone], [lga], obs, tp, "walk", stations=stations)
    # hand-applied rule: days 4 and 5 take day 3's readings
    np.testing.assert_array_equal(m.column("precip_mm"), [0, 1, 2, 3, 3, 3, 6, 7, 8, 9])
    np.testing.assert_array_equal(m.column("tmax_c")[3:6], [23, 23, 23])
    assert rep.imputed_cells["precip_mm"] == 2


def test_gap_beyond_window_uses_station_mean():
    link, zone, lga, stations, obs, tp = _tiny(n_days=10, drop_days=(3, 4, 5))
    m, _ = build_matrix([link], [zone], [lga], obs, tp, "walk", stations=stations, imputation_window_days=2)
    mean = np.mean([0, 1, 2, 6, 7, 8, 9])
    np.testing.assert_allclose(m.column("precip_mm")[3:6], [2, 2, mean])


def test_rows_sorted_and_censored_pairs_reported():
    link, zone, lga, stations, obs, tp = _tiny()
    link2 = LinkRecord("L0", "walk", 100.0, [(151.0, -33.8), (151.001, -33.8)], zone_id="Z1", lga_id="G1")
    tp2 = ThirdPartyCounts("walk", list(tp.link_ids) + ["L0"], np.concatenate([tp.dates, tp.dates[:1]]),
                           np.concatenate([tp.counts, [7.0]]))
    m, rep = build_matrix([link, link2], [zone], [lga], obs, tp2, "walk", stations=stations)
    assert m.link_ids[0] == "L0"
    assert all(np.diff(m.dates[1:]).astype(int) > 0)
    assert rep.inference["no_data_pairs"] == 2 * 10 - 11


def test_feature_without_source_is_named():
    link, zone, lga, stations, obs, tp = _tiny()
    with pytest.raises(ValueError, match="'o3'"):
        build_matrix([link], [zone], [lga], obs, tp, "walk", feature_set=["o3"], stations=stations)


def test_build_is_deterministic(small_world):
    w = small_world
    args = (w.links, w.zones, w.lgas, w.station_obs, w.third_party, w.config.mode)
    a, _ = build_matrix(*args, counts=w.counts, stations=w.stations)
    b, _ = build_matrix(*args, counts=w.counts, stations=w.stations)
    assert a.digest() == b.digest()
    assert a.schema_hash == b.schema_hash


def test_dummy_columns_binary(small_world):
    w = small_world
    m, _ = build_matrix(w.links, w.zones, w.lgas, w.station_obs, w.third_party, w.config.mode,
                        counts=w.counts, stations=w.stations, feature_set="all")
    for j, name in enumerate(m.schema):
        if name in DUMMY_FEATURES:
            assert set(np.unique(m.X[:, j])) <= {0.0, 1.0}, name
    assert len(m.schema) == len(ALL_FEATURES) - 1


def test_matrix_csv_round_trip(tmp_path, small_matrix):
    small_matrix.to_csv(tmp_path / "m.csv")
    back = FeatureMatrix.from_csv(tmp_path / "m.csv")
    assert back.digest() == small_matrix.digest()


def test_matrix_invariants():
    with pytest.raises(ValueError, match="duplicate"):
        FeatureMatrix(("a", "a"), ["l"], ["2020-01-01"], [[1.0, 2.0]], [1.0])
    with pytest.raises(ValueError, match="non-finite"):
        FeatureMatrix(("a",), ["l"], ["2020-01-01"], [[np.nan]], [1.0])
    with pytest.raises(ValueError, match="target"):
        FeatureMatrix(("a",), ["l"], ["2020-01-01"], [[1.0]], [1.0], target=[1.0, 2.0])
    m = FeatureMatrix(("a",), ["l"], ["2020-01-01"], [[1.0]], [1.0])
    with pytest.raises(ValueError):
        m.X[0, 0] = 3.0
