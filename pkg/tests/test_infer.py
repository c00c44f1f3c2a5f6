import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activevol.datamodel import LinkRecord
from activevol.featurize import THIRD_PARTY, FeatureMatrix
from activevol.infer import (UNASSIGNED, AggregationParams, InferenceResults, aggregate_trips, aggregation_summary,
                             kneedle_elbow, mitigate, predict_network, rollup_by_lga, weekday_weekend_totals)
from activevol.regress import SchemaMismatch, train


def results(estimate, base, *, raw=None, links=None, dates=None):
    estimate = np.asarray(estimate, dtype=float)
    n = len(estimate)
    raw = estimate if raw is None else np.asarray(raw, dtype=float)
    links = np.array([f"L{i}" for i in range(n)] if links is None else links, dtype=object)
    dates = np.full(n, np.datetime64("2023-03-06")) if dates is None else np.asarray(dates, dtype="datetime64[D]")
    return InferenceResults(links, dates, raw, estimate, np.asarray(base, dtype=float), np.zeros(n, dtype=bool),
                            estimate.copy(), int((raw < 0).sum()))


def link(i, length_m=1000.0, lga="A", mode="walk"):
    return LinkRecord(f"L{i}", mode, length_m, ((151.0, -33.0), (151.0, -33.001)), lga_id=lga)


# kneedle

def chord_oracle(values):
    """Rank with the largest perpendicular distance below the chord of the normalized descending curve."""
    v = sorted(values, reverse=True)
    n = len(v)
    pts = [(i / (n - 1), (v[i] - v[-1]) / (v[0] - v[-1])) for i in range(n)]
    (x0, y0), (x1, y1) = pts[0], pts[-1]
    best, best_i = -1.0, None
    for i, (x, y) in enumerate(pts):
        # signed distance, positive below the chord
        d = ((y1 - y0) * x - (x1 - x0) * y + x1 * y0 - y1 * x0) / np.hypot(x1 - x0, y1 - y0)
        if d > best + 1e-15:
            best, best_i = d, i
    return best_i, v[best_i], best


def test_geometric_decay_matches_oracle():
    k = kneedle_elbow([16, 8, 4, 2, 1])
    assert (k.rank, k.value) == chord_oracle([16, 8, 4, 2, 1])[:2]
    # frozen: normalized curve (1, 7/15, 3/15, 1/15, 0) vs chord (1, .75, .5, .25, 0)
    assert (k.rank, k.value) == (2, 4.0)
    assert k.difference == pytest.approx(0.5 - 3 / 15)


def test_linear_ramp_has_no_knee():
    assert kneedle_elbow(np.arange(1.0, 50.0)) is None


def test_kneedle_guards():
    with pytest.raises(ValueError, match="3 distinct"):
        kneedle_elbow([1.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        kneedle_elbow([1.0, 2.0, np.inf])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(5, 300))
def test_kneedle_agrees_with_oracle(seed, n):
    r = np.random.default_rng(seed)
    vals = np.exp(r.normal(0.0, 1.0, n))
    if len(np.unique(vals)) < 3:
        return
    k = kneedle_elbow(vals)
    rank, value, dist = chord_oracle(vals)
    if dist < 1e-9:
        # no point lies below the chord
        assert k is None
        return
    assert k is not None and abs(k.rank - rank) <= 1
    if k.rank == rank:
        assert k.value == value


# prediction

def _matrix(base, X=None):
    base = np.asarray(base, dtype=float)
    n = len(base)
    X = base[:, None] if X is None else X
    return FeatureMatrix((THIRD_PARTY,), np.array([f"L{i}" for i in range(n)], dtype=object),
                         np.full(n, np.datetime64("2023-03-06")), X, base, target=2 * base)


def test_predict_network_multiplier():
    m = _matrix([50.0, 10.0, 30.0])
    model = train("naive_base", m)
    assert model.estimator.coefficient_.beta == 2.0
    res = predict_network(model, m)
    assert res.estimate[0] == 100.0 and res.ratio[0] == 2.0
    first = next(iter(res))
    assert (first.estimate, first.ratio, first.outlier) == (100.0, 2.0, False)


def test_predict_network_floor_counter():
    m = _matrix([10.0, 20.0, 30.0, 40.0])
    model = train("ols", m)
    X = np.array([[-5.0], [1.0], [-1.0], [3.0]])
    m2 = FeatureMatrix(m.schema, m.link_ids, m.dates, X, np.array([1.0, 1.0, 1.0, 1.0]))
    res = predict_network(model, m2)
    assert res.n_floored == int((model.predict(m2) < 0).sum()) == 2
    assert (res.estimate >= 0).all()
    bad = FeatureMatrix(("other",), m.link_ids, m.dates, X, m2.base_counts)
    with pytest.raises(SchemaMismatch):
        predict_network(model, bad)


# mitigation

def test_mitigate_examples():
    r = results([1000.0, 300.0], [100.0, 100.0])
    cap = mitigate(r, 8.0, "cap")
    assert cap.mitigated[0] == 800.0 and cap.outlier.tolist() == [True, False]
    fb = mitigate(r, 8.0, "fallback", base_beta=1.78)
    assert fb.mitigated[0] == pytest.approx(178.0, abs=1e-12)
    assert fb.mitigated[1] == 300.0


def test_ratio_at_elbow_not_flagged():
    r = results([800.0, 801.0], [100.0, 100.0])
    assert mitigate(r, 8.0).outlier.tolist() == [False, True]


def test_mitigate_errors_and_missing_base():
    r = results([10.0, 5.0], [np.nan, 0.0])
    out = mitigate(r, 2.0)
    assert not out.outlier.any() and np.isnan(out.ratio).all()
    with pytest.raises(ValueError, match="base_beta"):
        mitigate(r, 2.0, "fallback")
    with pytest.raises(ValueError):
        mitigate(r, 0.0)
    with pytest.raises(ValueError):
        mitigate(r, 2.0, "clip")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 20.0), st.sampled_from(["cap", "fallback"]))
def test_mitigation_invariants(seed, elbow, strategy):
    r = np.random.default_rng(seed)
    n = 50
    base = np.where(r.uniform(size=n) < 0.1, np.nan, r.integers(0, 30, n).astype(float))
    raw = r.normal(3, 4, n) * np.nan_to_num(base, nan=5.0)
    res = results(np.maximum(raw, 0), base, raw=raw)
    out = mitigate(res, elbow, strategy, base_beta=1.5)
    keep = ~out.outlier
    np.testing.assert_array_equal(out.mitigated[keep], res.estimate[keep])
    if strategy == "cap":
        assert (out.mitigated <= out.estimate).all()
    acc = out.accounting()
    assert acc["floored"] + acc["unchanged"] + acc["mitigated"] == acc["total"] == n


def test_planted_outlier_fraction():
    # 10% of links get ratios far above a tight bulk around the multiplier
    r = np.random.default_rng(21)
    n = 2000
    base = r.integers(5, 200, n).astype(float)
    ratio = 2.0 * np.exp(r.normal(0.0, 0.25, n))
    planted = r.permutation(n)[: n // 10]
    ratio[planted] *= r.uniform(4, 8, len(planted))
    res = results(ratio * base, base)
    knee = kneedle_elbow(res.ratio)
    out = mitigate(res, knee.value)
    assert out.flagged_link_fraction() == pytest.approx(0.10, abs=0.03)


def test_flagged_link_fraction_counts_links():
    r = results([10.0, 10.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0], links=["a", "a", "b", "c"])
    assert mitigate(r, 5.0).flagged_link_fraction() == pytest.approx(1 / 3)


# aggregation

def test_aggregate_walk_example():
    out = aggregate_trips(results([100.0], [1.0]), {"L0": 0.5}, AggregationParams(1.0, 0.5))
    assert out == {"total_km": 50.0, "total_trips": 25.0}


def test_aggregate_cycle_example():
    out = aggregate_trips(results([10.0], [1.0]), {"L0": 4.7}, AggregationParams(4.7, 1.0))
    assert out["total_trips"] == pytest.approx(10.0, rel=1e-15)


def test_aggregate_uses_mitigated_and_names_missing_link():
    r = mitigate(results([1000.0], [100.0]), 8.0)
    assert aggregate_trips(r, {"L0": 1.0}, AggregationParams(1.0, 1.0))["total_km"] == 800.0
    with pytest.raises(KeyError, match="L0"):
        aggregate_trips(r, {}, AggregationParams(1.0, 1.0))


def test_aggregation_params_validated():
    with pytest.raises(ValueError):
        AggregationParams(0.0, 0.5)
    with pytest.raises(ValueError):
        AggregationParams(1.0, 1.5)
    assert AggregationParams.for_mode("walk") == AggregationParams(1.0, 0.5)
    assert AggregationParams.for_mode("cycle") == AggregationParams(4.7, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.5), st.floats(0.2, 10.0))
def test_aggregate_linear_in_gamma_and_inverse_in_d(seed, gamma, d):
    r = np.random.default_rng(seed)
    n = 40
    res = results(r.uniform(0, 500, n), np.ones(n))
    lengths = {f"L{i}": float(r.uniform(0.01, 2)) for i in range(n)}
    a = aggregate_trips(res, lengths, AggregationParams(d, gamma))
    b = aggregate_trips(res, lengths, AggregationParams(d, 2 * gamma))
    c = aggregate_trips(res, lengths, AggregationParams(2 * d, gamma))
    assert a["total_km"] == b["total_km"]
    assert b["total_trips"] == pytest.approx(2 * a["total_trips"], rel=1e-12)
    assert c["total_trips"] == pytest.approx(a["total_trips"] / 2, rel=1e-12)


def test_rollup_examples():
    p = AggregationParams(1.0, 0.5)
    one = rollup_by_lga(results([10.0, 20.0], [1, 1]), [link(0), link(1)], p)
    assert one["A"]["trips"] == aggregate_trips(results([10.0, 20.0], [1, 1]), [link(0), link(1)], p)["total_trips"]
    two = rollup_by_lga(results([10.0, 10.0], [1, 1]), [link(0, lga="A"), link(1, lga="B")], p)
    assert two["A"] == two["B"]
    un = rollup_by_lga(results([10.0], [1]), [link(0, lga=None)], p)
    assert set(un) == {UNASSIGNED}


def test_rollup_additive_over_random_assignment():
    r = np.random.default_rng(22)
    n = 1000
    links = [link(i, float(r.uniform(10, 3000)), lga=f"G{r.integers(5)}") for i in range(n)]
    res = results(r.uniform(0, 300, n), np.ones(n))
    p = AggregationParams(1.0, 0.5)
    roll = rollup_by_lga(res, links, p)
    total = aggregate_trips(res, links, p)
    assert sum(v["trips"] for v in roll.values()) == pytest.approx(total["total_trips"], rel=1e-6)


def test_weekday_weekend_totals():
    p = AggregationParams(1.0, 1.0)
    monday = results([10.0], [1.0])
    assert set(weekday_weekend_totals(monday, {"L0": 1.0}, p)) == {"weekday_trips_per_day"}
    week = np.datetime64("2023-03-06") + np.arange(7)
    const = results(np.full(7, 10.0), np.ones(7), links=["L0"] * 7, dates=week)
    t = weekday_weekend_totals(const, {"L0": 1.0}, p)
    assert t["weekday_trips_per_day"] == t["weekend_trips_per_day"] == 10.0
    vals = np.arange(1.0, 8.0)
    mixed = results(vals, np.ones(7), links=["L0"] * 7, dates=week)
    t = weekday_weekend_totals(mixed, {"L0": 2.0}, p)
    # hand partition: Mon-Fri hold 1..5, Sat-Sun hold 6, 7
    assert t["weekday_trips_per_day"] == pytest.approx(2 * 15 / 5)
    assert t["weekend_trips_per_day"] == pytest.approx(2 * 13 / 2)


def test_csv_and_geojson_round_trip(tmp_path):
    r = mitigate(results([100.0, 0.0, 5.0], [10.0, np.nan, 1.0], raw=[100.0, -3.0, 5.0]), 8.0)
    r.write_csv(tmp_path / "r.csv")
    back = InferenceResults.read_csv(tmp_path / "r.csv", elbow=8.0, strategy="cap")
    for name in ("raw", "estimate", "base_count", "outlier", "mitigated"):
        np.testing.assert_array_equal(getattr(back, name), getattr(r, name))
    assert back.n_floored == 1 and list(back.link_ids) == list(r.link_ids)
    r.write_geojson(tmp_path / "r.geojson", [link(i) for i in range(3)])
    gj = json.loads((tmp_path / "r.geojson").read_text())
    props = [f["properties"] for f in gj["features"]]
    assert [p["link_id"] for p in props] == ["L0", "L1", "L2"]
    assert props[0]["outlier"] is True and props[1]["ratio"] is None


def test_aggregation_summary_per_day():
    week = np.datetime64("2023-03-06") + np.arange(2)
    res = results([10.0, 30.0], [1.0, 1.0], links=["L0", "L0"], dates=week)
    s = aggregation_summary(res, [link(0)], AggregationParams(1.0, 0.5))
    # 40 km over 2 days at 2 km per trip
    assert s["n_days"] == 2 and s["trips_per_day"] == pytest.approx(10.0)
    assert s["by_lga_per_day"]["A"]["trips"] == pytest.approx(10.0)
