import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activevol.metrics import all_metrics, mae, r2, rmse

vectors = st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=2, max_size=50)


def test_r2_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert r2(y, y) == 1.0
    assert r2(y, np.full(3, y.mean())) == 0.0
    assert r2(y, y[::-1]) == -3.0


def test_r2_errors():
    with pytest.raises(ValueError, match="zero variance"):
        r2([2.0, 2.0], [1.0, 3.0])
    with pytest.raises(ValueError):
        r2([1.0], [1.0])
    assert math.isnan(all_metrics([2.0, 2.0], [2.0, 2.0])["r2"])


def test_mae_rmse_examples():
    assert mae([0, 0], [3, 4]) == 3.5
    assert rmse([0, 0], [3, 4]) == math.sqrt(12.5)
    assert (mae([1, 2], [1, 2]), rmse([1, 2], [1, 2])) == (0.0, 0.0)
    assert mae([1, 2, 3], [3.5, 4.5, 5.5]) == rmse([1, 2, 3], [3.5, 4.5, 5.5]) == 2.5
    with pytest.raises(ValueError):
        mae([], [])


@settings(max_examples=200, deadline=None)
@given(vectors, st.data())
def test_rmse_at_least_mae(y, data):
    yhat = data.draw(st.lists(st.floats(-1e4, 1e4, allow_nan=False), min_size=len(y), max_size=len(y)))
    # squares of errors below ~1e-154 underflow, so allow a tiny absolute slack
    assert rmse(y, yhat) >= mae(y, yhat) * (1 - 1e-12) - 1e-150


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 100), st.floats(-100, 100))
def test_r2_affine_invariant(seed, a, b):
    r = np.random.default_rng(seed)
    y = r.normal(size=20)
    yhat = y + r.normal(size=20)
    assert r2(a * y + b, a * yhat + b) == pytest.approx(r2(y, yhat), rel=1e-9, abs=1e-9)
