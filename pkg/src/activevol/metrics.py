"""Goodness-of-fit metrics."""

from __future__ import annotations

import math

import numpy as np


def _pair(y, yhat, min_len=1):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("y and yhat must be aligned 1-D vectors")
    if len(y) < min_len:
        raise ValueError(f"need at least {min_len} values")
    return y, yhat


def r2(y, yhat) -> float:
    """``1 - SS_res / SS_tot``; negative when worse than predicting the mean."""
    y, yhat = _pair(y, yhat, 2)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("r2 undefined: y has zero variance")
    return 1.0 - float(((y - yhat) ** 2).sum()) / ss_tot


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.abs(y - yhat).mean())


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(float(((y - yhat) ** 2).mean()))


def all_metrics(y, yhat) -> dict:
    """r2 (NaN when undefined), mae and rmse."""
    try:
        r = r2(y, yhat)
    except ValueError:
        r = float("nan")
    return {"r2": r, "mae": mae(y, yhat), "rmse": rmse(y, yhat)}
