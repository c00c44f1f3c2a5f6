"""Great-circle helpers shared by ingestion and feature derivation."""

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters on a spherical Earth. Broadcasts over arrays."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def polyline_length_m(coords):
    pts = np.asarray(coords, dtype=float)
    return float(haversine_m(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1]).sum())


def polyline_midpoint(coords):
    """Point halfway along the polyline, interpolated linearly within its segment."""
    pts = np.asarray(coords, dtype=float)
    seg = haversine_m(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])
    total = seg.sum()
    if total == 0.0:
        return float(pts[0, 0]), float(pts[0, 1])
    half = total / 2.0
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    i = int(np.searchsorted(cum, half, side="right") - 1)
    i = min(max(i, 0), len(seg) - 1)
    t = (half - cum[i]) / seg[i] if seg[i] > 0 else 0.0
    lon = pts[i, 0] + t * (pts[i + 1, 0] - pts[i, 0])
    lat = pts[i, 1] + t * (pts[i + 1, 1] - pts[i, 1])
    return float(lon), float(lat)
