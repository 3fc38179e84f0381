"""Great-circle distances on a spherical Earth."""
from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine(lat1, lon1, lat2, lon2, r=EARTH_RADIUS_M):
    """Great-circle distance in meters between points given in degrees.

    Uses the spherical law of cosines form
    ``r * arccos(sin p1 sin p2 + cos p1 cos p2 cos|l1 - l2|)`` with the
    arccos argument clamped to [-1, 1]. Broadcasts over numpy arrays; returns
    a Python float when every input is scalar.
    """
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dl = np.abs(np.radians(lon1) - np.radians(lon2))
    cos_angle = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(dl)
    d = r * np.arccos(np.clip(cos_angle, -1.0, 1.0))
    if np.ndim(d) == 0:
        return float(d)
    return d


def polyline_length(points) -> float:
    """Sum of great-circle segment lengths along ``[(lat, lon), ...]``."""
    if len(points) < 2:
        return 0.0
    pts = np.asarray(points, dtype=float)
    return float(np.sum(haversine(pts[:-1, 0], pts[:-1, 1], pts[1:, 0], pts[1:, 1])))


def bearing(lat1, lon1, lat2, lon2) -> float:
    """Initial compass bearing in degrees [0, 360) from point 1 to point 2."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(lon2 - lon1)
    x = np.sin(dl) * np.cos(p2)
    y = np.cos(p1) * np.sin(p2) - np.sin(p1) * np.cos(p2) * np.cos(dl)
    return float(np.degrees(np.arctan2(x, y)) % 360.0)
