"""Coordinate frames, region partition, polar angles and canonicalizing rotation."""

from __future__ import annotations

import enum

import numpy as np

from .mesh import MeshCase

TWO_PI = 2.0 * np.pi


class Region(enum.IntEnum):
    Freestream = 0
    OverAirfoil = 1
    Downstream = 2


def trailing_edge_index(case: MeshCase) -> int:
    sidx = case.surface_idx
    xs = case.points[sidx, 0]
    return int(sidx[xs == xs.max()].min())


def trailing_edge(case: MeshCase) -> np.ndarray:
    """Rightmost surface point (lowest index on ties)."""
    return case.points[trailing_edge_index(case)].copy()


def classify_region(x, lead, trail):
    """Region of each point along the chord axis.

    Accepts a single point or an ``(n, 2)`` array. Points exactly at the
    leading or trailing x-coordinate belong to ``OverAirfoil``.
    """
    x = np.asarray(x, dtype=np.float64)
    px = x[..., 0]
    out = np.full(px.shape, Region.OverAirfoil, dtype=np.int64)
    out[px < lead[0]] = Region.Freestream
    out[px > trail[0]] = Region.Downstream
    if out.ndim == 0:
        return Region(int(out))
    return out


def polar_angle(x, y):
    """atan2 mapped into [0, 2pi)."""
    t = np.arctan2(y, x) + 0.0
    t = np.where(t < 0.0, t + TWO_PI, t)
    return np.where(t >= TWO_PI, t - TWO_PI, t)


def four_axis_angles(pts) -> np.ndarray:
    """Angles of ``pts`` and its 90/180/270 degree CCW rotations.

    Works on a single point (returns shape ``(4,)``) or on ``(n, 2)``
    (returns ``(n, 4)``). The origin maps to four zeros.
    """
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    out = np.stack(
        [polar_angle(x, y), polar_angle(-y, x), polar_angle(-x, -y), polar_angle(y, -x)],
        axis=-1,
    )
    origin = (x == 0.0) & (y == 0.0)
    if np.any(origin):
        out = np.where(origin[..., None], 0.0, out)
    return out


def canonical_rotation(v_inf) -> np.ndarray:
    """Rotation taking ``v_inf`` onto the positive x-axis."""
    v = np.asarray(v_inf, dtype=np.float64)
    norm = float(np.hypot(v[0], v[1]))
    if norm == 0.0:
        raise ValueError("cannot canonicalize null velocity")
    c, s = v[0] / norm, v[1] / norm
    return np.array([[c, s], [-s, c]])


def rotate(R: np.ndarray, pts) -> np.ndarray:
    """Apply ``R`` to row vectors."""
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([R[0, 0] * x + R[0, 1] * y, R[1, 0] * x + R[1, 1] * y], axis=-1)


def _segment_distances(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # pts (n,2); a,b (m,2) -> (n,) min distance
    ab = b - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    ab2 = np.where(ab2 == 0.0, 1.0, ab2)
    out = np.empty(len(pts))
    chunk = max(1, 2_000_000 // max(1, len(a)))
    for start in range(0, len(pts), chunk):
        p = pts[start : start + chunk, None, :]
        ap = p - a[None]
        t = np.clip(np.einsum("nmj,mj->nm", ap, ab) / ab2, 0.0, 1.0)
        d = ap - t[..., None] * ab[None]
        out[start : start + chunk] = np.sqrt(np.min(np.einsum("nmj,nmj->nm", d, d), axis=1))
    return out


def wall_distance_polyline(x, polyline, closed: bool = False):
    """Exact minimum distance from ``x`` (one point or ``(n, 2)``) to a polyline."""
    poly = np.asarray(polyline, dtype=np.float64)
    if len(poly) < 2:
        raise ValueError("polyline needs at least two vertices")
    a = poly[:-1]
    b = poly[1:]
    if closed:
        a = np.vstack([a, poly[-1:]])
        b = np.vstack([b, poly[:1]])
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    d = _segment_distances(np.atleast_2d(x), a, b)
    return float(d[0]) if single else d
