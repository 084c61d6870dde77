"""Planar predicates on sampled curves.

Curve-level validity questions (is the offset simple, inside the domain,
counter-clockwise, how far can a ray travel) are decided on dense polyline
samplings rather than exact spline intersections: the checks are yes/no gates
and the sampling density is configuration, not a derived constant. Segment
intersection uses orientation predicates with an epsilon of 1e-12 on
bbox-normalized coordinates; collinear overlaps count as intersections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SamplingConfig",
    "Polyline",
    "sample_curve",
    "winding_contains",
    "classify_points",
    "is_simple",
    "signed_area",
    "ray_clearance",
    "INSIDE",
    "OUTSIDE",
    "BOUNDARY_CLOSE",
]

INSIDE = "inside"
OUTSIDE = "outside"
BOUNDARY_CLOSE = "boundary-close"

_ORIENT_EPS = 1e-12


@dataclass(frozen=True)
class SamplingConfig:
    """Sampling density and tolerance for curve-level predicates."""

    samples_per_span: int = 16
    geometric_tolerance: float = 1e-9

    def __post_init__(self):
        if self.samples_per_span < 4:
            raise ValueError("samples_per_span must be >= 4")
        if self.geometric_tolerance <= 0:
            raise ValueError("geometric_tolerance must be positive")


class Polyline:
    """Vertex chain, optionally closed, optionally carrying curve parameters.

    Consecutive vertices closer than 1e-12 are merged on construction (for a
    closed chain this includes a duplicated first/last vertex).
    """

    def __init__(self, vertices, closed: bool, params=None):
        pts = np.asarray(vertices, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("vertices must be (m, 2)")
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != (len(pts),):
                raise ValueError("params length mismatch")
        if closed and len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) <= 1e-12:
            pts = pts[:-1]
            params = params[:-1] if params is not None else None
        keep = np.ones(len(pts), dtype=bool)
        if len(pts) > 1:
            keep[1:] = np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12
        pts = pts[keep]
        if params is not None:
            params = params[keep]
        if closed and len(pts) < 3:
            raise ValueError("closed polyline needs >= 3 distinct vertices")
        if len(pts) < 2:
            raise ValueError("polyline needs >= 2 distinct vertices")
        self.vertices = pts
        self.closed = bool(closed)
        self.params = params

    def __len__(self):
        return len(self.vertices)

    def edges(self):
        """Edge start/end arrays; closed chains wrap around."""
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def bbox(self):
        v = self.vertices
        return v.min(axis=0), v.max(axis=0)

    def scale(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo)) or 1.0

    def reversed(self) -> "Polyline":
        params = None if self.params is None else self.params[::-1].copy()
        return Polyline(self.vertices[::-1].copy(), self.closed, params)


def sample_curve(curve, config: SamplingConfig = SamplingConfig()) -> Polyline:
    """Uniform per-span sampling of a spline curve.

    Periodic curves yield closed polylines with samples_per_span points per
    span (right span ends excluded, the wrap closes the chain); clamped
    curves yield open polylines including both endpoints.
    """
    spans = curve.space.spans()
    k = config.samples_per_span
    frac = np.arange(k) / k
    ts = (spans[:, 0][:, None]
          + (spans[:, 1] - spans[:, 0])[:, None] * frac[None, :]).ravel()
    closed = curve.space.periodic
    if not closed:
        ts = np.append(ts, spans[-1, 1])
    return Polyline(curve.evaluate(ts), closed, params=ts)


def _segment_distance(points: np.ndarray, a: np.ndarray,
                      b: np.ndarray) -> np.ndarray:
    """Min distance from each point to any segment (a[i], b[i])."""
    out = np.full(len(points), np.inf)
    d = b - a
    dd = np.einsum("ed,ed->e", d, d)
    dd[dd == 0.0] = 1.0
    for lo in range(0, len(points), 512):
        P = points[lo: lo + 512]
        w = P[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("ped,ed->pe", w, d) / dd[None, :], 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
        dist = np.linalg.norm(P[:, None, :] - proj, axis=2).min(axis=1)
        out[lo: lo + 512] = dist
    return out


def classify_points(boundary: Polyline, points,
                    tol: float = 1e-9) -> np.ndarray:
    """Vectorized winding test: +1 inside, 0 outside, -1 boundary-close."""
    if not boundary.closed:
        raise ValueError("containment needs a closed boundary")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = boundary.edges()
    ax, ay = a[:, 0], a[:, 1]
    bx, by = b[:, 0], b[:, 1]
    out = np.zeros(len(points), dtype=int)
    for lo in range(0, len(points), 512):
        P = points[lo: lo + 512]
        px = P[:, 0][:, None]
        py = P[:, 1][:, None]
        left = ((bx - ax)[None, :] * (py - ay[None, :])
                - (px - ax[None, :]) * (by - ay)[None, :])
        up = (ay[None, :] <= py) & (by[None, :] > py) & (left > 0)
        down = (by[None, :] <= py) & (ay[None, :] > py) & (left < 0)
        wn = up.sum(axis=1) - down.sum(axis=1)
        out[lo: lo + 512] = (wn != 0).astype(int)
    near = _segment_distance(points, a, b) <= tol
    out[near] = -1
    return out


def winding_contains(boundary: Polyline, point, tol: float = 1e-9) -> str:
    """Containment status of a single point: inside / outside / boundary-close."""
    code = classify_points(boundary, [point], tol)[0]
    return {1: INSIDE, 0: OUTSIDE, -1: BOUNDARY_CLOSE}[int(code)]


def signed_area(poly: Polyline) -> float:
    """Shoelace area; positive iff counter-clockwise."""
    if not poly.closed:
        raise ValueError("signed area needs a closed polyline")
    a, b = poly.edges()
    return float(0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


def _param_at(poly: Polyline, edge: int, frac: float) -> float:
    """Curve parameter at a fractional position along an edge."""
    if poly.params is None:
        return (edge + frac) / len(poly.vertices)
    t0 = poly.params[edge]
    nxt = (edge + 1) % len(poly.vertices)
    t1 = poly.params[nxt]
    if poly.closed and nxt == 0:
        t1 = poly.params[0] + (poly.params[-1] - poly.params[0]) * (
            len(poly.vertices) / (len(poly.vertices) - 1))
    return float(t0 + (t1 - t0) * frac)


def is_simple(poly: Polyline):
    """Whether no two non-adjacent edges intersect.

    Returns (flag, witness); on failure the witness is the (parameter,
    parameter) pair of the first detected crossing, in curve parameters when
    the polyline carries them.
    """
    a, b = poly.edges()
    m = len(a)
    scale = poly.scale()
    eps = _ORIENT_EPS * scale * scale
    d = b - a
    for i in range(m - 2):
        j0 = i + 2
        j1 = m if not (poly.closed and i == 0) else m - 1
        if j0 >= j1:
            continue
        A2 = a[j0:j1]
        B2 = b[j0:j1]
        # orientation of each endpoint of segment j wrt segment i and back
        d1 = (d[i, 0] * (A2[:, 1] - a[i, 1]) - (A2[:, 0] - a[i, 0]) * d[i, 1])
        d2 = (d[i, 0] * (B2[:, 1] - a[i, 1]) - (B2[:, 0] - a[i, 0]) * d[i, 1])
        D2 = B2 - A2
        d3 = (D2[:, 0] * (a[i, 1] - A2[:, 1]) - (a[i, 0] - A2[:, 0]) * D2[:, 1])
        d4 = (D2[:, 0] * (b[i, 1] - A2[:, 1]) - (b[i, 0] - A2[:, 0]) * D2[:, 1])
        proper = ((d1 > eps) & (d2 < -eps) | (d1 < -eps) & (d2 > eps)) & \
                 ((d3 > eps) & (d4 < -eps) | (d3 < -eps) & (d4 > eps))
        touching = (np.minimum(np.abs(d1), np.abs(d2)) <= eps) | \
                   (np.minimum(np.abs(d3), np.abs(d4)) <= eps)
        # touching only counts when the segments actually come near each other
        if np.any(touching):
            close = _segment_distance(
                np.vstack([A2[touching], B2[touching]]),
                a[i: i + 1], b[i: i + 1]) <= _ORIENT_EPS * scale
            near_hit = np.zeros(len(A2), dtype=bool)
            idx = np.flatnonzero(touching)
            half = len(idx)
            near_hit[idx] = close[:half] | close[half:]
        else:
            near_hit = np.zeros(len(A2), dtype=bool)
        hit = proper | near_hit
        if np.any(hit):
            j = j0 + int(np.argmax(hit))
            denom = d1[j - j0] - d2[j - j0]
            frac_j = d1[j - j0] / denom if abs(denom) > 0 else 0.0
            denom_i = d3[j - j0] - d4[j - j0]
            frac_i = d3[j - j0] / denom_i if abs(denom_i) > 0 else 0.0
            return False, (_param_at(poly, i, float(frac_i)),
                           _param_at(poly, j, float(frac_j)))
    return True, None


def ray_clearance(boundary: Polyline, origin, direction,
                  tol: float = 1e-9) -> float:
    """Largest s with origin + sigma*direction inside for all 0 < sigma < s.

    Computed as the nearest positive ray/edge crossing in units of
    ``direction``; crossings within ``tol`` (physical distance) of the origin
    are excluded since the ray may start on the boundary. Returns math.inf
    when the ray never crosses an edge.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ValueError("direction must be nonzero")
    a, b = boundary.edges()
    e = b - a
    denom = direction[0] * e[:, 1] - direction[1] * e[:, 0]
    w = a - origin
    ok = np.abs(denom) > 1e-300
    sigma = np.full(len(a), np.inf)
    tau = np.zeros(len(a))
    sigma[ok] = (w[ok, 0] * e[ok, 1] - w[ok, 1] * e[ok, 0]) / denom[ok]
    tau[ok] = (w[ok, 0] * direction[1] - w[ok, 1] * direction[0]) / denom[ok]
    edge_tol = tol / np.maximum(np.linalg.norm(e, axis=1), 1e-300)
    valid = ok & (tau >= -edge_tol) & (tau <= 1.0 + edge_tol) & \
        (sigma * norm > tol)
    if not np.any(valid):
        return math.inf
    return float(np.min(sigma[valid]))
