"""Lattice-cell cover of the hole left inside the ring.

The hole (domain minus ring) is covered by axis-aligned cells
C_ij = origin + [h_c i, h_c (i+1)] x [h_c j, h_c (j+1)]. Cells intersecting
the hole are selected by an inclusive polyline predicate; the resulting
union must be edge-connected, contained in the domain, and overlap the ring
with positive margin. Failing any of these, the spacing halves and the
selection repeats (up to 6 halvings).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import geometry as ge
from .corners import RingManifold

__all__ = [
    "MultiCellError",
    "MultiCellDomain",
    "CellMap",
    "hole_boundary",
    "select_cells",
    "cell_geometry_map",
]


class MultiCellError(RuntimeError):
    """No admissible cell cover found within the retry budget."""


@dataclass(frozen=True)
class MultiCellDomain:
    """Active lattice cells plus derived index geometry.

    ``mask[i - imin, j - jmin]`` marks cell (i, j) active; the parameter
    rectangle of the geometry map is [0, ni] x [0, nj] in cell units.
    """

    h_c: float
    origin_offset: tuple
    active_cells: frozenset
    overlap_margin: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def index_bbox(self):
        ii = [c[0] for c in self.active_cells]
        jj = [c[1] for c in self.active_cells]
        return min(ii), max(ii), min(jj), max(jj)

    @property
    def mask(self) -> np.ndarray:
        imin, imax, jmin, jmax = self.index_bbox
        m = np.zeros((imax - imin + 1, jmax - jmin + 1), dtype=bool)
        for (i, j) in self.active_cells:
            m[i - imin, j - jmin] = True
        return m

    @property
    def anchor(self) -> np.ndarray:
        imin, _, jmin, _ = self.index_bbox
        return (np.asarray(self.origin_offset, dtype=float)
                + self.h_c * np.array([imin, jmin]))

    def cell_rect(self, i: int, j: int):
        o = np.asarray(self.origin_offset, dtype=float)
        lo = o + self.h_c * np.array([i, j])
        return lo, lo + self.h_c

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        """True where a point lies in the closed union of active cells."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        o = np.asarray(self.origin_offset, dtype=float)
        cont = (pts - o[None, :]) / self.h_c
        out = np.zeros(len(pts), dtype=bool)
        shift = tol / self.h_c
        # a point on a lattice line belongs to either neighbouring cell
        for dx in (0.0, -shift, shift):
            for dy in (0.0, -shift, shift):
                idx = np.floor(cont + [dx, dy]).astype(int)
                out |= np.fromiter(
                    ((int(a), int(b)) in self.active_cells for a, b in idx),
                    dtype=bool, count=len(pts))
        return out

    def boundary_faces(self):
        """Faces between an active cell and an inactive neighbour.

        Returns rows (i, j, axis, side): the face of cell (i, j) orthogonal
        to ``axis`` on its low (side=0) or high (side=1) end.
        """
        faces = []
        for (i, j) in sorted(self.active_cells):
            for axis, side, di, dj in ((0, 0, -1, 0), (0, 1, 1, 0),
                                       (1, 0, 0, -1), (1, 1, 0, 1)):
                if (i + di, j + dj) not in self.active_cells:
                    faces.append((i, j, axis, side))
        return faces

    def boundary_samples(self, per_face: int = 9) -> np.ndarray:
        pts = []
        us = np.linspace(0.0, 1.0, per_face)
        for (i, j, axis, side) in self.boundary_faces():
            lo, hi = self.cell_rect(i, j)
            if axis == 0:
                x = hi[0] if side else lo[0]
                pts.append(np.column_stack(
                    [np.full(per_face, x), lo[1] + us * self.h_c]))
            else:
                y = hi[1] if side else lo[1]
                pts.append(np.column_stack(
                    [lo[0] + us * self.h_c, np.full(per_face, y)]))
        return np.vstack(pts)


def hole_boundary(ring: RingManifold,
                  config: ge.SamplingConfig = ge.SamplingConfig()
                  ) -> ge.Polyline:
    """Closed CCW trace of the ring's inner edges.

    Verifies the pieces actually chain: each piece must start where the
    previous one ends (within the geometric tolerance at domain scale).
    """
    poly = ring.hole_polyline(config)
    scale = poly.scale()
    ends = [piece.points(np.array([0.0, 1.0]), ring.patches)
            for piece in ring.hole_pieces]
    gap = 0.0
    for k in range(len(ends)):
        nxt = ends[(k + 1) % len(ends)]
        gap = max(gap, float(np.linalg.norm(ends[k][1] - nxt[0])))
    if gap > 1e-7 * scale:
        raise MultiCellError(f"hole trace does not close (gap {gap:.3g})")
    if ge.signed_area(poly) <= 0.0:
        raise MultiCellError("hole trace is not counter-clockwise")
    return poly


def _mark_cells(points: np.ndarray, origin: np.ndarray, h_c: float,
                tol: float):
    """Cells touched by each point, inclusive within tol of lattice lines.

    A point within tol of a lattice line marks the cells on both sides
    (and all four around a lattice node); floating error may land an
    on-line point just below the line, so both fractional ends count.
    """
    cells = set()
    cont = (points - origin[None, :]) / h_c
    base = np.floor(cont).astype(int)
    frac = cont - base
    eps = tol / h_c
    near_lo = frac < eps
    near_hi = frac > 1.0 - eps
    for k in range(len(points)):
        i, j = int(base[k, 0]), int(base[k, 1])
        di = [0] + ([-1] if near_lo[k, 0] else []) \
            + ([1] if near_hi[k, 0] else [])
        dj = [0] + ([-1] if near_lo[k, 1] else []) \
            + ([1] if near_hi[k, 1] else [])
        for a in di:
            for b in dj:
                cells.add((i + a, j + b))
    return cells


def _hole_interior_samples(hole: ge.Polyline, count: int, tol: float,
                           seed: int = 2301) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = hole.bbox()
    out = []
    have = 0
    for _ in range(64):
        cand = lo + rng.random((4 * count, 2)) * (hi - lo)
        codes = ge.classify_points(hole, cand, tol)
        good = cand[codes == 1]
        out.append(good)
        have += len(good)
        if have >= count:
            break
    pts = np.vstack(out)
    if len(pts) < count:
        raise MultiCellError("could not sample the hole interior")
    return pts[:count]


def select_cells(hole: ge.Polyline, omega: ge.Polyline, h_c: float | None = None,
                 origin_offset=None,
                 config: ge.SamplingConfig = ge.SamplingConfig(),
                 max_halvings: int = 6) -> MultiCellDomain:
    """Select the lattice cells intersecting the hole region.

    The default spacing is a quarter of the hole bounding box's short side;
    the default lattice anchor is the bounding box's lower-left corner
    snapped down to a multiple of h_c (pass origin_offset=(0, 0) for a
    lattice anchored at the origin). On containment, connectivity, covering
    or overlap failure the spacing halves and selection repeats.
    """
    tol = config.geometric_tolerance
    lo, hi = hole.bbox()
    if h_c is None:
        h_c = 0.25 * float(min(hi - lo))
    if h_c <= 0.0:
        raise ValueError("h_c must be positive")
    interior = _hole_interior_samples(hole, 2000, tol)
    last_reason = ""
    for attempt in range(max_halvings + 1):
        if origin_offset is None:
            origin = np.floor(lo / h_c) * h_c
        else:
            origin = np.asarray(origin_offset, dtype=float)
        domain, reason = _try_select(hole, omega, h_c, origin, interior, tol)
        if domain is not None:
            return domain
        last_reason = reason
        h_c *= 0.5
    raise MultiCellError(
        f"no admissible cell cover after {max_halvings} halvings "
        f"(last failure: {last_reason})")


def _try_select(hole, omega, h_c, origin, interior, tol):
    # cells touched by the hole boundary: walk the polyline at h_c/8 steps
    starts, ends = hole.edges()
    lengths = np.linalg.norm(ends - starts, axis=1)
    pieces = [hole.vertices]
    for k in range(len(starts)):
        n = int(math.ceil(lengths[k] / (h_c / 8.0)))
        if n > 1:
            us = np.arange(1, n)[:, None] / n
            pieces.append(starts[k] + us * (ends[k] - starts[k]))
    boundary_pts = np.vstack(pieces)
    active = _mark_cells(boundary_pts, origin, h_c, tol)
    # cells with a lattice node strictly inside the hole (covers cells fully
    # interior to the hole, whose boundary the polyline never visits)
    imin = int(math.floor((hole.bbox()[0][0] - origin[0]) / h_c)) - 1
    imax = int(math.ceil((hole.bbox()[1][0] - origin[0]) / h_c)) + 1
    jmin = int(math.floor((hole.bbox()[0][1] - origin[1]) / h_c)) - 1
    jmax = int(math.ceil((hole.bbox()[1][1] - origin[1]) / h_c)) + 1
    gi = np.arange(imin, imax + 1)
    gj = np.arange(jmin, jmax + 1)
    nodes = np.stack(np.meshgrid(origin[0] + h_c * gi, origin[1] + h_c * gj,
                                 indexing="ij"), axis=-1).reshape(-1, 2)
    codes = ge.classify_points(hole, nodes, tol)
    inside_nodes = nodes[codes == 1]
    node_idx = np.round((inside_nodes - origin[None, :]) / h_c).astype(int)
    for (i, j) in node_idx:
        for di in (-1, 0):
            for dj in (-1, 0):
                active.add((int(i) + di, int(j) + dj))

    domain = MultiCellDomain(h_c, tuple(origin), frozenset(active))

    # containment in Omega: walk every active cell's boundary densely; the
    # lattice later collocates along cell-union edges, so corner/midpoint
    # sampling misses boundary wiggles shorter than the cell size
    frac = np.arange(17) / 16.0
    samples = []
    for (i, j) in active:
        clo, chi = domain.cell_rect(i, j)
        xs = clo[0] + (chi[0] - clo[0]) * frac
        ys = clo[1] + (chi[1] - clo[1]) * frac
        samples.append(np.column_stack([xs, np.full_like(xs, clo[1])]))
        samples.append(np.column_stack([xs, np.full_like(xs, chi[1])]))
        samples.append(np.column_stack([np.full_like(ys, clo[0]), ys]))
        samples.append(np.column_stack([np.full_like(ys, chi[0]), ys]))
    samples = np.vstack(samples)
    inside = ge.classify_points(omega, samples, tol)
    if not np.all(inside == 1):
        bad = samples[inside != 1][0]
        return None, f"cell boundary point ({bad[0]:.6g}, {bad[1]:.6g}) " \
                     "leaves the domain"

    # edge connectivity
    lab, num = ndimage.label(domain.mask,
                             structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    if num != 1:
        return None, f"active cells split into {num} components"

    # covering of the sampled hole interior
    if not np.all(domain.contains(interior, tol)):
        k = int(np.argmax(~domain.contains(interior, tol)))
        return None, f"hole sample {interior[k]} not covered"

    # positive overlap: the hole boundary strictly inside the cell union,
    # the cell-union boundary strictly outside the open hole
    bd = domain.boundary_samples()
    hole_codes = ge.classify_points(hole, bd, tol)
    if not np.all(hole_codes == 0):
        return None, "cell-union boundary touches the hole"
    margin = _polyline_distance(hole.vertices, bd)
    if margin <= tol:
        return None, "zero-width overlap"
    return MultiCellDomain(h_c, tuple(origin), frozenset(active),
                           overlap_margin=float(margin),
                           diagnostics={"cells": len(active)}), ""


def _polyline_distance(pts_a: np.ndarray, pts_b: np.ndarray) -> float:
    d2 = np.min(
        np.sum((pts_a[:, None, :] - pts_b[None, :, :]) ** 2, axis=2))
    return math.sqrt(float(d2))


class CellMap:
    """Affine geometry map: parameter (cell units) -> physical coordinates.

    G(x) = anchor + h_c x on [0, ni] x [0, nj]; Jacobian h_c I, determinant
    h_c^2 everywhere.
    """

    def __init__(self, domain: MultiCellDomain):
        self.domain = domain
        imin, imax, jmin, jmax = domain.index_bbox
        self.shape = (imax - imin + 1, jmax - jmin + 1)
        self.anchor = domain.anchor
        self.h_c = domain.h_c

    def evaluate(self, x1, x2) -> np.ndarray:
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        return self.anchor[None, :] + self.h_c * np.column_stack([x1, x2])

    def jacobian(self, x1, x2) -> np.ndarray:
        m = len(np.atleast_1d(x1))
        J = np.zeros((m, 2, 2))
        J[:, 0, 0] = self.h_c
        J[:, 1, 1] = self.h_c
        return J

    def inverse(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.anchor[None, :]) / self.h_c


def cell_geometry_map(domain: MultiCellDomain) -> CellMap:
    return CellMap(domain)
