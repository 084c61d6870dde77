"""Ring construction for boundary curves with corners.

A corner sits at a knot of multiplicity p, where the tangent direction jumps.
The boundary splits into C^1 segments between consecutive corners; each
segment is offset independently over a parameter interval trimmed by delta at
convex corner ends and untrimmed at non-convex ends. The gaps are filled by
corner patches: a bilinearly blended Coons patch between the two boundary
sub-arcs and the two straight rulings at a convex corner, a parallelogram
spanned by the two one-sided offset displacements at a non-convex corner.
Inner curves are fitted jointly so that neighbouring pieces share endpoint
values exactly, which makes every glued edge pair coincide as parameterized
curves, not just as point sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as ge
from . import splines as sp
from .offset import (MuSystem, OffsetError, OffsetParams, QuasiNormalField,
                     initial_cap, make_quasi_normal)
from .ring import RingPatch, build_ftilde, fit_ring, patch_regularity

__all__ = [
    "CornerError",
    "Corner",
    "CornerList",
    "SegmentOffset",
    "RingManifold",
    "detect_corners",
    "segment_intervals",
    "coons_corner_patch",
    "parallelogram_corner_patch",
    "build_ring_manifold",
]

ANGLE_TOLERANCE = 1e-6  # rad; smaller tangent jumps do not count as corners


class CornerError(RuntimeError):
    """Corner classification or corner-patch construction failed."""


@dataclass(frozen=True)
class Corner:
    parameter: float
    convex: bool
    delta_minus: float
    delta_plus: float
    tangent_in: tuple
    tangent_out: tuple
    angle: float


@dataclass(frozen=True)
class CornerList:
    corners: tuple

    def __len__(self):
        return len(self.corners)

    def __iter__(self):
        return iter(self.corners)

    def __getitem__(self, i):
        return self.corners[i]

    @property
    def parameters(self):
        return tuple(c.parameter for c in self.corners)


def _one_sided_tangents(boundary: sp.SplineCurve, t: float):
    eta = 1e-9
    t_right = t if t < boundary.space.domain[1] else boundary.space.domain[0]
    right = boundary.evaluate([t_right], 1)[0]
    left = boundary.evaluate([t - eta], 1)[0]
    return left, right


def detect_corners(boundary: sp.SplineCurve) -> CornerList:
    """Find tangent-direction jumps at knots of multiplicity p.

    Convexity for a counter-clockwise curve: the tangent turns left across
    the corner, det(T-, T+) > 0. Anti-parallel tangents (cusps) are rejected.
    The default delta on both sides is half the smaller adjacent knot span.
    """
    space = boundary.space
    p = space.degree
    corners = []
    breaks = space.breakpoints
    spans = space.spans()
    lengths = spans[:, 1] - spans[:, 0]
    for j, t in enumerate(breaks):
        if space.multiplicity(t) < p:
            continue
        left, right = _one_sided_tangents(boundary, float(t))
        nl, nr = np.linalg.norm(left), np.linalg.norm(right)
        if nl == 0.0 or nr == 0.0:
            raise CornerError(f"vanishing one-sided tangent at t={t:.6g}")
        cross = left[0] * right[1] - left[1] * right[0]
        dot = float(left @ right)
        angle = math.atan2(cross, dot)
        if abs(angle) <= ANGLE_TOLERANCE:
            continue
        if math.pi - abs(angle) < ANGLE_TOLERANCE:
            raise CornerError(
                f"cusp (anti-parallel tangents) at t={t:.6g} is unsupported")
        span_after = lengths[j]
        span_before = lengths[j - 1] if j > 0 else lengths[-1]
        delta = 0.5 * min(span_before, span_after)
        corners.append(Corner(float(t), angle > 0.0, delta, delta,
                              tuple(left / nl), tuple(right / nr),
                              abs(angle)))
    return CornerList(tuple(corners))


def segment_intervals(corners: CornerList) -> list:
    """Offset intervals X_i between consecutive corners, trimmed by delta.

    Segment i runs from corner i to corner i+1 (cyclically, the last wraps
    past 1). The interval is trimmed by delta at an end whose corner is
    convex and untrimmed at a non-convex end.
    """
    m = len(corners)
    out = []
    for i in range(m):
        ci = corners[i]
        cj = corners[(i + 1) % m]
        t0 = ci.parameter
        t1 = cj.parameter + (1.0 if (i + 1) == m else 0.0)
        a = t0 + (ci.delta_plus if ci.convex else 0.0)
        b = t1 - (cj.delta_minus if cj.convex else 0.0)
        if not a < b:
            raise CornerError(
                f"segment {i}: offset interval [{a:.6g}, {b:.6g}] is empty; "
                f"reduce delta")
        out.append((a, b))
    return out


def _bezier_line(a: np.ndarray, b: np.ndarray, degree: int) -> np.ndarray:
    """Degree-elevated straight segment: control points on the chord."""
    g = np.arange(degree + 1)[:, None] / degree
    return (1.0 - g) * a[None, :] + g * b[None, :]


def _single_span_arc(boundary: sp.SplineCurve, a: float, b: float):
    arc = sp.extract_segment(boundary, a, b)
    if arc.space.num_spans() != 1:
        raise CornerError(
            f"boundary arc [{a:.6g}, {b:.6g}] crosses a knot; reduce delta "
            f"to at most the adjacent span length")
    return arc.control_points


def coons_corner_patch(boundary: sp.SplineCurve, corner: Corner,
                       prev_inner: sp.SplineCurve, prev_end: float,
                       next_inner: sp.SplineCurve, next_start: float,
                       tol: float = 1e-10) -> sp.TensorPatch:
    """Bilinearly blended patch filling the wedge at a convex corner.

    Edges: v=0 is the incoming boundary arc traversed backwards from the
    corner, u=0 the outgoing boundary arc, u=1 and v=1 the straight rulings
    from the trimmed boundary points to the shared inner-curve endpoint. The
    blend of degree-p edge data is itself the exact degree (p, p) tensor
    net, since the blending weights are affine and affine functions have
    their Greville values as spline coefficients.
    """
    t = corner.parameter
    p = boundary.space.degree
    # v=0 edge: P(u, 0) = C_B(t - u delta_minus); reversed arc of C_B
    f0 = _single_span_arc(boundary, t - corner.delta_minus, t)[::-1]
    # u=0 edge: P(0, v) = C_B(t + v delta_plus)
    e0 = _single_span_arc(boundary, t, t + corner.delta_plus)
    a_prev = boundary.evaluate([t - corner.delta_minus])[0]
    a_next = boundary.evaluate([t + corner.delta_plus])[0]
    w_prev = prev_inner.evaluate([prev_end])[0]
    w_next = next_inner.evaluate([next_start])[0]
    e1 = _bezier_line(a_prev, w_prev, p)   # P(1, v)
    f1 = _bezier_line(a_next, w_next, p)   # P(u, 1)
    scale = max(np.abs(np.concatenate([f0, e0, e1, f1])).max(), 1.0)
    checks = [
        np.linalg.norm(f0[0] - e0[0]),    # corner point
        np.linalg.norm(f0[-1] - e1[0]),   # trimmed point, previous side
        np.linalg.norm(e0[-1] - f1[0]),   # trimmed point, next side
        np.linalg.norm(e1[-1] - f1[-1]),  # shared inner endpoint
    ]
    if max(checks) > tol * scale:
        raise CornerError(
            f"corner patch edges incompatible at t={t:.6g} "
            f"(max endpoint gap {max(checks):.3g})")
    g = np.arange(p + 1) / p
    p00, p10 = f0[0], f0[-1]
    p01, p11 = f1[0], f1[-1]
    gu = g[:, None, None]
    gv = g[None, :, None]
    net = ((1 - gv) * f0[:, None, :] + gv * f1[:, None, :]
           + (1 - gu) * e0[None, :, :] + gu * e1[None, :, :]
           - ((1 - gu) * (1 - gv) * p00 + gu * (1 - gv) * p10
              + (1 - gu) * gv * p01 + gu * gv * p11))
    bez = sp.uniform_clamped_space(p, 0.0, 1.0, 1)
    return sp.TensorPatch(bez, bez, net)


def parallelogram_corner_patch(corner_point: np.ndarray,
                               v_minus: np.ndarray, v_plus: np.ndarray,
                               min_angle: float = 1e-3) -> sp.TensorPatch:
    """Bilinear patch X + u v_minus + v v_plus at a non-convex corner.

    v_minus and v_plus are the one-sided offset displacements mu q at the
    corner parameter; the angle between them must stay above min_angle.
    """
    nm, npl = np.linalg.norm(v_minus), np.linalg.norm(v_plus)
    if nm == 0.0 or npl == 0.0:
        raise CornerError("zero offset displacement at a non-convex corner")
    cross = v_minus[0] * v_plus[1] - v_minus[1] * v_plus[0]
    angle = math.asin(min(1.0, abs(cross) / (nm * npl)))
    if float(v_minus @ v_plus) < 0.0:
        angle = math.pi - angle
    if angle < min_angle:
        raise CornerError(
            f"quasi-normals nearly parallel at a non-convex corner "
            f"(angle {angle:.2e} rad)")
    x = np.asarray(corner_point, dtype=float)
    net = np.empty((2, 2, 2))
    net[0, 0] = x
    net[1, 0] = x + v_minus
    net[0, 1] = x + v_plus
    net[1, 1] = x + v_minus + v_plus
    lin = sp.uniform_clamped_space(1, 0.0, 1.0, 1)
    return sp.TensorPatch(lin, lin, net)


@dataclass(frozen=True)
class SegmentOffset:
    """Per-segment offsetting request: field kind, options, loop parameters."""

    kind: str = "curveNormal"
    options: dict = field(default_factory=dict)
    params: OffsetParams | None = None


@dataclass(frozen=True)
class PatchInterface:
    """Glued edge pair: (patch, fixed axis, side) on both sides.

    Both edges are parameterized by their free axis scaled to [0, 1]; all
    interfaces produced here are direction-preserving.
    """

    patch_a: int
    edge_a: tuple
    patch_b: int
    edge_b: tuple


@dataclass
class SegmentData:
    curve: sp.SplineCurve          # full boundary segment
    interval: tuple                # X_i
    outer: sp.SplineCurve          # boundary restricted to X_i
    q: QuasiNormalField
    mu: sp.ScalarSplineFunction
    inner: sp.SplineCurve          # fitted C_I over X_i


@dataclass(frozen=True)
class HolePiece:
    """One stretch of the inner hole boundary, tied to a ring patch.

    ``kind`` selects the sampler: "curve" walks ``curve`` affinely over
    ``interval``; "far_edge_u" walks the u=1 edge of a parallelogram patch
    from v=0 to v=1; "far_edge_v" walks its v=1 edge from u=1 back to u=0.
    """

    patch: int
    n_hint: int
    kind: str = "curve"
    curve: sp.SplineCurve | None = None
    interval: tuple = (0.0, 1.0)

    def points(self, us, patches) -> np.ndarray:
        us = np.atleast_1d(np.asarray(us, dtype=float))
        if self.kind == "curve":
            a, b = self.interval
            return self.curve.evaluate(a + (b - a) * us)
        net = patches[self.patch].control_net
        if self.kind == "far_edge_u":
            return ((1.0 - us)[:, None] * net[1, 0][None, :]
                    + us[:, None] * net[1, 1][None, :])
        if self.kind == "far_edge_v":
            return ((1.0 - us)[:, None] * net[1, 1][None, :]
                    + us[:, None] * net[0, 1][None, :])
        raise ValueError(f"unknown hole piece kind {self.kind!r}")


@dataclass
class RingManifold:
    """Cyclic sequence of segment and corner patches forming the ring.

    ``edge_roles`` maps (patch index, fixed axis, side) to one of "outer"
    (on the domain boundary), "hole" (on the inner hole boundary) or
    "interface" (glued to a neighbouring patch). ``patch_kinds`` holds
    "segment", "coons", "parallelogram" or "ring" per patch.
    """

    boundary: sp.SplineCurve
    corners: CornerList
    patches: list
    patch_kinds: list
    interfaces: list
    edge_roles: dict
    segments: list
    hole_pieces: list              # ordered HolePiece entries
    ring_patch: RingPatch | None = None
    iterations_used: int = 0
    shrink_trace: list = field(default_factory=list)

    def hole_polyline(self, config: ge.SamplingConfig = ge.SamplingConfig()
                      ) -> ge.Polyline:
        """Closed polyline tracing the inner hole boundary."""
        pts = []
        for piece in self.hole_pieces:
            n = max(2, piece.n_hint * config.samples_per_span)
            us = np.linspace(0.0, 1.0, n, endpoint=False)
            pts.append(piece.points(us, self.patches))
        return ge.Polyline(np.vstack(pts), closed=True)

    def interface_residue(self, samples: int = 100) -> float:
        us = np.linspace(0.0, 1.0, samples)
        worst = 0.0
        for itf in self.interfaces:
            pa = _edge_points(self.patches[itf.patch_a], itf.edge_a, us)
            pb = _edge_points(self.patches[itf.patch_b], itf.edge_b, us)
            worst = max(worst, float(np.linalg.norm(pa - pb, axis=1).max()))
        return worst


def _edge_points(patch: sp.TensorPatch, edge: tuple, us: np.ndarray):
    axis, side = edge
    fixed_space = patch.space_s if axis == 0 else patch.space_t
    free_space = patch.space_t if axis == 0 else patch.space_s
    fv = fixed_space.domain[1] if side == 1 else fixed_space.domain[0]
    a, b = free_space.domain
    free = a + (b - a) * us
    fixed = np.full_like(free, fv)
    if axis == 0:
        return patch.evaluate(fixed, free)
    return patch.evaluate(free, fixed)


def _segment_mu_space(interval, degree=3, h=0.02):
    a, b = interval
    spans = max(2, int(math.ceil((b - a) / h)))
    return sp.uniform_clamped_space(degree, a, b, spans)


def _offset_point(seg: SegmentData, t: float) -> np.ndarray:
    return (seg.curve.evaluate([t])[0]
            + seg.mu.evaluate([t])[0] * seg.q.evaluate([t])[0])


def _fit_inner_curves(segments, corners, intervals):
    """Per-segment L2 fits of C_O with smooth endpoint corrections.

    Neighbouring inner curves must share endpoint values exactly (a common
    point at a convex corner, pinned one-sided offset points at a non-convex
    one). Enforcing that through the least-squares system makes the minimal
    correction ring at the knot scale (inverse-Gram oscillation), which
    caps downstream approximation orders, so each free fit is corrected by
    the affine interpolant of its two endpoint mismatches instead: exact at
    the ends, smooth everywhere, and decaying nothing into the interior.
    """
    m = len(segments)
    for i, seg in enumerate(segments):
        space = seg.outer.space

        def target(pts, seg=seg):
            return (seg.curve.evaluate(pts)
                    + seg.mu.evaluate(pts)[:, None] * seg.q.evaluate(pts))

        seg.inner = sp.SplineCurve(space, sp.fit_l2(space, target))
    ends = [[None, None] for _ in range(m)]
    for i in range(m):
        corner = corners[(i + 1) % m]
        prev_i, next_i = i, (i + 1) % m
        # parameters are per-segment local; the wrapped last segment already
        # lives on an unrolled interval past 1
        b_prev = intervals[prev_i][1]
        a_next = intervals[next_i][0]
        if corner.convex:
            w = 0.5 * (segments[prev_i].inner.evaluate([b_prev])[0]
                       + segments[next_i].inner.evaluate([a_next])[0])
            ends[prev_i][1] = w
            ends[next_i][0] = w
        else:
            ends[prev_i][1] = _offset_point(segments[prev_i], b_prev)
            ends[next_i][0] = _offset_point(segments[next_i], a_next)
    for i, seg in enumerate(segments):
        a, b = intervals[i]
        da = ends[i][0] - seg.inner.evaluate([a])[0]
        db = ends[i][1] - seg.inner.evaluate([b])[0]
        lam = ((seg.inner.space.greville() - a) / (b - a))[:, None]
        cp = seg.inner.control_points + (1.0 - lam) * da + lam * db
        seg.inner = sp.SplineCurve(seg.inner.space, cp)
        gap = max(
            np.linalg.norm(seg.inner.evaluate([a])[0] - ends[i][0]),
            np.linalg.norm(seg.inner.evaluate([b])[0] - ends[i][1]))
        if gap > 1e-9:
            raise CornerError(
                f"inner-curve endpoint correction failed on segment {i} "
                f"(gap {gap:.3g})")
    return segments


def _segment_patch(seg: SegmentData) -> sp.TensorPatch:
    s_space = sp.uniform_clamped_space(1, 0.0, 1.0, 1)
    net = np.stack([seg.outer.control_points, seg.inner.control_points])
    return sp.TensorPatch(s_space, seg.outer.space, net)


def _regular(patch: sp.TensorPatch, grid: int = 24) -> bool:
    lo, _, single = patch_regularity(patch, grid)
    scale = _patch_scale(patch)
    return single and lo > 1e-10 * scale * scale


def _patch_scale(patch: sp.TensorPatch) -> float:
    net = patch.control_net.reshape(-1, 2)
    d = float(np.hypot(*(net.max(axis=0) - net.min(axis=0))))
    return d if d > 0.0 else 1.0


def build_ring_manifold(boundary: sp.SplineCurve,
                        corners: CornerList | None = None,
                        offsets=None,
                        config: ge.SamplingConfig = ge.SamplingConfig()
                        ) -> RingManifold:
    """Offset every segment, fill the corners, glue everything C0.

    ``offsets`` is a SegmentOffset applied to every segment or a list with
    one entry per segment. A boundary without corners degenerates to the
    single-patch periodic ring. The per-segment cap parameters shrink
    together until the assembled hole boundary passes the global validity
    gates (simple, strictly inside, counter-clockwise, regular patches);
    exhausting the iteration budget raises OffsetError.
    """
    if corners is None:
        corners = detect_corners(boundary)
    if offsets is None:
        offsets = SegmentOffset()
    if len(corners) == 0:
        return _smooth_manifold(boundary, offsets, config)
    m = len(corners)
    if isinstance(offsets, SegmentOffset):
        offsets = [offsets] * m
    if len(offsets) != m:
        raise ValueError(f"expected {m} segment offsets, got {len(offsets)}")
    intervals = segment_intervals(corners)
    omega = ge.sample_curve(boundary, config)

    segments = []
    systems = []
    params = []
    for i in range(m):
        t0 = corners[i].parameter
        t1 = corners[(i + 1) % m].parameter + (1.0 if i + 1 == m else 0.0)
        curve = sp.extract_segment(boundary, t0, t1)
        outer = sp.extract_segment(boundary, *intervals[i])
        spec = offsets[i]
        q = make_quasi_normal(spec.kind, curve, config=config,
                              **dict(spec.options))
        pr = spec.params or OffsetParams()
        if pr.d is None:
            pr = replace(pr, d=initial_cap(curve, q, config, omega=omega))
        mu_space = pr.mu_space
        if mu_space.periodic or mu_space.domain != intervals[i]:
            mu_space = _segment_mu_space(intervals[i], degree=3)
            pr = replace(pr, mu_space=mu_space)
        seg = SegmentData(curve, intervals[i], outer, q, None, None)
        segments.append(seg)
        systems.append(MuSystem(curve, q, mu_space))
        params.append(pr)

    max_iter = params[0].max_iterations
    trace = []
    for attempt in range(1, max_iter + 1):
        failed = []
        for i, seg in enumerate(segments):
            seg.mu = systems[i].solve(params[i])
            margin = _segment_margin(seg)
            if margin >= 0.0:
                failed.append(f"segment {i} regularity")
        manifold = None
        if not failed:
            _fit_inner_curves(segments, corners, intervals)
            try:
                manifold = _assemble(boundary, corners, segments, intervals)
            except CornerError as exc:
                failed.append(str(exc))
        if manifold is not None and not failed:
            hole = manifold.hole_polyline(config)
            simple, _ = ge.is_simple(hole)
            if not simple:
                failed.append("hole boundary self-intersects")
            codes = ge.classify_points(omega, hole.vertices,
                                       config.geometric_tolerance)
            if not np.all(codes == 1):
                failed.append("hole boundary leaves the domain")
            if ge.signed_area(hole) <= 0.0:
                failed.append("hole boundary not counter-clockwise")
            for pi, patch in enumerate(manifold.patches):
                if not _regular(patch):
                    failed.append(f"patch {pi} irregular")
                    break
        trace.append({"iteration": attempt,
                      "d": [p.d for p in params],
                      "alpha": params[0].alpha,
                      "failures": list(failed)})
        if manifold is not None and not failed:
            manifold.iterations_used = attempt
            manifold.shrink_trace = trace
            return manifold
        regs = params[0].alpha > 0.0 or params[0].beta > 0.0
        if not regs or attempt % 2 == 1:
            params = [replace(p, d=p.shrink * p.d) for p in params]
        else:
            params = [replace(p, alpha=p.alpha / 10.0, beta=p.beta / 10.0)
                      for p in params]
    raise OffsetError(
        f"no valid ring manifold after {max_iter} iterations; "
        f"last failures: {trace[-1]['failures']}", result=trace)


def _segment_margin(seg: SegmentData, per_span: int = 32) -> float:
    space = seg.mu.space
    spans = space.spans()
    frac = (np.arange(per_span) + 0.5) / per_span
    ts = (spans[:, 0][:, None]
          + (spans[:, 1] - spans[:, 0])[:, None] * frac[None, :]).ravel()
    ts = np.append(ts, space.domain)
    qv = seg.q.evaluate(ts)
    det_qc = qv[:, 0] * seg.curve.evaluate(ts, 1)[:, 1] \
        - qv[:, 1] * seg.curve.evaluate(ts, 1)[:, 0]
    qd = seg.q.derivative(ts)
    det_qq = qv[:, 0] * qd[:, 1] - qv[:, 1] * qd[:, 0]
    muv = seg.mu.evaluate(ts)
    d0 = muv * det_qc
    d1 = muv * det_qc + muv ** 2 * det_qq
    return float(max(d0.max(), d1.max()))


def _smooth_manifold(boundary, offsets, config) -> RingManifold:
    from .offset import offsetting_loop
    spec = offsets if isinstance(offsets, SegmentOffset) else offsets[0]
    q = make_quasi_normal(spec.kind, boundary, config=config,
                          **dict(spec.options))
    pr = spec.params or OffsetParams()
    res = offsetting_loop(boundary, q, pr, config)
    ringp = fit_ring(boundary, build_ftilde(boundary, q, res.mu))
    inner = ringp.inner_curve
    roles = {(0, 0, 0): "outer", (0, 0, 1): "hole"}
    hole_pieces = [HolePiece(0, inner.space.num_spans(), "curve", inner,
                             inner.space.domain)]
    return RingManifold(boundary, CornerList(()), [ringp.patch], ["ring"],
                        [], roles, [], hole_pieces, ring_patch=ringp,
                        iterations_used=res.iterations_used,
                        shrink_trace=list(res.diagnostics))


def _assemble(boundary, corners, segments, intervals) -> RingManifold:
    m = len(corners)
    patches = []
    kinds = []
    interfaces = []
    roles = {}
    hole_pieces = []
    seg_idx = []
    for i, seg in enumerate(segments):
        patch = _segment_patch(seg)
        seg_idx.append(len(patches))
        patches.append(patch)
        kinds.append("segment")
        pi = seg_idx[i]
        roles[(pi, 0, 0)] = "outer"
        roles[(pi, 0, 1)] = "hole"
        roles[(pi, 1, 0)] = "interface"
        roles[(pi, 1, 1)] = "interface"
    for i in range(m):
        # corner between segment i-1 (previous) and segment i (next)
        corner = corners[i]
        prev_i = (i - 1) % m
        next_i = i
        prev_seg = segments[prev_i]
        next_seg = segments[next_i]
        b_prev = intervals[prev_i][1]
        a_next = intervals[next_i][0]
        t_corner = corner.parameter
        ci = len(patches)
        if corner.convex:
            patch = coons_corner_patch(boundary, corner,
                                       prev_seg.inner, b_prev,
                                       next_seg.inner, a_next)
            kinds.append("coons")
            roles[(ci, 1, 0)] = "outer"      # v=0: incoming boundary arc
            roles[(ci, 0, 0)] = "outer"      # u=0: outgoing boundary arc
            roles[(ci, 0, 1)] = "interface"  # u=1: ruling to previous
            roles[(ci, 1, 1)] = "interface"  # v=1: ruling to next
            interfaces.append(PatchInterface(seg_idx[prev_i], (1, 1),
                                             ci, (0, 1)))
            interfaces.append(PatchInterface(ci, (1, 1),
                                             seg_idx[next_i], (1, 0)))
        else:
            x = next_seg.curve.evaluate([t_corner])[0]
            v_minus = _offset_point(prev_seg, prev_seg.curve.space.domain[1]) - x
            v_plus = _offset_point(next_seg, t_corner) - x
            patch = parallelogram_corner_patch(x, v_minus, v_plus)
            kinds.append("parallelogram")
            roles[(ci, 1, 0)] = "interface"  # v=0: shared with previous
            roles[(ci, 0, 0)] = "interface"  # u=0: shared with next
            roles[(ci, 0, 1)] = "hole"       # u=1 far edge
            roles[(ci, 1, 1)] = "hole"       # v=1 far edge
            interfaces.append(PatchInterface(seg_idx[prev_i], (1, 1),
                                             ci, (1, 0)))
            interfaces.append(PatchInterface(ci, (0, 0),
                                             seg_idx[next_i], (1, 0)))
        patches.append(patch)

    for i, seg in enumerate(segments):
        inner = seg.inner
        hole_pieces.append(HolePiece(seg_idx[i], inner.space.num_spans(),
                                     "curve", inner, inner.space.domain))
        corner = corners[(i + 1) % m]
        if not corner.convex:
            # walk the far edges u=1 then v=1 (backwards) of the corner
            # patch that follows segment i
            cpi = _corner_patch_index(kinds, seg_idx, i, m)
            hole_pieces.append(HolePiece(cpi, 2, "far_edge_u"))
            hole_pieces.append(HolePiece(cpi, 2, "far_edge_v"))
    manifold = RingManifold(boundary, corners, patches, kinds, interfaces,
                            roles, segments, hole_pieces)
    return manifold


def _corner_patch_index(kinds, seg_idx, i, m):
    # corner j sits between segments j-1 and j; it was appended after all
    # segments in corner order j = 0..m-1
    j = (i + 1) % m
    return m + j


