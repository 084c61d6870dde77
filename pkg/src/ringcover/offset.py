"""Generalized inward offsetting of a closed boundary curve.

Given a counter-clockwise boundary curve C(t) and a quasi-normal field q(t)
(continuous, periodic, non-tangential, pointing inwards), the offset curve is
C_O(t) = C(t) + mu(t) q(t) with a scalar spline mu > 0. The admissible upper
bound is

    mu_max(t) = det(C'(t), q(t)) / det(q(t), q'(t))   if det(q, q') > 0,
    mu_max(t) = +inf                                   otherwise,

and the ruled surface (1-s) C(t) + s C_O(t) is regular whenever
0 < mu(t) < mu_max(t) for all t; equivalently its Jacobian determinant

    D(s, t) = mu det(q, C') + s mu^2 det(q, q'),

which is linear in s, stays negative at s = 0 and s = 1. mu is found by
minimizing

    ||mu - mu_target||^2_L2 + alpha ||C_O'||^2 + beta ||C_O''||^2

over a spline space, with mu_target = min(c mu_max, d). On a failed validity
check the driving parameters shrink (d by a fixed factor, the regularization
weights by 10) and the solve repeats; the quadratic system matrix blocks are
assembled once and reused, only the load changes between iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import geometry as ge
from . import splines as sp

__all__ = [
    "QuasiNormalError",
    "OffsetError",
    "QuasiNormalField",
    "OffsetParams",
    "ValidityReport",
    "OffsetResult",
    "OffsetCurve",
    "default_mu_space",
    "make_quasi_normal",
    "mu_max",
    "mu_max_values",
    "mu_target",
    "mu_target_values",
    "solve_mu",
    "MuSystem",
    "check_validity",
    "offsetting_loop",
]


class QuasiNormalError(RuntimeError):
    """No valid quasi-normal field could be constructed."""


class OffsetError(RuntimeError):
    """The offsetting loop exhausted its iterations without a valid ring."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def default_mu_space() -> sp.SplineSpace:
    """Degree-3 periodic space with mesh size 0.02 (the default for mu)."""
    return sp.uniform_periodic_space(3, 50)


def _rot90(v: np.ndarray) -> np.ndarray:
    """Rotate plane vectors by +90 degrees (inward for CCW tangents)."""
    return np.column_stack([-v[:, 1], v[:, 0]])


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


class QuasiNormalField:
    """Evaluable direction field q(t) with q'(t) along a boundary curve.

    Construct through :func:`make_quasi_normal`, which also verifies the
    inwardness condition det(C'(t), q(t)) > 0 at sampled parameters.
    """

    def __init__(self, kind: str, boundary: sp.SplineCurve,
                 evaluate: Callable, derivative: Callable,
                 second_derivative: Callable | None = None,
                 options: dict | None = None):
        self.kind = kind
        self.boundary = boundary
        self._eval = evaluate
        self._deriv = derivative
        self._deriv2 = second_derivative
        self.options = dict(options or {})

    def evaluate(self, ts) -> np.ndarray:
        return self._eval(np.atleast_1d(np.asarray(ts, dtype=float)))

    def derivative(self, ts) -> np.ndarray:
        return self._deriv(np.atleast_1d(np.asarray(ts, dtype=float)))

    def second_derivative(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if self._deriv2 is not None:
            return self._deriv2(ts)
        # only the curvature regularizer consumes q''; a finite difference of
        # the analytic q' is accurate enough there
        h = 1e-5
        space = self.boundary.space
        if space.periodic:
            return (self._deriv(ts + h) - self._deriv(ts - h)) / (2 * h)
        a, b = space.domain
        tc = np.clip(ts, a + h, b - h)
        return (self._deriv(tc + h) - self._deriv(tc - h)) / (2 * h)

    def __call__(self, ts):
        return self.evaluate(ts)


def _unit_normal_field(kind: str, boundary: sp.SplineCurve,
                       source: sp.SplineCurve,
                       options: dict) -> QuasiNormalField:
    """Inward unit normal of ``source`` evaluated along its parameters."""

    def evaluate(ts):
        v = source.evaluate(ts, 1)
        return _rot90(v) / np.linalg.norm(v, axis=1)[:, None]

    def derivative(ts):
        v = source.evaluate(ts, 1)
        dv = source.evaluate(ts, 2)
        nv = np.linalg.norm(v, axis=1)[:, None]
        that = v / nv
        tdot = (dv - that * np.einsum("md,md->m", that, dv)[:, None]) / nv
        return _rot90(tdot)

    return QuasiNormalField(kind, boundary, evaluate, derivative,
                            options=options)


def make_quasi_normal(kind: str, boundary: sp.SplineCurve,
                      **options) -> QuasiNormalField:
    """Build a quasi-normal field of the requested kind.

    Kinds:

    - ``curveNormal``: inward unit normal of the boundary itself.
    - ``radialToPoint``: q(t) = center - C(t), un-normalized (``center``
      option, default the origin); needs the domain star-shaped around it.
    - ``smoothedNormal``: inward unit normal of a smoothed copy of the
      boundary (curvature-penalized L2 fit); on an invalid field the
      smoothing weight is weakened by 10 and the fit repeats.
    - ``perSegment``: dispatch over ``fields`` given as a list of
      (t_start, t_end, QuasiNormalField) rows covering the parameter circle.

    The returned field satisfies det(C'(t), q(t)) > 0 at the sampled
    parameters; otherwise QuasiNormalError reports the first failing t.
    """
    config = options.pop("config", ge.SamplingConfig())
    if kind == "curveNormal":
        fld = _unit_normal_field(kind, boundary, boundary, options)
    elif kind == "radialToPoint":
        center = np.asarray(options.get("center", (0.0, 0.0)), dtype=float)

        def evaluate(ts):
            return center[None, :] - boundary.evaluate(ts)

        def derivative(ts):
            return -boundary.evaluate(ts, 1)

        def second(ts):
            return -boundary.evaluate(ts, 2)

        fld = QuasiNormalField(kind, boundary, evaluate, derivative, second,
                               options={"center": tuple(center)})
    elif kind == "smoothedNormal":
        smooth_curve = options.get("smooth_curve")
        if smooth_curve is not None:
            fld = _unit_normal_field(kind, boundary, smooth_curve, options)
            fld.options["smooth_curve"] = smooth_curve
        else:
            return _fit_smoothed_normal(boundary, config, options)
    elif kind == "perSegment":
        rows = options["fields"]

        def pick(ts):
            ts = np.mod(ts, 1.0)
            out_idx = np.zeros(len(ts), dtype=int)
            for i, (a, b, _) in enumerate(rows):
                inside = ((ts >= a) & (ts < b)) if b <= 1.0 else \
                    ((ts >= a) | (ts < b - 1.0))
                out_idx[inside] = i
            return out_idx

        def dispatch(attr):
            def call(ts):
                ts = np.mod(np.atleast_1d(np.asarray(ts, dtype=float)), 1.0)
                idx = pick(ts)
                out = np.empty((len(ts), 2))
                for i, (a, b, f) in enumerate(rows):
                    m = idx == i
                    if np.any(m):
                        tt = ts[m]
                        if b > 1.0:
                            # segment parameter interval wraps past 1
                            tt = np.where(tt < a, tt + 1.0, tt)
                        out[m] = getattr(f, attr)(tt)
                return out
            return call

        fld = QuasiNormalField(kind, boundary, dispatch("evaluate"),
                               dispatch("derivative"),
                               dispatch("second_derivative"),
                               options={"fields": rows})
    else:
        raise ValueError(f"unknown quasi-normal kind: {kind}")
    _verify_field(boundary, fld, config)
    return fld


def _verify_field(boundary: sp.SplineCurve, fld: QuasiNormalField,
                  config: ge.SamplingConfig):
    ts = _span_samples(boundary.space, config.samples_per_span)
    det = _cross(boundary.evaluate(ts, 1), fld.evaluate(ts))
    if np.any(det <= 0.0):
        bad = float(ts[int(np.argmax(det <= 0.0))])
        raise QuasiNormalError(
            f"quasi-normal tangential or outward at t={bad:.6g} "
            f"(det(C', q) = {det.min():.3g})")


def _fit_smoothed_normal(boundary: sp.SplineCurve, config: ge.SamplingConfig,
                         options: dict) -> QuasiNormalField:
    degree = int(options.get("degree", 3))
    spans = int(options.get("spans",
                            max(8, boundary.space.num_spans() // 4)))
    weight = float(options.get("weight", 1e-3))
    retries = int(options.get("max_iterations", 20))
    space = sp.uniform_periodic_space(degree, spans)
    first_err = None
    for _ in range(retries):
        coefs = _smooth_fit(boundary, space, weight)
        smooth = sp.SplineCurve(space, coefs)
        fld = _unit_normal_field("smoothedNormal", boundary, smooth,
                                 {"weight": weight, "degree": degree,
                                  "spans": spans})
        fld.options["smooth_curve"] = smooth
        try:
            _verify_field(boundary, fld, config)
            return fld
        except QuasiNormalError as exc:
            first_err = first_err or exc
            weight /= 10.0
    raise QuasiNormalError(
        f"no valid smoothed normal after {retries} retries: {first_err}")


def _smooth_fit(boundary: sp.SplineCurve, space: sp.SplineSpace,
                weight: float) -> np.ndarray:
    """Curvature-penalized periodic L2 fit of the boundary."""
    pts, wts = space.quadrature()
    B = sp.basis_matrix(space, pts)
    M = (B * wts[:, None]).T @ B
    G2 = sp.gram_matrix(space, 2)
    rhs = (B * wts[:, None]).T @ boundary.evaluate(pts)
    return np.linalg.solve(M + weight * G2, rhs)


def _span_samples(space: sp.SplineSpace, per_span: int,
                  endpoint: bool = False) -> np.ndarray:
    spans = space.spans()
    frac = np.arange(per_span) / per_span
    ts = (spans[:, 0][:, None]
          + (spans[:, 1] - spans[:, 0])[:, None] * frac[None, :]).ravel()
    if endpoint and not space.periodic:
        ts = np.append(ts, spans[-1, 1])
    return ts


# -- the admissible bound and the target ------------------------------------

def mu_max_values(boundary: sp.SplineCurve, q: QuasiNormalField,
                  ts) -> np.ndarray:
    """Vectorized admissible upper bound; +inf where det(q, q') <= 0."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    qv = q.evaluate(ts)
    qd = q.derivative(ts)
    num = _cross(boundary.evaluate(ts, 1), qv)
    den = _cross(qv, qd)
    out = np.full(len(ts), np.inf)
    pos = den > 0.0
    out[pos] = num[pos] / den[pos]
    return out


def mu_max(boundary: sp.SplineCurve, q: QuasiNormalField, t: float) -> float:
    return float(mu_max_values(boundary, q, [t])[0])


@dataclass(frozen=True)
class OffsetParams:
    """Parameters of the offsetting loop.

    ``d`` may be None (derived from ray clearances when the loop starts) or a
    positive number; ``d_function`` optionally replaces the constant cap by a
    1-periodic scalar function of t.
    """

    c: float = 0.5
    d: float | None = None
    alpha: float = 0.0
    beta: float = 0.0
    shrink: float = 0.5
    mu_space: sp.SplineSpace = field(default_factory=default_mu_space)
    max_iterations: int = 20
    d_function: Callable | None = None

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1)")
        if self.d is not None and self.d <= 0.0:
            raise ValueError("d must be positive")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("regularization weights must be >= 0")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def mu_target_values(boundary: sp.SplineCurve, q: QuasiNormalField,
                     params: OffsetParams, ts) -> np.ndarray:
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if params.d is None:
        raise ValueError("params.d is unset; run the loop or set d")
    cap = params.d_function(ts) if params.d_function is not None else params.d
    return np.minimum(params.c * mu_max_values(boundary, q, ts), cap)


def mu_target(boundary: sp.SplineCurve, q: QuasiNormalField,
              params: OffsetParams, t: float) -> float:
    return float(mu_target_values(boundary, q, params, [t])[0])


# -- the offset curve as an evaluable object ---------------------------------

class _SpanSet:
    """Duck-typed stand-in for SplineSpace inside geometry.sample_curve."""

    def __init__(self, spans: np.ndarray, periodic: bool):
        self._spans = spans
        self.periodic = periodic

    def spans(self):
        return self._spans


def _merged_spans(space_a: sp.SplineSpace, space_b: sp.SplineSpace):
    """Spans of the union of two spaces' breakpoints on a shared domain."""
    if space_a.periodic != space_b.periodic:
        raise ValueError("cannot merge periodic with clamped spans")
    breaks = np.union1d(space_a.breakpoints, space_b.breakpoints)
    if space_a.periodic:
        ends = np.append(breaks[1:], breaks[0] + 1.0)
        return np.column_stack([breaks, ends])
    return np.column_stack([breaks[:-1], breaks[1:]])


class OffsetCurve:
    """The generalized offset C_O(t) = C(t) + mu(t) q(t), with derivatives.

    Not itself a spline (mu q is a product); exposes the same evaluation
    interface as a curve plus a spans-aware ``space`` stand-in so sampling
    utilities apply.
    """

    def __init__(self, boundary: sp.SplineCurve, q: QuasiNormalField,
                 mu: sp.ScalarSplineFunction):
        self.boundary = boundary
        self.q = q
        self.mu = mu
        self.space = _SpanSet(_merged_spans(boundary.space, mu.space),
                              boundary.space.periodic)

    def evaluate(self, ts, deriv: int = 0) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        mu0 = self.mu.evaluate(ts)[:, None]
        if deriv == 0:
            return self.boundary.evaluate(ts) + mu0 * self.q.evaluate(ts)
        mu1 = self.mu.evaluate(ts, 1)[:, None]
        if deriv == 1:
            return (self.boundary.evaluate(ts, 1)
                    + mu1 * self.q.evaluate(ts)
                    + mu0 * self.q.derivative(ts))
        if deriv == 2:
            mu2 = self.mu.evaluate(ts, 2)[:, None]
            return (self.boundary.evaluate(ts, 2)
                    + mu2 * self.q.evaluate(ts)
                    + 2.0 * mu1 * self.q.derivative(ts)
                    + mu0 * self.q.second_derivative(ts))
        raise ValueError("derivative order up to 2")

    def __call__(self, ts):
        return self.evaluate(ts)


# -- the quadratic solve for mu ----------------------------------------------

class MuSystem:
    """Pre-assembled quadratic blocks for the mu minimization.

    The mass matrix and the two regularizer blocks depend only on the
    boundary, the field and mu's space, so they are assembled once; each
    shrink iteration only rebuilds the mu_target load vector and rescales
    alpha and beta.
    """

    def __init__(self, boundary: sp.SplineCurve, q: QuasiNormalField,
                 mu_space: sp.SplineSpace):
        self.boundary = boundary
        self.q = q
        self.space = mu_space
        pts, wts = mu_space.quadrature()
        self._pts = pts
        self._wts = wts
        idx, ders = mu_space.basis_at(pts, 2)
        self._idx = idx
        self._B0 = ders[0]
        n = mu_space.dimension
        qv = q.evaluate(pts)
        q1 = q.derivative(pts)
        q2 = q.second_derivative(pts)
        c1 = boundary.evaluate(pts, 1)
        c2 = boundary.evaluate(pts, 2)
        # first/second derivative of C_O as affine maps of mu's coefficients
        V1 = ders[1][:, :, None] * qv[:, None, :] + ders[0][:, :, None] * q1[:, None, :]
        V2 = (ders[2][:, :, None] * qv[:, None, :]
              + 2.0 * ders[1][:, :, None] * q1[:, None, :]
              + ders[0][:, :, None] * q2[:, None, :])
        self.mass = np.zeros((n, n))
        W0 = self._B0 * wts[:, None]
        np.add.at(self.mass, (idx[:, :, None], idx[:, None, :]),
                  W0[:, :, None] * self._B0[:, None, :])
        self.k1 = np.zeros((n, n))
        np.add.at(self.k1, (idx[:, :, None], idx[:, None, :]),
                  np.einsum("m,mrd,msd->mrs", wts, V1, V1))
        self.k2 = np.zeros((n, n))
        np.add.at(self.k2, (idx[:, :, None], idx[:, None, :]),
                  np.einsum("m,mrd,msd->mrs", wts, V2, V2))
        self.f1 = np.zeros(n)
        np.add.at(self.f1, idx, np.einsum("m,mrd,md->mr", wts, V1, c1))
        self.f2 = np.zeros(n)
        np.add.at(self.f2, idx, np.einsum("m,mrd,md->mr", wts, V2, c2))

    def solve(self, params: OffsetParams) -> sp.ScalarSplineFunction:
        target = mu_target_values(self.boundary, self.q, params, self._pts)
        n = self.space.dimension
        b = np.zeros(n)
        np.add.at(b, self._idx,
                  (self._B0 * (self._wts * target)[:, None]))
        A = self.mass + params.alpha * self.k1 + params.beta * self.k2
        rhs = b - params.alpha * self.f1 - params.beta * self.f2
        try:
            coefs = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise OffsetError(f"mu system not solvable: {exc}") from exc
        if not np.all(np.isfinite(coefs)):
            raise OffsetError("mu system produced non-finite coefficients")
        return sp.ScalarSplineFunction(self.space, coefs)


def solve_mu(boundary: sp.SplineCurve, q: QuasiNormalField,
             params: OffsetParams) -> sp.ScalarSplineFunction:
    return MuSystem(boundary, q, params.mu_space).solve(params)


# -- validity ----------------------------------------------------------------

@dataclass
class ValidityReport:
    """Outcome of the four validity gates for an offset curve."""

    regular: bool
    simple: bool
    inside: bool
    ccw: bool
    details: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.regular and self.simple and self.inside and self.ccw

    def failed_gates(self):
        names = ("regular", "simple", "inside", "ccw")
        return [n for n in names if not getattr(self, n)]


def regularity_margin(boundary: sp.SplineCurve, q: QuasiNormalField,
                      mu: sp.ScalarSplineFunction,
                      samples_per_span: int = 32):
    """Max of D(s, t) over s in {0, 1} at sampled t (negative means regular)."""
    ts = _span_samples(mu.space, samples_per_span, endpoint=True)
    qv = q.evaluate(ts)
    det_qc = _cross(qv, boundary.evaluate(ts, 1))
    det_qq = _cross(qv, q.derivative(ts))
    muv = mu.evaluate(ts)
    d0 = muv * det_qc
    d1 = muv * det_qc + muv ** 2 * det_qq
    return float(max(d0.max(), d1.max())), ts


def check_validity(boundary: sp.SplineCurve, q: QuasiNormalField,
                   mu: sp.ScalarSplineFunction,
                   config: ge.SamplingConfig = ge.SamplingConfig(),
                   omega: ge.Polyline | None = None) -> ValidityReport:
    """Evaluate the four validity gates for C_O = C + mu q.

    (a) regularity: D(s, t) < 0 at s in {0, 1} on a dense sample of t (the
    sufficient closed form of the regularity theorem); (b) the offset is
    simple; (c) it lies strictly inside the boundary; (d) it is
    counter-clockwise. Diagnostics are always returned, never raised.
    """
    offset_curve = OffsetCurve(boundary, q, mu)
    margin, _ = regularity_margin(boundary, q, mu)
    regular = margin < 0.0
    poly = ge.sample_curve(offset_curve, config)
    simple, witness = ge.is_simple(poly)
    if omega is None:
        omega = ge.sample_curve(boundary, config)
    codes = ge.classify_points(omega, poly.vertices,
                               config.geometric_tolerance)
    inside = bool(np.all(codes == 1))
    area = ge.signed_area(poly)
    ccw = area > 0.0
    details = {
        "regularity_margin": margin,
        "signed_area": area,
        "outside_samples": int(np.sum(codes != 1)),
    }
    if witness is not None:
        details["self_intersection"] = witness
    return ValidityReport(regular, simple, inside, ccw, details)


# -- the shrink loop ----------------------------------------------------------

@dataclass
class OffsetResult:
    mu: sp.ScalarSplineFunction
    offset_curve: OffsetCurve
    valid: bool
    iterations_used: int
    final_params: OffsetParams
    diagnostics: list
    report: ValidityReport


def initial_cap(boundary: sp.SplineCurve, q: QuasiNormalField,
                config: ge.SamplingConfig = ge.SamplingConfig(),
                omega: ge.Polyline | None = None) -> float:
    """Conservative starting cap d: 90% of the smallest ray clearance.

    ``boundary`` may be a clamped sub-curve (its parameters drive the
    sampling); ``omega`` overrides the obstacle polyline, e.g. with the full
    closed boundary when capping a single segment.
    """
    if omega is None:
        omega = ge.sample_curve(boundary, config)
    ts = _span_samples(boundary.space, max(4, config.samples_per_span // 2))
    pts = boundary.evaluate(ts)
    dirs = q.evaluate(ts)
    clear = [ge.ray_clearance(omega, p, v, config.geometric_tolerance)
             for p, v in zip(pts, dirs)]
    finite = [c for c in clear if math.isfinite(c)]
    if not finite:
        return 1.0
    return 0.9 * min(finite)


def offsetting_loop(boundary: sp.SplineCurve, q: QuasiNormalField,
                    params: OffsetParams,
                    config: ge.SamplingConfig = ge.SamplingConfig()
                    ) -> OffsetResult:
    """Alternate mu solves and validity checks, shrinking parameters.

    Iteration k shrinks d when k is odd and divides (alpha, beta) by 10 when
    k is even; with inactive regularizers d shrinks every time. d strictly
    decreases across failed iterations, so no parameter tuple repeats. Raises
    OffsetError (carrying the trace and last diagnostics) on exhaustion;
    termination for small enough d and fine enough mu space is guaranteed for
    valid inputs.
    """
    if params.d is None:
        params = replace(params, d=initial_cap(boundary, q, config))
    system = MuSystem(boundary, q, params.mu_space)
    omega = ge.sample_curve(boundary, config)
    trace = []
    mu = None
    report = None
    for k in range(1, params.max_iterations + 1):
        mu = system.solve(params)
        report = check_validity(boundary, q, mu, config, omega)
        trace.append({
            "iteration": k,
            "c": params.c,
            "d": params.d,
            "alpha": params.alpha,
            "beta": params.beta,
            "failed_gates": report.failed_gates(),
            "details": dict(report.details),
        })
        if report.valid:
            return OffsetResult(mu, OffsetCurve(boundary, q, mu), True, k,
                                params, trace, report)
        regs_active = params.alpha > 0.0 or params.beta > 0.0
        if not regs_active or k % 2 == 1:
            params = replace(params, d=params.shrink * params.d)
        else:
            params = replace(params, alpha=params.alpha / 10.0,
                             beta=params.beta / 10.0)
    raise OffsetError(
        f"no valid offset after {params.max_iterations} iterations "
        f"(last failed gates: {report.failed_gates()}); consider refining "
        f"the mu space", result=OffsetResult(
            mu, OffsetCurve(boundary, q, mu), False,
            params.max_iterations, params, trace, report))
