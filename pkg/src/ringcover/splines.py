"""B-spline spaces, curves, tensor patches and constrained L2 fitting.

Everything downstream (offsetting, ring patches, corner gluing, assembly)
sits on this module. Two kinds of univariate space are supported:

* clamped (open) spaces on an interval [a, b]; first and last knots carry
  multiplicity p + 1;
* periodic spaces on the unit circle R/Z, stored as one period of knots in
  [0, 1) with wrap-indexed coefficients (no ghost entries; a single
  coefficient vector is the source of truth for wrapped degrees of freedom).

Evaluation uses the standard Cox-de Boor derivative recursion on a locally
unrolled knot window, vectorized over parameter arrays. Knot spans are
half-open [xi_i, xi_{i+1}); the right end of a clamped domain maps to the
last nonempty span. All L2 inner products use Gauss-Legendre quadrature with
p + 1 points per knot span unless stated otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FitError",
    "KnotVector",
    "SplineSpace",
    "SplineCurve",
    "ScalarSplineFunction",
    "TensorPatch",
    "uniform_periodic_space",
    "periodic_space",
    "clamped_space",
    "uniform_clamped_space",
    "eval_basis",
    "eval_curve",
    "greville_points",
    "basis_matrix",
    "gram_matrix",
    "fit_l2",
    "insert_knot_open",
    "extract_segment",
]

_EQ_TOL = 1e-12


class FitError(RuntimeError):
    """A least-squares fit was singular or its constraints conflicted."""


@lru_cache(maxsize=64)
def _leggauss(npts: int):
    nodes, weights = np.polynomial.legendre.leggauss(npts)
    return nodes, weights


@dataclass(frozen=True)
class KnotVector:
    """Nondecreasing knot sequence with degree and periodicity semantics.

    For a periodic vector, ``knots`` holds one period's knots inside
    [0, period); the pattern repeats under shifts by ``period`` (fixed to 1).
    For a clamped vector, ``knots`` is the full sequence with end
    multiplicities p + 1. Interior multiplicity is limited to p; a knot of
    multiplicity p marks a C0 point (used for boundary corners).
    """

    degree: int
    knots: tuple
    periodic: bool = False
    period: float = 1.0

    def __post_init__(self):
        p = self.degree
        if p < 1:
            raise ValueError("degree must be >= 1")
        u = np.asarray(self.knots, dtype=float)
        if u.ndim != 1 or len(u) < 2:
            raise ValueError("knot vector too short")
        if np.any(np.diff(u) < -_EQ_TOL):
            bad = int(np.argmax(np.diff(u) < -_EQ_TOL))
            raise ValueError(f"knots not nondecreasing at index {bad + 1}")
        if self.periodic:
            if self.period != 1.0:
                raise ValueError("periodic knot vectors use period 1")
            if u[0] < 0.0 or u[-1] >= 1.0:
                raise ValueError("periodic knots must lie in [0, 1)")
            if len(u) <= p:
                raise ValueError("periodic space dimension must exceed degree")
            for val, mult in zip(*_runs(u)):
                if mult > p:
                    raise ValueError(
                        f"interior multiplicity {mult} > degree at knot {val}")
        else:
            if len(u) < 2 * (p + 1):
                raise ValueError("clamped knot vector too short")
            if abs(u[p] - u[0]) > _EQ_TOL or abs(u[-1] - u[-p - 1]) > _EQ_TOL:
                raise ValueError("clamped knot vector needs end multiplicity p+1")
            vals, mults = _runs(u)
            for val, mult in zip(vals[1:-1], mults[1:-1]):
                if mult > p:
                    raise ValueError(
                        f"interior multiplicity {mult} > degree at knot {val}")
        object.__setattr__(self, "knots", tuple(float(x) for x in u))


def _runs(u: np.ndarray):
    """Distinct knot values and their multiplicities (tolerance 1e-12)."""
    vals = [float(u[0])]
    mults = [1]
    for x in u[1:]:
        if x - vals[-1] <= _EQ_TOL:
            mults[-1] += 1
        else:
            vals.append(float(x))
            mults.append(1)
    return np.array(vals), np.array(mults, dtype=int)


def _ders_basis(U: np.ndarray, p: int, spans: np.ndarray, ts: np.ndarray,
                nders: int) -> np.ndarray:
    """Nonzero basis functions and derivatives at each parameter.

    ``U`` is an unrolled knot array such that indices spans+1-p .. spans+p
    are valid; ``spans[m]`` is the (nonempty) span index of ``ts[m]``.
    Returns an array of shape (nders+1, len(ts), p+1); entry [k, m, r] is the
    k-th derivative of basis function spans[m]-p+r at ts[m].
    """
    m = len(ts)
    nd = min(nders, p)
    left = np.empty((p + 1, m))
    right = np.empty((p + 1, m))
    ndu = np.empty((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = ts - U[spans + 1 - j]
        right[j] = U[spans + j] - ts
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, m, p + 1))
    for r in range(p + 1):
        ders[0, :, r] = ndu[r, p]
    if nd > 0:
        a = np.empty((2, p + 1, m))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[0, :] = 0.0
            a[0, 0] = 1.0
            for k in range(1, nd + 1):
                d = np.zeros(m)
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d = d + a[s2, k] * ndu[r, pk]
                ders[k, :, r] = d
                s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nd + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


class SplineSpace:
    """Univariate spline space over a knot vector.

    Immutable after construction; evaluation helpers are pure and safe to
    share across threads.
    """

    def __init__(self, knot_vector: KnotVector):
        self.knot_vector = knot_vector
        p = knot_vector.degree
        u = np.asarray(knot_vector.knots, dtype=float)
        self.degree = p
        self.periodic = knot_vector.periodic
        if self.periodic:
            n = len(u)
            reps = max(1, math.ceil((p + 2) / n))
            self._ext = np.concatenate(
                [u + k for k in range(-reps, reps + 1)])
            self._ext_offset = reps * n
            self.dimension = n
            self._unit_knots = u
            self.domain = (0.0, 1.0)
        else:
            self._ext = u
            self._ext_offset = 0
            self.dimension = len(u) - p - 1
            self._unit_knots = None
            self.domain = (float(u[p]), float(u[-p - 1]))
        if self.dimension <= p:
            raise ValueError("space dimension must exceed degree")
        vals, mults = _runs(u)
        if self.periodic:
            self._break_vals = vals
            self._break_mults = mults
        else:
            a, b = self.domain
            keep = (vals >= a - _EQ_TOL) & (vals <= b + _EQ_TOL)
            self._break_vals = vals[keep]
            self._break_mults = mults[keep]

    # -- structure ---------------------------------------------------------

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values (one period's worth when periodic)."""
        return self._break_vals.copy()

    def spans(self) -> np.ndarray:
        """Nonempty spans as an array of (start, end) rows covering the domain."""
        v = self._break_vals
        if self.periodic:
            ends = np.append(v[1:], v[0] + 1.0)
            return np.column_stack([v, ends])
        return np.column_stack([v[:-1], v[1:]])

    def multiplicity(self, t: float) -> int:
        u = np.asarray(self.knot_vector.knots)
        if self.periodic:
            t = t % 1.0
        return int(np.sum(np.abs(u - t) <= _EQ_TOL))

    def num_spans(self) -> int:
        return len(self.spans())

    # -- evaluation --------------------------------------------------------

    def _find_spans(self, ts: np.ndarray) -> np.ndarray:
        """Span indices into the unrolled knot array (nonempty spans only)."""
        if self.periodic:
            tr = np.mod(ts, 1.0)
            j = np.searchsorted(self._unit_knots, tr, side="right") - 1
            return j + self._ext_offset
        u = self._ext
        a, b = self.domain
        if np.any(ts < a - 1e-12) or np.any(ts > b + 1e-12):
            raise ValueError("parameter outside the clamped domain")
        tc = np.clip(ts, a, b)
        spans = np.searchsorted(u, tc, side="right") - 1
        return np.clip(spans, self.degree, self.dimension - 1)

    def basis_at(self, ts, nders: int = 0):
        """Nonzero basis values/derivatives at each parameter.

        Returns ``(indices, ders)`` where ``indices`` has shape (m, p+1) with
        global coefficient indices and ``ders`` has shape (nders+1, m, p+1).
        Periodic reduction of ``ts`` happens here; for periodic spaces the
        parameters in ``ders`` are differentiated with respect to the
        unreduced parameter (identical, since the shift is unit).
        """
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        spans = self._find_spans(ts)
        p = self.degree
        if self.periodic:
            tr = np.mod(ts, 1.0) + 0.0
            # the unrolled array repeats with unit shifts, so evaluate at the
            # reduced parameter against the matching window
            teval = tr
        else:
            a, b = self.domain
            teval = np.clip(ts, a, b)
        ders = _ders_basis(self._ext, p, spans, teval, nders)
        offs = np.arange(p + 1)
        idx = spans[:, None] - p + offs[None, :] - self._ext_offset
        if self.periodic:
            idx = np.mod(idx, self.dimension)
        return idx, ders

    def greville(self) -> np.ndarray:
        """Knot-average abscissa per basis function.

        Strictly increasing for clamped spaces; cyclically ordered (reduced
        into [0, 1)) for periodic spaces.
        """
        p = self.degree
        if self.periodic:
            n = self.dimension
            ext = self._ext
            base = self._ext_offset
            g = np.array([ext[base + k + 1: base + k + p + 1].mean()
                          for k in range(n)])
            return np.mod(g, 1.0)
        u = self._ext
        return np.array([u[i + 1: i + p + 1].mean()
                         for i in range(self.dimension)])

    def quadrature(self, npts: int | None = None):
        """Gauss-Legendre nodes/weights per nonempty span, concatenated."""
        if npts is None:
            npts = self.degree + 1
        nodes, weights = _leggauss(npts)
        spans = self.spans()
        mid = (spans[:, 0] + spans[:, 1]) / 2.0
        half = (spans[:, 1] - spans[:, 0]) / 2.0
        pts = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        wts = (half[:, None] * weights[None, :]).ravel()
        return pts, wts

    # -- construction of related spaces -------------------------------------

    def refine(self, times: int = 1) -> "SplineSpace":
        """Dyadically refined space (every nonempty span halved ``times`` times)."""
        space = self
        for _ in range(times):
            spans = space.spans()
            mids = (spans[:, 0] + spans[:, 1]) / 2.0
            if space.periodic:
                knots = np.sort(np.concatenate(
                    [np.asarray(space.knot_vector.knots),
                     np.mod(mids, 1.0)]))
                space = SplineSpace(KnotVector(space.degree, tuple(knots),
                                               periodic=True))
            else:
                u = np.asarray(space.knot_vector.knots)
                knots = np.sort(np.concatenate([u, mids]))
                space = SplineSpace(KnotVector(space.degree, tuple(knots)))
        return space

    def __eq__(self, other):
        return (isinstance(other, SplineSpace)
                and self.knot_vector == other.knot_vector)

    def __hash__(self):
        return hash(self.knot_vector)

    def __repr__(self):
        kind = "periodic" if self.periodic else "clamped"
        return (f"SplineSpace(degree={self.degree}, {kind}, "
                f"dim={self.dimension})")


# -- constructors -----------------------------------------------------------

def uniform_periodic_space(degree: int, spans: int) -> SplineSpace:
    knots = tuple(i / spans for i in range(spans))
    return SplineSpace(KnotVector(degree, knots, periodic=True))


def periodic_space(degree: int, knots: Sequence[float]) -> SplineSpace:
    return SplineSpace(KnotVector(degree, tuple(knots), periodic=True))


def clamped_space(degree: int, breaks: Sequence[float],
                  multiplicities: Sequence[int] | None = None) -> SplineSpace:
    """Clamped space from distinct breakpoints and interior multiplicities."""
    breaks = list(breaks)
    if multiplicities is None:
        multiplicities = [1] * len(breaks)
    mults = list(multiplicities)
    mults[0] = degree + 1
    mults[-1] = degree + 1
    knots = []
    for b, m in zip(breaks, mults):
        knots.extend([b] * m)
    return SplineSpace(KnotVector(degree, tuple(knots)))


def uniform_clamped_space(degree: int, a: float, b: float,
                          spans: int) -> SplineSpace:
    return clamped_space(degree, list(np.linspace(a, b, spans + 1)))


# -- functions and curves ----------------------------------------------------

class ScalarSplineFunction:
    """Scalar spline with one coefficient per basis function."""

    def __init__(self, space: SplineSpace, coefficients):
        coefs = np.asarray(coefficients, dtype=float)
        if coefs.shape != (space.dimension,):
            raise ValueError("coefficient count must match space dimension")
        self.space = space
        self.coefficients = coefs

    def evaluate(self, ts, deriv: int = 0) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx, ders = self.space.basis_at(ts, deriv)
        gathered = self.coefficients[idx]
        return np.einsum("mr,mr->m", ders[deriv], gathered)

    def __call__(self, ts):
        return self.evaluate(ts, 0)


class SplineCurve:
    """Planar spline curve: one control point per basis function."""

    def __init__(self, space: SplineSpace, control_points):
        pts = np.asarray(control_points, dtype=float)
        if pts.shape != (space.dimension, 2):
            raise ValueError("control net must be (dimension, 2)")
        self.space = space
        self.control_points = pts

    def evaluate(self, ts, deriv: int = 0) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        idx, ders = self.space.basis_at(ts, deriv)
        gathered = self.control_points[idx]
        return np.einsum("mr,mrd->md", ders[deriv], gathered)

    def __call__(self, ts):
        return self.evaluate(ts, 0)


class TensorPatch:
    """Tensor-product patch with planar control net.

    ``space_s`` is the first parameter direction, ``space_t`` the second;
    the net has shape (dim_s, dim_t, 2).
    """

    def __init__(self, space_s: SplineSpace, space_t: SplineSpace,
                 control_net):
        net = np.asarray(control_net, dtype=float)
        if net.shape != (space_s.dimension, space_t.dimension, 2):
            raise ValueError("control net shape mismatch")
        self.space_s = space_s
        self.space_t = space_t
        self.control_net = net

    def evaluate(self, ss, ts, ds: int = 0, dt: int = 0) -> np.ndarray:
        ss = np.atleast_1d(np.asarray(ss, dtype=float))
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        iu, du = self.space_s.basis_at(ss, ds)
        iv, dv = self.space_t.basis_at(ts, dt)
        gathered = self.control_net[iu[:, :, None], iv[:, None, :]]
        return np.einsum("mi,mj,mijd->md", du[ds], dv[dt], gathered)

    def jacobian(self, ss, ts) -> np.ndarray:
        """Jacobian matrices (m, 2, 2); columns are d/ds and d/dt."""
        gs = self.evaluate(ss, ts, 1, 0)
        gt = self.evaluate(ss, ts, 0, 1)
        return np.stack([gs, gt], axis=-1)


# -- spec-level operation wrappers -------------------------------------------

def eval_basis(space: SplineSpace, t: float, deriv_order: int = 0):
    """Nonzero basis (index, value) pairs at a single parameter."""
    if not 0 <= deriv_order <= space.degree:
        raise ValueError("derivative order out of range")
    idx, ders = space.basis_at([t], deriv_order)
    return [(int(i), float(v)) for i, v in zip(idx[0], ders[deriv_order][0])]


def eval_basis_array(space: SplineSpace, t: float, deriv_order: int = 0):
    """Nonzero basis at a single parameter as (indices, values) arrays."""
    idx, ders = space.basis_at([t], deriv_order)
    return idx[0], ders[deriv_order][0]


def eval_curve(curve: SplineCurve, t: float, deriv_order: int = 0) -> np.ndarray:
    return curve.evaluate([t], deriv_order)[0]


def greville_points(space: SplineSpace) -> np.ndarray:
    return space.greville()


def basis_matrix(space: SplineSpace, ts, deriv: int = 0) -> np.ndarray:
    """Dense (len(ts), dimension) matrix of basis values/derivatives."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    idx, ders = space.basis_at(ts, deriv)
    out = np.zeros((len(ts), space.dimension))
    rows = np.repeat(np.arange(len(ts)), space.degree + 1)
    np.add.at(out, (rows, idx.ravel()), ders[deriv].ravel())
    return out


def gram_matrix(space: SplineSpace, deriv: int = 0,
                npts: int | None = None) -> np.ndarray:
    """Gram matrix of the deriv-th basis derivatives under span quadrature."""
    pts, wts = space.quadrature(npts)
    idx, ders = space.basis_at(pts, deriv)
    B = ders[deriv]
    G = np.zeros((space.dimension, space.dimension))
    Wb = B * wts[:, None]
    np.add.at(G, (idx[:, :, None], idx[:, None, :]),
              Wb[:, :, None] * B[:, None, :])
    return G


def fit_l2(space: SplineSpace, target: Callable[[np.ndarray], np.ndarray],
           constraints: Sequence[tuple] = (),
           npts: int | None = None) -> np.ndarray:
    """L2-best coefficients for ``target`` with exact equality constraints.

    ``target`` maps a parameter array to values of shape (m,) or (m, d).
    ``constraints`` is a sequence of (parameter, value) pairs enforced
    exactly via Lagrange multipliers. Periodicity is implicit in periodic
    spaces (wrapped coefficients). Raises FitError on a singular system.
    """
    pts, wts = space.quadrature(npts)
    idx, ders = space.basis_at(pts, 0)
    B = ders[0]
    vals = np.asarray(target(pts), dtype=float)
    scalar = vals.ndim == 1
    if scalar:
        vals = vals[:, None]
    n = space.dimension
    d = vals.shape[1]
    G = np.zeros((n, n))
    Wb = B * wts[:, None]
    np.add.at(G, (idx[:, :, None], idx[:, None, :]),
              Wb[:, :, None] * B[:, None, :])
    b = np.zeros((n, d))
    np.add.at(b, idx, Wb[:, :, None] * vals[:, None, :])
    k = len(constraints)
    if k == 0:
        try:
            coefs = np.linalg.solve(G, b)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular normal equations: {exc}") from exc
    else:
        C = basis_matrix(space, [t for t, _ in constraints])
        V = np.array([np.atleast_1d(np.asarray(v, dtype=float))
                      for _, v in constraints])
        if V.shape != (k, d):
            raise FitError("constraint value shape mismatch")
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = G
        kkt[:n, n:] = C.T
        kkt[n:, :n] = C
        rhs = np.vstack([b, V])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError as exc:
            raise FitError(f"singular constrained system: {exc}") from exc
        coefs = sol[:n]
        resid = np.max(np.abs(C @ coefs - V)) if k else 0.0
        scale = 1.0 + np.max(np.abs(V))
        if not np.isfinite(resid) or resid > 1e-9 * scale:
            raise FitError(f"constraints not satisfiable: residual {resid:g}")
    if not np.all(np.isfinite(coefs)):
        raise FitError("non-finite fit coefficients")
    return coefs[:, 0] if scalar else coefs


# -- knot insertion and segment extraction -----------------------------------

def insert_knot_open(knots: np.ndarray, coefs: np.ndarray, degree: int,
                     u: float, times: int = 1):
    """Insert ``u`` into an open-form knot array ``times`` times (Boehm).

    ``coefs`` may be (n,) or (n, d). The represented function is unchanged.
    """
    U = np.asarray(knots, dtype=float).copy()
    P = np.asarray(coefs, dtype=float)
    squeeze = P.ndim == 1
    if squeeze:
        P = P[:, None]
    p = degree
    for _ in range(times):
        k = int(np.searchsorted(U, u, side="right") - 1)
        s = int(np.sum(np.abs(U - u) <= _EQ_TOL))
        if s > p:
            break
        n = P.shape[0]
        Q = np.empty((n + 1, P.shape[1]))
        Q[: k - p + 1] = P[: k - p + 1]
        for i in range(k - p + 1, k - s + 1):
            denom = U[i + p] - U[i]
            alpha = (u - U[i]) / denom
            Q[i] = alpha * P[i] + (1.0 - alpha) * P[i - 1]
        Q[k - s + 1:] = P[k - s:]
        U = np.insert(U, k + 1, u)
        P = Q
    return U, (P[:, 0] if squeeze else P)


def _unrolled_window(curve: SplineCurve, a: float, b: float):
    """Open-form knot/coefficient window representing the curve on [a, b]."""
    space = curve.space
    p = space.degree
    if space.periodic:
        n = space.dimension
        z = np.asarray(space.knot_vector.knots)
        # enough unrolled copies to cover [a, b] with b - a <= 1
        ka = math.floor(a)
        ext = np.concatenate([z + k for k in range(ka - 1, ka + 4)])
        base = n  # index of z+ka within ext
        ja = int(np.searchsorted(ext, a, side="right") - 1)
        jb = int(np.searchsorted(ext, b, side="left") - 1)
        lo = ja - p
        hi = jb + p + 1
        U = ext[lo: hi + 1].copy()
        offset = lo - base  # bi-infinite index of first coefficient + ka*n
        cidx = np.mod(np.arange(offset, offset + (hi - lo - p)) + ka * n, n)
        P = curve.control_points[cidx]
        return U, P
    u = np.asarray(space.knot_vector.knots)
    return u.copy(), curve.control_points.copy()


def extract_segment(curve: SplineCurve, a: float, b: float) -> SplineCurve:
    """Clamped curve equal to ``curve`` on [a, b] (exact, via knot insertion).

    For periodic curves ``b - a`` may be at most one full period. Knot values
    within 1e-12 of ``a`` or ``b`` are snapped so no sliver spans appear.
    """
    if not b > a:
        raise ValueError("need b > a")
    space = curve.space
    p = space.degree
    if space.periodic and b - a > 1.0 + _EQ_TOL:
        raise ValueError("segment longer than one period")
    U, P = _unrolled_window(curve, a, b)
    for x in (a, b):
        near = np.abs(U - x) <= 1e-12
        U[near] = x
    mult_a = int(np.sum(np.abs(U - a) <= _EQ_TOL))
    U, P = insert_knot_open(U, P, p, a, p + 1 - mult_a)
    mult_b = int(np.sum(np.abs(U - b) <= _EQ_TOL))
    U, P = insert_knot_open(U, P, p, b, p + 1 - mult_b)
    i0 = int(np.searchsorted(U, a, side="left"))
    i1 = int(np.searchsorted(U, b, side="right") - 1)
    knots = U[i0: i1 + 1]
    dim = len(knots) - p - 1
    pts = P[i0: i0 + dim]
    seg_space = SplineSpace(KnotVector(p, tuple(knots)))
    return SplineCurve(seg_space, pts)
