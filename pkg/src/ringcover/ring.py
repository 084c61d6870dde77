"""Ring-shaped domain patch between a boundary curve and its inward offset.

The ruled surface F~(s, t) = (1-s) C_B(t) + s C_O(t) is regular whenever the
offset is valid, but C_O = C_B + mu q is generally not a spline. The spline
ring patch F keeps the outer row exact (control points of C_B) and replaces
the inner row by an L2 fit C_I of C_O in the same periodic space, giving a
(linear x degree-p) tensor patch. Regularity of the fitted patch is
re-checked on a sample grid since the closed-form criterion only covers F~.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import splines as sp
from .offset import OffsetCurve, QuasiNormalField

__all__ = [
    "RingFitError",
    "FtildeSurface",
    "RingPatch",
    "build_ftilde",
    "fit_ring",
    "ring_geometry_map",
    "patch_regularity",
]


class RingFitError(RuntimeError):
    """Fitted ring patch failed its regularity re-check."""


class FtildeSurface:
    """The ruled pre-image F~(s, t) = C_B(t) + s mu(t) q(t) with partials."""

    def __init__(self, boundary: sp.SplineCurve, q: QuasiNormalField,
                 mu: sp.ScalarSplineFunction):
        self.boundary = boundary
        self.q = q
        self.mu = mu
        self.offset_curve = OffsetCurve(boundary, q, mu)

    def evaluate(self, ss, ts) -> np.ndarray:
        ss, ts = self._align(ss, ts)
        disp = self.mu.evaluate(ts)[:, None] * self.q.evaluate(ts)
        return self.boundary.evaluate(ts) + ss[:, None] * disp

    def partial_s(self, ss, ts) -> np.ndarray:
        ss, ts = self._align(ss, ts)
        return self.mu.evaluate(ts)[:, None] * self.q.evaluate(ts)

    def partial_t(self, ss, ts) -> np.ndarray:
        ss, ts = self._align(ss, ts)
        disp_dt = (self.mu.evaluate(ts, 1)[:, None] * self.q.evaluate(ts)
                   + self.mu.evaluate(ts)[:, None] * self.q.derivative(ts))
        return self.boundary.evaluate(ts, 1) + ss[:, None] * disp_dt

    @staticmethod
    def _align(ss, ts):
        ss = np.atleast_1d(np.asarray(ss, dtype=float))
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if ss.shape != ts.shape:
            ss, ts = np.broadcast_arrays(ss, ts)
        return ss.ravel(), ts.ravel()


def build_ftilde(boundary: sp.SplineCurve, q: QuasiNormalField,
                 mu: sp.ScalarSplineFunction) -> FtildeSurface:
    return FtildeSurface(boundary, q, mu)


@dataclass
class RingPatch:
    """Spline ring between the boundary (s=0 row) and the fitted inner curve."""

    boundary_curve: sp.SplineCurve
    inner_curve: sp.SplineCurve
    patch: sp.TensorPatch
    regularity_margin: float
    fit_error: float

    @property
    def hole_curve(self) -> sp.SplineCurve:
        return self.inner_curve


def patch_regularity(patch: sp.TensorPatch, grid: int = 64):
    """(min |det J|, max |det J|, single_signed) on a grid x grid sample."""
    a0, b0 = patch.space_s.domain
    a1, b1 = patch.space_t.domain
    if patch.space_s.periodic:
        ss = np.linspace(a0, b0, grid, endpoint=False)
    else:
        ss = np.linspace(a0, b0, grid)
    if patch.space_t.periodic:
        ts = np.linspace(a1, b1, grid, endpoint=False)
    else:
        ts = np.linspace(a1, b1, grid)
    S, T = np.meshgrid(ss, ts, indexing="ij")
    J = patch.jacobian(S.ravel(), T.ravel())
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    single = bool(det.min() > 0.0 or det.max() < 0.0)
    return float(np.abs(det).min()), float(np.abs(det).max()), single


def _net_scale(net: np.ndarray) -> float:
    lo = net.reshape(-1, 2).min(axis=0)
    hi = net.reshape(-1, 2).max(axis=0)
    d = float(np.hypot(*(hi - lo)))
    return d if d > 0.0 else 1.0


def fit_ring(boundary: sp.SplineCurve, ftilde: FtildeSurface,
             target_space: sp.SplineSpace | None = None,
             grid: int = 64) -> RingPatch:
    """Fit the inner curve and assemble the two-row tensor-product ring.

    The t-space must equal the boundary's own space so that the outer
    constraint F(0, t) = C_B(t) holds at the control-point level; pass a
    refit boundary to use a finer space. Raises RingFitError when the fitted
    patch loses regularity on the validation grid (refine the t-space).
    """
    space = boundary.space
    if target_space is not None and target_space != space:
        raise ValueError("target t-space must equal the boundary's space; "
                         "refit the boundary into the finer space first")
    offset_curve = ftilde.offset_curve
    coefs = sp.fit_l2(space, offset_curve.evaluate)
    inner = sp.SplineCurve(space, coefs)
    pts, wts = space.quadrature(space.degree + 2)
    resid = inner.evaluate(pts) - offset_curve.evaluate(pts)
    fit_error = float(np.sqrt(np.sum(wts * np.sum(resid ** 2, axis=1))))
    s_space = sp.uniform_clamped_space(1, 0.0, 1.0, 1)
    net = np.stack([boundary.control_points, coefs])
    patch = sp.TensorPatch(s_space, space, net)
    lo, hi, single = patch_regularity(patch, grid)
    threshold = 1e-10 * _net_scale(net) ** 2
    if not single or lo < threshold:
        raise RingFitError(
            f"ring patch regularity lost after fitting (min |det J| = "
            f"{lo:.3g}, threshold {threshold:.3g}); refine the boundary "
            f"space and refit")
    return RingPatch(boundary, inner, patch, lo, fit_error)


def ring_geometry_map(ring: RingPatch) -> sp.TensorPatch:
    """The solver-facing map with the periodic direction first.

    Construction uses (s, t); the solver's parameter rectangle is
    (t, s) in [0,1[ x [0,1], so the control net transposes. The transposed
    patch has positive Jacobian determinant for a valid ring.
    """
    p = ring.patch
    return sp.TensorPatch(p.space_t, p.space_s,
                          np.transpose(p.control_net, (1, 0, 2)))
