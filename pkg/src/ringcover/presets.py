"""Built-in boundary curves with tuned offsetting and solver defaults.

Five smooth curves (circle, ellipse, peanut, star, detail) and three with
corners (heart, drop, square). Each preset carries the quasi-normal choice
and offsetting parameters that produce a valid ring, plus a manufactured
exact solution for convergence experiments.

The corner presets pin the offset distance d explicitly: the automatic
shrink schedule assumes that reducing d relaxes every gate, but at a convex
corner the gap between the one-sided offset endpoints stays proportional to
the trimming width, so too small a d bends the inner curve outside the
domain. A well-chosen fixed d avoids that regime (and on the square makes
the one-sided offsets meet exactly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import geometry as ge
from . import splines as sp
from .corners import RingManifold, SegmentOffset, build_ring_manifold
from .multicell import MultiCellDomain, hole_boundary, select_cells
from .offset import OffsetParams

__all__ = [
    "Preset",
    "ExactSolution",
    "PRESETS",
    "SMOOTH_PRESETS",
    "CORNER_PRESETS",
    "preset_names",
    "get_preset",
    "boundary_curve",
    "ring_manifold",
    "cell_cover",
    "hole_polyline",
    "exact_solution",
    "solve_problem",
    "overlap_points",
    "run_convergence",
]


@dataclass(frozen=True)
class ExactSolution:
    """Manufactured Poisson solution: -laplace(u) = f with u on the boundary."""

    u: callable
    grad: callable
    f: callable


def _sin_pi():
    u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
    grad = lambda x, y: (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                         np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))
    f = lambda x, y: 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)
    return ExactSolution(u, grad, f)


def _sin_plain():
    u = lambda x, y: np.sin(x) * np.sin(y)
    grad = lambda x, y: (np.cos(x) * np.sin(y), np.sin(x) * np.cos(y))
    f = lambda x, y: 2.0 * np.sin(x) * np.sin(y)
    return ExactSolution(u, grad, f)


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    degree: int
    spans: int
    corner_breaks: tuple        # parameters carrying multiplicity-p knots
    point_fn: callable          # t -> (m, 2) points on the target shape
    offsets: SegmentOffset
    exact: ExactSolution
    solver: dict = field(default_factory=dict)   # base_t / base_s / base_cell
    degrees: tuple = (2, 3, 4)

    @property
    def smooth(self) -> bool:
        return not self.corner_breaks


def _polar(r_fn):
    def pts(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        th = 2.0 * np.pi * ts
        r = r_fn(ts, th)
        return np.column_stack([r * np.cos(th), r * np.sin(th)])
    return pts


def _ellipse_pts(a=2.0, b=1.0):
    def pts(ts):
        th = 2.0 * np.pi * np.atleast_1d(np.asarray(ts, dtype=float))
        return np.column_stack([a * np.cos(th), b * np.sin(th)])
    return pts


def _heart_pts():
    # circle-like body with a triangle-wave radius: reentrant notch at
    # t = 1/4 (top) and a convex point at t = 3/4 (bottom)
    def r_fn(ts, th):
        s = np.mod(ts - 0.25, 1.0)
        tri = 1.0 - 2.0 * np.abs(s - 0.5)
        return 0.55 + 0.45 * tri
    return _polar(r_fn)


def _drop_pts():
    # teardrop with a single 90-degree convex corner at t = 0
    def pts(ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        x = 1.6 * np.sin(np.pi * ts) - 0.8
        y = -0.8 * np.sin(2.0 * np.pi * ts)
        return np.column_stack([x, y])
    return pts


def _square_pts(half=0.8):
    corners = np.array([[half, half], [-half, half],
                        [-half, -half], [half, -half]])

    def pts(ts):
        ts = np.mod(np.atleast_1d(np.asarray(ts, dtype=float)), 1.0)
        seg = np.minimum((ts * 4).astype(int), 3)
        lam = ts * 4 - seg
        a = corners[(seg + 3) % 4]
        b = corners[seg]
        return a + lam[:, None] * (b - a)
    return pts


def _normal_offsets(**kw) -> SegmentOffset:
    return SegmentOffset(kind="curveNormal", options={},
                         params=OffsetParams(**kw) if kw else None)


def _radial_offsets(**kw) -> SegmentOffset:
    return SegmentOffset(kind="radialToPoint",
                         options={"center": (0.0, 0.0)},
                         params=OffsetParams(**kw) if kw else None)


PRESETS = {
    "circle": Preset(
        name="circle",
        description="unit circle",
        degree=3, spans=16, corner_breaks=(),
        point_fn=_polar(lambda ts, th: np.ones_like(th)),
        offsets=_normal_offsets(),
        exact=_sin_pi(),
        solver={"base_t": 16, "base_s": 2}),
    "ellipse": Preset(
        name="ellipse",
        description="ellipse with half-axes 2 and 1",
        degree=3, spans=24, corner_breaks=(),
        point_fn=_ellipse_pts(2.0, 1.0),
        offsets=_radial_offsets(),
        exact=_sin_pi(),
        solver={"base_t": 24, "base_s": 2}),
    "peanut": Preset(
        name="peanut",
        description="two blended circular lobes with a waist",
        degree=3, spans=32, corner_breaks=(),
        point_fn=_polar(lambda ts, th: 0.65 + 0.35 * np.cos(2.0 * th)),
        offsets=_radial_offsets(c=0.75, d=0.625),
        exact=_sin_plain(),
        solver={"base_t": 32, "base_s": 2}),
    "star": Preset(
        name="star",
        description="five-lobed star r = 1 + 0.25 cos(5 theta)",
        degree=3, spans=40, corner_breaks=(),
        point_fn=_polar(lambda ts, th: 1.0 + 0.25 * np.cos(5.0 * th)),
        offsets=_radial_offsets(c=0.75, d=0.625),
        exact=_sin_pi(),
        solver={"base_t": 80, "base_s": 4}),
    "detail": Preset(
        name="detail",
        description="boundary with fine high-frequency detail",
        degree=3, spans=80, corner_breaks=(),
        point_fn=_polar(lambda ts, th: 1.0 + 0.12 * np.cos(12.0 * th)
                        + 0.03 * np.sin(20.0 * th)),
        offsets=SegmentOffset(kind="smoothedNormal", options={},
                              params=None),
        exact=_sin_pi(),
        solver={"base_t": 160, "base_s": 4},
        degrees=(3, 4)),
    "heart": Preset(
        name="heart",
        description="heart-like: reentrant notch on top, convex point below",
        degree=3, spans=16, corner_breaks=(0.25, 0.75),
        point_fn=_heart_pts(),
        offsets=_normal_offsets(d=0.16),
        exact=_sin_pi(),
        solver={"base_t": 24, "base_s": 4}),
    "drop": Preset(
        name="drop",
        description="teardrop with one 90-degree convex corner",
        degree=3, spans=16, corner_breaks=(0.0,),
        point_fn=_drop_pts(),
        offsets=_normal_offsets(d=0.14),
        exact=_sin_pi(),
        solver={"base_t": 64, "base_s": 2}),
    "square": Preset(
        name="square",
        description="axis-aligned square with side 1.6",
        degree=2, spans=16, corner_breaks=(0.0, 0.25, 0.5, 0.75),
        point_fn=_square_pts(0.8),
        offsets=_normal_offsets(d=0.2),
        exact=_sin_pi(),
        solver={"base_t": 8, "base_s": 2}),
}

SMOOTH_PRESETS = ("circle", "ellipse", "peanut", "star", "detail")
CORNER_PRESETS = ("heart", "drop", "square")


def preset_names():
    return list(PRESETS)


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from "
                       f"{', '.join(PRESETS)}") from None


def _boundary_space(preset: Preset) -> sp.SplineSpace:
    p = preset.degree
    knots = []
    for k in range(preset.spans):
        t = k / preset.spans
        mult = p if any(abs(t - c) < 1e-12 for c in preset.corner_breaks) \
            else 1
        knots.extend([t] * mult)
    return sp.periodic_space(p, knots)


@lru_cache(maxsize=None)
def boundary_curve(name: str) -> sp.SplineCurve:
    preset = get_preset(name)
    space = _boundary_space(preset)
    coefs = sp.fit_l2(space, preset.point_fn)
    return sp.SplineCurve(space, coefs)


@lru_cache(maxsize=None)
def ring_manifold(name: str) -> RingManifold:
    preset = get_preset(name)
    return build_ring_manifold(boundary_curve(name), offsets=preset.offsets)


@lru_cache(maxsize=None)
def cell_cover(name: str) -> MultiCellDomain:
    cfg = ge.SamplingConfig()
    mani = ring_manifold(name)
    hole = hole_boundary(mani, cfg)
    omega = ge.sample_curve(boundary_curve(name), cfg)
    return select_cells(hole, omega, config=cfg)


def exact_solution(name: str) -> ExactSolution:
    return get_preset(name).exact


@lru_cache(maxsize=None)
def hole_polyline(name: str) -> ge.Polyline:
    return hole_boundary(ring_manifold(name), ge.SamplingConfig())


def solve_problem(name: str, degree: int, level: int,
                  quad_shift: int = 0) -> dict:
    """Assembled coupled problem for one preset at one refinement level.

    The returned dict feeds ``omp.convergence_study`` directly; ``h`` is the
    nominal relative mesh size 2^-level (geometry is fixed across levels).
    """
    from . import omp

    preset = get_preset(name)
    mani = ring_manifold(name)
    dom = cell_cover(name)
    sub_r, sub_c = omp.build_spaces(mani, dom, degree, level,
                                    **preset.solver)
    system = omp.assemble_coupled(sub_r, sub_c, preset.exact.f,
                                  preset.exact.u, quad_shift=quad_shift)
    return {"system": system, "exact": preset.exact.u,
            "exact_grad": preset.exact.grad, "hole": hole_polyline(name),
            "h": 0.5 ** level}


@lru_cache(maxsize=None)
def _overlap_points_cached(name: str):
    from . import omp

    return omp.ring_overlap_samples(ring_manifold(name), cell_cover(name))


def overlap_points(name: str) -> np.ndarray:
    """Fixed physical sample points in the subdomain overlap."""
    return _overlap_points_cached(name).copy()


def run_convergence(name: str, degrees=None, levels=(0, 1, 2, 3),
                    with_overlap: bool = False):
    """Convergence study over the preset's degrees (or the given ones)."""
    from . import omp

    preset = get_preset(name)
    if degrees is None:
        degrees = preset.degrees
    pts = _overlap_points_cached(name) if with_overlap else None
    return omp.convergence_study(
        lambda p, lv: solve_problem(name, p, lv), degrees, levels,
        overlap_points=pts)
