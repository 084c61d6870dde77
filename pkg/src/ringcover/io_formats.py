"""Geometry file format, CSV tables, and SVG rendering.

One self-describing JSON text format carries every artifact: the boundary
curve, quasi-normal and offsetting parameters, the cell-lattice request, and
(once computed) the ring manifold and the cell cover. Floats are written via
``repr``, which round-trips exactly, so ``parse_geometry(serialize_geometry(x))``
reproduces every numeric field bit for bit.

Errors split into two kinds: ``GeometrySyntaxError`` carries the line and
column of malformed text, ``GeometrySemanticError`` carries the dotted path
of the offending field.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import splines as sp
from .corners import (Corner, CornerList, HolePiece, PatchInterface,
                      RingManifold)
from .multicell import MultiCellDomain
from .offset import OffsetParams
from .ring import RingPatch

FORMAT_NAME = "ringcover-geometry"
FORMAT_VERSION = 1

_ROLES = ("outer", "hole", "interface")
_PATCH_KINDS = ("ring", "segment", "coons", "parallelogram")
_PIECE_KINDS = ("curve", "far_edge_u", "far_edge_v")


class GeometryIOError(ValueError):
    """A geometry file could not be read or written."""


class GeometrySyntaxError(GeometryIOError):
    """Malformed text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class GeometrySemanticError(GeometryIOError):
    """Well-formed text with an invalid field; carries the field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# -- document model -----------------------------------------------------------

@dataclass(frozen=True)
class MulticellParams:
    """Cell-lattice request; None members fall back to selection defaults."""

    h_c: float | None = None
    origin_offset: tuple | None = None

    def __post_init__(self):
        if self.h_c is not None and self.h_c <= 0.0:
            raise ValueError("h_c must be positive")


@dataclass
class GeometryFile:
    """Everything one pipeline run reads and writes about a domain.

    ``corner_parameters`` annotates where the boundary has C0 knots; the
    parameters must actually carry full multiplicity in the curve's space.
    ``manifold`` and ``domain`` hold pipeline outputs when present.
    """

    boundary: sp.SplineCurve
    corner_parameters: tuple = ()
    qn_kind: str = "curveNormal"
    qn_options: dict = field(default_factory=dict)
    offset_params: OffsetParams | None = None
    multicell: MulticellParams = field(default_factory=MulticellParams)
    manifold: RingManifold | None = None
    domain: MultiCellDomain | None = None
    version: int = FORMAT_VERSION


# -- reading helpers ----------------------------------------------------------

_KINDS = {
    "object": dict, "array": list, "string": str, "boolean": bool,
}


def _fail(path: str, message: str):
    raise GeometrySemanticError(path, message)


def _get(doc, key, path, kind=None, required=True, default=None):
    if not isinstance(doc, dict):
        _fail(path, "expected an object")
    if key not in doc:
        if required:
            _fail(f"{path}.{key}", "missing required field")
        return default
    val = doc[key]
    if kind is not None:
        want = _KINDS[kind]
        ok = isinstance(val, want)
        if kind == "object" or kind == "array":
            ok = ok and not isinstance(val, bool)
        if not ok:
            _fail(f"{path}.{key}", f"expected {kind}")
    return val


def _num(val, path) -> float:
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        _fail(path, "expected a number")
    if not math.isfinite(val):
        _fail(path, "number must be finite")
    return float(val)


def _int(val, path) -> int:
    if isinstance(val, bool) or not isinstance(val, int):
        _fail(path, "expected an integer")
    return val


def _num_list(doc, key, path, required=True, default=None):
    arr = _get(doc, key, path, "array", required, None)
    if arr is None:
        return default
    return [_num(v, f"{path}.{key}[{i}]") for i, v in enumerate(arr)]


def _pair(val, path) -> tuple:
    if not isinstance(val, list) or len(val) != 2:
        _fail(path, "expected a pair [x, y]")
    return (_num(val[0], f"{path}[0]"), _num(val[1], f"{path}[1]"))


def _point_list(doc, key, path) -> np.ndarray:
    arr = _get(doc, key, path, "array")
    pts = [_pair(v, f"{path}.{key}[{i}]") for i, v in enumerate(arr)]
    if not pts:
        _fail(f"{path}.{key}", "must not be empty")
    return np.asarray(pts, dtype=float)


# -- spline spaces, curves, patches -------------------------------------------

def _space_doc(space: sp.SplineSpace) -> dict:
    return {"degree": space.degree,
            "periodic": bool(space.periodic),
            "knots": [float(k) for k in space.knot_vector.knots]}


def _space_from(doc, path) -> sp.SplineSpace:
    degree = _int(_get(doc, "degree", path), f"{path}.degree")
    periodic = _get(doc, "periodic", path, "boolean", required=False,
                    default=False)
    knots = _num_list(doc, "knots", path)
    for i in range(1, len(knots)):
        if knots[i] < knots[i - 1]:
            _fail(f"{path}.knots[{i}]",
                  f"knots not nondecreasing at index {i}")
    try:
        return sp.SplineSpace(sp.KnotVector(degree, tuple(knots),
                                            periodic=periodic))
    except ValueError as exc:
        _fail(path, str(exc))


def _curve_doc(curve: sp.SplineCurve) -> dict:
    doc = _space_doc(curve.space)
    doc["control_points"] = [[float(x), float(y)]
                             for x, y in curve.control_points]
    return doc


def _curve_from(doc, path) -> sp.SplineCurve:
    space = _space_from(doc, path)
    pts = _point_list(doc, "control_points", path)
    if len(pts) != space.dimension:
        _fail(f"{path}.control_points",
              f"expected {space.dimension} control points for this knot "
              f"vector, got {len(pts)}")
    return sp.SplineCurve(space, pts)


def _patch_doc(patch: sp.TensorPatch) -> dict:
    return {"space_s": _space_doc(patch.space_s),
            "space_t": _space_doc(patch.space_t),
            "control_net": [[[float(x), float(y)] for x, y in row]
                            for row in patch.control_net]}


def _patch_from(doc, path) -> sp.TensorPatch:
    ss = _space_from(_get(doc, "space_s", path, "object"), f"{path}.space_s")
    st = _space_from(_get(doc, "space_t", path, "object"), f"{path}.space_t")
    rows = _get(doc, "control_net", path, "array")
    if len(rows) != ss.dimension:
        _fail(f"{path}.control_net",
              f"expected {ss.dimension} rows, got {len(rows)}")
    net = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != st.dimension:
            _fail(f"{path}.control_net[{i}]",
                  f"expected {st.dimension} points")
        net.append([_pair(v, f"{path}.control_net[{i}][{j}]")
                    for j, v in enumerate(row)])
    return sp.TensorPatch(ss, st, np.asarray(net, dtype=float))


# -- parameters ----------------------------------------------------------------

def _params_doc(params: OffsetParams) -> dict:
    if params.d_function is not None:
        raise GeometrySemanticError(
            "offset_params.d_function",
            "function-valued caps cannot be serialized")
    return {"c": params.c, "d": params.d, "alpha": params.alpha,
            "beta": params.beta, "shrink": params.shrink,
            "max_iterations": params.max_iterations,
            "mu_space": _space_doc(params.mu_space)}


def _params_from(doc, path) -> OffsetParams:
    kw = {}
    for key in ("c", "d", "alpha", "beta", "shrink"):
        if key in doc and doc[key] is not None:
            kw[key] = _num(doc[key], f"{path}.{key}")
    if "max_iterations" in doc:
        kw["max_iterations"] = _int(doc["max_iterations"],
                                    f"{path}.max_iterations")
    mu_doc = _get(doc, "mu_space", path, "object", required=False)
    if mu_doc is not None:
        kw["mu_space"] = _space_from(mu_doc, f"{path}.mu_space")
    try:
        return OffsetParams(**kw)
    except ValueError as exc:
        _fail(path, str(exc))


def _options_from(doc, path) -> dict:
    out = {}
    for key, val in doc.items():
        if isinstance(val, list):
            out[key] = tuple(_num(v, f"{path}.{key}[{i}]")
                             for i, v in enumerate(val))
        elif isinstance(val, (bool, int, float, str)):
            out[key] = val
        else:
            _fail(f"{path}.{key}", "options must be scalars or number lists")
    return out


def _options_doc(options: dict) -> dict:
    out = {}
    for key, val in options.items():
        if isinstance(val, (tuple, list, np.ndarray)):
            out[key] = [float(v) for v in val]
        else:
            out[key] = val
    return out


# -- ring manifold --------------------------------------------------------------

def _corner_entry(c: Corner) -> dict:
    return {"parameter": float(c.parameter), "convex": bool(c.convex),
            "delta_minus": float(c.delta_minus),
            "delta_plus": float(c.delta_plus),
            "tangent_in": [float(v) for v in c.tangent_in],
            "tangent_out": [float(v) for v in c.tangent_out],
            "angle": float(c.angle)}


def _corner_from(doc, path) -> Corner:
    return Corner(
        parameter=_num(_get(doc, "parameter", path), f"{path}.parameter"),
        convex=_get(doc, "convex", path, "boolean"),
        delta_minus=_num(_get(doc, "delta_minus", path),
                         f"{path}.delta_minus"),
        delta_plus=_num(_get(doc, "delta_plus", path), f"{path}.delta_plus"),
        tangent_in=_pair(_get(doc, "tangent_in", path), f"{path}.tangent_in"),
        tangent_out=_pair(_get(doc, "tangent_out", path),
                          f"{path}.tangent_out"),
        angle=_num(_get(doc, "angle", path), f"{path}.angle"))


def _manifold_doc(m: RingManifold) -> dict:
    doc = {
        "boundary": _curve_doc(m.boundary),
        "corners": [_corner_entry(c) for c in m.corners],
        "patches": [_patch_doc(p) for p in m.patches],
        "patch_kinds": list(m.patch_kinds),
        "interfaces": [{"patch_a": i.patch_a, "edge_a": list(i.edge_a),
                        "patch_b": i.patch_b, "edge_b": list(i.edge_b)}
                       for i in m.interfaces],
        "edge_roles": [[pi, axis, side, role] for (pi, axis, side), role
                       in sorted(m.edge_roles.items())],
        "hole_pieces": [_piece_doc(piece) for piece in m.hole_pieces],
        "iterations_used": int(m.iterations_used),
    }
    if m.ring_patch is not None:
        doc["ring_patch"] = {
            "inner_curve": _curve_doc(m.ring_patch.inner_curve),
            "regularity_margin": float(m.ring_patch.regularity_margin),
            "fit_error": float(m.ring_patch.fit_error),
        }
    return doc


def _piece_doc(piece: HolePiece) -> dict:
    doc = {"patch": piece.patch, "n_hint": piece.n_hint, "kind": piece.kind}
    if piece.kind == "curve":
        doc["curve"] = _curve_doc(piece.curve)
        doc["interval"] = [float(piece.interval[0]), float(piece.interval[1])]
    return doc


def _piece_from(doc, path, n_patches) -> HolePiece:
    kind = _get(doc, "kind", path, "string")
    if kind not in _PIECE_KINDS:
        _fail(f"{path}.kind", f"unknown hole piece kind {kind!r}")
    patch = _int(_get(doc, "patch", path), f"{path}.patch")
    if not 0 <= patch < n_patches:
        _fail(f"{path}.patch", f"patch index {patch} out of range")
    n_hint = _int(_get(doc, "n_hint", path), f"{path}.n_hint")
    if n_hint < 1:
        _fail(f"{path}.n_hint", "must be >= 1")
    if kind != "curve":
        return HolePiece(patch, n_hint, kind)
    curve = _curve_from(_get(doc, "curve", path, "object"), f"{path}.curve")
    interval = _pair(_get(doc, "interval", path), f"{path}.interval")
    return HolePiece(patch, n_hint, kind, curve, interval)


def _manifold_from(doc, path) -> RingManifold:
    boundary = _curve_from(_get(doc, "boundary", path, "object"),
                           f"{path}.boundary")
    corners = CornerList(tuple(
        _corner_from(c, f"{path}.corners[{i}]")
        for i, c in enumerate(_get(doc, "corners", path, "array"))))
    patches = [_patch_from(p, f"{path}.patches[{i}]")
               for i, p in enumerate(_get(doc, "patches", path, "array"))]
    kinds = _get(doc, "patch_kinds", path, "array")
    if len(kinds) != len(patches):
        _fail(f"{path}.patch_kinds", "one entry per patch required")
    for i, k in enumerate(kinds):
        if k not in _PATCH_KINDS:
            _fail(f"{path}.patch_kinds[{i}]", f"unknown patch kind {k!r}")
    interfaces = []
    for i, itf in enumerate(_get(doc, "interfaces", path, "array")):
        ip = f"{path}.interfaces[{i}]"
        pa = _int(_get(itf, "patch_a", ip), f"{ip}.patch_a")
        pb = _int(_get(itf, "patch_b", ip), f"{ip}.patch_b")
        ea = _edge(_get(itf, "edge_a", ip), f"{ip}.edge_a")
        eb = _edge(_get(itf, "edge_b", ip), f"{ip}.edge_b")
        for name, pi in (("patch_a", pa), ("patch_b", pb)):
            if not 0 <= pi < len(patches):
                _fail(f"{ip}.{name}", f"patch index {pi} out of range")
        interfaces.append(PatchInterface(pa, ea, pb, eb))
    roles = {}
    for i, row in enumerate(_get(doc, "edge_roles", path, "array")):
        rp = f"{path}.edge_roles[{i}]"
        if not isinstance(row, list) or len(row) != 4:
            _fail(rp, "expected [patch, axis, side, role]")
        pi, axis, side = (_int(v, f"{rp}[{k}]")
                          for k, v in enumerate(row[:3]))
        role = row[3]
        if not 0 <= pi < len(patches):
            _fail(f"{rp}[0]", f"patch index {pi} out of range")
        if axis not in (0, 1) or side not in (0, 1):
            _fail(rp, "axis and side must be 0 or 1")
        if role not in _ROLES:
            _fail(f"{rp}[3]", f"unknown edge role {role!r}")
        roles[(pi, axis, side)] = role
    pieces = [_piece_from(p, f"{path}.hole_pieces[{i}]", len(patches))
              for i, p in enumerate(_get(doc, "hole_pieces", path, "array"))]
    iters = _int(_get(doc, "iterations_used", path, required=False,
                      default=0), f"{path}.iterations_used")
    ring_patch = None
    rp_doc = _get(doc, "ring_patch", path, "object", required=False)
    if rp_doc is not None:
        inner = _curve_from(_get(rp_doc, "inner_curve", f"{path}.ring_patch",
                                 "object"), f"{path}.ring_patch.inner_curve")
        ring_patch = RingPatch(
            boundary, inner, patches[0],
            _num(_get(rp_doc, "regularity_margin", f"{path}.ring_patch"),
                 f"{path}.ring_patch.regularity_margin"),
            _num(_get(rp_doc, "fit_error", f"{path}.ring_patch"),
                 f"{path}.ring_patch.fit_error"))
    return RingManifold(boundary, corners, patches, list(kinds), interfaces,
                        roles, [], pieces, ring_patch=ring_patch,
                        iterations_used=iters)


def _edge(val, path) -> tuple:
    if (not isinstance(val, list) or len(val) != 2
            or any(v not in (0, 1) or isinstance(v, bool) for v in val)):
        _fail(path, "expected [axis, side] with entries 0 or 1")
    return (val[0], val[1])


# -- cell domain -----------------------------------------------------------------

def _domain_doc(dom: MultiCellDomain) -> dict:
    return {"h_c": float(dom.h_c),
            "origin_offset": [float(v) for v in dom.origin_offset],
            "overlap_margin": float(dom.overlap_margin),
            "active_cells": [[int(i), int(j)]
                             for i, j in sorted(dom.active_cells)]}


def _domain_from(doc, path) -> MultiCellDomain:
    h_c = _num(_get(doc, "h_c", path), f"{path}.h_c")
    if h_c <= 0.0:
        _fail(f"{path}.h_c", "must be positive")
    origin = _pair(_get(doc, "origin_offset", path), f"{path}.origin_offset")
    margin = _num(_get(doc, "overlap_margin", path, required=False,
                       default=0.0), f"{path}.overlap_margin")
    cells = []
    for i, row in enumerate(_get(doc, "active_cells", path, "array")):
        cp = f"{path}.active_cells[{i}]"
        if not isinstance(row, list) or len(row) != 2:
            _fail(cp, "expected a cell index pair [i, j]")
        cells.append((_int(row[0], f"{cp}[0]"), _int(row[1], f"{cp}[1]")))
    if not cells:
        _fail(f"{path}.active_cells", "must not be empty")
    return MultiCellDomain(h_c, origin, frozenset(cells),
                           overlap_margin=margin)


# -- top level --------------------------------------------------------------------

def serialize_geometry(gf: GeometryFile) -> str:
    """Self-describing text for a GeometryFile; floats round-trip exactly."""
    doc = {"format": FORMAT_NAME, "version": int(gf.version),
           "boundary": _curve_doc(gf.boundary)}
    if gf.corner_parameters:
        doc["corners"] = [float(t) for t in gf.corner_parameters]
    doc["quasi_normal"] = {"kind": gf.qn_kind,
                           "options": _options_doc(gf.qn_options)}
    if gf.offset_params is not None:
        doc["offset_params"] = _params_doc(gf.offset_params)
    mc = {}
    if gf.multicell.h_c is not None:
        mc["h_c"] = float(gf.multicell.h_c)
    if gf.multicell.origin_offset is not None:
        mc["origin_offset"] = [float(v) for v in gf.multicell.origin_offset]
    if mc:
        doc["multicell"] = mc
    if gf.manifold is not None:
        doc["ring_manifold"] = _manifold_doc(gf.manifold)
    if gf.domain is not None:
        doc["cell_domain"] = _domain_doc(gf.domain)
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def parse_geometry(text: str) -> GeometryFile:
    """Parse and validate geometry text; the inverse of serialize_geometry."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometrySyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        _fail("$", "top level must be an object")
    name = _get(doc, "format", "$", "string")
    if name != FORMAT_NAME:
        _fail("$.format", f"expected {FORMAT_NAME!r}, found {name!r}")
    version = _int(_get(doc, "version", "$"), "$.version")
    if version != FORMAT_VERSION:
        _fail("$.version", f"unsupported version {version}")
    boundary = _curve_from(_get(doc, "boundary", "$", "object"), "$.boundary")

    corner_params = tuple(_num_list(doc, "corners", "$", required=False,
                                    default=[]))
    for i, t in enumerate(corner_params):
        if not 0.0 <= t < 1.0:
            _fail(f"$.corners[{i}]", "corner parameter must lie in [0, 1)")
        if boundary.space.multiplicity(t) < boundary.space.degree:
            _fail(f"$.corners[{i}]",
                  f"boundary knots at t={t!r} lack corner multiplicity "
                  f"{boundary.space.degree}")

    qn_kind, qn_options = "curveNormal", {}
    qn_doc = _get(doc, "quasi_normal", "$", "object", required=False)
    if qn_doc is not None:
        qn_kind = _get(qn_doc, "kind", "$.quasi_normal", "string")
        opt_doc = _get(qn_doc, "options", "$.quasi_normal", "object",
                       required=False, default={})
        qn_options = _options_from(opt_doc, "$.quasi_normal.options")

    params = None
    params_doc = _get(doc, "offset_params", "$", "object", required=False)
    if params_doc is not None:
        params = _params_from(params_doc, "$.offset_params")

    mc_doc = _get(doc, "multicell", "$", "object", required=False, default={})
    h_c = None
    if "h_c" in mc_doc:
        h_c = _num(mc_doc["h_c"], "$.multicell.h_c")
        if h_c <= 0.0:
            _fail("$.multicell.h_c", "must be positive")
    origin = None
    if "origin_offset" in mc_doc:
        origin = _pair(mc_doc["origin_offset"], "$.multicell.origin_offset")

    manifold = None
    mani_doc = _get(doc, "ring_manifold", "$", "object", required=False)
    if mani_doc is not None:
        manifold = _manifold_from(mani_doc, "$.ring_manifold")
    domain = None
    dom_doc = _get(doc, "cell_domain", "$", "object", required=False)
    if dom_doc is not None:
        domain = _domain_from(dom_doc, "$.cell_domain")

    return GeometryFile(boundary, corner_params, qn_kind, qn_options, params,
                        MulticellParams(h_c, origin), manifold, domain,
                        version)


def write_geometry(path, gf: GeometryFile):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_geometry(gf))


def read_geometry(path) -> GeometryFile:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_geometry(fh.read())


# -- CSV ---------------------------------------------------------------------------

def csv_table(header, rows) -> str:
    """CSV text with repr-exact floats (lossless reload via float())."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v
                         for v in row])
    return buf.getvalue()


# -- SVG ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderSpec:
    """Canvas geometry and per-subdomain styling for render_svg."""

    width: int = 640
    height: int = 640
    isolines_s: int = 5
    isolines_t: int = 9
    samples_per_span: int = 8
    margin: float = 0.05
    boundary_color: str = "#1a1a1a"
    ring_color: str = "#c0392b"     # ring subdomain (warm)
    cell_color: str = "#2e6bc0"     # cell subdomain (cool)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("canvas dimensions must be positive")
        if self.isolines_s < 0 or self.isolines_t < 0:
            raise ValueError("isoline counts must be >= 0")
        if self.samples_per_span < 2:
            raise ValueError("samples_per_span must be >= 2")


def _fmt(v: float) -> str:
    return f"{v:.4f}"


class _Canvas:
    """World-to-canvas affine with a y flip; drops non-finite points."""

    def __init__(self, lo, hi, spec: RenderSpec):
        span = np.maximum(hi - lo, 1e-12)
        pad = spec.margin * float(span.max())
        lo = lo - pad
        span = span + 2.0 * pad
        self.scale = min(spec.width / span[0], spec.height / span[1])
        self.lo = lo
        self.height = spec.height
        self.offset = 0.5 * (np.array([spec.width, spec.height])
                             - self.scale * span)

    def map(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        pts = pts[np.all(np.isfinite(pts), axis=1)]
        xy = (pts - self.lo) * self.scale + self.offset
        xy[:, 1] = self.height - xy[:, 1]
        return xy


def _path(points: np.ndarray, cls: str, color: str, width: float,
          closed: bool = False) -> str:
    if len(points) < 2:
        return ""
    coords = " L ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in points)
    tail = " Z" if closed else ""
    return (f'<path class="{cls}" d="M {coords}{tail}" fill="none" '
            f'stroke="{color}" stroke-width="{_fmt(width)}"/>')


def _heat(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    cold = np.array([46.0, 107.0, 192.0])
    hot = np.array([192.0, 57.0, 43.0])
    r, g, b = np.rint(cold + t * (hot - cold)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _curve_points(curve: sp.SplineCurve, per_span: int) -> np.ndarray:
    spans = curve.space.spans()
    frac = np.linspace(0.0, 1.0, per_span, endpoint=False)
    ts = (spans[:, 0][:, None]
          + (spans[:, 1] - spans[:, 0])[:, None] * frac[None, :]).ravel()
    if not curve.space.periodic:
        ts = np.append(ts, curve.space.domain[1])
    return curve.evaluate(ts)


def _patch_isolines(patch: sp.TensorPatch, spec: RenderSpec):
    a0, b0 = patch.space_s.domain
    a1, b1 = patch.space_t.domain
    n = spec.samples_per_span
    ns = max(2, n * patch.space_s.num_spans() + 1)
    nt = max(2, n * patch.space_t.num_spans() + 1)
    lines = []
    for s in np.linspace(a0, b0, spec.isolines_s):
        ts = np.linspace(a1, b1, nt)
        lines.append(patch.evaluate(np.full_like(ts, s), ts))
    t_iso = np.linspace(a1, b1, spec.isolines_t,
                        endpoint=not patch.space_t.periodic)
    for t in t_iso:
        ss = np.linspace(a0, b0, ns)
        lines.append(patch.evaluate(ss, np.full_like(ss, t)))
    return lines


def render_svg(gf: GeometryFile, field_samples=None,
               spec: RenderSpec = RenderSpec()) -> str:
    """Deterministic SVG 1.1 picture of a geometry file.

    Layers: active lattice cells (when a cell domain is present), ring patch
    isolines and the hole outline (when a manifold is present), the boundary
    curve, then optional scalar field samples as heat-colored dots (rows of
    (x, y, value); non-finite rows are dropped).
    """
    world = [_curve_points(gf.boundary, spec.samples_per_span)]
    if gf.domain is not None:
        for (i, j) in sorted(gf.domain.active_cells):
            lo, hi = gf.domain.cell_rect(i, j)
            world.append(np.array([lo, hi]))
    allpts = np.vstack(world)
    allpts = allpts[np.all(np.isfinite(allpts), axis=1)]
    canvas = _Canvas(allpts.min(axis=0), allpts.max(axis=0), spec)

    parts = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{spec.width}" height="{spec.height}" '
             f'viewBox="0 0 {spec.width} {spec.height}">']

    if gf.domain is not None:
        parts.append('<g class="cells">')
        for (i, j) in sorted(gf.domain.active_cells):
            lo, hi = gf.domain.cell_rect(i, j)
            corner = canvas.map(np.array([[lo[0], hi[1]]]))[0]
            size = (hi - lo) * canvas.scale
            parts.append(
                f'<rect class="cell" x="{_fmt(corner[0])}" '
                f'y="{_fmt(corner[1])}" width="{_fmt(size[0])}" '
                f'height="{_fmt(size[1])}" fill="none" '
                f'stroke="{spec.cell_color}" stroke-width="1.0000"/>')
        parts.append('</g>')

    if gf.manifold is not None:
        parts.append('<g class="ring">')
        for patch in gf.manifold.patches:
            for line in _patch_isolines(patch, spec):
                parts.append(_path(canvas.map(line), "isoline",
                                   spec.ring_color, 0.7))
        hole = gf.manifold.hole_polyline()
        parts.append(_path(canvas.map(hole.vertices), "hole",
                           spec.ring_color, 1.6, closed=True))
        parts.append('</g>')

    parts.append(_path(canvas.map(_curve_points(gf.boundary,
                                                spec.samples_per_span)),
                       "boundary", spec.boundary_color, 2.0, closed=True))

    if field_samples is not None:
        samples = np.atleast_2d(np.asarray(field_samples, dtype=float))
        samples = samples[np.all(np.isfinite(samples), axis=1)]
        if len(samples):
            vals = samples[:, 2]
            vmin, vmax = float(vals.min()), float(vals.max())
            spread = vmax - vmin if vmax > vmin else 1.0
            parts.append('<g class="field">')
            xy = canvas.map(samples[:, :2])
            for (x, y), v in zip(xy, vals):
                parts.append(
                    f'<circle class="sample" cx="{_fmt(x)}" cy="{_fmt(y)}" '
                    f'r="2.0000" fill="{_heat((v - vmin) / spread)}"/>')
            parts.append('</g>')

    parts.append('</svg>')
    return "\n".join(p for p in parts if p) + "\n"
