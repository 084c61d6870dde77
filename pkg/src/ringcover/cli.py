"""Command-line pipeline driver.

Subcommands walk the pipeline end to end: ``parameterize`` builds the ring,
``cover`` adds the cell lattice, ``solve`` runs one coupled solve,
``convergence`` sweeps degrees and levels, ``render`` draws any geometry
file, and ``validate`` re-checks every geometric gate. Each stage reads
either a built-in preset (``--preset``) or a geometry file produced by an
earlier stage (``--input``), and writes fixed-name artifacts into
``--output``; identical invocations write identical bytes.

Artifacts are only written after a command has fully succeeded, so a nonzero
exit never leaves partial outputs behind. Every failing module maps to its
own exit code (see the EXIT_* constants).

``RINGCOVER_THREADS`` caps the numeric thread pools; it must be set before
the interpreter loads the BLAS runtime, which the console entry point
guarantees.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

EXIT_OK = 0
EXIT_USAGE = 2          # argparse errors and invalid override values
EXIT_IO = 3             # geometry files: syntax, semantics, missing parts
EXIT_QUASI_NORMAL = 4
EXIT_OFFSET = 5
EXIT_RING_FIT = 6
EXIT_CORNERS = 7
EXIT_MULTICELL = 8
EXIT_SOLVER = 9
EXIT_VALIDATION = 10    # validate found at least one failing gate
EXIT_FIT = 11           # spline fitting failures
EXIT_INTERNAL = 70

_QN_KINDS = ("curveNormal", "radialToPoint", "smoothedNormal")


def _apply_thread_env():
    """Propagate RINGCOVER_THREADS to the numeric runtimes (pre-import)."""
    val = os.environ.get("RINGCOVER_THREADS")
    if not val:
        return
    try:
        n = int(val)
        if n < 1:
            raise ValueError
    except ValueError:
        raise SystemExit(
            f"ringcover: RINGCOVER_THREADS must be a positive integer, "
            f"got {val!r}")
    for key in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(key, str(n))


@dataclass
class Command:
    """One parsed invocation: subcommand, input source, output, overrides."""

    name: str
    preset: str | None = None
    input: str | None = None
    output: str | None = None
    overrides: dict = None

    def __post_init__(self):
        if self.overrides is None:
            self.overrides = {}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ringcover",
        description="Two-patch overlapping parameterization and Poisson "
                    "solver for planar spline domains.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, needs_output=True):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="built-in boundary preset name")
        src.add_argument("--input", help="geometry file from a prior stage")
        p.add_argument("--output", required=needs_output,
                       help="directory for artifacts (created if missing)")

    def offset_overrides(p):
        p.add_argument("--quasi-normal", choices=_QN_KINDS,
                       help="quasi-normal field kind")
        p.add_argument("--c", type=float, help="offset fraction in (0, 1)")
        p.add_argument("--d", type=float, help="initial offset cap > 0")
        p.add_argument("--alpha", type=float,
                       help="first-derivative regularization weight")
        p.add_argument("--beta", type=float,
                       help="second-derivative regularization weight")

    def solver_overrides(p):
        p.add_argument("--degree", type=int, help="discretization degree")
        p.add_argument("--base-t", type=int, default=None,
                       help="level-0 spans along the boundary direction")
        p.add_argument("--base-s", type=int, default=None,
                       help="level-0 spans across the ring")
        p.add_argument("--base-cell", type=int, default=None,
                       help="level-0 spans per lattice cell")

    p = sub.add_parser("parameterize",
                       help="offset the boundary into a ring manifold")
    common(p)
    offset_overrides(p)

    p = sub.add_parser("cover", help="cover the hole with lattice cells")
    common(p)
    offset_overrides(p)
    p.add_argument("--h-c", type=float, help="lattice cell size > 0")

    p = sub.add_parser("solve", help="run one coupled Poisson solve")
    common(p)
    solver_overrides(p)
    p.add_argument("--level", type=int, default=0, help="refinement level")

    p = sub.add_parser("convergence",
                       help="sweep degrees and levels, report error slopes")
    common(p)
    solver_overrides(p)
    p.add_argument("--degrees", type=int, nargs="+",
                   help="degrees to sweep (default: preset degrees or 2 3 4)")
    p.add_argument("--levels", type=int, nargs="+",
                   help="refinement levels (default: 0 1 2 3)")

    p = sub.add_parser("render", help="draw a geometry file as SVG")
    common(p)
    p.add_argument("--field", help="solution CSV (x, y, u columns) to "
                                   "overlay as heat samples")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=640)

    p = sub.add_parser("validate",
                       help="re-check every geometric gate, report per gate")
    common(p, needs_output=False)
    return ap


def _command_from(args) -> Command:
    known = ("command", "preset", "input", "output")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in known and v is not None}
    return Command(args.command, args.preset, args.input, args.output,
                   overrides)


# -- pipeline state -----------------------------------------------------------


def _load(cmd: Command):
    """GeometryFile for the command's input (preset or file)."""
    from . import io_formats as iof
    from . import presets
    from .offset import OffsetParams

    if cmd.preset is not None:
        pre = presets.get_preset(cmd.preset)
        return iof.GeometryFile(
            boundary=presets.boundary_curve(cmd.preset),
            corner_parameters=pre.corner_breaks,
            qn_kind=pre.offsets.kind,
            qn_options=dict(pre.offsets.options),
            offset_params=pre.offsets.params or OffsetParams())
    try:
        return iof.read_geometry(cmd.input)
    except OSError as exc:
        raise iof.GeometryIOError(f"cannot read {cmd.input}: {exc}") from exc


def _offset_params(gf, ov: dict):
    """Apply c/d/alpha/beta overrides; validation happens on construction."""
    from dataclasses import replace

    from .offset import OffsetParams

    params = gf.offset_params or OffsetParams()
    kw = {k: ov[k] for k in ("c", "d", "alpha", "beta") if k in ov}
    return replace(params, **kw) if kw else params


def _require_manifold(gf, cmd: Command):
    from . import io_formats as iof

    if gf.manifold is None:
        raise iof.GeometryIOError(
            "input has no ring manifold; run parameterize first")
    return gf.manifold


def _require_domain(gf, cmd: Command):
    from . import io_formats as iof

    if gf.domain is None:
        raise iof.GeometryIOError(
            "input has no cell domain; run cover first")
    return gf.domain


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _parameterize(gf, cmd: Command):
    from .corners import SegmentOffset, build_ring_manifold

    ov = cmd.overrides
    kind = ov.get("quasi_normal", gf.qn_kind)
    options = dict(gf.qn_options) if kind == gf.qn_kind else {}
    params = _offset_params(gf, ov)
    gf.qn_kind, gf.qn_options, gf.offset_params = kind, options, params
    gf.manifold = build_ring_manifold(
        gf.boundary, offsets=SegmentOffset(kind, options, params))
    return gf


def _cover(gf, cmd: Command):
    from . import geometry as ge
    from . import io_formats as iof
    from .multicell import hole_boundary, select_cells

    manifold = _require_manifold(gf, cmd)
    h_c = cmd.overrides.get("h_c", gf.multicell.h_c)
    gf.multicell = iof.MulticellParams(h_c, gf.multicell.origin_offset)
    cfg = ge.SamplingConfig()
    hole = hole_boundary(manifold, cfg)
    omega = ge.sample_curve(gf.boundary, cfg)
    gf.domain = select_cells(hole, omega, h_c=h_c,
                             origin_offset=gf.multicell.origin_offset,
                             config=cfg)
    return gf


def _solver_setup(gf, cmd: Command):
    """(manifold, domain, exact solution, solver bases) for solve sweeps."""
    import numpy as np

    from . import presets

    manifold = _require_manifold(gf, cmd)
    domain = _require_domain(gf, cmd)
    ov = cmd.overrides
    if cmd.preset is not None:
        pre = presets.get_preset(cmd.preset)
        exact = pre.exact
        bases = dict(pre.solver)
        degrees = pre.degrees
    else:
        u = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)
        grad = lambda x, y: (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                             np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))
        f = lambda x, y: (2.0 * np.pi ** 2
                          * np.sin(np.pi * x) * np.sin(np.pi * y))
        exact = presets.ExactSolution(u, grad, f)
        bases = {}
        degrees = (2, 3, 4)
    for key, name in (("base_t", "base_t"), ("base_s", "base_s"),
                      ("base_cell", "base_cell")):
        if key in ov:
            if ov[key] < 1:
                raise ValueError(f"--{key.replace('_', '-')} must be >= 1")
            bases[name] = ov[key]
    bases.setdefault("base_t", 16)
    bases.setdefault("base_s", 2)
    bases.setdefault("base_cell", 1)
    return manifold, domain, exact, bases, degrees


def _check_degree(degree: int):
    if not 1 <= degree <= 8:
        raise ValueError(f"degree must lie in [1, 8], got {degree}")


def _make_problem(manifold, domain, exact, bases, hole):
    from . import omp

    def make(degree, level):
        sub_r, sub_c = omp.build_spaces(manifold, domain, degree, level,
                                        **bases)
        system = omp.assemble_coupled(sub_r, sub_c, exact.f, exact.u)
        return {"system": system, "exact": exact.u,
                "exact_grad": exact.grad, "hole": hole,
                "h": 0.5 ** level}
    return make


def _field_rows(system):
    """Deterministic solution samples over both subdomains."""
    import numpy as np

    rows = []
    sub_r, sub_c = system.sub_a, system.sub_b
    for p, fld in enumerate(sub_r.fields):
        au, bu = fld.space_u.domain
        av, bv = fld.space_v.domain
        us = np.linspace(au, bu, 9)
        vs = np.linspace(av, bv, 9)
        U, V = np.meshgrid(us, vs, indexing="ij")
        xy = fld.geometry.evaluate(U.ravel(), V.ravel())
        vals = sub_r.evaluate_params(p, U.ravel(), V.ravel())
        rows += [("ring", p, float(x), float(y), float(u))
                 for (x, y), u in zip(xy, vals)]
    dom = sub_c.domain
    frac = np.array([0.25, 0.5, 0.75])
    for (i, j) in sorted(dom.active_cells):
        lo, hi = dom.cell_rect(i, j)
        X, Y = np.meshgrid(lo[0] + (hi[0] - lo[0]) * frac,
                           lo[1] + (hi[1] - lo[1]) * frac, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        vals = sub_c.evaluate_points(pts)
        rows += [("cells", 0, float(x), float(y), float(u))
                 for (x, y), u in zip(pts, vals)]
    return rows


def _solve(gf, cmd: Command):
    from . import io_formats as iof
    from . import omp

    manifold, domain, exact, bases, degrees = _solver_setup(gf, cmd)
    degree = cmd.overrides.get("degree", degrees[0])
    _check_degree(degree)
    level = cmd.overrides.get("level", 0)
    if level < 0:
        raise ValueError("--level must be >= 0")
    hole = manifold.hole_polyline()
    prob = _make_problem(manifold, domain, exact, bases, hole)(degree, level)
    rep = omp.solve_coupled(prob["system"], prob["exact"],
                            prob["exact_grad"], prob["hole"])
    report = {
        "degree": degree, "level": level, "dof_total": rep.dof_total,
        "l2_error": rep.l2_error, "h1_error": rep.h1_error,
        "solver_residual": rep.solver_residual,
        "per_subdomain": {k: list(v) for k, v in rep.per_subdomain.items()},
    }
    artifacts = {
        "solve_report.json": json.dumps(_jsonable(report), indent=2,
                                        sort_keys=True) + "\n",
        "field.csv": iof.csv_table(("subdomain", "patch", "x", "y", "u"),
                                   _field_rows(prob["system"])),
    }
    return artifacts, report


def _convergence(gf, cmd: Command):
    from . import io_formats as iof
    from . import omp

    manifold, domain, exact, bases, preset_degrees = _solver_setup(gf, cmd)
    degrees = tuple(cmd.overrides.get("degrees", preset_degrees))
    for d in degrees:
        _check_degree(d)
    levels = tuple(cmd.overrides.get("levels", (0, 1, 2, 3)))
    if any(lv < 0 for lv in levels):
        raise ValueError("--levels entries must be >= 0")
    hole = manifold.hole_polyline()
    make = _make_problem(manifold, domain, exact, bases, hole)
    report = omp.convergence_study(make, degrees, levels)
    slope_rows = [(p, report.slopes[p]["l2"], report.slopes[p]["h1"])
                  for p in degrees if p in report.slopes]
    artifacts = {
        "convergence.csv": report.to_csv(),
        "slopes.csv": iof.csv_table(("degree", "l2_slope", "h1_slope"),
                                    slope_rows),
    }
    return artifacts, report


def _read_field_csv(path):
    import csv as _csv

    import numpy as np

    from . import io_formats as iof

    try:
        with open(path, "r", encoding="utf-8") as fh:
            reader = _csv.DictReader(fh)
            cols = reader.fieldnames or ()
            for need in ("x", "y", "u"):
                if need not in cols:
                    raise iof.GeometryIOError(
                        f"field CSV {path} lacks column {need!r}")
            rows = [(float(r["x"]), float(r["y"]), float(r["u"]))
                    for r in reader]
    except OSError as exc:
        raise iof.GeometryIOError(f"cannot read {path}: {exc}") from exc
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _render(gf, cmd: Command):
    from . import io_formats as iof

    ov = cmd.overrides
    spec = iof.RenderSpec(width=ov.get("width", 640),
                          height=ov.get("height", 640))
    samples = None
    if "field" in ov:
        samples = _read_field_csv(ov["field"])
    return {"render.svg": iof.render_svg(gf, samples, spec)}


# -- validation ----------------------------------------------------------------


def _validate_gates(gf):
    """All geometric invariants as (gate, passed, detail) rows."""
    import numpy as np

    from . import geometry as ge
    from .corners import detect_corners
    from .multicell import hole_boundary
    from .ring import patch_regularity

    cfg = ge.SamplingConfig()
    gates = []
    poly = ge.sample_curve(gf.boundary, cfg)
    simple, where = ge.is_simple(poly)
    gates.append(("boundary_simple", simple,
                  "no self-intersection" if simple
                  else f"self-intersection near {where}"))
    area = ge.signed_area(poly)
    gates.append(("boundary_ccw", area > 0.0, f"signed area {area:.6g}"))

    detected = detect_corners(gf.boundary).parameters
    annotated = tuple(sorted(gf.corner_parameters))
    match = (len(detected) == len(annotated)
             and all(abs(a - b) < 1e-9 for a, b in zip(sorted(detected),
                                                       annotated)))
    gates.append(("corner_annotations", match,
                  f"annotated {list(annotated)}, detected {list(detected)}"))

    if gf.manifold is not None:
        m = gf.manifold
        residue = m.interface_residue()
        gates.append(("interface_residue", residue < 1e-10,
                      f"max interface gap {residue:.3e}"))
        bad = [i for i, p in enumerate(m.patches)
               if not patch_regularity(p)[2]]
        gates.append(("patch_jacobians", not bad,
                      "all single-signed" if not bad
                      else f"sign change on patches {bad}"))
        hole = m.hole_polyline(cfg)
        h_simple, h_where = ge.is_simple(hole)
        gates.append(("hole_simple", h_simple,
                      "no self-intersection" if h_simple
                      else f"self-intersection near {h_where}"))
        codes = ge.classify_points(poly, hole.vertices,
                                   cfg.geometric_tolerance)
        n_out = int(np.sum(codes != 1))
        gates.append(("hole_inside", n_out == 0,
                      f"{n_out} hole vertices outside the domain"))
        h_area = ge.signed_area(hole)
        gates.append(("hole_ccw", h_area > 0.0, f"signed area {h_area:.6g}"))

    if gf.domain is not None and gf.manifold is not None:
        dom = gf.domain
        frac = np.arange(17) / 16.0
        edge_pts = []
        for (i, j) in sorted(dom.active_cells):
            lo, hi = dom.cell_rect(i, j)
            xs = lo[0] + (hi[0] - lo[0]) * frac
            ys = lo[1] + (hi[1] - lo[1]) * frac
            edge_pts += [np.column_stack([xs, np.full_like(xs, lo[1])]),
                         np.column_stack([xs, np.full_like(xs, hi[1])]),
                         np.column_stack([np.full_like(ys, lo[0]), ys]),
                         np.column_stack([np.full_like(ys, hi[0]), ys])]
        codes = ge.classify_points(poly, np.vstack(edge_pts),
                                   cfg.geometric_tolerance)
        n_out = int(np.sum(codes != 1))
        gates.append(("cells_inside", n_out == 0,
                      f"{n_out} cell boundary points outside the domain"))

        cells = set(dom.active_cells)
        seen = {min(cells)}
        stack = [min(cells)]
        while stack:
            ci, cj = stack.pop()
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nb = (ci + di, cj + dj)
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        gates.append(("cells_connected", len(seen) == len(cells),
                      f"flood fill reached {len(seen)} of {len(cells)}"))

        try:
            hole = hole_boundary(gf.manifold, cfg)
            rng = np.random.default_rng(7)
            lo, hi = hole.bbox()
            cand = lo + rng.random((20000, 2)) * (hi - lo)
            inner = cand[ge.classify_points(hole, cand,
                                            cfg.geometric_tolerance) == 1]
            covered = dom.contains(inner)
            n_miss = int(np.sum(~covered))
            gates.append(("hole_covered", n_miss == 0,
                          f"{n_miss} of {len(inner)} hole samples uncovered"))
        except Exception as exc:   # hole trace failure is itself a finding
            gates.append(("hole_covered", False, str(exc)))
        gates.append(("overlap_margin", dom.overlap_margin > 0.0,
                      f"margin {dom.overlap_margin:.6g}"))
    return gates


def _validate(gf, cmd: Command):
    gates = _validate_gates(gf)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
             for name, ok, detail in gates]
    n_fail = sum(1 for _, ok, _ in gates if not ok)
    lines.append(f"{len(gates) - n_fail} of {len(gates)} gates passed")
    text = "\n".join(lines) + "\n"
    ok = n_fail == 0
    return {"validate.txt": text} if cmd.output else {}, text, ok


# -- artifact writing ------------------------------------------------------------


def _geometry_artifacts(gf):
    from . import io_formats as iof

    return {"geometry.json": iof.serialize_geometry(gf),
            "domain.svg": iof.render_svg(gf)}


def _write_all(outdir: str, artifacts: dict):
    os.makedirs(outdir, exist_ok=True)
    for name, text in artifacts.items():
        with open(os.path.join(outdir, name), "w", encoding="utf-8") as fh:
            fh.write(text)


def run(cmd: Command) -> int:
    """Execute one command; returns the process exit status."""
    gf = _load(cmd)
    out = sys.stdout

    if cmd.name == "parameterize":
        gf = _parameterize(gf, cmd)
        artifacts = _geometry_artifacts(gf)
        artifacts["parameterize.log"] = "".join(
            json.dumps(_jsonable(entry), sort_keys=True) + "\n"
            for entry in gf.manifold.shrink_trace)
        _write_all(cmd.output, artifacts)
        out.write(f"ring manifold with {len(gf.manifold.patches)} patch(es) "
                  f"after {gf.manifold.iterations_used} iteration(s)\n")
        return EXIT_OK

    if cmd.name == "cover":
        if gf.manifold is None:
            gf = _parameterize(gf, cmd)
        gf = _cover(gf, cmd)
        _write_all(cmd.output, _geometry_artifacts(gf))
        out.write(f"cell cover with {len(gf.domain.active_cells)} cells at "
                  f"h_c={gf.domain.h_c!r}\n")
        return EXIT_OK

    if cmd.name == "solve":
        if gf.manifold is None and cmd.preset is not None:
            gf = _cover(_parameterize(gf, cmd), cmd)
        elif gf.domain is None and cmd.preset is not None:
            gf = _cover(gf, cmd)
        artifacts, report = _solve(gf, cmd)
        _write_all(cmd.output, artifacts)
        out.write(f"solved with {report['dof_total']} dofs; "
                  f"l2 {report['l2_error']:.6e} h1 {report['h1_error']:.6e}\n")
        return EXIT_OK

    if cmd.name == "convergence":
        if gf.manifold is None and cmd.preset is not None:
            gf = _cover(_parameterize(gf, cmd), cmd)
        elif gf.domain is None and cmd.preset is not None:
            gf = _cover(gf, cmd)
        artifacts, report = _convergence(gf, cmd)
        _write_all(cmd.output, artifacts)
        for p, slopes in sorted(report.slopes.items()):
            out.write(f"degree {p}: l2 slope {slopes['l2']:.3f}, "
                      f"h1 slope {slopes['h1']:.3f}\n")
        return EXIT_OK

    if cmd.name == "render":
        artifacts = _render(gf, cmd)
        _write_all(cmd.output, artifacts)
        out.write("wrote render.svg\n")
        return EXIT_OK

    if cmd.name == "validate":
        artifacts, text, ok = _validate(gf, cmd)
        if cmd.output:
            _write_all(cmd.output, artifacts)
        out.write(text)
        return EXIT_OK if ok else EXIT_VALIDATION

    raise ValueError(f"unknown command {cmd.name!r}")


def main(argv=None) -> int:
    _apply_thread_env()
    args = _parser().parse_args(argv)
    cmd = _command_from(args)

    from . import io_formats as iof
    from .corners import CornerError
    from .multicell import MultiCellError
    from .offset import OffsetError, QuasiNormalError
    from .omp import SolverError
    from .ring import RingFitError
    from .splines import FitError

    failures = (
        (iof.GeometryIOError, EXIT_IO, "io_formats"),
        (QuasiNormalError, EXIT_QUASI_NORMAL, "offset"),
        (OffsetError, EXIT_OFFSET, "offset"),
        (RingFitError, EXIT_RING_FIT, "ring"),
        (CornerError, EXIT_CORNERS, "corners"),
        (MultiCellError, EXIT_MULTICELL, "multicell"),
        (SolverError, EXIT_SOLVER, "omp"),
        (FitError, EXIT_FIT, "splines"),
    )
    try:
        return run(cmd)
    except tuple(exc for exc, _, _ in failures) as exc:
        for kind, code, module in failures:
            if isinstance(exc, kind):
                print(f"ringcover {cmd.name}: [{module}] {exc}",
                      file=sys.stderr)
                return code
    except (ValueError, KeyError) as exc:
        print(f"ringcover {cmd.name}: [usage] {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:   # pragma: no cover - defensive
        print(f"ringcover {cmd.name}: [internal] "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
