"""Overlapping two-patch parameterization of planar spline domains.

The pipeline turns a closed planar B-spline boundary curve into two
overlapping pieces -- a ring-shaped patch obtained by generalized inward
offsetting and a lattice of axis-aligned cells covering the remaining hole --
and solves Poisson problems on the union with an overlapping multi-patch
isogeometric method.

Subpackage layout:

- ``splines``: B-spline spaces, curves, tensor patches, constrained fitting.
- ``geometry``: polyline predicates (containment, simplicity, orientation).
- ``offset``: quasi-normal fields, the mu bound, the regularized offset solve
  and the parameter-shrink loop.
- ``ring``: the ruled ring surface and its fitted spline patch.
- ``corners``: corner detection, trimmed segments, Coons/parallelogram corner
  patches, and the glued ring manifold.
- ``multicell``: hole covering by edge-connected lattice cells.
- ``omp``: isogeometric spaces, Galerkin assembly, collocation-based
  extension operators, the coupled solve, and convergence studies.
- ``io_formats``: the geometry file format, CSV tables and SVG rendering.
- ``presets``: built-in boundary curves and manufactured solutions.
- ``cli``: the ``ringcover`` command-line pipeline.
"""

__version__ = "0.1.0"
