"""Overlapping two-subdomain isogeometric Poisson solver.

The domain is the union of a ring-shaped subdomain (spline manifold along
the boundary) and a lattice-cell subdomain covering the hole. Each carries
a tensor-product spline space; the solutions couple through collocated
trace conditions: on each subdomain's artificial boundary, its solution
must equal the partner's, enforced at one Greville-type collocation point
per coupling basis function.

Unknowns are the interior and coupling coefficients of both subdomains.
Rows are Galerkin equations tested with interior basis functions plus the
collocation identities; Dirichlet data enters through Greville
interpolation on the physical boundary and moves to the right-hand side.
The assembled block system is solved by sparse LU.

Degrees of freedom are classified by traces: a basis function is Dirichlet
if its trace on the physical boundary is nonzero, coupling if its trace on
the artificial boundary is nonzero (Dirichlet wins), interior otherwise.
On the lattice subdomain the solution space is C^0 across cell lines (knots
of multiplicity p there); this keeps one nonzero basis function per lattice
line so the collocation matrix is invertible, and costs no approximation
order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import geometry as ge
from . import splines as sp
from .corners import RingManifold
from .multicell import CellMap, MultiCellDomain

__all__ = [
    "SolverError",
    "PatchField",
    "TensorSubdomain",
    "LatticeSubdomain",
    "CoupledSystem",
    "SolveReport",
    "ConvergenceReport",
    "build_spaces",
    "assemble_galerkin",
    "build_extension",
    "assemble_coupled",
    "solve_coupled",
    "convergence_study",
    "overlap_difference",
    "ring_overlap_samples",
    "rectangle_subdomain",
]


class SolverError(RuntimeError):
    """Assembly or solve failure."""


def _gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


@dataclass
class PatchField:
    """One mapped patch of a subdomain with its solution space and roles.

    ``roles`` maps (axis, side) to "dirichlet", "coupling" or "interface";
    edges of a periodic axis carry no role.
    """

    geometry: sp.TensorPatch
    space_u: sp.SplineSpace
    space_v: sp.SplineSpace
    roles: dict


def _edge_layer(field: PatchField, axis: int, side: int):
    """Local (iu, iv) index pairs of the trace-nonzero layer along an edge."""
    nu = field.space_u.dimension
    nv = field.space_v.dimension
    if axis == 0:
        fixed = nu - 1 if side else 0
        return [(fixed, j) for j in range(nv)]
    fixed = nv - 1 if side else 0
    return [(i, fixed) for i in range(nu)]


def _edge_params(field: PatchField, axis: int, side: int):
    """(fixed parameter value, free space) for an edge."""
    space = field.space_u if axis == 0 else field.space_v
    free = field.space_v if axis == 0 else field.space_u
    a, b = space.domain
    return (b if side else a), free


class _PatchInverter:
    """Newton inversion of a collection of mapped patches."""

    def __init__(self, fields, seeds_per_axis: int = 12):
        self.fields = fields
        self.seeds = []
        for f in fields:
            au, bu = f.space_u.domain
            av, bv = f.space_v.domain
            # Newton needs a seed in the basin of the target point; sample
            # at least every geometry span so wiggly patches stay covered.
            nu = max(seeds_per_axis, 2 * len(f.geometry.space_s.spans()) + 1)
            nv = max(seeds_per_axis, 2 * len(f.geometry.space_t.spans()) + 1)
            us = np.linspace(au, bu, nu)
            vs = np.linspace(av, bv, nv)
            U, V = np.meshgrid(us, vs, indexing="ij")
            pts = f.geometry.evaluate(U.ravel(), V.ravel())
            self.seeds.append((U.ravel(), V.ravel(), pts))

    def locate(self, point: np.ndarray, tol: float = 1e-11):
        order = []
        for k, (_, _, pts) in enumerate(self.seeds):
            d2 = np.sum((pts - point[None, :]) ** 2, axis=1)
            order.append((float(d2.min()), int(np.argmin(d2)), k))
        order.sort()
        for _, best, k in order:
            f = self.fields[k]
            us, vs, _ = self.seeds[k]
            res = self._newton(f, point, us[best], vs[best], tol)
            if res is not None:
                return k, res[0], res[1]
        raise SolverError(f"point {point} not invertible on any patch")

    @staticmethod
    def _newton(f: PatchField, point, u, v, tol):
        au, bu = f.space_u.domain
        av, bv = f.space_v.domain
        per_u = f.space_u.periodic
        per_v = f.space_v.periodic
        scale = max(bu - au, bv - av)
        for _ in range(40):
            r = f.geometry.evaluate([u], [v])[0] - point
            if math.hypot(r[0], r[1]) < tol * max(1.0, np.abs(point).max()):
                eps = 1e-9
                in_u = per_u or (au - eps <= u <= bu + eps)
                in_v = per_v or (av - eps <= v <= bv + eps)
                if in_u and in_v:
                    return (min(max(u, au), bu) if not per_u else u,
                            min(max(v, av), bv) if not per_v else v)
                return None
            J = f.geometry.jacobian([u], [v])[0]
            det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
            if abs(det) < 1e-14:
                return None
            du = (J[1, 1] * r[0] - J[0, 1] * r[1]) / det
            dv = (-J[1, 0] * r[0] + J[0, 0] * r[1]) / det
            step = max(abs(du), abs(dv))
            if step > 0.25 * scale:
                du *= 0.25 * scale / step
                dv *= 0.25 * scale / step
            u -= du
            v -= dv
            if per_u:
                u = au + (u - au) % (bu - au)
            else:
                u = min(max(u, au), bu)
            if per_v:
                v = av + (v - av) % (bv - av)
            else:
                v = min(max(v, av), bv)
        return None


class TensorSubdomain:
    """Multi-patch tensor-product spline subdomain with merged C0 DOFs."""

    def __init__(self, fields, interfaces=()):
        self.fields = list(fields)
        self._build_numbering(interfaces)
        self._classify()
        self._inverter = None
        self.solution = None
        self._lift = np.zeros(0)

    # -- numbering and classification -------------------------------------

    def _build_numbering(self, interfaces):
        dims = [(f.space_u.dimension, f.space_v.dimension)
                for f in self.fields]
        offsets = np.concatenate(
            [[0], np.cumsum([nu * nv for nu, nv in dims])])
        total = int(offsets[-1])
        uf = _UnionFind(total)

        def flat(p, iu, iv):
            return int(offsets[p] + iu * dims[p][1] + iv)

        for itf in interfaces:
            la = _edge_layer(self.fields[itf.patch_a], *itf.edge_a)
            lb = _edge_layer(self.fields[itf.patch_b], *itf.edge_b)
            if len(la) != len(lb):
                raise SolverError(
                    f"interface between patches {itf.patch_a} and "
                    f"{itf.patch_b} has mismatched edge dimensions "
                    f"{len(la)} vs {len(lb)}")
            for (ia, ib) in zip(la, lb):
                uf.union(flat(itf.patch_a, *ia), flat(itf.patch_b, *ib))
        roots = np.array([uf.find(k) for k in range(total)])
        uniq, gid = np.unique(roots, return_inverse=True)
        self.n_dofs = len(uniq)
        self._gids = []
        for p, (nu, nv) in enumerate(dims):
            self._gids.append(
                gid[offsets[p]:offsets[p + 1]].reshape(nu, nv))
        self._dims = dims

    def _classify(self):
        role_of = np.zeros(self.n_dofs, dtype=int)  # 0 int, 1 cpl, 2 dir
        self._dof_edge = {}
        for p, f in enumerate(self.fields):
            for (axis, side), role in f.roles.items():
                if role not in ("dirichlet", "coupling"):
                    continue
                space = f.space_u if axis == 0 else f.space_v
                if space.periodic:
                    continue
                code = 2 if role == "dirichlet" else 1
                for (iu, iv) in _edge_layer(f, axis, side):
                    g = self._gids[p][iu, iv]
                    role_of[g] = max(role_of[g], code)
                    self._dof_edge.setdefault(g, (p, axis, side, iu, iv))
        self.dirichlet = np.flatnonzero(role_of == 2)
        self.coupling = np.flatnonzero(role_of == 1)
        self.interior = np.flatnonzero(role_of == 0)
        self.n_interior = len(self.interior)
        self.n_coupling = len(self.coupling)
        # position of each gid inside the unknown layout [interior, coupling]
        self._pos = np.full(self.n_dofs, -1, dtype=int)
        self._pos[self.interior] = np.arange(self.n_interior)
        self._pos[self.coupling] = self.n_interior + np.arange(self.n_coupling)

    @property
    def n_unknowns(self) -> int:
        return self.n_interior + self.n_coupling

    # -- boundary data -----------------------------------------------------

    def _edge_dof_points(self, gids):
        """Physical Greville point on the owning edge for each gid."""
        pts = np.empty((len(gids), 2))
        params = []
        for k, g in enumerate(gids):
            p, axis, side, iu, iv = self._dof_edge[g]
            f = self.fields[p]
            fixed, free = _edge_params(f, axis, side)
            grev = free.greville()
            t = grev[iv if axis == 0 else iu]
            if axis == 0:
                uu, vv = fixed, t
            else:
                uu, vv = t, fixed
            pts[k] = f.geometry.evaluate([uu], [vv])[0]
            params.append((p, uu, vv))
        return pts, params

    def _rows_at_params(self, params):
        """Sparse basis rows over all gids at (patch, u, v) parameter triples."""
        rows_i = []
        rows_j = []
        rows_v = []
        for r, (p, u, v) in enumerate(params):
            f = self.fields[p]
            iu, du = f.space_u.basis_at([u])
            iv, dv = f.space_v.basis_at([v])
            vals = np.outer(du[0][0], dv[0][0])
            g = self._gids[p][np.ix_(iu[0], iv[0])]
            rows_i.append(np.full(vals.size, r))
            rows_j.append(g.ravel())
            rows_v.append(vals.ravel())
        m = len(params)
        return sparse.coo_matrix(
            (np.concatenate(rows_v),
             (np.concatenate(rows_i), np.concatenate(rows_j))),
            shape=(m, self.n_dofs)).tocsr()

    def set_dirichlet(self, g):
        """Greville interpolation of g on the Dirichlet boundary."""
        self._lift = np.zeros(self.n_dofs)
        if len(self.dirichlet) == 0:
            self._g_values = np.zeros(0)
            return
        pts, params = self._edge_dof_points(self.dirichlet)
        rows = self._rows_at_params(params)
        E = rows[:, self.dirichlet].toarray()
        rhs = np.asarray([g(x, y) for x, y in pts], dtype=float)
        try:
            coef = np.linalg.solve(E, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Dirichlet interpolation singular: {exc}")
        self._lift[self.dirichlet] = coef

    # -- assembly ----------------------------------------------------------

    def assemble(self, f, quad_shift: int = 0):
        """Global stiffness and load over all DOFs (gid x gid)."""
        n = self.n_dofs
        K = sparse.csr_matrix((n, n))
        ell = np.zeros(n)
        for p, fld in enumerate(self.fields):
            Kp, lp = _assemble_patch(fld, f, self._gids[p].ravel(), n,
                                     quad_shift=quad_shift)
            K = K + Kp
            ell += lp
        return K, ell

    # -- collocation -------------------------------------------------------

    def collocation_points(self):
        """(physical points, parameter triples) for the coupling DOFs."""
        if self.n_coupling == 0:
            return np.zeros((0, 2)), []
        return self._edge_dof_points(self.coupling)

    def rows_for_unknowns(self, rows_csr):
        """Split gid-rows into unknown-layout columns and a lift constant."""
        A = rows_csr[:, np.concatenate([self.interior, self.coupling])] \
            if self.n_unknowns else sparse.csr_matrix((rows_csr.shape[0], 0))
        lift_vals = rows_csr @ self._lift
        return A, lift_vals

    def rows_at_points(self, points):
        """Basis rows at physical points (Newton inversion into patches)."""
        if self._inverter is None:
            self._inverter = _PatchInverter(self.fields)
        params = [self._inverter.locate(np.asarray(pt, dtype=float))
                  for pt in points]
        return self._rows_at_params([(p, u, v) for p, u, v in params])

    # -- post-solve --------------------------------------------------------

    def set_solution(self, unknowns):
        c = self._lift.copy()
        c[self.interior] = unknowns[:self.n_interior]
        c[self.coupling] = unknowns[self.n_interior:self.n_unknowns]
        self.solution = c

    def evaluate_params(self, patch: int, us, vs, dx: int = 0, dy: int = 0):
        f = self.fields[patch]
        coefs = self.solution[self._gids[patch]]
        helper = sp.TensorPatch(f.space_u, f.space_v, coefs[:, :, None])
        return helper.evaluate(us, vs, dx, dy)[:, 0]

    def evaluate_points(self, points):
        rows = self.rows_at_points(points)
        return rows @ self.solution

    def errors(self, exact, exact_grad, quad_shift: int = 1):
        """(L2^2, H1-seminorm^2) of u_h - exact over the whole subdomain."""
        l2 = 0.0
        h1 = 0.0
        for p, fld in enumerate(self.fields):
            coefs = self.solution[self._gids[p]]
            l2p, h1p = _patch_error(fld, coefs, exact, exact_grad,
                                    quad_shift)
            l2 += l2p
            h1 += h1p
        return l2, h1


def _basis_tables(space: sp.SplineSpace, q: int):
    """Per-span quadrature nodes, weights and basis/derivative tables."""
    spans = space.spans()
    x, w = _gauss01(q)
    pts = spans[:, 0][:, None] + (spans[:, 1] - spans[:, 0])[:, None] * x
    wts = (spans[:, 1] - spans[:, 0])[:, None] * w[None, :]
    idx, ders = space.basis_at(pts.ravel(), 1)
    nl = space.degree + 1
    ns = len(spans)
    return (pts, wts, idx.reshape(ns, q, nl)[:, 0, :],
            ders[0].reshape(ns, q, nl), ders[1].reshape(ns, q, nl))


def _assemble_patch(fld: PatchField, f, gid_map, n: int, elements=None,
                    chunk: int = 2048, quad_shift: int = 0):
    """Batched element stiffness/load for one patch.

    ``gid_map`` sends the patch-local flat index iu * dim_v + iv to the
    caller's global numbering; returns (stiffness csr (n, n), load (n,)).
    Each chunk of elements is folded into the running matrix so peak
    memory stays near a single chunk's triplets.
    """
    p_u = fld.space_u.degree
    p_v = fld.space_v.degree
    q_u, q_v = p_u + 1 + quad_shift, p_v + 1 + quad_shift
    ptsu, wtsu, idxu, Bu, Du = _basis_tables(fld.space_u, q_u)
    ptsv, wtsv, idxv, Bv, Dv = _basis_tables(fld.space_v, q_v)
    ns_u, ns_v = len(ptsu), len(ptsv)
    if elements is None:
        elements = [(i, j) for i in range(ns_u) for j in range(ns_v)]
    eu_all = np.array([e[0] for e in elements])
    ev_all = np.array([e[1] for e in elements])
    nl = (p_u + 1) * (p_v + 1)
    nq = q_u * q_v
    nv_dim = fld.space_v.dimension
    K = sparse.csr_matrix((n, n))
    ell = np.zeros(n)
    for start in range(0, len(elements), chunk):
        eu = eu_all[start:start + chunk]
        ev = ev_all[start:start + chunk]
        ne = len(eu)
        uu = np.repeat(ptsu[eu], q_v, axis=1).reshape(ne, nq)
        vv = np.tile(ptsv[ev], (1, q_u)).reshape(ne, nq)
        ww = (wtsu[eu][:, :, None] * wtsv[ev][:, None, :]).reshape(ne, nq)
        J = fld.geometry.jacobian(uu.ravel(), vv.ravel()).reshape(
            ne, nq, 2, 2)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(np.abs(det) < 1e-14):
            bad = np.argwhere(np.abs(det) < 1e-14)[0]
            el = elements[start + int(bad[0])]
            raise SolverError(
                f"singular geometry Jacobian in element {el}")
        Bu_e = Bu[eu][:, :, None, :, None]       # (ne, qu, 1, nlu, 1)
        Du_e = Du[eu][:, :, None, :, None]
        Bv_e = Bv[ev][:, None, :, None, :]       # (ne, 1, qv, 1, nlv)
        Dv_e = Dv[ev][:, None, :, None, :]
        val = (Bu_e * Bv_e).reshape(ne, nq, nl)
        gu = (Du_e * Bv_e).reshape(ne, nq, nl)
        gv = (Bu_e * Dv_e).reshape(ne, nq, nl)
        inv_det = 1.0 / det
        gx = inv_det[..., None] * (J[..., 1, 1, None] * gu
                                   - J[..., 1, 0, None] * gv)
        gy = inv_det[..., None] * (-J[..., 0, 1, None] * gu
                                   + J[..., 0, 0, None] * gv)
        wd = ww * np.abs(det)
        Ke = (np.einsum("eqr,eqs,eq->ers", gx, gx, wd, optimize=True)
              + np.einsum("eqr,eqs,eq->ers", gy, gy, wd, optimize=True))
        pts_phys = fld.geometry.evaluate(uu.ravel(), vv.ravel())
        fv = f(pts_phys[:, 0], pts_phys[:, 1]).reshape(ne, nq)
        Le = np.einsum("eqr,eq->er", val, wd * fv, optimize=True)
        loc = (idxu[eu][:, :, None] * nv_dim
               + idxv[ev][:, None, :]).reshape(ne, nl)
        g = gid_map[loc]
        if g.min(initial=0) < 0:
            raise SolverError("assembled a basis function with no active "
                              "support")
        K = K + sparse.coo_matrix(
            (Ke.ravel(), (np.repeat(g, nl, axis=1).ravel(),
                          np.tile(g, (1, nl)).ravel())),
            shape=(n, n)).tocsr()
        np.add.at(ell, g.ravel(), Le.ravel())
    return K, ell


def _patch_error(fld: PatchField, coefs, exact, exact_grad, quad_shift):
    q_u = fld.space_u.degree + 1 + quad_shift
    q_v = fld.space_v.degree + 1 + quad_shift
    ptsu, wtsu, idxu, Bu, Du = _basis_tables(fld.space_u, q_u)
    ptsv, wtsv, idxv, Bv, Dv = _basis_tables(fld.space_v, q_v)
    ns_u, ns_v = len(ptsu), len(ptsv)
    l2 = 0.0
    h1 = 0.0
    for i in range(ns_u):
        cu = coefs[idxu[i]]                      # (nlu, nv)
        for j in range(ns_v):
            cl = cu[:, idxv[j]]                  # (nlu, nlv)
            U = np.repeat(ptsu[i], q_v)
            V = np.tile(ptsv[j], q_u)
            W = np.repeat(wtsu[i], q_v) * np.tile(wtsv[j], q_u)
            J = fld.geometry.jacobian(U, V)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            val = np.einsum("ar,bs,rs->ab", Bu[i], Bv[j], cl).ravel()
            gu = np.einsum("ar,bs,rs->ab", Du[i], Bv[j], cl).ravel()
            gv = np.einsum("ar,bs,rs->ab", Bu[i], Dv[j], cl).ravel()
            inv_det = 1.0 / det
            gx = inv_det * (J[:, 1, 1] * gu - J[:, 1, 0] * gv)
            gy = inv_det * (-J[:, 0, 1] * gu + J[:, 0, 0] * gv)
            pts = fld.geometry.evaluate(U, V)
            ex = exact(pts[:, 0], pts[:, 1])
            egx, egy = exact_grad(pts[:, 0], pts[:, 1])
            wd = W * np.abs(det)
            l2 += float(np.sum(wd * (val - ex) ** 2))
            h1 += float(np.sum(wd * ((gx - egx) ** 2 + (gy - egy) ** 2)))
    return l2, h1


class LatticeSubdomain:
    """Tensor spline space on the active lattice cells.

    Solution space is C^0 across cell lines (multiplicity-p knots); only
    basis functions whose support meets an active cell participate. No
    Dirichlet boundary: the entire boundary of the cell union is the
    coupling boundary.
    """

    def __init__(self, domain: MultiCellDomain, degree: int,
                 spans_per_cell: int = 1):
        self.domain = domain
        self.map = CellMap(domain)
        self.degree = degree
        self.spans_per_cell = spans_per_cell
        ni, nj = self.map.shape
        self.space_u = self._axis_space(ni, degree, spans_per_cell)
        self.space_v = self._axis_space(nj, degree, spans_per_cell)
        imin, _, jmin, _ = domain.index_bbox
        self._cell_origin = (imin, jmin)
        self._active_local = {(i - imin, j - jmin)
                              for (i, j) in domain.active_cells}
        self._classify()
        self.solution = None
        self._lift = np.zeros(self.n_dofs)
        self._g_values = np.zeros(0)

    @staticmethod
    def _axis_space(n_cells: int, degree: int, r: int) -> sp.SplineSpace:
        breaks = []
        mults = []
        for c in range(n_cells):
            for k in range(r):
                breaks.append(c + k / r)
                mults.append(degree if k == 0 else 1)
        breaks.append(float(n_cells))
        mults.append(degree)
        return sp.clamped_space(degree, breaks, mults)

    # -- support arithmetic -------------------------------------------------

    def _supports(self, space: sp.SplineSpace):
        knots = np.asarray(space.knot_vector.knots)
        p = space.degree
        n = space.dimension
        lo = knots[:n]
        hi = knots[p + 1:p + 1 + n]
        return lo, hi

    def _classify(self):
        nu = self.space_u.dimension
        nv = self.space_v.dimension
        lo_u, hi_u = self._supports(self.space_u)
        lo_v, hi_v = self._supports(self.space_v)
        ni, nj = self.map.shape
        # used: support rectangle meets an active cell
        active = np.zeros((ni, nj), dtype=bool)
        for (i, j) in self._active_local:
            active[i, j] = True
        cum = np.zeros((ni + 1, nj + 1), dtype=int)
        cum[1:, 1:] = np.cumsum(np.cumsum(active, axis=0), axis=1)

        def any_active(i0, i1, j0, j1):
            i0 = max(i0, 0)
            j0 = max(j0, 0)
            i1 = min(i1, ni)
            j1 = min(j1, nj)
            if i0 >= i1 or j0 >= j1:
                return False
            return (cum[i1, j1] - cum[i0, j1] - cum[i1, j0]
                    + cum[i0, j0]) > 0

        eps = 1e-9
        cell_u = [(int(math.floor(lo_u[a] + eps)),
                   int(math.ceil(hi_u[a] - eps))) for a in range(nu)]
        cell_v = [(int(math.floor(lo_v[b] + eps)),
                   int(math.ceil(hi_v[b] - eps))) for b in range(nv)]
        used = np.zeros((nu, nv), dtype=bool)
        for a in range(nu):
            for b in range(nv):
                used[a, b] = any_active(cell_u[a][0], cell_u[a][1],
                                        cell_v[b][0], cell_v[b][1])
        # peak basis index per lattice line (the single one nonzero there)
        self._peak_u = self._peaks(self.space_u, ni)
        self._peak_v = self._peaks(self.space_v, nj)
        faces = self.domain.boundary_faces()
        imin, jmin = self._cell_origin
        coupling = {}
        for (i, j, axis, side) in faces:
            li, lj = i - imin, j - jmin
            if axis == 0:
                line = li + (1 if side else 0)
                a = self._peak_u[line]
                for b in range(nv):
                    if not used[a, b]:
                        continue
                    if hi_v[b] <= lj + eps or lo_v[b] >= lj + 1 - eps:
                        continue
                    coupling.setdefault((a, b), []).append((axis, line, lj))
            else:
                line = lj + (1 if side else 0)
                b = self._peak_v[line]
                for a in range(nu):
                    if not used[a, b]:
                        continue
                    if hi_u[a] <= li + eps or lo_u[a] >= li + 1 - eps:
                        continue
                    coupling.setdefault((a, b), []).append((axis, line, li))
        self._used = used
        self._coupling_faces = coupling
        grid = np.full((nu, nv), -1, dtype=int)
        order = np.argwhere(used)
        for k, (a, b) in enumerate(order):
            grid[a, b] = k
        self.n_dofs = len(order)
        self._grid = grid
        self._order = order
        codes = np.zeros(self.n_dofs, dtype=int)
        for (a, b) in coupling:
            codes[grid[a, b]] = 1
        self.coupling = np.flatnonzero(codes == 1)
        self.interior = np.flatnonzero(codes == 0)
        self.dirichlet = np.zeros(0, dtype=int)
        self.n_interior = len(self.interior)
        self.n_coupling = len(self.coupling)
        self._collocation_params = self._pick_collocation_points()

    @staticmethod
    def _peaks(space: sp.SplineSpace, n_cells: int):
        peaks = {}
        for line in range(n_cells + 1):
            idx, ders = space.basis_at([float(line)])
            vals = ders[0][0]
            k = int(np.argmax(np.abs(vals)))
            if abs(vals[k]) < 0.99:
                raise SolverError(f"no peaked basis at lattice line {line}")
            peaks[line] = int(idx[0][k])
        return peaks

    def _node_on_boundary(self, li: int, lj: int) -> bool:
        around = [(li - 1, lj - 1), (li, lj - 1), (li - 1, lj), (li, lj)]
        act = sum(1 for c in around if c in self._active_local)
        return 0 < act < 4

    def _pick_collocation_points(self):
        """One parameter point on the coupling boundary per coupling DOF."""
        grev_u = self.space_u.greville()
        grev_v = self.space_v.greville()
        inv_peak_u = {v: k for k, v in self._peak_u.items()}
        inv_peak_v = {v: k for k, v in self._peak_v.items()}
        params = []
        for g in self.coupling:
            a, b = self._order[g]
            faces = self._coupling_faces[(a, b)]
            pa = inv_peak_u.get(a)
            pb = inv_peak_v.get(b)
            if (pa is not None and pb is not None
                    and self._node_on_boundary(pa, pb)):
                params.append((float(pa), float(pb)))
                continue
            chosen = None
            for (axis, line, row) in faces:
                if axis == 0 and row <= grev_v[b] <= row + 1:
                    chosen = (float(line), float(grev_v[b]))
                    break
                if axis == 1 and row <= grev_u[a] <= row + 1:
                    chosen = (float(grev_u[a]), float(line))
                    break
            if chosen is None:
                axis, line, row = faces[0]
                if axis == 0:
                    chosen = (float(line),
                              float(min(max(grev_v[b], row), row + 1)))
                else:
                    chosen = (float(min(max(grev_u[a], row), row + 1)),
                              float(line))
            params.append(chosen)
        return params

    @property
    def n_unknowns(self) -> int:
        return self.n_interior + self.n_coupling

    def set_dirichlet(self, g):
        pass  # the lattice subdomain has no Dirichlet boundary

    # -- assembly ----------------------------------------------------------

    def _elements(self):
        r = self.spans_per_cell
        els = []
        for (i, j) in sorted(self._active_local):
            for a in range(r):
                for b in range(r):
                    els.append((i * r + a, j * r + b))
        return els

    def assemble(self, f, quad_shift: int = 0):
        fld = PatchField(_LatticeGeometry(self.map), self.space_u,
                         self.space_v, {})
        return _assemble_patch(fld, f, self._grid.ravel(), self.n_dofs,
                               elements=self._elements(),
                               quad_shift=quad_shift)

    # -- collocation and evaluation -----------------------------------------

    def collocation_points(self):
        if self.n_coupling == 0:
            return np.zeros((0, 2)), []
        par = np.asarray(self._collocation_params)
        pts = self.map.evaluate(par[:, 0], par[:, 1])
        return pts, [(0, u, v) for u, v in self._collocation_params]

    def _rows_at_params(self, uv):
        rows_i, rows_j, rows_v = [], [], []
        for r, (u, v) in enumerate(uv):
            iu, du = self.space_u.basis_at([u])
            iv, dv = self.space_v.basis_at([v])
            vals = np.outer(du[0][0], dv[0][0])
            g = self._grid[np.ix_(iu[0], iv[0])]
            keep = g >= 0
            rows_i.append(np.full(int(keep.sum()), r))
            rows_j.append(g[keep])
            rows_v.append(vals[keep])
        return sparse.coo_matrix(
            (np.concatenate(rows_v),
             (np.concatenate(rows_i), np.concatenate(rows_j))),
            shape=(len(uv), self.n_dofs)).tocsr()

    def rows_for_unknowns(self, rows_csr):
        A = rows_csr[:, np.concatenate([self.interior, self.coupling])] \
            if self.n_unknowns else sparse.csr_matrix((rows_csr.shape[0], 0))
        return A, rows_csr @ self._lift

    def rows_at_points(self, points):
        uv = self.map.inverse(points)
        return self._rows_at_params([(u, v) for u, v in uv])

    def set_solution(self, unknowns):
        c = self._lift.copy()
        c[self.interior] = unknowns[:self.n_interior]
        c[self.coupling] = unknowns[self.n_interior:]
        self.solution = c

    def evaluate_points(self, points):
        return self.rows_at_points(points) @ self.solution

    # -- error over the hole ------------------------------------------------

    def errors(self, exact, exact_grad, hole: ge.Polyline,
               quad_shift: int = 1, tol: float = 1e-9, clip_sub: int = 2):
        """(L2^2, H1-seminorm^2) of u_h - exact over hole intersect cells.

        Integration runs span by span so the quadrature always resolves the
        piecewise structure of the solution. Spans crossed by the hole
        boundary get a clip_sub x clip_sub subdivision with per-point
        containment masking; the clipped band shrinks under refinement.
        """
        r = self.spans_per_cell
        crossed = self._spans_crossed_by(hole)
        q = self.degree + 1 + quad_shift
        x, w = _gauss01(q)
        plain = []
        clipped = []
        for (li, lj) in sorted(self._active_local):
            for a in range(r):
                for b in range(r):
                    s = (li * r + a, lj * r + b)
                    (clipped if s in crossed else plain).append(s)
        plain = np.asarray(plain, dtype=float).reshape(-1, 2)
        if len(plain):
            centers = self.map.evaluate((plain[:, 0] + 0.5) / r,
                                        (plain[:, 1] + 0.5) / r)
            code = ge.classify_points(hole, centers, tol)
            clipped.extend((int(s[0]), int(s[1])) for s in plain[code == -1])
            plain = plain[code == 1]
        l2 = 0.0
        h1 = 0.0
        span_area = (self.map.h_c / r) ** 2
        for lo in range(0, len(plain), 4096):
            P = plain[lo:lo + 4096]
            m = len(P)
            U = (P[:, 0][:, None] + np.repeat(x, q)[None, :]).ravel() / r
            V = (P[:, 1][:, None] + np.tile(x, q)[None, :]).ravel() / r
            wd = np.tile(np.outer(w, w).ravel(), m) * span_area
            pl2, ph1 = self._error_at(U, V, wd, exact, exact_grad)
            l2 += pl2
            h1 += ph1
        if clipped:
            xs = ((np.arange(clip_sub)[:, None] + x[None, :])
                  / clip_sub).ravel()
            ws = np.tile(w, clip_sub) / clip_sub
            Q = len(xs)
            carr = np.asarray(sorted(set(clipped)), dtype=float)
            for lo in range(0, len(carr), 512):
                P = carr[lo:lo + 512]
                m = len(P)
                U = (P[:, 0][:, None] + np.repeat(xs, Q)[None, :]).ravel() / r
                V = (P[:, 1][:, None] + np.tile(xs, Q)[None, :]).ravel() / r
                pts = self.map.evaluate(U, V)
                inside = ge.classify_points(hole, pts, tol) == 1
                if not inside.any():
                    continue
                wd = (np.tile(np.outer(ws, ws).ravel(), m)
                      * span_area * inside)
                pl2, ph1 = self._error_at(U, V, wd, exact, exact_grad)
                l2 += pl2
                h1 += ph1
        return l2, h1

    def _error_at(self, U, V, wd, exact, exact_grad):
        pts = self.map.evaluate(U, V)
        vals, gx, gy = self._values_grads(U, V)
        ex = exact(pts[:, 0], pts[:, 1])
        egx, egy = exact_grad(pts[:, 0], pts[:, 1])
        l2 = float(np.sum(wd * (vals - ex) ** 2))
        h1 = float(np.sum(wd * ((gx - egx) ** 2 + (gy - egy) ** 2)))
        return l2, h1

    def _values_grads(self, us, vs):
        iu, du = self.space_u.basis_at(us, 1)
        iv, dv = self.space_v.basis_at(vs, 1)
        cg = np.where(self._grid >= 0, self._grid, 0)
        coef_grid = self.solution[cg] * (self._grid >= 0)
        C = coef_grid[iu[:, :, None], iv[:, None, :]]
        vals = np.einsum("mr,ms,mrs->m", du[0], dv[0], C)
        gu = np.einsum("mr,ms,mrs->m", du[1], dv[0], C)
        gv = np.einsum("mr,ms,mrs->m", du[0], dv[1], C)
        return vals, gu / self.map.h_c, gv / self.map.h_c

    def _spans_crossed_by(self, hole: ge.Polyline):
        """Span indices the hole boundary passes through (dense walk)."""
        r = self.spans_per_cell
        starts, ends = hole.edges()
        lengths = np.linalg.norm(ends - starts, axis=1)
        step = self.map.h_c / (8.0 * r)
        pieces = [hole.vertices]
        for k in range(len(starts)):
            n = int(math.ceil(lengths[k] / step))
            if n > 1:
                t = np.arange(1, n)[:, None] / n
                pieces.append(starts[k] + t * (ends[k] - starts[k]))
        pts = self.map.inverse(np.vstack(pieces)) * r
        crossed = set()
        for (u, v) in pts:
            crossed.add((int(math.floor(u)), int(math.floor(v))))
        return crossed


class _LatticeGeometry:
    """Adapter presenting CellMap with the TensorPatch evaluation API."""

    def __init__(self, cmap: CellMap):
        self._map = cmap

    def evaluate(self, us, vs, dx: int = 0, dy: int = 0):
        if dx or dy:
            raise NotImplementedError
        return self._map.evaluate(us, vs)

    def jacobian(self, us, vs):
        return self._map.jacobian(us, vs)


# -- the coupled system -------------------------------------------------------


@dataclass
class CoupledSystem:
    sub_a: object
    sub_b: object
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    layout: dict


@dataclass
class SolveReport:
    dof_total: int
    l2_error: float
    h1_error: float
    per_subdomain: dict
    solver_residual: float
    wall_time: float


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)   # dicts with degree/level/...
    slopes: dict = field(default_factory=dict)
    overlap: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["degree,level,h,dofs,l2,h1"]
        for r in self.rows:
            lines.append(f"{r['degree']},{r['level']},{r['h']!r},"
                         f"{r['dofs']},{r['l2']!r},{r['h1']!r}")
        return "\n".join(lines) + "\n"


def assemble_galerkin(subdomain, f):
    """Spec-level entry: (stiffness over all DOFs, load)."""
    return subdomain.assemble(f)


def build_extension(subdomain, partner):
    """Collocation data coupling ``subdomain`` to ``partner``.

    Returns (own rows at its collocation points, partner rows at the same
    physical points, own lift values, partner lift values).
    """
    pts, params = subdomain.collocation_points()
    own_rows = (subdomain._rows_at_params(params)
                if isinstance(subdomain, TensorSubdomain)
                else subdomain._rows_at_params(
                    [(u, v) for _, u, v in params]))
    partner_rows = partner.rows_at_points(pts)
    A_own, own_lift = subdomain.rows_for_unknowns(own_rows)
    A_par, par_lift = partner.rows_for_unknowns(partner_rows)
    return A_own, A_par, own_lift, par_lift


def _place_cols(mat, offset: int, total: int) -> sparse.coo_matrix:
    """Embed a sparse block into columns [offset, offset + width)."""
    coo = mat.tocoo()
    return sparse.coo_matrix((coo.data, (coo.row, coo.col + offset)),
                             shape=(mat.shape[0], total))


def assemble_coupled(sub_a, sub_b, f, g, quad_shift: int = 0) -> CoupledSystem:
    """Galerkin rows for both subdomains plus both collocation identities."""
    sub_a.set_dirichlet(g)
    sub_b.set_dirichlet(g)
    na, nb = sub_a.n_unknowns, sub_b.n_unknowns
    total = na + nb
    blocks = []
    rhs_parts = []
    for sub, other, off_own, off_oth in ((sub_a, sub_b, 0, na),
                                         (sub_b, sub_a, na, 0)):
        K, ell = sub.assemble(f, quad_shift=quad_shift)
        test = sub.interior
        cols = np.concatenate([sub.interior, sub.coupling]) \
            if sub.n_unknowns else np.zeros(0, dtype=int)
        K_rows = K[test]
        A_own = K_rows[:, cols]
        lift = K_rows @ sub._lift
        blocks.append(_place_cols(A_own, off_own, total))
        rhs_parts.append(ell[test] - lift)
    for sub, other, off_own, off_oth in ((sub_a, sub_b, 0, na),
                                         (sub_b, sub_a, na, 0)):
        A_own, A_par, own_lift, par_lift = build_extension(sub, other)
        mat = (_place_cols(A_own, off_own, total)
               - _place_cols(A_par, off_oth, total))
        blocks.append(mat)
        rhs_parts.append(par_lift - own_lift)
    matrix = sparse.vstack(blocks).tocsc()
    rhs = np.concatenate(rhs_parts)
    if matrix.shape[0] != matrix.shape[1]:
        raise SolverError(
            f"coupled system is not square: {matrix.shape}")
    return CoupledSystem(sub_a, sub_b, matrix, rhs,
                         {"n_a": na, "n_b": nb})


def solve_coupled(system: CoupledSystem, exact=None, exact_grad=None,
                  hole: ge.Polyline | None = None,
                  residual_tol: float = 1e-8) -> SolveReport:
    t0 = time.perf_counter()
    try:
        lu = splu(system.matrix)
        x = lu.solve(system.rhs)
    except RuntimeError as exc:
        raise SolverError(f"sparse solve failed: {exc}") from exc
    resid = np.linalg.norm(system.matrix @ x - system.rhs)
    scale = 1.0 + np.linalg.norm(system.rhs)
    if not np.isfinite(resid) or resid > residual_tol * scale:
        raise SolverError(f"solver residual {resid:.3g} above tolerance")
    na = system.layout["n_a"]
    system.sub_a.set_solution(x[:na])
    system.sub_b.set_solution(x[na:])
    l2 = h1 = float("nan")
    per = {}
    if exact is not None:
        l2a, h1a = system.sub_a.errors(exact, exact_grad)
        if hole is not None:
            l2b, h1b = system.sub_b.errors(exact, exact_grad, hole)
        else:
            l2b, h1b = system.sub_b.errors(exact, exact_grad)
        per = {"a": (math.sqrt(l2a), math.sqrt(l2a + h1a)),
               "b": (math.sqrt(l2b), math.sqrt(l2b + h1b))}
        l2 = math.sqrt(l2a + l2b)
        h1 = math.sqrt(l2a + l2b + h1a + h1b)
    return SolveReport(
        dof_total=na + system.layout["n_b"],
        l2_error=l2, h1_error=h1, per_subdomain=per,
        solver_residual=float(resid / scale),
        wall_time=time.perf_counter() - t0)


# -- subdomain construction ----------------------------------------------------


def _solution_space(geo_space: sp.SplineSpace, degree: int,
                    spans: int) -> sp.SplineSpace:
    """Solution space subordinate to the geometry map.

    Every geometry span is subdivided uniformly (total count >= ``spans``),
    so elements never straddle a line where the map loses smoothness, and
    interior geometry breakpoints carry enough knot multiplicity that the
    space is no smoother there than the map itself. Without this, degrees
    above the geometry degree stall below the optimal rate.
    """
    breaks = list(geo_space.breakpoints)
    if geo_space.periodic:
        pieces = list(zip(breaks, breaks[1:] + [breaks[0] + 1.0]))
    else:
        pieces = list(zip(breaks[:-1], breaks[1:]))
    m = max(1, int(math.ceil(spans / len(pieces))))
    g = geo_space.degree

    def mult_at(b: float) -> int:
        cont = g - geo_space.multiplicity(b)
        return max(degree - cont, 1)

    knots = []
    for (a, b) in pieces:
        knots.extend([a] * mult_at(a))
        knots.extend(a + (b - a) * j / m for j in range(1, m))
    if geo_space.periodic:
        return sp.periodic_space(degree, sorted(k % 1.0 for k in knots))
    vals, mults = [], []
    for k in knots + [geo_space.domain[1]]:
        if vals and k - vals[-1] <= 1e-12:
            mults[-1] += 1
        else:
            vals.append(k)
            mults.append(1)
    return sp.clamped_space(degree, vals, mults)


def _refined_spaces(manifold: RingManifold, degree: int, level: int,
                    base_t: int = 16, base_s: int = 2):
    """Per-patch solution spaces for the ring at a refinement level.

    Segments (and the smooth single ring patch) get ``base_t`` spans along
    the boundary direction and ``base_s`` across; corner patches must match
    the transverse span count on both axes so interface traces merge.
    """
    nt = base_t * (2 ** level)
    ns = base_s * (2 ** level)
    fields = []
    for patch, kind in zip(manifold.patches, manifold.patch_kinds):
        along = nt if kind in ("ring", "segment") else ns
        su = _solution_space(patch.space_s, degree, ns)
        sv = _solution_space(patch.space_t, degree, along)
        fields.append(PatchField(patch, su, sv, {}))
    for (pi, axis, side), role in manifold.edge_roles.items():
        fields[pi].roles[(axis, side)] = (
            "dirichlet" if role == "outer"
            else "coupling" if role == "hole" else "interface")
    return fields


def build_spaces(manifold: RingManifold, domain: MultiCellDomain,
                 degree: int, level: int = 0, base_t: int = 16,
                 base_s: int = 2, base_cell: int = 1):
    """Solution spaces for both subdomains at a refinement level."""
    fields = _refined_spaces(manifold, degree, level, base_t, base_s)
    sub_r = TensorSubdomain(fields, manifold.interfaces)
    sub_c = LatticeSubdomain(domain, degree,
                             spans_per_cell=base_cell * (2 ** level))
    return sub_r, sub_c


def rectangle_subdomain(bounds, roles, degree: int, spans: int
                        ) -> TensorSubdomain:
    """Axis-aligned rectangle with bilinear geometry, for solver testing."""
    (x0, x1), (y0, y1) = bounds
    lin = sp.uniform_clamped_space(1, 0.0, 1.0, 1)
    net = np.array([[[x0, y0], [x0, y1]], [[x1, y0], [x1, y1]]], dtype=float)
    geo = sp.TensorPatch(lin, lin, net)
    su = sp.uniform_clamped_space(degree, 0.0, 1.0, spans)
    fld = PatchField(geo, su, su, dict(roles))
    return TensorSubdomain([fld])


def overlap_difference(sub_r: TensorSubdomain, sub_c: LatticeSubdomain,
                       points: np.ndarray) -> float:
    """Max |u^ring - u^cells| at physical points inside the overlap."""
    ur = sub_r.evaluate_points(points)
    uc = sub_c.evaluate_points(points)
    return float(np.abs(ur - uc).max())


def ring_overlap_samples(manifold: RingManifold, domain: MultiCellDomain,
                         per_piece: int = 8):
    """Fixed physical points in the ring-cells overlap for agreement checks.

    Points are taken slightly inside the hole boundary (on the ring side),
    then filtered to lie in the cell union with positive margin.
    """
    pts = []
    for kind, patch in zip(manifold.patch_kinds, manifold.patches):
        au, bu = patch.space_s.domain
        av, bv = patch.space_t.domain
        if kind == "ring":
            ss = np.full(per_piece * 4, au + 0.95 * (bu - au))
            ts = np.linspace(av, bv, per_piece * 4, endpoint=False)
            pts.append(patch.evaluate(ss, ts))
        elif kind == "segment":
            ss = np.full(per_piece, au + 0.95 * (bu - au))
            ts = np.linspace(av, bv, per_piece + 2)[1:-1][:per_piece]
            pts.append(patch.evaluate(ss, ts))
    pts = np.vstack(pts)
    inside = domain.contains(pts)
    pts = pts[inside]
    if len(pts) == 0:
        raise SolverError("no overlap sample points found")
    return pts


def convergence_study(make_problem, degrees, levels,
                      overlap_points=None) -> ConvergenceReport:
    """Solve across degrees and levels, collect errors and fitted slopes.

    ``make_problem(degree, level)`` returns a dict with keys system, exact,
    exact_grad, hole (optional), h. Failures are recorded and the study
    continues.
    """
    report = ConvergenceReport()
    for p in degrees:
        hs, l2s, h1s = [], [], []
        for lv in levels:
            try:
                prob = make_problem(p, lv)
                rep = solve_coupled(prob["system"], prob["exact"],
                                    prob["exact_grad"], prob.get("hole"))
            except (SolverError, RuntimeError) as exc:
                report.rows.append({"degree": p, "level": lv,
                                    "h": float("nan"), "dofs": 0,
                                    "l2": float("nan"), "h1": float("nan"),
                                    "error": str(exc)})
                continue
            row = {"degree": p, "level": lv, "h": prob["h"],
                   "dofs": rep.dof_total, "l2": rep.l2_error,
                   "h1": rep.h1_error}
            if overlap_points is not None:
                row["overlap"] = overlap_difference(
                    prob["system"].sub_a, prob["system"].sub_b,
                    overlap_points)
                report.overlap.setdefault(p, []).append(row["overlap"])
            report.rows.append(row)
            hs.append(prob["h"])
            l2s.append(rep.l2_error)
            h1s.append(rep.h1_error)
        if len(hs) >= 2:
            lh = np.log(hs)
            report.slopes[p] = {
                "l2": float(np.polyfit(lh, np.log(l2s), 1)[0]),
                "h1": float(np.polyfit(lh, np.log(h1s), 1)[0]),
            }
    return report
