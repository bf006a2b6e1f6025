"""Discontinuous modal polynomial spaces on polygonal elements.

The basis on each element is the tensor Legendre family scaled to the
element's bounding box and L2-orthonormalized on the box, restricted to
total degree p_K.  Element quadrature sub-triangulates each polygon (fan or
the stored fine triangles for agglomerates) and applies a collapsed
Gauss-Legendre rule per triangle; face quadrature is Gauss-Legendre on the
segment.  All basis/gradient evaluations at quadrature points are cached at
build time, grouped by local dimension so assembly can run as a handful of
einsum contractions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PolyMesh


class SpaceError(Exception):
    """Invalid space construction or evaluation request."""


@dataclass
class QuadRule:
    """Positive-weight quadrature rule on an element or face."""

    points: np.ndarray   # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise SpaceError("quadrature weights must be positive")


def _gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _triangle_rule(order):
    """Collapsed Gauss rule on the reference triangle (0,0)-(1,0)-(0,1).

    Exact for bivariate polynomials of total degree <= order.
    """
    n = (order + 2) // 2 + 1
    gx, gw = _gauss_legendre(n)
    u = 0.5 * (gx + 1.0)
    wu = 0.5 * gw
    U, V = np.meshgrid(u, u, indexing="ij")
    WU, WV = np.meshgrid(wu, wu, indexing="ij")
    # x = u(1-v), y = uv with Jacobian u
    x = (U * (1.0 - V)).ravel()
    y = (U * V).ravel()
    w = (WU * WV * U).ravel()
    return np.column_stack([x, y]), w


def triangles_quadrature(tris, order):
    """Quadrature over a union of triangles given as an (m, 3, 2) array."""
    ref_pts, ref_w = _triangle_rule(order)
    a = tris[:, 0, :]
    e1 = tris[:, 1, :] - a
    e2 = tris[:, 2, :] - a
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    pts = (a[:, None, :] + ref_pts[None, :, 0, None] * e1[:, None, :]
           + ref_pts[None, :, 1, None] * e2[:, None, :])
    w = ref_w[None, :] * jac[:, None]
    return QuadRule(pts.reshape(-1, 2), w.ravel())


def element_quadrature(mesh: PolyMesh, k: int, order: int) -> QuadRule:
    """Quadrature on element k, exact for polynomials of total degree <= order."""
    if order < 1:
        raise SpaceError("quadrature order must be >= 1")
    return triangles_quadrature(mesh.cell_triangles[k], order)


def segment_quadrature(p0, p1, order):
    """Gauss-Legendre rule on the segment p0-p1 (weights sum to its length)."""
    n = (order + 1) // 2 + 1
    gx, gw = _gauss_legendre(n)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    t = 0.5 * (gx + 1.0)
    pts = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    w = 0.5 * gw * np.hypot(*(p1 - p0))
    return QuadRule(pts, w)


def face_quadrature(face, order) -> QuadRule:
    """Gauss-Legendre rule on a mesh Face."""
    return segment_quadrature(face.endpoints[0], face.endpoints[1], order)


# ---------------------------------------------------------------------------
# tensor Legendre basis on the bounding box


def _legendre_deriv_matrix(p):
    # P'_j = sum_{i<j, j-i odd} (2i+1) P_i
    D = np.zeros((p + 1, p + 1))
    for j in range(p + 1):
        for i in range(j - 1, -1, -2):
            D[j, i] = 2 * i + 1
    return D


def _modes(p):
    return [(i, d - i) for d in range(p + 1) for i in range(d + 1)]


def local_dim(p):
    return (p + 1) * (p + 2) // 2


def basis_on_box(points, bbox, p):
    """Values and gradients of the modal basis of total degree p on a box.

    Returns
    -------
    vals : (npts, dim) array
    grads : (npts, dim, 2) array
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x0, y0, x1, y1 = bbox
    wx, wy = x1 - x0, y1 - y0
    xi = (2.0 * points[:, 0] - x0 - x1) / wx
    eta = (2.0 * points[:, 1] - y0 - y1) / wy
    Vx = np.polynomial.legendre.legvander(xi, p)
    Vy = np.polynomial.legendre.legvander(eta, p)
    D = _legendre_deriv_matrix(p)
    dVx = Vx @ D.T
    dVy = Vy @ D.T

    modes = _modes(p)
    dim = len(modes)
    vals = np.empty((len(points), dim))
    grads = np.empty((len(points), dim, 2))
    for m, (i, j) in enumerate(modes):
        scale = np.sqrt((2 * i + 1) * (2 * j + 1) / (wx * wy))
        vals[:, m] = scale * Vx[:, i] * Vy[:, j]
        grads[:, m, 0] = scale * dVx[:, i] * (2.0 / wx) * Vy[:, j]
        grads[:, m, 1] = scale * Vx[:, i] * dVy[:, j] * (2.0 / wy)
    return vals, grads


# ---------------------------------------------------------------------------
# grouped caches


@dataclass
class ElementGroup:
    """Elements sharing one local dimension, quadrature padded to a common size.

    Padded quadrature weights are zero, so padded entries never contribute to
    integrals; padded points replicate the element centroid to keep user
    callables finite there.
    """

    elems: np.ndarray      # (E,) element ids
    offsets: np.ndarray    # (E,) global dof offsets
    ndof: int
    w: np.ndarray          # (E, nq)
    x: np.ndarray          # (E, nq, 2)
    phi: np.ndarray        # (E, nq, ndof)
    gphi: np.ndarray       # (E, nq, ndof, 2)
    vert_phi: np.ndarray   # (E, nvmax, ndof) basis at polygon vertices (padded by repeat)


@dataclass
class FaceGroup:
    """Faces sharing local dimensions on both sides (minus side absent on boundary)."""

    faces: np.ndarray       # (F,) face ids
    elem_p: np.ndarray      # (F,)
    elem_m: np.ndarray      # (F,) or None
    off_p: np.ndarray
    off_m: np.ndarray
    ndof_p: int
    ndof_m: int
    normal: np.ndarray      # (F, 2)
    w: np.ndarray           # (F, nq)
    x: np.ndarray           # (F, nq, 2)
    phi_p: np.ndarray       # (F, nq, ndof_p)
    gphi_p: np.ndarray      # (F, nq, ndof_p, 2)
    phi_m: np.ndarray | None
    gphi_m: np.ndarray | None


class DGSpace:
    """Elementwise-degree discontinuous polynomial space over a PolyMesh."""

    def __init__(self, mesh: PolyMesh, degrees, quad_extra=4):
        self.mesh = mesh
        degrees = np.asarray(degrees, dtype=int)
        if degrees.ndim == 0:
            degrees = np.full(mesh.n_elements, int(degrees))
        if len(degrees) != mesh.n_elements:
            raise SpaceError("one polynomial degree per element required")
        if np.any(degrees < 1):
            raise SpaceError("polynomial degree must be >= 1 on every element")
        self.degrees = degrees
        self.quad_extra = int(quad_extra)

        self.ndof_el = np.array([local_dim(p) for p in degrees])
        self.offsets = np.concatenate([[0], np.cumsum(self.ndof_el)])
        self.n_dofs = int(self.offsets[-1])

        self.bbox = np.empty((mesh.n_elements, 4))
        for k, loop in enumerate(mesh.elements):
            pts = mesh.vertices[loop]
            self.bbox[k] = (pts[:, 0].min(), pts[:, 1].min(),
                            pts[:, 0].max(), pts[:, 1].max())
        # basis_on_box consumes bbox as (x0, y0, x1, y1)
        self.bbox = self.bbox[:, [0, 1, 2, 3]]

        self._build_volume_groups()
        self._build_face_groups()

    # -- construction -------------------------------------------------------

    def element_order(self, k):
        """Quadrature order used on element k (covers the e^lambda integrands)."""
        return 2 * int(self.degrees[k]) + self.quad_extra

    def _build_volume_groups(self):
        mesh = self.mesh
        per_elem = []
        for k in range(mesh.n_elements):
            rule = element_quadrature(mesh, k, self.element_order(k))
            per_elem.append(rule)
        groups = {}
        for k in range(mesh.n_elements):
            groups.setdefault(int(self.degrees[k]), []).append(k)

        # split each degree class into a few buckets of similar quadrature
        # size, so padding stays bounded on agglomerated meshes where the
        # per-element point count varies widely
        bucketed = []
        for p, elems in sorted(groups.items()):
            elems = sorted(elems, key=lambda k: (len(per_elem[k].weights), k))
            n_buckets = min(4, len(elems))
            sizes = np.array([len(per_elem[k].weights) for k in elems])
            bounds = np.unique(np.quantile(sizes, np.linspace(0, 1, n_buckets + 1))[1:])
            buckets = [[] for _ in bounds]
            for k in elems:
                i = int(np.searchsorted(bounds, len(per_elem[k].weights)))
                buckets[min(i, len(bounds) - 1)].append(k)
            for b in buckets:
                if b:
                    bucketed.append((p, b))

        self.vol_groups = []
        self._elem_slot = {}
        for p, elems in bucketed:
            nq = max(len(per_elem[k].weights) for k in elems)
            nv = max(len(mesh.elements[k]) for k in elems)
            m = local_dim(p)
            E = len(elems)
            w = np.zeros((E, nq))
            x = np.empty((E, nq, 2))
            phi = np.zeros((E, nq, m))
            gphi = np.zeros((E, nq, m, 2))
            vert_phi = np.zeros((E, nv, m))
            for i, k in enumerate(elems):
                rule = per_elem[k]
                n = len(rule.weights)
                w[i, :n] = rule.weights
                x[i, :n] = rule.points
                x[i, n:] = mesh.centroid[k]
                pv, pg = basis_on_box(x[i], self.bbox[k], p)
                phi[i] = pv
                gphi[i] = pg
                loop = mesh.elements[k]
                vpts = mesh.vertices[loop]
                if len(loop) < nv:
                    vpts = np.vstack([vpts, np.repeat(vpts[:1], nv - len(loop), axis=0)])
                vert_phi[i], _ = basis_on_box(vpts, self.bbox[k], p)
                self._elem_slot[k] = (len(self.vol_groups), i)
            self.vol_groups.append(ElementGroup(
                elems=np.array(elems), offsets=self.offsets[np.array(elems)],
                ndof=m, w=w, x=x, phi=phi, gphi=gphi, vert_phi=vert_phi))

    def _face_order(self, f):
        kp, km = self.mesh.face_elems[f]
        order = self.element_order(kp)
        if km >= 0:
            order = max(order, self.element_order(km))
        return order

    def _build_face_groups(self):
        mesh = self.mesh
        interior = {}
        boundary = {}
        for f in range(mesh.n_faces):
            kp, km = mesh.face_elems[f]
            if km >= 0:
                key = (int(self.degrees[kp]), int(self.degrees[km]), self._face_order(f))
                interior.setdefault(key, []).append(f)
            else:
                key = (int(self.degrees[kp]), int(mesh.face_tag[f]), self._face_order(f))
                boundary.setdefault(key, []).append(f)

        def trace_arrays(faces, side):
            F = len(faces)
            order = self._face_order(faces[0])
            n = (order + 1) // 2 + 1
            gx, gw = _gauss_legendre(n)
            t = 0.5 * (gx + 1.0)
            p0 = mesh.vertices[mesh.face_vertices[faces, 0]]
            p1 = mesh.vertices[mesh.face_vertices[faces, 1]]
            x = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
            w = 0.5 * gw[None, :] * mesh.face_length[faces][:, None]
            elems = mesh.face_elems[faces, side]
            p = int(self.degrees[elems[0]])
            m = local_dim(p)
            phi = np.empty((F, n, m))
            gphi = np.empty((F, n, m, 2))
            for i, k in enumerate(elems):
                pv, pg = basis_on_box(x[i], self.bbox[k], p)
                phi[i] = pv
                gphi[i] = pg
            return x, w, elems, phi, gphi

        self.face_groups_interior = []
        for key, faces in sorted(interior.items()):
            faces = np.array(faces)
            x, w, ep, phi_p, gphi_p = trace_arrays(faces, 0)
            _, _, em, phi_m, gphi_m = trace_arrays(faces, 1)
            self.face_groups_interior.append(FaceGroup(
                faces=faces, elem_p=ep, elem_m=em,
                off_p=self.offsets[ep], off_m=self.offsets[em],
                ndof_p=phi_p.shape[2], ndof_m=phi_m.shape[2],
                normal=mesh.face_normal[faces], w=w, x=x,
                phi_p=phi_p, gphi_p=gphi_p, phi_m=phi_m, gphi_m=gphi_m))

        self.face_groups_dirichlet = []
        self.face_groups_neumann = []
        for key, faces in sorted(boundary.items()):
            faces = np.array(faces)
            x, w, ep, phi_p, gphi_p = trace_arrays(faces, 0)
            grp = FaceGroup(
                faces=faces, elem_p=ep, elem_m=None,
                off_p=self.offsets[ep], off_m=None,
                ndof_p=phi_p.shape[2], ndof_m=0,
                normal=mesh.face_normal[faces], w=w, x=x,
                phi_p=phi_p, gphi_p=gphi_p, phi_m=None, gphi_m=None)
            if key[1] == PolyMesh.TAG_DIRICHLET:
                self.face_groups_dirichlet.append(grp)
            else:
                self.face_groups_neumann.append(grp)

    # -- evaluation ----------------------------------------------------------

    def element_dofs(self, k, vec):
        return vec[self.offsets[k]:self.offsets[k] + self.ndof_el[k]]

    def eval_basis(self, k, points):
        """Basis values and gradients of element k at given points."""
        return basis_on_box(points, self.bbox[k], int(self.degrees[k]))

    def eval_state(self, vec, k, points):
        """Evaluate the DG function with coefficients `vec` on element k."""
        vals, grads = self.eval_basis(k, points)
        dofs = self.element_dofs(k, vec)
        return vals @ dofs, np.einsum("pmd,m->pd", grads, dofs)

    def project(self, f):
        """Elementwise L2 projection of a vectorized callable f(x, y)."""
        out = np.empty(self.n_dofs)
        for g in self.vol_groups:
            fq = np.asarray(f(g.x[..., 0], g.x[..., 1]), dtype=float)
            if not np.all(np.isfinite(fq[g.w > 0])):
                bad = np.argwhere(~np.isfinite(fq) & (g.w > 0))[0]
                pt = g.x[bad[0], bad[1]]
                raise SpaceError(f"field is not finite at quadrature point {tuple(pt)}")
            wphi = g.phi * g.w[:, :, None]
            M = np.einsum("eqm,eqn->emn", wphi, g.phi)
            b = np.einsum("eqm,eq->em", wphi, fq)
            coef = np.linalg.solve(M, b[..., None])[..., 0]
            for i, k in enumerate(g.elems):
                out[g.offsets[i]:g.offsets[i] + g.ndof] = coef[i]
        return out

    def element_average(self, vec):
        """Per-element mean value of the DG function with coefficients `vec`."""
        out = np.empty(self.mesh.n_elements)
        for g in self.vol_groups:
            lam = np.einsum("eqm,em->eq", g.phi, _gather(vec, g))
            out[g.elems] = np.einsum("eq,eq->e", g.w, lam) / self.mesh.measure[g.elems]
        return out

    def mass_condition_numbers(self):
        """Condition number of the element mass matrix (basis quality monitor)."""
        out = np.empty(self.mesh.n_elements)
        for g in self.vol_groups:
            wphi = g.phi * g.w[:, :, None]
            M = np.einsum("eqm,eqn->emn", wphi, g.phi)
            out[g.elems] = np.linalg.cond(M)
        return out


def _gather(vec, group):
    """Element-local dof blocks of a global vector, as an (E, ndof) array."""
    idx = group.offsets[:, None] + np.arange(group.ndof)[None, :]
    return vec[idx]


def build_space(mesh, degrees, quad_extra=4) -> DGSpace:
    """Build a DGSpace; `degrees` is a uniform int or a per-element array."""
    return DGSpace(mesh, degrees, quad_extra=quad_extra)
