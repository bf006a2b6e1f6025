"""Interior-penalty forms for the exponential-transform Fisher-Kolmogorov scheme.

The unknown is lam with concentration c = exp(lam).  This module assembles
the nonlinear diffusion form

    A(u; v, w) = (e^u D grad v, grad w)
                 - sum_F <{{e^u D grad v}}.[[w]] + [[v]].{{e^u D grad w}}>
                 + sum_F <eta(u) [[v]].[[w]]>,

with faces ranging over interior and Dirichlet faces, the theta-step
residual and its (frozen-penalty) Jacobian, the DG norm, the discrete
entropy, and the inverse-trace constant that calibrates the penalty.

The penalty is eta(u) = max{(e^u)+, (e^u)-} * max{e^{|u|_inf,K+}, e^{|u|_inf,K-}}
* zeta, where zeta combines the harmonic average of element sizes with
arithmetic averages of squared degrees and diffusivities.  The elementwise
sup norm of u is approximated by the max of |u| over the element's
quadrature points (volume and faces) and its vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dgspace import DGSpace, _gather, basis_on_box, local_dim, segment_quadrature
from .mesh import arithmetic_avg, harmonic_avg


class FormError(Exception):
    """Evaluation failure in form assembly (overflow, mismatched spaces, ...)."""


@dataclass
class State:
    """Global dof vector of lam at one time instant."""

    dofs: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=float)
        if not np.all(np.isfinite(self.dofs)):
            raise FormError("state contains non-finite entries")


def _spd_eigs_2x2(D):
    """Eigenvalue range of symmetric 2x2 tensors, shape (ne, 2, 2) -> (ne, 2)."""
    a = D[:, 0, 0]
    b = D[:, 0, 1]
    c = D[:, 1, 1]
    mid = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return np.column_stack([mid - rad, mid + rad])


class ModelData:
    """Per-element physical data: diffusion tensor, reaction, forcing, BC data.

    Parameters
    ----------
    diffusion : (ne, 2, 2) symmetric tensors (constant per element)
    alpha : (ne,) reaction rates
    forcing : vectorized callable f(x, y, t) or None
    dirichlet : lam_D as a vectorized callable g(x, y, t), a scalar, or None
        (None means homogeneous data)
    """

    def __init__(self, diffusion, alpha, forcing=None, dirichlet=None):
        self.diffusion = np.asarray(diffusion, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        if self.diffusion.ndim != 3 or self.diffusion.shape[1:] != (2, 2):
            raise FormError("diffusion must be an (ne, 2, 2) array")
        if np.max(np.abs(self.diffusion[:, 0, 1] - self.diffusion[:, 1, 0])) > 0.0:
            raise FormError("diffusion tensors must be symmetric")
        if not np.all(np.isfinite(self.alpha)):
            raise FormError("reaction rates must be finite")
        eigs = _spd_eigs_2x2(self.diffusion)
        if np.any(eigs[:, 0] < -1e-14):
            raise FormError("diffusion tensors must be positive semi-definite")
        self.d0 = float(max(eigs[:, 0].min(), 0.0))
        self.D0 = float(eigs[:, 1].max())
        self.spectral = eigs[:, 1].copy()   # D_K = largest eigenvalue of D|_K
        self.forcing = forcing
        self.dirichlet = dirichlet

    @classmethod
    def isotropic(cls, mesh, d, alpha, forcing=None, dirichlet=None):
        ne = mesh.n_elements
        D = np.tile(np.eye(2), (ne, 1, 1)) * float(d)
        return cls(D, np.full(ne, float(alpha)), forcing, dirichlet)

    @classmethod
    def by_label(cls, mesh, d_ext, d_axn, alpha, fiber=None, forcing=None,
                 dirichlet=None):
        """Axonal tensor D = d_ext*I + d_axn*(n (x) n) with label-keyed coefficients.

        `d_ext`, `d_axn` and `alpha` are dicts label -> value (or scalars);
        `fiber` is a callable (x, y) -> unit direction, evaluated at element
        centroids, or None for isotropic diffusion.
        """
        ne = mesh.n_elements

        def per_elem(v):
            if isinstance(v, dict):
                return np.array([v[int(l)] for l in mesh.element_label], dtype=float)
            return np.full(ne, float(v))

        dl = per_elem(d_ext)
        da = per_elem(d_axn)
        al = per_elem(alpha)
        D = np.tile(np.eye(2), (ne, 1, 1)) * dl[:, None, None]
        if fiber is not None:
            n = np.asarray(fiber(mesh.centroid[:, 0], mesh.centroid[:, 1]), dtype=float)
            if n.shape != (ne, 2):
                n = np.broadcast_to(np.asarray(n, dtype=float), (ne, 2)).copy()
            norm = np.hypot(n[:, 0], n[:, 1])
            norm[norm == 0.0] = 1.0
            n = n / norm[:, None]
            D += da[:, None, None] * np.einsum("ei,ej->eij", n, n)
        return cls(D, al, forcing, dirichlet)

    def dirichlet_values(self, x, y, t):
        if self.dirichlet is None:
            return np.zeros_like(np.asarray(x, dtype=float))
        if callable(self.dirichlet):
            return np.broadcast_to(np.asarray(self.dirichlet(x, y, t), dtype=float),
                                   np.shape(x)).copy()
        return np.full(np.shape(x), float(self.dirichlet))

    def forcing_values(self, x, y, t):
        if self.forcing is None:
            return None
        return np.asarray(self.forcing(x, y, t), dtype=float)


def estimate_CI(space: DGSpace) -> float:
    """Largest per-element constant C with |v|^2_dK <= C (p^2/h) |v|^2_K.

    Computed as a generalized eigenvalue of the boundary mass matrix against
    the (p^2/h)-scaled volume mass matrix, maximized over elements.
    """
    return float(np.max(estimate_CI_per_element(space)))


def estimate_CI_per_element(space: DGSpace) -> np.ndarray:
    mesh = space.mesh
    vol_mass = {}
    for g in space.vol_groups:
        wphi = g.phi * g.w[:, :, None]
        M = np.einsum("eqm,eqn->emn", wphi, g.phi)
        for i, k in enumerate(g.elems):
            vol_mass[int(k)] = M[i]
    out = np.empty(mesh.n_elements)
    for k in range(mesh.n_elements):
        p = int(space.degrees[k])
        m = local_dim(p)
        B = np.zeros((m, m))
        for f in mesh.element_faces(k):
            a, b = mesh.face_vertices[f]
            rule = segment_quadrature(mesh.vertices[a], mesh.vertices[b],
                                      2 * p + 2)
            vals, _ = basis_on_box(rule.points, space.bbox[k], p)
            B += np.einsum("qm,q,qn->mn", vals, rule.weights, vals)
        scale = p * p / mesh.h_K[k]
        eig = scipy.linalg.eigh(B, scale * vol_mass[k], eigvals_only=True)
        out[k] = eig[-1]
    return out


class PenaltyContext:
    """Penalty coefficients and model-dependent assembly caches for one space.

    `eta0` may be the string 'auto', which selects the coercivity-guaranteeing
    value 16 * C_I^2 * D0 from the estimated inverse-trace constant.
    """

    def __init__(self, space: DGSpace, model: ModelData, eta0=1.0):
        self.space = space
        self.model = model
        if eta0 == "auto":
            self.C_I = estimate_CI(space)
            eta0 = 16.0 * self.C_I**2 * model.D0
        else:
            self.C_I = None
        self.eta0 = float(eta0)
        if self.eta0 <= 0.0:
            raise FormError("eta0 must be positive")

        mesh = space.mesh
        DK = model.spectral
        p2 = space.degrees.astype(float) ** 2
        h = mesh.h_K
        self.zeta = np.full(mesh.n_faces, np.nan)
        kp = mesh.face_elems[:, 0]
        km = mesh.face_elems[:, 1]
        ii = mesh.interior_faces
        self.zeta[ii] = self.eta0 * (arithmetic_avg(DK[kp[ii]], DK[km[ii]])
                                     * arithmetic_avg(p2[kp[ii]], p2[km[ii]])
                                     / harmonic_avg(h[kp[ii]], h[km[ii]]))
        dd = mesh.dirichlet_faces
        if len(dd) and model.d0 <= 0.0:
            raise FormError("Dirichlet faces require a positive-definite diffusion tensor")
        self.zeta[dd] = self.eta0 * DK[kp[dd]] * p2[kp[dd]] / h[kp[dd]]

        # D grad(phi) and (D grad(phi)).n caches; the *_flat arrays interleave
        # the two gradient components along the quadrature axis ((q, x) ->
        # 2q + x) so stiffness contractions run as one batched matmul
        self.vol_Dg = []
        self.vol_Dg_flat = []
        self.vol_g_flat = []
        for g in space.vol_groups:
            Dg = np.einsum("exy,eqmy->eqmx", model.diffusion[g.elems], g.gphi)
            self.vol_Dg.append(Dg)
            E, nq, m, _ = Dg.shape
            self.vol_Dg_flat.append(
                np.ascontiguousarray(Dg.transpose(0, 1, 3, 2)).reshape(E, 2 * nq, m))
            self.vol_g_flat.append(
                np.ascontiguousarray(g.gphi.transpose(0, 1, 3, 2)).reshape(E, 2 * nq, m))
        self.int_Bgn = []
        for g in space.face_groups_interior:
            BgnP = np.einsum("fxy,fqmy,fx->fqm", model.diffusion[g.elem_p],
                             g.gphi_p, g.normal)
            BgnM = np.einsum("fxy,fqmy,fx->fqm", model.diffusion[g.elem_m],
                             g.gphi_m, g.normal)
            self.int_Bgn.append((BgnP, BgnM))
        self.dir_Bgn = []
        for g in space.face_groups_dirichlet:
            Bgn = np.einsum("fxy,fqmy,fx->fqm", model.diffusion[g.elem_p],
                            g.gphi_p, g.normal)
            self.dir_Bgn.append(Bgn)

        self._pattern = None

    def zeta_of(self, face_index):
        """Penalty weight zeta on one face (undefined on Neumann faces)."""
        v = self.zeta[face_index]
        if np.isnan(v):
            raise FormError(f"zeta is undefined on Neumann face {face_index}")
        return float(v)

    def pattern(self):
        """Row/col COO index arrays of the Jacobian sparsity, built once."""
        if self._pattern is None:
            space = self.space
            rows, cols = [], []
            for g in space.vol_groups:
                m = g.ndof
                r = g.offsets[:, None, None] + np.arange(m)[None, :, None]
                c = g.offsets[:, None, None] + np.arange(m)[None, None, :]
                rows.append(np.broadcast_to(r, (len(g.elems), m, m)).ravel())
                cols.append(np.broadcast_to(c, (len(g.elems), m, m)).ravel())
            for g in space.face_groups_interior:
                mp, mm = g.ndof_p, g.ndof_m
                F = len(g.faces)
                op = g.off_p
                om = g.off_m
                for (o_i, m_i), (o_j, m_j) in (((op, mp), (op, mp)), ((op, mp), (om, mm)),
                                               ((om, mm), (op, mp)), ((om, mm), (om, mm))):
                    r = o_i[:, None, None] + np.arange(m_i)[None, :, None]
                    c = o_j[:, None, None] + np.arange(m_j)[None, None, :]
                    rows.append(np.broadcast_to(r, (F, m_i, m_j)).ravel())
                    cols.append(np.broadcast_to(c, (F, m_i, m_j)).ravel())
            for g in space.face_groups_dirichlet:
                m = g.ndof_p
                F = len(g.faces)
                r = g.off_p[:, None, None] + np.arange(m)[None, :, None]
                c = g.off_p[:, None, None] + np.arange(m)[None, None, :]
                rows.append(np.broadcast_to(r, (F, m, m)).ravel())
                cols.append(np.broadcast_to(c, (F, m, m)).ravel())
            self._pattern = (np.concatenate(rows), np.concatenate(cols))
        return self._pattern


def build_penalty(space, model, eta0=1.0) -> PenaltyContext:
    return PenaltyContext(space, model, eta0)


def penalty_zeta(ctx: PenaltyContext, face_index):
    """State-independent penalty weight zeta on one face.

    Interior: eta0 {D_K}_A {p_K^2}_A / {h_K}_H; Dirichlet: eta0 D_K p^2 / h;
    undefined (raises) on Neumann faces.
    """
    return ctx.zeta_of(face_index)


def penalty_eta(ctx: PenaltyContext, vec, face_index):
    """Penalty eta at the quadrature points of one face for the state `vec`."""
    space = ctx.space
    mesh = space.mesh
    linf = element_sup(space, vec)
    for grp_list, is_interior in ((space.face_groups_interior, True),
                                  (space.face_groups_dirichlet, False)):
        for gi, g in enumerate(grp_list):
            where = np.flatnonzero(g.faces == face_index)
            if len(where) == 0:
                continue
            i = int(where[0])
            up = g.phi_p[i] @ vec[g.off_p[i]:g.off_p[i] + g.ndof_p]
            cp = np.exp(up)
            if is_interior:
                um = g.phi_m[i] @ vec[g.off_m[i]:g.off_m[i] + g.ndof_m]
                cmax = np.maximum(cp, np.exp(um))
                lmax = max(np.exp(linf[g.elem_p[i]]), np.exp(linf[g.elem_m[i]]))
            else:
                cmax = cp
                lmax = np.exp(linf[g.elem_p[i]])
            return cmax * lmax * ctx.zeta_of(face_index)
    raise FormError(f"face {face_index} is not an interior or Dirichlet face")


# ---------------------------------------------------------------------------
# batched linear-algebra helpers (matmul beats einsum on these shapes)


def _bmv(A, x):
    """Batched matrix-vector: (E, q, m) @ (E, m) -> (E, q)."""
    return (A @ x[:, :, None])[..., 0]


def _gemm_vec(w, A):
    """(E, q) weights against (E, q, m) -> (E, m)."""
    return (A.transpose(0, 2, 1) @ w[:, :, None])[..., 0]


def _gemm_block(w, A, B):
    """sum_q w[eq] A[eqm] B[eqn] -> (E, m, n) via batched GEMM."""
    return (A * w[:, :, None]).transpose(0, 2, 1) @ B


def _rep2(a):
    """Repeat along the quadrature axis to match (q, x)-flattened arrays."""
    return np.repeat(a, 2, axis=1)


# ---------------------------------------------------------------------------
# state evaluation helpers


def element_sup(space: DGSpace, vec) -> np.ndarray:
    """Per-element approximation of |lam|_{L^inf(K)}.

    Maximum of |lam| over the element's volume and face quadrature points and
    its vertices; this is the sup-norm surrogate entering the penalty.
    """
    out = np.zeros(space.mesh.n_elements)
    for g in space.vol_groups:
        U = _gather(vec, g)
        lam = np.einsum("eqm,em->eq", g.phi, U)
        np.maximum.at(out, g.elems, np.max(np.abs(lam), axis=1))
        vlam = np.einsum("evm,em->ev", g.vert_phi, U)
        np.maximum.at(out, g.elems, np.max(np.abs(vlam), axis=1))
    for g in space.face_groups_interior:
        lamP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
        lamM = np.einsum("fqm,fm->fq", g.phi_m, _gather_side(vec, g, "m"))
        np.maximum.at(out, g.elem_p, np.max(np.abs(lamP), axis=1))
        np.maximum.at(out, g.elem_m, np.max(np.abs(lamM), axis=1))
    for g in space.face_groups_dirichlet + space.face_groups_neumann:
        lamP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
        np.maximum.at(out, g.elem_p, np.max(np.abs(lamP), axis=1))
    return out


def _gather_side(vec, g, side):
    if side == "p":
        idx = g.off_p[:, None] + np.arange(g.ndof_p)[None, :]
    else:
        idx = g.off_m[:, None] + np.arange(g.ndof_m)[None, :]
    return vec[idx]


def min_concentration(space: DGSpace, vec) -> float:
    """Minimum of exp(lam) over all quadrature points and vertices."""
    m = np.inf
    for g in space.vol_groups:
        U = _gather(vec, g)
        m = min(m, np.min(np.einsum("eqm,em->eq", g.phi, U)))
        m = min(m, np.min(np.einsum("evm,em->ev", g.vert_phi, U)))
    for g in space.face_groups_interior:
        m = min(m, np.min(np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))))
        m = min(m, np.min(np.einsum("fqm,fm->fq", g.phi_m, _gather_side(vec, g, "m"))))
    for g in space.face_groups_dirichlet + space.face_groups_neumann:
        m = min(m, np.min(np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))))
    return float(np.exp(m))


def _vol_states(space, ctx, vec):
    """Per volume group: (U, lam, c, Dglam_flat) with c = exp(lam)."""
    out = []
    for g, Dgf in zip(space.vol_groups, ctx.vol_Dg_flat):
        U = _gather(vec, g)
        lam = _bmv(g.phi, U)
        with np.errstate(over="ignore"):
            c = np.exp(lam)
        Dglam_flat = _bmv(Dgf, U)        # (E, 2 nq), (q, x) interleaved
        out.append((U, lam, c, Dglam_flat))
    return out


def _check_finite(space, vec, arrs, what):
    for a in arrs:
        if not np.all(np.isfinite(a)):
            linf = element_sup(space, vec)
            k = int(np.argmax(linf))
            raise FormError(
                f"{what} overflowed: max |lam| = {linf[k]:.3g} in element {k}")


def _eta_interior(ctx, g, lamP, lamM, sup):
    cmax = np.maximum(np.exp(lamP), np.exp(lamM))
    lmax = np.maximum(np.exp(sup[g.elem_p]), np.exp(sup[g.elem_m]))
    zeta = ctx.zeta[g.faces]
    return cmax * (lmax * zeta)[:, None]


def _eta_dirichlet(ctx, g, lam, sup):
    zeta = ctx.zeta[g.faces]
    return np.exp(lam) * (np.exp(sup[g.elem_p]) * zeta)[:, None]


# ---------------------------------------------------------------------------
# the nonlinear form A and the theta-step residual / Jacobian


def form_A(space, model, ctx, u, v, w, dirichlet_data=None, t=0.0):
    """Evaluate A(u; v, w).  Dirichlet jumps of v and w subtract the datum.

    `dirichlet_data` overrides the model's lam_D (callable, scalar or None,
    None meaning the model's own datum at time t); the form is symmetric in
    (v, w).
    """
    for vec in (u, v, w):
        if len(vec) != space.n_dofs:
            raise FormError("state length does not match the space")
    sup = element_sup(space, u)
    total = 0.0
    for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
        uu = np.einsum("eqm,em->eq", g.phi, _gather(u, g))
        with np.errstate(over="ignore"):
            cu = np.exp(uu)
        gv = np.einsum("eqmx,em->eqx", Dg, _gather(v, g))        # D grad v
        gw = np.einsum("eqmx,em->eqx", g.gphi, _gather(w, g))    # grad w
        total += np.einsum("eq,eq,eqx,eqx->", g.w, cu, gv, gw)
    _check_finite(space, u, [np.array([total])], "form A")

    for g, (BgnP, BgnM) in zip(space.face_groups_interior, ctx.int_Bgn):
        Up, Um = _gather_side(u, g, "p"), _gather_side(u, g, "m")
        lamP = np.einsum("fqm,fm->fq", g.phi_p, Up)
        lamM = np.einsum("fqm,fm->fq", g.phi_m, Um)
        cP, cM = np.exp(lamP), np.exp(lamM)
        eta = _eta_interior(ctx, g, lamP, lamM, sup)
        vP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(v, g, "p"))
        vM = np.einsum("fqm,fm->fq", g.phi_m, _gather_side(v, g, "m"))
        wP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(w, g, "p"))
        wM = np.einsum("fqm,fm->fq", g.phi_m, _gather_side(w, g, "m"))
        dnvP = np.einsum("fqm,fm->fq", BgnP, _gather_side(v, g, "p"))
        dnvM = np.einsum("fqm,fm->fq", BgnM, _gather_side(v, g, "m"))
        dnwP = np.einsum("fqm,fm->fq", BgnP, _gather_side(w, g, "p"))
        dnwM = np.einsum("fqm,fm->fq", BgnM, _gather_side(w, g, "m"))
        jv, jw = vP - vM, wP - wM
        avgv = 0.5 * (cP * dnvP + cM * dnvM)
        avgw = 0.5 * (cP * dnwP + cM * dnwM)
        total += np.sum(g.w * (-avgv * jw - jv * avgw + eta * jv * jw))

    for g, Bgn in zip(space.face_groups_dirichlet, ctx.dir_Bgn):
        Up = _gather_side(u, g, "p")
        lam = np.einsum("fqm,fm->fq", g.phi_p, Up)
        cu = np.exp(lam)
        eta = _eta_dirichlet(ctx, g, lam, sup)
        if dirichlet_data is None:
            gval = model.dirichlet_values(g.x[..., 0], g.x[..., 1], t)
        elif callable(dirichlet_data):
            gval = np.asarray(dirichlet_data(g.x[..., 0], g.x[..., 1], t), dtype=float)
        else:
            gval = np.full(g.w.shape, float(dirichlet_data))
        vv = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(v, g, "p")) - gval
        ww = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(w, g, "p")) - gval
        dnv = np.einsum("fqm,fm->fq", Bgn, _gather_side(v, g, "p"))
        dnw = np.einsum("fqm,fm->fq", Bgn, _gather_side(w, g, "p"))
        total += np.sum(g.w * (-cu * dnv * ww - vv * cu * dnw + eta * vv * ww))
    return float(total)


class ThetaStepProblem:
    """Residual/Jacobian of one theta step at fixed (lam_old, t_old -> t_new).

    Everything that depends only on the old state (its A-action, the mass of
    exp(lam_old), the blended forcing) is precomputed here; per-Newton-iterate
    work touches only the lam_new-dependent terms.
    """

    def __init__(self, space, model, ctx, lam_old, t_old, t_new, theta, epsilon=0.0):
        self.space = space
        self.model = model
        self.ctx = ctx
        self.theta = float(theta)
        self.epsilon = float(epsilon)
        self.t_old = float(t_old)
        self.t_new = float(t_new)
        self.dt = self.t_new - self.t_old
        if self.dt <= 0.0:
            raise FormError("t_new must exceed t_old")
        if not 0.0 <= self.theta <= 1.0:
            raise FormError("theta must lie in [0, 1]")
        if self.epsilon < 0.0:
            raise FormError("epsilon must be non-negative")
        self.lam_old = np.asarray(lam_old, dtype=float)

        self._old_vol = _vol_states(space, ctx, self.lam_old)
        _check_finite(space, self.lam_old, [s[2] for s in self._old_vol],
                      "exp(lam_old)")
        self._fixed = self._old_side_vector()
        self._g_new = self._dirichlet_at(self.t_new)

    # -- fixed (old-state) parts -------------------------------------------

    def _dirichlet_at(self, t):
        out = []
        for g in self.space.face_groups_dirichlet:
            out.append(self.model.dirichlet_values(g.x[..., 0], g.x[..., 1], t))
        return out

    def _old_side_vector(self):
        space, model, ctx = self.space, self.model, self.ctx
        th, dt = self.theta, self.dt
        r = np.zeros(space.n_dofs)

        for g, gf, (U, lam, c, Dglam_flat) in zip(space.vol_groups,
                                                  self.ctx.vol_g_flat,
                                                  self._old_vol):
            coef = -c / dt    # -(e^{lam_old}/dt, phi)
            if model.forcing is not None:
                fo = model.forcing_values(g.x[..., 0], g.x[..., 1], self.t_old)
                fn = model.forcing_values(g.x[..., 0], g.x[..., 1], self.t_new)
                coef = coef - (th * fn + (1.0 - th) * fo)
            contrib = _gemm_vec(g.w * coef, g.phi)
            if th < 1.0:
                wflux = _rep2((1.0 - th) * g.w * c) * Dglam_flat
                contrib += _gemm_vec(wflux, gf)
            _scatter_vec(r, g, contrib)

        if th < 1.0:
            g_old = self._dirichlet_at(self.t_old)
            sup_o = element_sup(space, self.lam_old)
            self._face_action(r, self.lam_old, sup_o, g_old, 1.0 - th,
                              include_eps=False)
        return r

    # -- per-iterate assembly ------------------------------------------------

    def _face_action(self, r, vec, sup, gvals, weight, include_eps):
        """Add weight * (face part of A(vec; vec, phi_i)) to r (+eps jumps)."""
        space, ctx = self.space, self.ctx
        epsdt = self.epsilon / self.dt if include_eps else 0.0
        for g, (BgnP, BgnM) in zip(space.face_groups_interior, ctx.int_Bgn):
            Up, Um = _gather_side(vec, g, "p"), _gather_side(vec, g, "m")
            lamP = np.einsum("fqm,fm->fq", g.phi_p, Up)
            lamM = np.einsum("fqm,fm->fq", g.phi_m, Um)
            cP, cM = np.exp(lamP), np.exp(lamM)
            eta = _eta_interior(ctx, g, lamP, lamM, sup)
            ju = lamP - lamM
            flux = 0.5 * (cP * np.einsum("fqm,fm->fq", BgnP, Up)
                          + cM * np.einsum("fqm,fm->fq", BgnM, Um))
            pen = eta * ju
            if epsdt:
                pen = pen + epsdt * ctx.zeta[g.faces][:, None] * ju
            # test on plus side: -flux*phi - ju*(c D grad phi . n)/2 + pen*phi
            wq = g.w
            rp = np.einsum("fq,fqm->fm", wq * (-flux + pen), g.phi_p) \
                - 0.5 * np.einsum("fq,fqm->fm", wq * ju * cP, BgnP)
            rm = np.einsum("fq,fqm->fm", wq * (flux - pen), g.phi_m) \
                - 0.5 * np.einsum("fq,fqm->fm", wq * ju * cM, BgnM)
            _scatter_face(r, g, weight * rp, "p")
            _scatter_face(r, g, weight * rm, "m")

        for g, Bgn, gval in zip(space.face_groups_dirichlet, ctx.dir_Bgn, gvals):
            Up = _gather_side(vec, g, "p")
            lam = np.einsum("fqm,fm->fq", g.phi_p, Up)
            cu = np.exp(lam)
            eta = _eta_dirichlet(ctx, g, lam, sup)
            ju = lam - gval
            flux = cu * np.einsum("fqm,fm->fq", Bgn, Up)
            pen = eta * ju
            if epsdt:
                pen = pen + epsdt * ctx.zeta[g.faces][:, None] * lam
            wq = g.w
            rp = np.einsum("fq,fqm->fm", wq * (-flux + pen), g.phi_p) \
                - np.einsum("fq,fqm->fm", wq * ju * cu, Bgn)
            _scatter_face(r, g, weight * rp, "p")

    def residual(self, lam_new, *, eta_frozen=None):
        r, _ = self._assemble(lam_new, want_matrix=False, eta_frozen=eta_frozen)
        return r

    def residual_and_jacobian(self, lam_new, *, eta_frozen=None):
        return self._assemble(lam_new, want_matrix=True, eta_frozen=eta_frozen)

    def frozen_eta(self, vec):
        """Penalty values eta(vec) at all face quadrature points (for freezing)."""
        space, ctx = self.space, self.ctx
        sup = element_sup(space, vec)
        etas_i, etas_d = [], []
        for g in space.face_groups_interior:
            lamP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
            lamM = np.einsum("fqm,fm->fq", g.phi_m, _gather_side(vec, g, "m"))
            etas_i.append(_eta_interior(ctx, g, lamP, lamM, sup))
        for g in space.face_groups_dirichlet:
            lam = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
            etas_d.append(_eta_dirichlet(ctx, g, lam, sup))
        return etas_i, etas_d

    def _assemble(self, lam_new, want_matrix, eta_frozen=None):
        space, model, ctx = self.space, self.model, self.ctx
        th, dt, eps = self.theta, self.dt, self.epsilon
        epsdt = eps / dt
        lam_new = np.asarray(lam_new, dtype=float)

        r = self._fixed.copy()
        data = [] if want_matrix else None
        sup = element_sup(space, lam_new)

        new_vol = _vol_states(space, ctx, lam_new)
        _check_finite(space, lam_new, [s[2] for s in new_vol], "exp(lam_new)")

        # volume terms
        for g, gf, Dgf, (U, lam, c, Dglam_flat), (_, _, c_old, _) in zip(
                space.vol_groups, ctx.vol_g_flat, ctx.vol_Dg_flat, new_vol,
                self._old_vol):
            C = th * c + (1.0 - th) * c_old
            alpha = model.alpha[g.elems][:, None]
            coef = c / dt - alpha * C * (1.0 - C) + epsdt * lam
            contrib = _gemm_vec(g.w * coef, g.phi)
            scoef = th * c + epsdt
            contrib += _gemm_vec(_rep2(g.w * scoef) * Dglam_flat, gf)
            _scatter_vec(r, g, contrib)
            if want_matrix:
                mcoef = c / dt - alpha * (1.0 - 2.0 * C) * th * c + epsdt
                block = _gemm_block(g.w * mcoef, g.phi, g.phi)
                block += _gemm_block(_rep2(g.w * scoef), gf, Dgf)
                E, nq = g.w.shape
                # (D grad lam) . grad phi_i at each point, via (E,q,1,2)@(E,q,2,m)
                bvec = (Dglam_flat.reshape(E, nq, 1, 2)
                        @ gf.reshape(E, nq, 2, -1))[:, :, 0, :]
                block += th * _gemm_block(g.w * c, bvec, g.phi)
                data.append(block.ravel())

        # theta-weighted face action of A(lam_new) (+ eps jump terms)
        if eta_frozen is None:
            etas_i, etas_d = None, None
        else:
            etas_i, etas_d = eta_frozen

        for gi, (g, (BgnP, BgnM)) in enumerate(zip(space.face_groups_interior,
                                                   ctx.int_Bgn)):
            Up, Um = _gather_side(lam_new, g, "p"), _gather_side(lam_new, g, "m")
            lamP = _bmv(g.phi_p, Up)
            lamM = _bmv(g.phi_m, Um)
            cP, cM = np.exp(lamP), np.exp(lamM)
            eta = etas_i[gi] if etas_i is not None else _eta_interior(ctx, g, lamP, lamM, sup)
            ju = lamP - lamM
            dnuP = _bmv(BgnP, Up)
            dnuM = _bmv(BgnM, Um)
            flux = 0.5 * (cP * dnuP + cM * dnuM)
            zet = ctx.zeta[g.faces][:, None]
            pen = th * eta * ju + epsdt * zet * ju
            wq = g.w
            rp = _gemm_vec(wq * (-th * flux + pen), g.phi_p) \
                - 0.5 * th * _gemm_vec(wq * ju * cP, BgnP)
            rm = _gemm_vec(wq * (th * flux - pen), g.phi_m) \
                - 0.5 * th * _gemm_vec(wq * ju * cM, BgnM)
            _scatter_face(r, g, rp, "p")
            _scatter_face(r, g, rm, "m")

            if want_matrix:
                # trial-side consistency pieces ({{e^u D grad phi_j}} etc.)
                consP = 0.5 * (cP[:, :, None] * BgnP
                               + (cP * dnuP)[:, :, None] * g.phi_p)
                consM = 0.5 * (cM[:, :, None] * BgnM
                               + (cM * dnuM)[:, :, None] * g.phi_m)
                wpen = wq * (th * eta + epsdt * zet)
                jw = wq * ju
                blocks = {}
                for s, phi_s, Bgn_s, c_s, sgn_s in (("p", g.phi_p, BgnP, cP, 1.0),
                                                    ("m", g.phi_m, BgnM, cM, -1.0)):
                    for t_, phi_t, Bgn_t, c_t, sgn_t, cons_t in (
                            ("p", g.phi_p, BgnP, cP, 1.0, consP),
                            ("m", g.phi_m, BgnM, cM, -1.0, consM)):
                        blk = -th * sgn_s * _gemm_block(wq, phi_s, cons_t)
                        blk += -0.5 * th * sgn_t * _gemm_block(wq * c_s, Bgn_s, phi_t)
                        blk += sgn_s * sgn_t * _gemm_block(wpen, phi_s, phi_t)
                        if s == t_:
                            blk += -0.5 * th * _gemm_block(jw * c_s, Bgn_s, phi_s)
                        blocks[(s, t_)] = blk
                data.append(blocks[("p", "p")].ravel())
                data.append(blocks[("p", "m")].ravel())
                data.append(blocks[("m", "p")].ravel())
                data.append(blocks[("m", "m")].ravel())

        for gi, (g, Bgn, gval) in enumerate(zip(space.face_groups_dirichlet,
                                                ctx.dir_Bgn, self._g_new)):
            Up = _gather_side(lam_new, g, "p")
            lam = _bmv(g.phi_p, Up)
            cu = np.exp(lam)
            eta = etas_d[gi] if etas_d is not None else _eta_dirichlet(ctx, g, lam, sup)
            ju = lam - gval
            dnu = _bmv(Bgn, Up)
            zet = ctx.zeta[g.faces][:, None]
            pen = th * eta * ju + epsdt * zet * lam
            wq = g.w
            rp = _gemm_vec(wq * (-th * cu * dnu + pen), g.phi_p) \
                - th * _gemm_vec(wq * ju * cu, Bgn)
            _scatter_face(r, g, rp, "p")
            if want_matrix:
                cons = cu[:, :, None] * Bgn + (cu * dnu)[:, :, None] * g.phi_p
                blk = -th * _gemm_block(wq, g.phi_p, cons)
                blk += -th * _gemm_block(wq * cu, Bgn, g.phi_p)
                blk += _gemm_block(wq * (th * eta + epsdt * zet), g.phi_p, g.phi_p)
                blk += -th * _gemm_block(wq * ju * cu, Bgn, g.phi_p)
                data.append(blk.ravel())

        if not np.all(np.isfinite(r)):
            _check_finite(space, lam_new, [r], "residual")
        if not want_matrix:
            return r, None
        rows, cols = ctx.pattern()
        vals = np.concatenate(data)
        J = sp.coo_matrix((vals, (rows, cols)),
                          shape=(space.n_dofs, space.n_dofs)).tocsc()
        return r, J


def _scatter_vec(r, g, contrib):
    idx = g.offsets[:, None] + np.arange(g.ndof)[None, :]
    np.add.at(r, idx, contrib)


def _scatter_face(r, g, contrib, side):
    if side == "p":
        idx = g.off_p[:, None] + np.arange(g.ndof_p)[None, :]
    else:
        idx = g.off_m[:, None] + np.arange(g.ndof_m)[None, :]
    np.add.at(r, idx, contrib)


def theta_residual(space, model, ctx, lam_new, lam_old, t_new, t_old, theta,
                   epsilon=0.0):
    """Residual of the fully discrete theta scheme tested against all basis
    functions (component i is the discrete equation tested with phi_i)."""
    prob = ThetaStepProblem(space, model, ctx, lam_old, t_old, t_new, theta, epsilon)
    return prob.residual(lam_new)


def theta_jacobian(space, model, ctx, lam_new, lam_old, t_new, t_old, theta,
                   epsilon=0.0, freeze_eta=True):
    """Frozen-penalty Jacobian of the theta-step residual in lam_new."""
    prob = ThetaStepProblem(space, model, ctx, lam_old, t_old, t_new, theta, epsilon)
    eta = prob.frozen_eta(np.asarray(lam_new, dtype=float)) if freeze_eta else None
    _, J = prob.residual_and_jacobian(lam_new, eta_frozen=eta)
    return J


# ---------------------------------------------------------------------------
# norms and entropy


def _jump_sq_sum(space, ctx, values_i, values_d):
    total = 0.0
    for g, (jp, jm) in zip(space.face_groups_interior, values_i):
        total += np.sum(g.w * ctx.zeta[g.faces][:, None] * (jp - jm) ** 2)
    for g, jd in zip(space.face_groups_dirichlet, values_d):
        total += np.sum(g.w * ctx.zeta[g.faces][:, None] * jd**2)
    return total


def dg_norm(space, model, ctx, vec, dirichlet_data=0.0):
    """DG norm (sqrt of D-weighted broken gradient + zeta-weighted jumps).

    Dirichlet jumps compare the trace against `dirichlet_data` (default 0,
    the homogeneous convention used for norms of functions and errors).
    """
    total = 0.0
    for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
        U = _gather(vec, g)
        gv = np.einsum("eqmx,em->eqx", g.gphi, U)
        Dgv = np.einsum("eqmx,em->eqx", Dg, U)
        total += np.einsum("eq,eqx,eqx->", g.w, gv, Dgv)
    vi, vd = [], []
    for g in space.face_groups_interior:
        vi.append((np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p")),
                   np.einsum("fqm,fm->fq", g.phi_m, _gather_side(vec, g, "m"))))
    for g in space.face_groups_dirichlet:
        tr = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
        vd.append(tr - float(dirichlet_data))
    return float(np.sqrt(total + _jump_sq_sum(space, ctx, vi, vd)))


def dg_norm_exp(space, model, ctx, vec, scale=1.0, dirichlet_value=1.0):
    """DG norm of exp(scale * lam) for a DG state lam.

    The gradient is scale * exp(scale*lam) * grad lam; Dirichlet jumps
    compare against `dirichlet_value` (exp(scale * lam_D) of homogeneous data
    is 1; pass 0.0 for the plain homogeneous-function convention).
    """
    total = 0.0
    for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
        U = _gather(vec, g)
        lam = np.einsum("eqm,em->eq", g.phi, U)
        w_field = scale * np.exp(scale * lam)
        gv = np.einsum("eqmx,em->eqx", g.gphi, U)
        Dgv = np.einsum("eqmx,em->eqx", Dg, U)
        total += np.einsum("eq,eq,eqx,eqx->", g.w, w_field**2, gv, Dgv)
    vi, vd = [], []
    for g in space.face_groups_interior:
        lamP = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
        lamM = np.einsum("fqm,fm->fq", g.phi_m, _gather_side(vec, g, "m"))
        vi.append((np.exp(scale * lamP), np.exp(scale * lamM)))
    for g in space.face_groups_dirichlet:
        lam = np.einsum("fqm,fm->fq", g.phi_p, _gather_side(vec, g, "p"))
        vd.append(np.exp(scale * lam) - float(dirichlet_value))
    return float(np.sqrt(total + _jump_sq_sum(space, ctx, vi, vd)))


def discrete_entropy(space, vec):
    """Discrete entropy S = int s(e^lam), s(x) = x(log x - 1) + 1 >= 0."""
    total = 0.0
    for g in space.vol_groups:
        lam = np.einsum("eqm,em->eq", g.phi, _gather(vec, g))
        with np.errstate(over="ignore"):
            s = np.exp(lam) * (lam - 1.0) + 1.0
        total += np.einsum("eq,eq->", g.w, s)
    if not np.isfinite(total):
        raise FormError("entropy overflowed")
    return float(total)
