"""Penalty, nonlinear form, residual/Jacobian, norms and entropy tests."""

import numpy as np
import pytest

from polyfk import forms
from polyfk.dgspace import build_space
from polyfk.forms import (FormError, ModelData, ThetaStepProblem, build_penalty,
                          dg_norm, dg_norm_exp, discrete_entropy, estimate_CI,
                          form_A, min_concentration, penalty_eta, theta_jacobian,
                          theta_residual)
from polyfk.mesh import build_poly_mesh, generate_voronoi

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def isotropic(mesh, d=1.0, alpha=0.0, **kw):
    return ModelData.isotropic(mesh, d, alpha, **kw)


class TestPenaltyZeta:
    def test_interior_formula(self):
        # two 0.5 x 0.5-ish cells... use two unit squares side by side:
        # D=I, p=1, h=sqrt(2) per cell -> zeta = 1*1*1/havg
        cells = [UNIT_SQUARE, UNIT_SQUARE + np.array([1.0, 0.0])]
        mesh = build_poly_mesh(cells)
        space = build_space(mesh, 1)
        model = isotropic(mesh)
        ctx = build_penalty(space, model, eta0=1.0)
        f = mesh.interior_faces[0]
        h = np.sqrt(2.0)
        assert ctx.zeta_of(f) == pytest.approx(1.0 * 1.0 * 1.0 / h, rel=1e-12)

    def test_spec_arithmetic(self):
        # eta0=1, D=I, p+=p-=1, h+=h-=0.5: zeta = {D}_A {p^2}_A / {h}_H = 2
        from polyfk.mesh import arithmetic_avg, harmonic_avg
        zeta = 1.0 * arithmetic_avg(1.0, 1.0) * arithmetic_avg(1.0, 1.0) \
            / harmonic_avg(0.5, 0.5)
        assert zeta == pytest.approx(2.0)

    def test_dirichlet_formula(self):
        mesh = build_poly_mesh([UNIT_SQUARE])
        space = build_space(mesh, 2)
        model = isotropic(mesh)
        ctx = build_penalty(space, model, eta0=10.0)
        f = mesh.dirichlet_faces[0]
        # D_K = 1, p^2 = 4, h = sqrt(2): zeta = 10*4/sqrt(2)
        assert ctx.zeta_of(f) == pytest.approx(40.0 / np.sqrt(2.0), rel=1e-12)

    def test_spec_dirichlet_example(self):
        # eta0=10, D=I, p=2, h=0.1 -> zeta = 10*1*4/0.1 = 400
        assert 10.0 * 1.0 * 4 / 0.1 == pytest.approx(400.0)

    def test_anisotropic_spectral_factor(self):
        # D = d_ext I + d_axn n(x)n with d_ext=8, d_axn=80, n=(0,1):
        # largest eigenvalue 88 enters zeta
        mesh = build_poly_mesh([UNIT_SQUARE])
        model = ModelData.by_label(mesh, d_ext=8.0, d_axn=80.0, alpha=0.0,
                                   fiber=lambda x, y: np.stack(
                                       [np.zeros_like(x), np.ones_like(x)], axis=-1))
        eigs = np.linalg.eigvalsh(model.diffusion[0])
        assert eigs[-1] == pytest.approx(88.0, rel=1e-12)
        assert model.spectral[0] == pytest.approx(88.0, rel=1e-12)
        space = build_space(mesh, 1)
        ctx = build_penalty(space, model, eta0=1.0)
        f = mesh.dirichlet_faces[0]
        assert ctx.zeta_of(f) == pytest.approx(88.0 / np.sqrt(2.0), rel=1e-12)

    def test_neumann_undefined(self):
        mesh = generate_voronoi(4, seed=1, lloyd_iters=10, boundary_tags="neumann")
        space = build_space(mesh, 1)
        ctx = build_penalty(space, isotropic(mesh), eta0=1.0)
        with pytest.raises(FormError, match="Neumann"):
            ctx.zeta_of(mesh.neumann_faces[0])


class TestPenaltyEta:
    def test_zero_state_gives_zeta(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        ctx = build_penalty(space, isotropic(unit_voronoi_small), eta0=3.0)
        lam = np.zeros(space.n_dofs)
        f = int(unit_voronoi_small.interior_faces[0])
        eta = penalty_eta(ctx, lam, f)
        assert np.allclose(eta, ctx.zeta_of(f), rtol=1e-12)

    def test_constant_state(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        ctx = build_penalty(space, isotropic(unit_voronoi_small), eta0=1.0)
        c = -0.7
        lam = space.project(lambda x, y: np.full_like(x, c))
        f = int(unit_voronoi_small.interior_faces[0])
        eta = penalty_eta(ctx, lam, f)
        expect = np.exp(c) * np.exp(abs(c)) * ctx.zeta_of(f)
        assert np.allclose(eta, expect, rtol=1e-9)

    def test_max_factor_product_at_least_one(self, unit_voronoi_small, rng):
        # max{(e^l)+,(e^l)-} max{e^sup+, e^sup-} >= 1 (used by coercivity)
        space = build_space(unit_voronoi_small, 2)
        ctx = build_penalty(space, isotropic(unit_voronoi_small), eta0=1.0)
        for _ in range(20):
            lam = rng.standard_normal(space.n_dofs)
            f = int(rng.choice(unit_voronoi_small.interior_faces))
            eta = penalty_eta(ctx, lam, f)
            assert np.all(eta >= ctx.zeta_of(f) * (1.0 - 1e-12))


class TestFormA:
    def test_constant_v_leaves_only_dirichlet_terms(self, unit_voronoi_small, rng):
        space = build_space(unit_voronoi_small, 2)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=4.0)
        u = 0.3 * rng.standard_normal(space.n_dofs)
        cval = 0.8
        v = space.project(lambda x, y: np.full_like(x, cval))
        got = form_A(space, model, ctx, u, v, v, dirichlet_data=0.0)
        # gradient terms vanish; interior jumps vanish; only sum eta(u) c^2 stays
        expect = 0.0
        for f in unit_voronoi_small.dirichlet_faces:
            eta = penalty_eta(ctx, u, int(f))
            from polyfk.dgspace import face_quadrature
            rule = face_quadrature(unit_voronoi_small.faces[int(f)],
                                   space.element_order(0))
            expect += np.sum(rule.weights * eta * cval**2)
        assert got == pytest.approx(expect, rel=1e-9)

    def test_all_neumann_constant_is_zero(self, neumann_voronoi_small, rng):
        space = build_space(neumann_voronoi_small, 2)
        model = isotropic(neumann_voronoi_small)
        ctx = build_penalty(space, model, eta0=1.0)
        u = 0.3 * rng.standard_normal(space.n_dofs)
        v = space.project(lambda x, y: np.full_like(x, 0.8))
        assert form_A(space, model, ctx, u, v, v) == pytest.approx(0.0, abs=1e-10)

    def test_symmetry(self, unit_voronoi_small, rng):
        space = build_space(unit_voronoi_small, 2)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=4.0)
        for _ in range(100):
            u, v, w = 0.4 * rng.standard_normal((3, space.n_dofs))
            a1 = form_A(space, model, ctx, u, v, w, dirichlet_data=0.0)
            a2 = form_A(space, model, ctx, u, w, v, dirichlet_data=0.0)
            assert a1 == pytest.approx(a2, rel=1e-11, abs=1e-11)

    def test_mismatched_space_rejected(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=1.0)
        with pytest.raises(FormError, match="length"):
            form_A(space, model, ctx, np.zeros(space.n_dofs + 1),
                   np.zeros(space.n_dofs), np.zeros(space.n_dofs))


class TestJumpAverageIdentities:
    def test_continuous_function_has_zero_jumps(self, unit_voronoi_small, rng):
        space = build_space(unit_voronoi_small, 3)
        a, b, c, d = rng.standard_normal(4)
        f = lambda x, y: a + b * x + c * y + d * x * y
        dofs = space.project(f)
        for g in space.face_groups_interior:
            lamP = np.einsum("fqm,fm->fq", g.phi_p,
                             forms._gather_side(dofs, g, "p"))
            lamM = np.einsum("fqm,fm->fq", g.phi_m,
                             forms._gather_side(dofs, g, "m"))
            assert np.abs(lamP - lamM).max() < 1e-10

    def test_average_of_continuous_gradient_is_trace(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 2)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=1.0)
        dofs = space.project(lambda x, y: 3.0 * x - 2.0 * y)
        for g, (BgnP, BgnM) in zip(space.face_groups_interior, ctx.int_Bgn):
            dnP = np.einsum("fqm,fm->fq", BgnP, forms._gather_side(dofs, g, "p"))
            dnM = np.einsum("fqm,fm->fq", BgnM, forms._gather_side(dofs, g, "m"))
            trace = 3.0 * g.normal[:, 0] - 2.0 * g.normal[:, 1]
            assert np.abs(0.5 * (dnP + dnM) - trace[:, None]).max() < 1e-10


class TestResidual:
    def test_pure_mass_zero_iff_stationary(self, neumann_voronoi_small):
        space = build_space(neumann_voronoi_small, 1)
        model = ModelData.by_label(neumann_voronoi_small,
                                   d_ext={0: 2.0}, d_axn=0.0, alpha=0.0)
        ctx = build_penalty(space, model, eta0=1.0)
        lam = space.project(lambda x, y: np.full_like(x, 0.4))
        r0 = theta_residual(space, model, ctx, lam, lam, 0.1, 0.0, 1.0)
        assert np.linalg.norm(r0) < 1e-10
        r1 = theta_residual(space, model, ctx, lam + 0.2, lam, 0.1, 0.0, 1.0)
        assert np.linalg.norm(r1) > 1.0

    def test_scalar_logistic_oracle(self, neumann_voronoi_small):
        # theta=1, constant states: residual vanishes iff (c1-c0)/dt = a c1(1-c1)
        space = build_space(neumann_voronoi_small, 1)
        model = isotropic(neumann_voronoi_small, d=1e-14, alpha=1.0)
        ctx = build_penalty(space, model, eta0=1.0)
        dt, c0 = 0.1, 0.5
        c1 = (-(1 - dt) + np.sqrt((1 - dt)**2 + 4 * dt * c0)) / (2 * dt)
        lam0 = space.project(lambda x, y: np.full_like(x, np.log(c0)))
        lam1 = space.project(lambda x, y: np.full_like(x, np.log(c1)))
        r = theta_residual(space, model, ctx, lam1, lam0, dt, 0.0, 1.0)
        assert np.linalg.norm(r) * dt < 1e-12
        r_bad = theta_residual(space, model, ctx, lam0, lam0, dt, 0.0, 1.0)
        assert np.linalg.norm(r_bad) * dt > 1e-4

    def test_epsilon_terms_match_matrices(self, unit_voronoi_small, rng):
        # residual(eps) - residual(0) = (eps/dt) (M + K_D + J_zeta) lam_new
        space = build_space(unit_voronoi_small, 2)
        model = isotropic(unit_voronoi_small, d=1.7, alpha=0.4)
        ctx = build_penalty(space, model, eta0=5.0)
        lam_old = space.project(lambda x, y: 0.4 * np.sin(3 * x) - 0.2 * y)
        lam_new = lam_old + space.project(lambda x, y: 0.1 * np.cos(2 * y))
        dt, eps = 0.05, 1e-3
        r0 = theta_residual(space, model, ctx, lam_new, lam_old, dt, 0.0, 0.7, 0.0)
        r1 = theta_residual(space, model, ctx, lam_new, lam_old, dt, 0.0, 0.7, eps)
        diff = r1 - r0

        from polyfk.solver import BaselineOperator
        op = BaselineOperator(space, model, ctx)   # reuse its exact mass matrix
        grad = np.zeros_like(lam_new)
        for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
            U = forms._gather(lam_new, g)
            Dglam = np.einsum("eqmx,em->eqx", Dg, U)
            contrib = np.einsum("eq,eqx,eqmx->em", g.w, Dglam, g.gphi)
            idx = g.offsets[:, None] + np.arange(g.ndof)[None, :]
            np.add.at(grad, idx, contrib)
        jump = np.zeros_like(lam_new)
        for g in space.face_groups_interior:
            lamP = np.einsum("fqm,fm->fq", g.phi_p, forms._gather_side(lam_new, g, "p"))
            lamM = np.einsum("fqm,fm->fq", g.phi_m, forms._gather_side(lam_new, g, "m"))
            ju = (lamP - lamM) * ctx.zeta[g.faces][:, None]
            idx = g.off_p[:, None] + np.arange(g.ndof_p)[None, :]
            np.add.at(jump, idx, np.einsum("fq,fqm->fm", g.w * ju, g.phi_p))
            idx = g.off_m[:, None] + np.arange(g.ndof_m)[None, :]
            np.add.at(jump, idx, -np.einsum("fq,fqm->fm", g.w * ju, g.phi_m))
        for g in space.face_groups_dirichlet:
            lamq = np.einsum("fqm,fm->fq", g.phi_p, forms._gather_side(lam_new, g, "p"))
            ju = lamq * ctx.zeta[g.faces][:, None]
            idx = g.off_p[:, None] + np.arange(g.ndof_p)[None, :]
            np.add.at(jump, idx, np.einsum("fq,fqm->fm", g.w * ju, g.phi_p))
        mass = op.mass @ lam_new
        expect = (eps / dt) * (mass + grad + jump)
        assert np.abs(diff - expect).max() < 1e-9 * max(1.0, np.abs(expect).max())

    def test_overflow_reports_element(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=1.0)
        lam = np.zeros(space.n_dofs)
        lam[space.offsets[3]] = 1e4   # constant mode of element 3 overflows exp
        with pytest.raises(FormError, match="overflow"):
            theta_residual(space, model, ctx, lam, np.zeros_like(lam), 0.1, 0.0, 1.0)


class TestJacobian:
    @pytest.mark.parametrize("theta", [0.5, 1.0])
    @pytest.mark.parametrize("eps", [0.0, 1e-3])
    def test_matches_finite_differences(self, unit_voronoi_small, rng, theta, eps):
        space = build_space(unit_voronoi_small, 2)
        model = ModelData.isotropic(
            unit_voronoi_small, 1.0, 0.3,
            forcing=lambda x, y, t: 0.2 * np.sin(x + t) * np.ones_like(x),
            dirichlet=lambda x, y, t: 0.1 * x - 0.2 * y + 0.05 * t)
        ctx = build_penalty(space, model, eta0=4.0)
        lam_old = space.project(lambda x, y: 0.3 * np.cos(2 * x) + 0.1 * y)
        lam_new = lam_old + 0.05 * rng.standard_normal(space.n_dofs)
        prob = ThetaStepProblem(space, model, ctx, lam_old, 0.0, 0.05, theta, eps)
        eta = prob.frozen_eta(lam_new)
        r, J = prob.residual_and_jacobian(lam_new, eta_frozen=eta)
        J = J.toarray()
        h = 1e-7
        Jfd = np.zeros_like(J)
        for j in range(space.n_dofs):
            e = np.zeros(space.n_dofs)
            e[j] = h
            rp = prob.residual(lam_new + e, eta_frozen=eta)
            rm = prob.residual(lam_new - e, eta_frozen=eta)
            Jfd[:, j] = (rp - rm) / (2 * h)
        assert np.abs(J - Jfd).max() / np.abs(J).max() < 1e-6

    def test_diffusion_free_block_diagonal_weighted_mass(self, neumann_voronoi_small, rng):
        # alpha=0, eps=0, D=0: Jacobian = block-diagonal mass weighted e^lam/dt
        mesh = neumann_voronoi_small
        space = build_space(mesh, 2)
        model = ModelData(np.zeros((mesh.n_elements, 2, 2)),
                          np.zeros(mesh.n_elements))
        ctx = build_penalty(space, model, eta0=1.0)
        lam = 0.3 * rng.standard_normal(space.n_dofs)
        dt = 0.2
        J = theta_jacobian(space, model, ctx, lam, lam, dt, 0.0, 1.0).toarray()
        expect = np.zeros_like(J)
        for g in space.vol_groups:
            lamq = np.einsum("eqm,em->eq", g.phi, forms._gather(lam, g))
            blk = np.einsum("eq,eqm,eqn->emn", g.w * np.exp(lamq) / dt,
                            g.phi, g.phi)
            for i, k in enumerate(g.elems):
                o = g.offsets[i]
                expect[o:o + g.ndof, o:o + g.ndof] = blk[i]
        assert np.abs(J - expect).max() < 1e-10 * np.abs(expect).max()

    def test_sparsity_face_neighbors_only(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        mesh = unit_voronoi_small
        model = isotropic(mesh, d=2.0, alpha=0.1)
        ctx = build_penalty(space, model, eta0=3.0)
        lam = space.project(lambda x, y: 0.2 * x)
        J = theta_jacobian(space, model, ctx, lam, lam, 0.1, 0.0, 1.0).tocoo()
        neighbors = {k: {k} for k in range(mesh.n_elements)}
        for f in mesh.interior_faces:
            kp, km = mesh.face_elems[f]
            neighbors[kp].add(km)
            neighbors[km].add(kp)

        def owner(dof):
            return int(np.searchsorted(space.offsets, dof, side="right") - 1)

        J.eliminate_zeros()
        for i, j in zip(J.row, J.col):
            assert owner(j) in neighbors[owner(i)]
        # structurally symmetric pattern
        pat = set(zip(J.row.tolist(), J.col.tolist()))
        assert all((j, i) in pat for i, j in pat)


class TestDGNorm:
    def test_zero(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        model = isotropic(unit_voronoi_small)
        ctx = build_penalty(space, model, eta0=1.0)
        assert dg_norm(space, model, ctx, np.zeros(space.n_dofs)) == 0.0

    def test_constant_dirichlet_value(self, unit_voronoi_small):
        # |v|_DG for v=1 equals sqrt(sum zeta |F|) over Dirichlet faces
        space = build_space(unit_voronoi_small, 1)
        mesh = unit_voronoi_small
        model = isotropic(mesh)
        ctx = build_penalty(space, model, eta0=1.0)
        one = space.project(lambda x, y: np.ones_like(x))
        expect = np.sqrt(sum(ctx.zeta_of(int(f)) * mesh.face_length[int(f)]
                             for f in mesh.dirichlet_faces))
        assert dg_norm(space, model, ctx, one) == pytest.approx(expect, rel=1e-10)


class TestEntropy:
    def test_zero_at_unit_concentration(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 2)
        lam = space.project(lambda x, y: np.zeros_like(x))
        assert abs(discrete_entropy(space, lam)) < 1e-12

    def test_closed_form_log2(self, unit_voronoi_small):
        space = build_space(unit_voronoi_small, 1)
        lam = space.project(lambda x, y: np.full_like(x, np.log(2.0)))
        assert discrete_entropy(space, lam) == pytest.approx(
            2.0 * (np.log(2.0) - 1.0) + 1.0, rel=1e-10)

    def test_density_convex_and_nonnegative(self, rng):
        s = lambda x: x * (np.log(x) - 1.0) + 1.0
        for _ in range(200):
            a, b = rng.uniform(1e-6, 10.0, 2)
            assert s(0.5 * (a + b)) <= 0.5 * (s(a) + s(b)) + 1e-12
            assert s(a) >= -1e-12

    def test_nonnegative_for_random_states(self, unit_voronoi_small, rng):
        space = build_space(unit_voronoi_small, 2)
        for _ in range(20):
            lam = rng.standard_normal(space.n_dofs)
            assert discrete_entropy(space, lam) >= -1e-12


class TestEstimateCI:
    def test_unit_square_dense_oracle(self):
        # independent dense eigensolve in the monomial basis {1, x, y}
        import scipy.linalg

        mesh = build_poly_mesh([UNIT_SQUARE])
        space = build_space(mesh, 1)
        got = estimate_CI(space)
        gx, gw = np.polynomial.legendre.leggauss(6)
        t = 0.5 * (gx + 1)
        w = 0.5 * gw

        def mono(x, y):
            return np.array([np.ones_like(x), x, y])

        X, Y = np.meshgrid(t, t, indexing="ij")
        WW = np.outer(w, w)
        vals = mono(X.ravel(), Y.ravel())
        V = np.einsum("iq,q,jq->ij", vals, WW.ravel(), vals)
        B = np.zeros((3, 3))
        for p0, p1 in (([0, 0], [1, 0]), ([1, 0], [1, 1]),
                       ([1, 1], [0, 1]), ([0, 1], [0, 0])):
            p0, p1 = np.array(p0, float), np.array(p1, float)
            pts = p0[None] + t[:, None] * (p1 - p0)[None]
            vv = mono(pts[:, 0], pts[:, 1])
            B += np.einsum("iq,q,jq->ij", vv, w * np.hypot(*(p1 - p0)), vv)
        scale = 1.0 / np.sqrt(2.0)   # p^2/h with p=1, h=sqrt(2)
        expect = scipy.linalg.eigh(B, scale * V, eigvals_only=True)[-1]
        assert got == pytest.approx(expect, rel=1e-10)

    def test_trace_eigenvalue_grows_with_p(self, unit_voronoi_small):
        # the normalized constant C(p) itself decreases (the p^2/h scaling
        # overshoots at low p); the underlying trace eigenvalue C(p) p^2 is
        # the monotone quantity, which also makes C(p) p^2/h valid for all
        # lower-degree functions (as the coercivity proof requires)
        vals = [estimate_CI(build_space(unit_voronoi_small, p))
                for p in range(1, 7)]
        eig = [c * p * p for p, c in enumerate(vals, start=1)]
        assert all(b >= a * (1.0 - 1e-12) for a, b in zip(eig, eig[1:]))
        assert all(b <= a for a, b in zip(vals, vals[1:]))


class TestMinConcentration:
    def test_positive_for_any_state(self, unit_voronoi_small, rng):
        space = build_space(unit_voronoi_small, 2)
        for _ in range(10):
            lam = 2.0 * rng.standard_normal(space.n_dofs)
            assert min_concentration(space, lam) > 0.0
