"""Time integration of the fully discrete system.

Two schemes are provided behind one selector:

* ``exp_transform`` -- the positivity-preserving theta scheme in the
  transformed variable lam (c = e^lam), one damped Newton solve per step;
* ``baseline`` -- a non-preserving comparison scheme that advances the
  concentration c directly with implicit SIP diffusion and a semi-implicit
  reaction (implicit in the linear part, the quadratic term lagged as
  alpha * c_new * c_old), one linear solve per step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import forms
from .dgspace import DGSpace, _gather
from .forms import (FormError, ModelData, PenaltyContext, State,
                    ThetaStepProblem, discrete_entropy, min_concentration)


class SolverError(Exception):
    """Newton failure, singular linear system, or invalid run configuration."""


@dataclass
class NewtonParams:
    tol: float = 1e-10          # absolute tolerance on the residual 2-norm
    max_iters: int = 50
    relaxation: float = 1.0     # omega in (0, 1]

    def __post_init__(self):
        if self.tol <= 0.0:
            raise SolverError("Newton tolerance must be positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise SolverError("relaxation must lie in (0, 1]")


@dataclass
class RunConfig:
    theta: float
    dt: float
    t_final: float
    eta0: float | str = 1.0     # penalty constant, or 'auto'
    epsilon: float = 0.0
    newton: NewtonParams = field(default_factory=NewtonParams)
    scheme: str = "exp_transform"
    quad_extra: int = 4         # element quadrature order is 2p + quad_extra
    output_every: int = 1
    lambda_floor: float = 1e-10  # concentration floor used when taking logs
    divergence_guard: float = 1e3

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise SolverError(f"theta out of range: {self.theta}")
        if self.dt <= 0.0:
            raise SolverError("dt must be positive")
        if self.t_final <= 0.0 or self.dt > self.t_final:
            raise SolverError("run requires dt <= T (at least one step)")
        if self.epsilon < 0.0:
            raise SolverError("epsilon must be non-negative")
        if self.scheme not in ("exp_transform", "baseline"):
            raise SolverError(f"unknown scheme {self.scheme!r}")
        if self.output_every < 1:
            raise SolverError("output_every must be >= 1")

    @property
    def n_steps(self):
        n = int(np.ceil(self.t_final / self.dt - 1e-12))
        return max(n, 1)

    @property
    def dt_effective(self):
        return self.t_final / self.n_steps


@dataclass
class StepStats:
    step: int
    time: float
    newton_iters: int
    residual_norm: float
    min_c: float
    entropy: float
    wall_time: float
    residual_history: list


@dataclass
class Trajectory:
    """States at the output cadence plus per-step statistics."""

    times: list
    states: list                 # dof vectors (lam for exp_transform, c for baseline)
    stats: list                  # StepStats for every step
    scheme: str

    @property
    def final(self):
        return self.states[-1]


def initial_lambda(space: DGSpace, c0, floor=1e-10) -> np.ndarray:
    """Project lam0 = log(max(c0, floor)); c0 must be a non-negative field."""
    if floor <= 0.0:
        raise SolverError("concentration floor must be positive")

    def logc(x, y):
        c = np.asarray(c0(x, y), dtype=float)
        if np.any(c < 0.0):
            bad = np.argwhere(c < 0.0)[0]
            raise SolverError(
                f"initial concentration is negative ({c[tuple(bad)]:.3g}) at a "
                "quadrature point; concentrations must be >= 0")
        return np.log(np.maximum(c, floor))

    return space.project(logc)


def cellwise_lambda(space: DGSpace, cell_values, floor=1e-10) -> np.ndarray:
    """lam dofs for a piecewise-constant concentration given per element."""
    cell_values = np.asarray(cell_values, dtype=float)
    if np.any(cell_values < 0.0):
        raise SolverError("cellwise concentrations must be >= 0")
    lam = np.log(np.maximum(cell_values, floor))
    out = np.zeros(space.n_dofs)
    for g in space.vol_groups:
        # only the constant mode (value 1/sqrt(|B_K|)) is populated
        box = space.bbox[g.elems]
        area = (box[:, 2] - box[:, 0]) * (box[:, 3] - box[:, 1])
        out[g.offsets] = lam[g.elems] * np.sqrt(area)
    return out


def step_theta(space, model, ctx, lam_old, t_old, cfg: RunConfig,
               dt=None) -> tuple[np.ndarray, StepStats]:
    """Advance one theta step with the damped (relaxed) Newton method.

    Convergence is declared on the absolute 2-norm of the time-increment
    residual (the theta-step residual multiplied by dt); in that convention
    the literature tolerances 1e-10 / 1e-6 are attainable for any dt.  The
    Newton direction itself comes from the frozen-penalty Jacobian and is
    independent of the scaling.
    """
    dt = cfg.dt_effective if dt is None else dt
    wall = time.perf_counter()
    prob = ThetaStepProblem(space, model, ctx, lam_old, t_old, t_old + dt,
                            cfg.theta, cfg.epsilon)
    lam = np.asarray(lam_old, dtype=float).copy()
    history = []
    nt = cfg.newton
    converged = False
    for it in range(nt.max_iters + 1):
        eta = prob.frozen_eta(lam)
        if it == nt.max_iters:
            r = prob.residual(lam, eta_frozen=eta)
            rnorm = dt * float(np.linalg.norm(r))
            history.append(rnorm)
            converged = rnorm <= nt.tol
            break
        r, J = prob.residual_and_jacobian(lam, eta_frozen=eta)
        rnorm = dt * float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= nt.tol:
            converged = True
            break
        try:
            delta = spla.splu(J.tocsc()).solve(-r)
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian at t={t_old:.6g}: {exc}") from exc
        lam = lam + nt.relaxation * delta
        if np.max(np.abs(lam)) > cfg.divergence_guard:
            raise SolverError(
                f"Newton diverged at t={t_old:.6g}: max |lam| = "
                f"{np.max(np.abs(lam)):.3g} exceeds the guard "
                f"{cfg.divergence_guard:g}; residual history {history}")
    if not converged:
        raise SolverError(
            f"Newton did not reach tol={nt.tol:g} in {nt.max_iters} iterations "
            f"at t={t_old:.6g}; residual history {history}")
    stats = StepStats(
        step=-1, time=t_old + dt, newton_iters=len(history) - 1,
        residual_norm=history[-1], min_c=min_concentration(space, lam),
        entropy=discrete_entropy(space, lam),
        wall_time=time.perf_counter() - wall, residual_history=history)
    return lam, stats


# ---------------------------------------------------------------------------
# baseline comparison scheme (works on c directly; not positivity-preserving)


class BaselineOperator:
    """Constant matrices of the baseline scheme: DG mass and SIP diffusion."""

    def __init__(self, space, model, ctx):
        self.space = space
        self.model = model
        self.ctx = ctx
        self.mass = self._mass_matrix()
        self.stiff = self._sip_matrix()

    def _mass_matrix(self):
        space = self.space
        rows, cols, data = [], [], []
        for g in space.vol_groups:
            m = g.ndof
            blk = np.einsum("eqm,eq,eqn->emn", g.phi, g.w, g.phi)
            r = np.broadcast_to(g.offsets[:, None, None]
                                + np.arange(m)[None, :, None], blk.shape)
            c = np.broadcast_to(g.offsets[:, None, None]
                                + np.arange(m)[None, None, :], blk.shape)
            rows.append(r.ravel())
            cols.append(c.ravel())
            data.append(blk.ravel())
        n = space.n_dofs
        return sp.coo_matrix((np.concatenate(data),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).tocsc()

    def _sip_matrix(self):
        space, ctx = self.space, self.ctx
        rows, cols = ctx.pattern()
        data = []
        for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
            data.append(np.einsum("eqmx,eq,eqnx->emn", g.gphi, g.w, Dg).ravel())
        for g, (BgnP, BgnM) in zip(space.face_groups_interior, ctx.int_Bgn):
            zeta = ctx.zeta[g.faces][:, None]
            wq = g.w
            for phi_s, sgn_s, Bgn_s in ((g.phi_p, 1.0, BgnP), (g.phi_m, -1.0, BgnM)):
                for phi_t, sgn_t, Bgn_t in ((g.phi_p, 1.0, BgnP), (g.phi_m, -1.0, BgnM)):
                    blk = -0.5 * sgn_s * np.einsum("fq,fqm,fqn->fmn", wq, phi_s, Bgn_t)
                    blk += -0.5 * sgn_t * np.einsum("fq,fqm,fqn->fmn", wq, Bgn_s, phi_t)
                    blk += sgn_s * sgn_t * np.einsum("fq,fqm,fqn->fmn",
                                                     wq * zeta, phi_s, phi_t)
                    data.append(blk.ravel())
        for g, Bgn in zip(space.face_groups_dirichlet, ctx.dir_Bgn):
            zeta = ctx.zeta[g.faces][:, None]
            wq = g.w
            blk = -np.einsum("fq,fqm,fqn->fmn", wq, g.phi_p, Bgn)
            blk += -np.einsum("fq,fqm,fqn->fmn", wq, Bgn, g.phi_p)
            blk += np.einsum("fq,fqm,fqn->fmn", wq * zeta, g.phi_p, g.phi_p)
            data.append(blk.ravel())
        n = space.n_dofs
        return sp.coo_matrix((np.concatenate(data), (rows, cols)),
                             shape=(n, n)).tocsc()

    def dirichlet_rhs(self, t):
        """SIP lifting of the Dirichlet datum c_D = e^{lam_D} at time t."""
        space, model, ctx = self.space, self.model, self.ctx
        r = np.zeros(space.n_dofs)
        for g, Bgn in zip(space.face_groups_dirichlet, ctx.dir_Bgn):
            gval = np.exp(model.dirichlet_values(g.x[..., 0], g.x[..., 1], t))
            zeta = ctx.zeta[g.faces][:, None]
            contrib = -np.einsum("fq,fqm->fm", g.w * gval, Bgn)
            contrib += np.einsum("fq,fqm->fm", g.w * gval * zeta, g.phi_p)
            idx = g.off_p[:, None] + np.arange(g.ndof_p)[None, :]
            np.add.at(r, idx, contrib)
        return r

    def reaction_matrix(self, c_old):
        """Mass matrix weighted by alpha (1 - c_old) for the lagged reaction."""
        space = self.space
        rows, cols, data = [], [], []
        for g in space.vol_groups:
            m = g.ndof
            cq = np.einsum("eqm,em->eq", g.phi, _gather(c_old, g))
            wq = g.w * self.model.alpha[g.elems][:, None] * (1.0 - cq)
            blk = np.einsum("eqm,eq,eqn->emn", g.phi, wq, g.phi)
            r = np.broadcast_to(g.offsets[:, None, None]
                                + np.arange(m)[None, :, None], blk.shape)
            c = np.broadcast_to(g.offsets[:, None, None]
                                + np.arange(m)[None, None, :], blk.shape)
            rows.append(r.ravel())
            cols.append(c.ravel())
            data.append(blk.ravel())
        n = space.n_dofs
        return sp.coo_matrix((np.concatenate(data),
                              (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).tocsc()

    def forcing_rhs(self, t):
        space, model = self.space, self.model
        r = np.zeros(space.n_dofs)
        if model.forcing is None:
            return r
        for g in space.vol_groups:
            fq = model.forcing_values(g.x[..., 0], g.x[..., 1], t)
            contrib = np.einsum("eq,eqm->em", g.w * fq, g.phi)
            idx = g.offsets[:, None] + np.arange(g.ndof)[None, :]
            np.add.at(r, idx, contrib)
        return r


def step_baseline(op: BaselineOperator, c_old, t_old, dt) -> np.ndarray:
    """One semi-implicit baseline step: (M/dt + A - R(c_old)) c_new = M c_old/dt + F."""
    A = op.mass / dt + op.stiff - op.reaction_matrix(c_old)
    rhs = op.mass @ c_old / dt + op.dirichlet_rhs(t_old + dt) + op.forcing_rhs(t_old + dt)
    try:
        return spla.splu(A.tocsc()).solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"baseline linear solve failed at t={t_old:.6g}: {exc}") from exc


# ---------------------------------------------------------------------------


def run(space, model, cfg: RunConfig, lam0=None, c0=None,
        ctx: PenaltyContext | None = None) -> Trajectory:
    """Advance from t=0 to t=T in ceil(T/dt) uniform steps.

    The initial condition is given either as a dof vector `lam0` (in the
    transformed variable) or as a concentration field callable `c0`; the
    baseline scheme works directly on c = e^lam.
    """
    if ctx is None:
        ctx = forms.build_penalty(space, model,
                                  eta0=10.0 if cfg.scheme == "baseline" else cfg.eta0)
    if lam0 is None:
        if c0 is None:
            raise SolverError("provide lam0 or c0")
        lam0 = initial_lambda(space, c0, floor=cfg.lambda_floor)
    lam0 = np.asarray(lam0, dtype=float)

    n = cfg.n_steps
    dt = cfg.dt_effective
    if cfg.scheme == "baseline":
        op = BaselineOperator(space, model, ctx)
        state = space.project(c0) if c0 is not None else None
        if state is None:
            with np.errstate(over="ignore"):
                state = _exp_project(space, lam0)
    else:
        state = lam0

    times = [0.0]
    states = [state.copy()]
    stats = []
    for k in range(n):
        t_old = k * dt
        if cfg.scheme == "exp_transform":
            state, st = step_theta(space, model, ctx, state, t_old, cfg, dt=dt)
        else:
            wall = time.perf_counter()
            state = step_baseline(op, state, t_old, dt)
            if not np.all(np.isfinite(state)):
                raise SolverError(f"baseline state is not finite at t={t_old + dt:.6g}")
            st = StepStats(step=k, time=t_old + dt, newton_iters=0,
                           residual_norm=0.0,
                           min_c=_min_nodal(space, state),
                           entropy=np.nan,
                           wall_time=time.perf_counter() - wall,
                           residual_history=[])
        st.step = k
        stats.append(st)
        if (k + 1) % cfg.output_every == 0 or k == n - 1:
            times.append(t_old + dt)
            states.append(state.copy())
    return Trajectory(times=times, states=states, stats=stats, scheme=cfg.scheme)


def _exp_project(space, lam):
    """Elementwise L2 projection of exp(lam) for a DG state lam."""
    out = np.empty(space.n_dofs)
    for g in space.vol_groups:
        lamq = np.einsum("eqm,em->eq", g.phi, _gather(lam, g))
        wphi = g.phi * g.w[:, :, None]
        M = np.einsum("eqm,eqn->emn", wphi, g.phi)
        b = np.einsum("eqm,eq->em", wphi, np.exp(lamq))
        coef = np.linalg.solve(M, b[..., None])[..., 0]
        idx = g.offsets[:, None] + np.arange(g.ndof)[None, :]
        out[idx] = coef
    return out


def _min_nodal(space, c_vec):
    """Minimum of a c-variable DG state over quadrature points and vertices."""
    m = np.inf
    for g in space.vol_groups:
        U = _gather(c_vec, g)
        m = min(m, np.min(np.einsum("eqm,em->eq", g.phi, U)))
        m = min(m, np.min(np.einsum("evm,em->ev", g.vert_phi, U)))
    return float(m)
