"""Verification harness: manufactured solution, travelling-wave oracle,
error norms, convergence studies, and concentration post-processing.

The CSV schemas written here (header row mandatory) are:

* convergence tables: ``kind,param,dofs,err_L2,err_DG,rate_L2,rate_DG``
* time series: ``t,S_h,min_c,mean_c_global,mean_c_label_<l>...``
* activation times: ``element_id,label,t_activate`` (``NA`` when an element
  never crosses the critical concentration)
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import forms, solver
from .dgspace import _gather, build_space
from .forms import ModelData, build_penalty
from .mesh import generate_voronoi
from .solver import RunConfig, Trajectory, run


# ---------------------------------------------------------------------------
# Test case 1: manufactured solution on the unit square


@dataclass
class ManufacturedCase:
    """lam = log((cos(pi x) cos(pi y) + 2) e^{-t}) with D = I, alpha = 0.1.

    The forcing closes the strong equation exactly; Dirichlet data is taken
    from the exact solution on the whole boundary.
    """

    alpha: float = 0.1

    def c_exact(self, x, y, t):
        return (np.cos(np.pi * x) * np.cos(np.pi * y) + 2.0) * np.exp(-t)

    def lam_exact(self, x, y, t):
        return np.log(self.c_exact(x, y, t))

    def grad_c_exact(self, x, y, t):
        s = np.pi * np.exp(-t)
        return np.stack([-s * np.sin(np.pi * x) * np.cos(np.pi * y),
                         -s * np.cos(np.pi * x) * np.sin(np.pi * y)], axis=-1)

    def forcing(self, x, y, t):
        c = self.c_exact(x, y, t)
        lap = -2.0 * np.pi**2 * (c - 2.0 * np.exp(-t))
        return -c - lap - self.alpha * c * (1.0 - c)

    def model_for(self, mesh) -> ModelData:
        return ModelData.isotropic(mesh, 1.0, self.alpha, forcing=self.forcing,
                                   dirichlet=self.lam_exact)


def manufactured_case(alpha=0.1) -> ManufacturedCase:
    return ManufacturedCase(alpha=alpha)


# ---------------------------------------------------------------------------
# Test case 2: travelling-wave profile from the equivalent ODE system


@dataclass
class WaveParams:
    d: float = 1e-3
    alpha: float = 1.0
    v: float = 0.1
    psi0: float = 1.0
    chi0: float = -1e-2
    xi_max: float = 6.0

    def __post_init__(self):
        if self.d <= 0.0 or self.v <= 0.0:
            raise ValueError("wave parameters require d > 0 and v > 0")


class WaveProfile:
    """Integrated profile psi(xi), chi(xi) = psi'(xi) on [0, xi_max].

    ``c(x, y, t) = psi(x - v t)``; the argument is clamped to the integrated
    range, so the profile is extended by psi(0) to the left of the front
    (the physical plateau at c = 1) and by its last value to the right.
    """

    def __init__(self, params: WaveParams, xi, psi, chi):
        self.params = params
        self.xi = xi
        self.psi = psi
        self.chi = chi

    def psi_at(self, xi):
        return np.interp(xi, self.xi, self.psi, left=self.psi[0], right=self.psi[-1])

    def chi_at(self, xi):
        return np.interp(xi, self.xi, self.chi, left=0.0, right=self.chi[-1])

    def c(self, x, y, t):
        return self.psi_at(np.asarray(x, dtype=float) - self.params.v * t)

    def grad_c(self, x, y, t):
        gx = self.chi_at(np.asarray(x, dtype=float) - self.params.v * t)
        out = np.zeros(np.shape(gx) + (2,))
        out[..., 0] = gx
        return out

    def lam_dirichlet(self, floor=1e-10):
        def g(x, y, t):
            return np.log(np.maximum(self.c(x, y, t), floor))
        return g


_oracle_cache = {}


def wave_oracle(params: WaveParams = None, n_points=None, max_step=1e-5) -> WaveProfile:
    """Integrate chi' = -(v/d) chi + psi (psi - 1)/d, psi' = chi with RK4.

    The fixed step is at most `max_step`.  A profile leaving [-0.1, 1.1]
    aborts (the parameters then do not produce a monotone front).
    Profiles are cached per parameter set.
    """
    params = params or WaveParams()
    key = (params.d, params.alpha, params.v, params.psi0, params.chi0,
           params.xi_max, n_points, max_step)
    if key in _oracle_cache:
        return _oracle_cache[key]
    n = max(int(math.ceil(params.xi_max / max_step)), 2)
    if n_points is not None:
        n = max(n, int(n_points) - 1)
    h = params.xi_max / n
    vd = params.v / params.d
    inv_d = 1.0 / params.d

    def rhs(psi, chi):
        return chi, -vd * chi + inv_d * psi * (psi - 1.0)

    psi = np.empty(n + 1)
    chi = np.empty(n + 1)
    psi[0], chi[0] = params.psi0, params.chi0
    p, q = params.psi0, params.chi0
    for i in range(n):
        k1p, k1q = rhs(p, q)
        k2p, k2q = rhs(p + 0.5 * h * k1p, q + 0.5 * h * k1q)
        k3p, k3q = rhs(p + 0.5 * h * k2p, q + 0.5 * h * k2q)
        k4p, k4q = rhs(p + h * k3p, q + h * k3q)
        p += h * (k1p + 2.0 * k2p + 2.0 * k3p + k4p) / 6.0
        q += h * (k1q + 2.0 * k2q + 2.0 * k3q + k4q) / 6.0
        if not -0.1 <= p <= 1.1:
            raise ValueError(
                f"wave profile left [-0.1, 1.1] at xi={h * (i + 1):.4g} "
                f"(psi={p:.4g}); parameters are inconsistent with a front")
        psi[i + 1], chi[i + 1] = p, q
    profile = WaveProfile(params, np.linspace(0.0, params.xi_max, n + 1), psi, chi)
    _oracle_cache[key] = profile
    return profile


# ---------------------------------------------------------------------------
# error norms in the concentration variable


def error_norms(space, model, ctx, state, c_exact, grad_c_exact, t,
                variable="lambda"):
    """L2 and DG norms of c_h - c_exact (c_h = e^lam or the c dofs directly).

    Interior jumps of the exact solution cancel; Dirichlet jumps of the
    error use the homogeneous convention (plain trace of the error).
    """
    vec = np.asarray(state, dtype=float)
    l2 = 0.0
    dg = 0.0
    for g, Dg in zip(space.vol_groups, ctx.vol_Dg):
        U = _gather(vec, g)
        uq = np.einsum("eqm,em->eq", g.phi, U)
        gu = np.einsum("eqmx,em->eqx", g.gphi, U)
        if variable == "lambda":
            cq = np.exp(uq)
            gc = cq[..., None] * gu
        else:
            cq = uq
            gc = gu
        ce = c_exact(g.x[..., 0], g.x[..., 1], t)
        ge = grad_c_exact(g.x[..., 0], g.x[..., 1], t)
        err = cq - ce
        gerr = gc - ge
        l2 += np.einsum("eq,eq->", g.w, err**2)
        Dge = np.einsum("exy,eqy->eqx", model.diffusion[g.elems], gerr)
        dg += np.einsum("eq,eqx,eqx->", g.w, gerr, Dge)

    def trace_c(g, side):
        U = _gather_side(vec, g, side)
        phi = g.phi_p if side == "p" else g.phi_m
        uq = np.einsum("fqm,fm->fq", phi, U)
        return np.exp(uq) if variable == "lambda" else uq

    for g in space.face_groups_interior:
        jump = trace_c(g, "p") - trace_c(g, "m")
        dg += np.sum(g.w * ctx.zeta[g.faces][:, None] * jump**2)
    for g in space.face_groups_dirichlet:
        err = trace_c(g, "p") - c_exact(g.x[..., 0], g.x[..., 1], t)
        dg += np.sum(g.w * ctx.zeta[g.faces][:, None] * err**2)
    return float(np.sqrt(l2)), float(np.sqrt(dg))


def _gather_side(vec, g, side):
    return forms._gather_side(vec, g, side)


# ---------------------------------------------------------------------------
# convergence studies on Test case 1


@dataclass
class ConvergenceRow:
    param: float
    h: float
    dofs: int
    err_L2: float
    err_DG: float
    rate_L2: float = np.nan
    rate_DG: float = np.nan
    error: str = ""
    min_c: float = np.nan     # min over the run of the per-step minimum


@dataclass
class ConvergenceTable:
    kind: str
    rows: list

    def observed_rates(self, skip_coarsest=0):
        """Least-squares slope of log(err) against log(h) (or log(dt)).

        `skip_coarsest` drops leading (pre-asymptotic) rows from the fit.
        """
        ok = [r for r in self.rows if np.isfinite(r.err_L2)][skip_coarsest:]
        if len(ok) < 2:
            raise ValueError("need at least two valid rows to fit a rate")
        x = np.log([r.h if self.kind == "h" else r.param for r in ok])
        l2 = np.polyfit(x, np.log([r.err_L2 for r in ok]), 1)[0]
        dgr = np.polyfit(x, np.log([r.err_DG for r in ok]), 1)[0]
        return float(l2), float(dgr)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("kind,param,dofs,err_L2,err_DG,rate_L2,rate_DG\n")
            for r in self.rows:
                fh.write(f"{self.kind},{float(r.param)!r},{int(r.dofs)},"
                         f"{float(r.err_L2)!r},{float(r.err_DG)!r},"
                         f"{float(r.rate_L2)!r},{float(r.rate_DG)!r}\n")


class MeshCache:
    """Deterministic cache of generated meshes keyed by their parameters."""

    def __init__(self):
        self._store = {}

    def voronoi(self, n, domain=(0.0, 0.0, 1.0, 1.0), seed=0, lloyd_iters=100,
                boundary_tags="dirichlet"):
        tag_key = boundary_tags if isinstance(boundary_tags, str) else id(boundary_tags)
        key = (n, tuple(domain), seed, lloyd_iters, tag_key)
        if key not in self._store:
            self._store[key] = generate_voronoi(n, domain, seed, lloyd_iters,
                                                boundary_tags=boundary_tags)
        return self._store[key]


_default_mesh_cache = MeshCache()


def convergence_study(kind, sweep, *, p=1, n_elements=30, theta=0.5, dt=1e-6,
                      t_final=2e-5, eta0=10.0, seed=0, lloyd_iters=100,
                      newton_tol=1e-10, mesh_cache=None,
                      case: ManufacturedCase | None = None) -> ConvergenceTable:
    """Run Test case 1 over a sweep in h (element counts), p, or dt.

    Solver failures are recorded in the affected row and the study continues.
    """
    sweep = list(sweep)
    if not sweep:
        raise ValueError("sweep must be non-empty")
    if any(b <= a for a, b in zip(sweep, sweep[1:])) and \
       any(b >= a for a, b in zip(sweep, sweep[1:])):
        raise ValueError("sweep must be monotone")
    cache = mesh_cache or _default_mesh_cache
    case = case or manufactured_case()
    rows = []
    for value in sweep:
        if kind == "h":
            mesh = cache.voronoi(int(value), seed=seed, lloyd_iters=lloyd_iters)
            deg, dt_run, t_run = p, dt, t_final
        elif kind == "p":
            mesh = cache.voronoi(int(n_elements), seed=seed, lloyd_iters=lloyd_iters)
            deg, dt_run, t_run = int(value), dt, t_final
        elif kind == "dt":
            mesh = cache.voronoi(int(n_elements), seed=seed, lloyd_iters=lloyd_iters)
            deg, dt_run, t_run = p, float(value), t_final
        else:
            raise ValueError(f"unknown study kind {kind!r}")
        space = build_space(mesh, deg)
        model = case.model_for(mesh)
        ctx = build_penalty(space, model, eta0=eta0)
        cfg = RunConfig(theta=theta, dt=dt_run, t_final=t_run, eta0=eta0,
                        newton=solver.NewtonParams(tol=newton_tol))
        lam0 = space.project(lambda x, y: case.lam_exact(x, y, 0.0))
        row = ConvergenceRow(param=float(value), h=float(mesh.h_K.max()),
                             dofs=space.n_dofs, err_L2=np.nan, err_DG=np.nan)
        try:
            traj = run(space, model, cfg, lam0=lam0, ctx=ctx)
            l2, dgn = error_norms(space, model, ctx, traj.final, case.c_exact,
                                  case.grad_c_exact, cfg.t_final)
            row.err_L2, row.err_DG = l2, dgn
            row.min_c = min(s.min_c for s in traj.stats)
        except (solver.SolverError, forms.FormError) as exc:
            row.error = str(exc)
        rows.append(row)

    for prev, cur in zip(rows, rows[1:]):
        if not (np.isfinite(prev.err_L2) and np.isfinite(cur.err_L2)):
            continue
        if kind == "h":
            denom = math.log(prev.h / cur.h)
        elif kind == "dt":
            denom = math.log(prev.param / cur.param)
        else:
            denom = cur.param - prev.param   # per-degree log10 drop for p sweeps
            cur.rate_L2 = math.log10(prev.err_L2 / cur.err_L2) / denom
            cur.rate_DG = math.log10(prev.err_DG / cur.err_DG) / denom
            continue
        cur.rate_L2 = math.log(prev.err_L2 / cur.err_L2) / denom
        cur.rate_DG = math.log(prev.err_DG / cur.err_DG) / denom
    return ConvergenceTable(kind=kind, rows=rows)


# ---------------------------------------------------------------------------
# concentration post-processing


def two_label_disk(n_points=1000, radius=30.0, split_radius=15.0,
                   boundary="neumann"):
    """Synthetic two-label triangulated disk (label 1 inside, 0 outside).

    Deterministic sunflower point layout triangulated by Delaunay; the hull
    polygon approximates the circle.  Used as the desk-scale analogue of a
    segmented white/grey tissue slice.
    """
    from scipy.spatial import Delaunay

    from .agglomerate import TriMesh

    k = np.arange(n_points)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    r = radius * np.sqrt((k + 0.5) / n_points)
    th = 2.0 * np.pi * k / golden**2
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    tri = Delaunay(pts)
    simplices = tri.simplices.copy()
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    areas = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    flip = areas < 0.0
    simplices[flip] = simplices[flip][:, ::-1]
    centroids = pts[simplices].mean(axis=1)
    labels = (np.hypot(centroids[:, 0], centroids[:, 1]) < split_radius).astype(int)

    owners = {}
    for t, s in enumerate(simplices):
        for i in range(3):
            aa, bb = int(s[i]), int(s[(i + 1) % 3])
            key = (aa, bb) if aa < bb else (bb, aa)
            owners.setdefault(key, []).append(t)
    tags = {key: boundary for key, own in owners.items() if len(own) == 1}
    return TriMesh(pts, simplices, labels, tags)


def element_mean_concentration(space, state, variable="lambda"):
    """Per-element area average of the concentration."""
    vec = np.asarray(state, dtype=float)
    out = np.empty(space.mesh.n_elements)
    for g in space.vol_groups:
        uq = np.einsum("eqm,em->eq", g.phi, _gather(vec, g))
        cq = np.exp(uq) if variable == "lambda" else uq
        out[g.elems] = np.einsum("eq,eq->e", g.w, cq) / space.mesh.measure[g.elems]
    return out


def activation_time(trajectory: Trajectory, space, c_crit=0.95):
    """Earliest output time at which each element's mean concentration
    exceeds c_crit; NaN marks elements that never activate."""
    variable = "lambda" if trajectory.scheme == "exp_transform" else "c"
    out = np.full(space.mesh.n_elements, np.nan)
    for t, state in zip(trajectory.times, trajectory.states):
        means = element_mean_concentration(space, state, variable)
        newly = np.isnan(out) & (means > c_crit)
        out[newly] = t
    return out


def region_means(trajectory: Trajectory, space):
    """Area-weighted mean concentration per label and globally, per output time.

    Returns (times, global_means, {label: means}).
    """
    variable = "lambda" if trajectory.scheme == "exp_transform" else "c"
    mesh = space.mesh
    labels = np.unique(mesh.element_label)
    times = np.asarray(trajectory.times)
    glob = np.empty(len(times))
    per_label = {int(l): np.empty(len(times)) for l in labels}
    for i, state in enumerate(trajectory.states):
        means = element_mean_concentration(space, state, variable)
        glob[i] = np.sum(means * mesh.measure) / np.sum(mesh.measure)
        for l in labels:
            sel = mesh.element_label == l
            per_label[int(l)][i] = (np.sum(means[sel] * mesh.measure[sel])
                                    / np.sum(mesh.measure[sel]))
    return times, glob, per_label


@functools.lru_cache(maxsize=None)
def _wave_tags(domain):
    from .mesh import rectangle_side_tags
    return rectangle_side_tags(domain, left="dirichlet", right="neumann",
                               bottom="neumann", top="neumann")


def find_wave_mesh(h_target, domain=(0.0, 0.0, 5.0, 1.0), tol=0.05,
                   lloyd_iters=5, seeds=range(10), mesh_cache=None):
    """Voronoi mesh on the wave rectangle whose max h_K matches a target.

    Sweeps seed counts (and RNG seeds) deterministically until max h_K is
    within `tol` relative of the target; the left edge is Dirichlet and the
    other sides Neumann, matching the travelling-wave setup.  The default
    mild Lloyd relaxation reproduces the published mesh sizes at the
    published element counts (h = 0.72802 at 30 cells, 0.41057 at 100).
    """
    cache = mesh_cache or _default_mesh_cache
    area = (domain[2] - domain[0]) * (domain[3] - domain[1])
    n_guess = max(2, round(area / (0.30 * h_target**2)))
    tags = _wave_tags(tuple(domain))
    best = None
    candidates = sorted(set(max(2, round(n_guess * f))
                            for f in (1.0, 0.9, 1.1, 0.8, 1.2, 0.65, 1.4, 0.5, 1.7)),
                        key=lambda n: abs(n - n_guess))
    for n in candidates:
        for seed in seeds:
            mesh = cache.voronoi(n, domain=domain, seed=seed,
                                 lloyd_iters=lloyd_iters, boundary_tags=tags)
            rel = abs(mesh.h_K.max() - h_target) / h_target
            if best is None or rel < best[0]:
                best = (rel, mesh)
            if rel <= tol:
                return mesh
    raise ValueError(
        f"no Voronoi mesh with max h within {tol:.0%} of {h_target} found "
        f"(best miss {best[0]:.1%})")


def fit_front_speed(act_times, centroids_x, t_min=0.0):
    """Front speed from activation times: slope of x against t_activate.

    Elements activated at or before t_min (the initial transient and the
    seeded region) are excluded.
    """
    ok = np.isfinite(act_times) & (act_times > t_min)
    if np.count_nonzero(ok) < 3:
        raise ValueError("too few activated elements to fit a front speed")
    slope = np.polyfit(act_times[ok], centroids_x[ok], 1)[0]
    return float(slope)


# ---------------------------------------------------------------------------
# CSV writers shared with the CLI


def write_series_csv(path, times, entropy, min_c, mean_global, label_means):
    labels = sorted(label_means)
    with open(path, "w") as fh:
        cols = ["t", "S_h", "min_c", "mean_c_global"]
        cols += [f"mean_c_label_{l}" for l in labels]
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(times):
            row = [repr(float(t)), repr(float(entropy[i])), repr(float(min_c[i])),
                   repr(float(mean_global[i]))]
            row += [repr(float(label_means[l][i])) for l in labels]
            fh.write(",".join(row) + "\n")


def write_activation_csv(path, act_times, labels):
    with open(path, "w") as fh:
        fh.write("element_id,label,t_activate\n")
        for k, t in enumerate(act_times):
            val = "NA" if not np.isfinite(t) else repr(float(t))
            fh.write(f"{k},{int(labels[k])},{val}\n")


def series_from_trajectory(trajectory: Trajectory, space):
    """Series at the output cadence: entropy, min c, global and label means."""
    variable = "lambda" if trajectory.scheme == "exp_transform" else "c"
    times, glob, per_label = region_means(trajectory, space)
    entropy = []
    min_c = []
    for state in trajectory.states:
        if variable == "lambda":
            entropy.append(forms.discrete_entropy(space, state))
            min_c.append(forms.min_concentration(space, state))
        else:
            entropy.append(np.nan)
            min_c.append(solver._min_nodal(space, state))
    return times, np.array(entropy), np.array(min_c), glob, per_label
