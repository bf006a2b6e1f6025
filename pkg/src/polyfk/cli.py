"""Command-line front end.

Subcommands: ``run`` (time integration from a config file), ``study``
(convergence sweeps), ``wave`` (travelling-wave benchmark), ``agglomerate``
(coarsen a labeled triangle mesh), ``mesh-info`` (regularity report).

Every run directory receives the normalized config, a metadata file, the
time-series/activation CSVs and legacy-VTK snapshots.  Existing run
directories are not overwritten unless ``--force`` is given.  The
environment variable POLYFK_THREADS caps the BLAS thread pool used by the
dense kernels inside assembly.
"""

from __future__ import annotations

import argparse
import os
import platform
import subprocess
import sys

import numpy as np

from . import __version__, config, forms, solver, verify, vtkio
from .agglomerate import agglomerate
from .mesh import MeshError, mesh_metrics, read_trimesh, write_mesh
from .dgspace import build_space


def _cap_threads():
    cap = os.environ.get("POLYFK_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _prepare_outdir(path, force):
    if os.path.exists(path):
        if not force and os.listdir(path):
            raise SystemExit(
                f"error: output directory {path!r} exists; re-run with --force")
    else:
        os.makedirs(path)


def _git_commit():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() if out.returncode == 0 else "unknown"
    except OSError:
        return "unknown"


def _write_metadata(outdir, cfg, extra=None):
    with open(os.path.join(outdir, "metadata.txt"), "w") as fh:
        fh.write(f"polyfk {__version__}\n")
        fh.write(f"python {platform.python_version()} numpy {np.__version__}\n")
        fh.write(f"machine {platform.machine()} {platform.system()}\n")
        fh.write(f"commit {_git_commit()}\n")
        fh.write("sup-norm approximation: max |lam| over volume/face quadrature "
                 "points and vertices\n")
        fh.write("penalty trace factor: evaluated pointwise per face quadrature "
                 "point\n")
        fh.write(f"element quadrature order: 2p + {cfg.quad_extra}\n")
        fh.write(f"newton convergence: dt-scaled residual 2-norm <= {cfg.newton.tol!r}\n")
        for line in (extra or []):
            fh.write(line + "\n")


def _write_run_outputs(outdir, prefix, space, traj, snapshots=()):
    times, entropy, min_c, glob, per_label = verify.series_from_trajectory(traj, space)
    verify.write_series_csv(os.path.join(outdir, f"{prefix}_series.csv"),
                            times, entropy, min_c, glob, per_label)
    variable = "lambda" if traj.scheme == "exp_transform" else "c"
    act = verify.activation_time(traj, space)
    verify.write_activation_csv(os.path.join(outdir, f"{prefix}_activation.csv"),
                                act, space.mesh.element_label)
    tarr = np.asarray(traj.times)
    wanted = list(snapshots) + [traj.times[-1]]
    written = set()
    for t in wanted:
        i = int(np.argmin(np.abs(tarr - t)))
        if i in written:
            continue
        written.add(i)
        vtkio.write_fields(
            os.path.join(outdir, f"{prefix}_t{tarr[i]:.6g}.vtk"),
            space, traj.states[i], variable=variable,
            activation=act if i == len(tarr) - 1 else None)
    return act


def cmd_run(args):
    cfg, model_spec, mesh_spec, out_spec = config.parse_config(args.config)
    if args.seed is not None:
        mesh_spec.seed = args.seed
    _prepare_outdir(args.out, args.force)
    mesh = mesh_spec.build()
    space = build_space(mesh, args.p, quad_extra=cfg.quad_extra)
    model, case = model_spec.build(mesh)
    ic = model_spec.initial_concentration(mesh, case)
    if isinstance(ic, np.ndarray):
        lam0 = solver.cellwise_lambda(space, ic, floor=cfg.lambda_floor)
        c0 = None
    else:
        lam0 = None
        c0 = ic
    ctx = forms.build_penalty(space, model,
                              eta0=10.0 if cfg.scheme == "baseline" else cfg.eta0)
    traj = solver.run(space, model, cfg, lam0=lam0, c0=c0, ctx=ctx)
    with open(os.path.join(args.out, "config.normalized"), "w") as fh:
        fh.write(config.normalized_text(cfg, model_spec, mesh_spec, out_spec))
    _write_metadata(args.out, cfg, extra=[f"mesh elements {mesh.n_elements}",
                                          f"dofs {space.n_dofs}",
                                          f"degree {args.p}"])
    _write_run_outputs(args.out, out_spec.prefix, space, traj,
                       snapshots=out_spec.snapshots)
    print(f"run finished: {len(traj.stats)} steps, {space.n_dofs} dofs, "
          f"outputs in {args.out}")
    return 0


def cmd_study(args):
    cfg, model_spec, mesh_spec, out_spec = config.parse_config(args.config)
    if model_spec.preset != "manufactured":
        raise SystemExit("error: study requires the manufactured preset")
    _prepare_outdir(args.out, args.force)
    sweep = [int(s) if args.kind in ("h", "p") else float(s)
             for s in args.sweep.split(",")] if args.sweep else None
    if sweep is None:
        sweep = {"h": [30, 100, 300, 1000], "p": [1, 2, 3, 4, 5],
                 "dt": [cfg.t_final / 2**k for k in range(1, 5)]}[args.kind]
    eta0 = cfg.eta0
    table = verify.convergence_study(
        args.kind, sweep, p=args.p, n_elements=mesh_spec.n or 30,
        theta=cfg.theta, dt=cfg.dt, t_final=cfg.t_final, eta0=eta0,
        seed=mesh_spec.seed, lloyd_iters=mesh_spec.lloyd_iters,
        newton_tol=cfg.newton.tol)
    path = os.path.join(args.out, f"convergence_{args.kind}.csv")
    table.write_csv(path)
    _write_metadata(args.out, cfg, extra=[f"study kind {args.kind}",
                                          f"sweep {sweep}"])
    for r in table.rows:
        msg = f"  {args.kind}={r.param:g} dofs={r.dofs} L2={r.err_L2:.4e} DG={r.err_DG:.4e}"
        if r.error:
            msg += f"  FAILED: {r.error}"
        print(msg)
    print(f"study written to {path}")
    return 0


def cmd_wave(args):
    _prepare_outdir(args.out, args.force)
    params = verify.WaveParams()
    mesh = verify.find_wave_mesh(args.h_target, tol=args.h_tol)
    space = build_space(mesh, args.p)
    profile = verify.wave_oracle(params)
    scheme = args.scheme
    model = forms.ModelData.isotropic(mesh, params.d, params.alpha,
                                      dirichlet=profile.lam_dirichlet())
    cfg = solver.RunConfig(theta=args.theta, dt=args.dt, t_final=args.T,
                           eta0=1.0 if scheme == "exp_transform" else 10.0,
                           scheme=scheme,
                           newton=solver.NewtonParams(tol=1e-6))
    ctx = forms.build_penalty(space, model, eta0=cfg.eta0)
    traj = solver.run(space, model, cfg, c0=lambda x, y: profile.c(x, y, 0.0),
                      ctx=ctx)
    variable = "lambda" if scheme == "exp_transform" else "c"
    l2, dg = verify.error_norms(space, model, ctx, traj.final, profile.c,
                                profile.grad_c, cfg.t_final, variable=variable)
    _write_metadata(args.out, cfg, extra=[
        f"wave h target {args.h_target}, mesh max h {mesh.h_K.max():.5f}, "
        f"{mesh.n_elements} elements",
        "boundary: dirichlet on x=0 from the wave profile, neumann elsewhere",
        "exact solution extended by psi(0) left of the front"])
    _write_run_outputs(args.out, "wave", space, traj)
    print(f"wave benchmark: scheme={scheme} p={args.p} h={mesh.h_K.max():.5f} "
          f"dofs={space.n_dofs} T={args.T}")
    print(f"errors at T: L2={l2:.4e} DG={dg:.4e} (min c over run: "
          f"{min(s.min_c for s in traj.stats):.3e})")
    return 0


def cmd_agglomerate(args):
    tri = read_trimesh(args.mesh)
    poly = agglomerate(tri, args.target)
    write_mesh(poly, args.out)
    report = mesh_metrics(poly)
    s = report.summary()
    print(f"agglomerated {tri.n_triangles} triangles into {poly.n_elements} "
          f"polygons ({len(np.unique(poly.element_label))} labels)")
    print(f"shape ratio min/mean/max: {s['shape_min']:.4f} / "
          f"{s['shape_mean']:.4f} / {s['shape_max']:.4f}")
    print(f"written to {args.out}")
    return 0


def cmd_mesh_info(args):
    from .mesh import read_mesh
    mesh = read_mesh(args.mesh)
    report = mesh_metrics(mesh, shape_threshold=args.shape_threshold)
    s = report.summary()
    print(f"{mesh.n_elements} elements, {mesh.n_faces} faces "
          f"({len(mesh.interior_faces)} interior, {len(mesh.dirichlet_faces)} "
          f"dirichlet, {len(mesh.neumann_faces)} neumann)")
    print(f"area {mesh.domain_area():.12g}, h in [{mesh.h_K.min():.4g}, "
          f"{mesh.h_K.max():.4g}]")
    print(f"shape ratio |K|/h^2 min/mean/max: {s['shape_min']:.4f} / "
          f"{s['shape_mean']:.4f} / {s['shape_max']:.4f}")
    print(f"contact ratio |F|/h min/mean/max: {s['contact_min']:.4f} / "
          f"{s['contact_mean']:.4f} / {s['contact_max']:.4f}")
    if len(report.shape_flagged):
        print(f"flagged below shape threshold {report.shape_threshold}: "
              f"{list(report.shape_flagged)}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="polyfk",
        description="Positivity-preserving polytopal DG solver for the "
                    "Fisher-Kolmogorov equation")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="time integration driven by a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--p", type=int, default=1, help="polynomial degree")
    p.add_argument("--seed", type=int, default=None, help="override mesh seed")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("study", help="convergence study (manufactured case)")
    p.add_argument("--kind", required=True, choices=["h", "p", "dt"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--sweep", default=None, help="comma-separated sweep values")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("wave", help="travelling-wave benchmark")
    p.add_argument("--h-target", type=float, required=True)
    p.add_argument("--h-tol", type=float, default=0.05)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--T", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--scheme", default="exp_transform",
                   choices=["exp_transform", "baseline"])
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_wave)

    p = sub.add_parser("agglomerate", help="coarsen a labeled triangle mesh")
    p.add_argument("--mesh", required=True, help="polyfk-mesh v1 triangle mesh")
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--out", required=True, help="output mesh file")
    p.set_defaults(func=cmd_agglomerate)

    p = sub.add_parser("mesh-info", help="regularity report of a mesh file")
    p.add_argument("--mesh", required=True)
    p.add_argument("--shape-threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_mesh_info)
    return ap


def main(argv=None):
    _cap_threads()
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (config.ConfigError, MeshError, forms.FormError,
            solver.SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
