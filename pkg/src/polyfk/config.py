"""Parsing and validation of `polyfk-config v1` run configuration files.

The format is a flat sectioned key-value file (INI-like) whose first
non-blank line must be the version header.  All physical quantities are
explicit: theta, dt, T and eta0 have no hidden defaults.  Unknown keys are
rejected with their section path.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from . import verify
from .forms import ModelData
from .mesh import DIRICHLET, NEUMANN, generate_voronoi, read_mesh, rectangle_side_tags
from .solver import NewtonParams, RunConfig
from .agglomerate import agglomerate

FORMAT_HEADER = "polyfk-config v1"


class ConfigError(Exception):
    pass


_KNOWN = {
    "mesh": {"kind", "n", "domain", "seed", "lloyd_iters", "boundary",
             "left", "right", "bottom", "top", "path", "target_elements"},
    "model": {"preset", "d", "alpha", "v", "psi0", "chi0", "xi_max",
              "d_ext", "d_axn", "fiber", "initial", "c_background", "c_seed",
              "seed_x", "seed_y", "seed_radius", "floor"},
    "time": {"theta", "dt", "T"},
    "newton": {"tol", "max_iters", "relaxation"},
    "scheme": {"kind", "eta0", "epsilon", "quad_extra"},
    "output": {"every", "prefix", "snapshots"},
}
_LABELED = ("alpha", "d_axn", "d_ext")   # may carry _label_<int> suffixes


@dataclass
class MeshSpec:
    kind: str
    n: int = 0
    domain: tuple = (0.0, 0.0, 1.0, 1.0)
    seed: int = 0
    lloyd_iters: int = 100
    boundary: str = "dirichlet"
    sides: dict = field(default_factory=dict)
    path: str = ""
    target_elements: int = 0

    def build(self):
        if self.kind == "voronoi":
            if self.boundary == "sides":
                tags = rectangle_side_tags(self.domain, **self.sides)
            else:
                tags = self.boundary
            return generate_voronoi(self.n, self.domain, self.seed,
                                    self.lloyd_iters, boundary_tags=tags)
        if self.kind == "file":
            return read_mesh(self.path)
        if self.kind == "agglomerate":
            from .mesh import read_trimesh
            return agglomerate(read_trimesh(self.path), self.target_elements)
        raise ConfigError(f"[mesh] unknown kind {self.kind!r}")


@dataclass
class ModelSpec:
    preset: str
    values: dict
    initial: str
    floor: float = 1e-10

    def build(self, mesh):
        """Materialize the ModelData plus the manufactured/wave case object."""
        v = self.values
        if self.preset == "manufactured":
            case = verify.manufactured_case(alpha=v.get("alpha", 0.1))
            return case.model_for(mesh), case
        if self.preset == "wave":
            profile = verify.wave_oracle(self.wave_params())
            model = ModelData.isotropic(mesh, profile.params.d, profile.params.alpha,
                                        dirichlet=profile.lam_dirichlet(self.floor))
            return model, profile
        labels = set(int(l) for l in mesh.element_label)

        def keyed(name, default):
            plain = v.get(name)
            lab = {l: v[f"{name}_label_{l}"] for l in labels
                   if f"{name}_label_{l}" in v}
            if lab:
                if len(lab) != len(labels):
                    raise ConfigError(f"[model] {name}_label_* must cover labels {sorted(labels)}")
                return lab
            return plain if plain is not None else default

        fiber = None
        if "fiber" in v:
            fx, fy = v["fiber"]
            fiber = lambda x, y: np.stack([np.full_like(x, float(fx)),
                                           np.full_like(x, float(fy))], axis=-1)
        model = ModelData.by_label(mesh, keyed("d_ext", v.get("d", 1.0)),
                                   keyed("d_axn", 0.0), keyed("alpha", 1.0),
                                   fiber=fiber)
        return model, None

    def wave_params(self):
        v = self.values
        return verify.WaveParams(
            d=v.get("d", 1e-3), alpha=v.get("alpha", 1.0), v=v.get("v", 0.1),
            psi0=v.get("psi0", 1.0), chi0=v.get("chi0", -1e-2),
            xi_max=v.get("xi_max", 6.0))

    def initial_concentration(self, mesh, case):
        """Initial concentration: a field callable or per-element values."""
        v = self.values
        if self.initial == "manufactured":
            return lambda x, y: case.c_exact(x, y, 0.0)
        if self.initial == "wave":
            return lambda x, y: case.c(x, y, 0.0)
        if self.initial == "seeded_region":
            cb = float(v.get("c_background", 0.0))
            cs = float(v.get("c_seed", 0.9))
            x0 = v.get("seed_x", 0.0)
            y0 = v.get("seed_y", 0.0)
            r = v.get("seed_radius", 1.0)

            def c0(x, y):
                inside = (x - x0) ** 2 + (y - y0) ** 2 <= r * r
                return np.where(inside, cs, cb)

            # initialize from element averages of the indicator: projecting
            # the discontinuity itself produces intra-element log-overshoots
            # that put the first Newton solve outside its basin
            from .dgspace import triangles_quadrature

            means = np.empty(mesh.n_elements)
            for k in range(mesh.n_elements):
                rule = triangles_quadrature(mesh.cell_triangles[k], 4)
                means[k] = np.sum(rule.weights * c0(rule.points[:, 0],
                                                    rule.points[:, 1]))
                means[k] /= mesh.measure[k]
            return means
        if self.initial == "file":
            vals = np.atleast_1d(np.loadtxt(str(v["path"])))
            if len(vals) != mesh.n_elements:
                raise ConfigError(
                    f"[model] initial file has {len(vals)} values for "
                    f"{mesh.n_elements} elements")
            return vals
        raise ConfigError(f"[model] unknown initial preset {self.initial!r}")


@dataclass
class OutputSpec:
    every: int = 1
    prefix: str = "run"
    snapshots: tuple = ()


def _parse_value(text):
    parts = text.split()
    if len(parts) > 1:
        return tuple(_parse_value(p) for p in parts)
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config(path):
    """Parse and validate a config file.

    Returns (RunConfig, ModelSpec, MeshSpec, OutputSpec).  Raises
    ConfigError naming the offending section/key on invalid input.
    """
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip()), "")
    if first.strip() != FORMAT_HEADER:
        raise ConfigError(f"{path}: first line must be '{FORMAT_HEADER}'")
    body = "\n".join(lines[lines.index(first) + 1:])
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str      # keys are case-sensitive ('T' stays 'T')
    try:
        cp.read_string(body)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    raw = {}
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"[{section}] unknown section")
        raw[section] = {}
        for key, val in cp.items(section):
            base = key
            for name in _LABELED:
                if key.startswith(name + "_label_"):
                    base = name
                    break
            if base not in _KNOWN[section] and key not in _KNOWN[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            raw[section][key] = _parse_value(val)

    def need(section, key):
        if section not in raw or key not in raw[section]:
            raise ConfigError(f"[{section}] missing mandatory key {key!r}")
        return raw[section][key]

    def get(section, key, default):
        return raw.get(section, {}).get(key, default)

    theta = float(need("time", "theta"))
    if not 0.0 <= theta <= 1.0:
        raise ConfigError(f"[time] theta out of range: {theta}")
    dt = float(need("time", "dt"))
    if dt <= 0.0:
        raise ConfigError(f"[time] dt must be positive: {dt}")
    t_final = float(need("time", "T"))
    eta0 = need("scheme", "eta0")
    if not (eta0 == "auto" or (isinstance(eta0, (int, float)) and eta0 > 0)):
        raise ConfigError(f"[scheme] eta0 must be positive or 'auto': {eta0}")
    scheme = get("scheme", "kind", "exp_transform")
    if scheme not in ("exp_transform", "baseline"):
        raise ConfigError(f"[scheme] unknown scheme {scheme!r}")

    newton = NewtonParams(
        tol=float(get("newton", "tol", 1e-10)),
        max_iters=int(get("newton", "max_iters", 50)),
        relaxation=float(get("newton", "relaxation", 1.0)))
    cfg = RunConfig(theta=theta, dt=dt, t_final=t_final, eta0=eta0,
                    epsilon=float(get("scheme", "epsilon", 0.0)),
                    newton=newton, scheme=scheme,
                    quad_extra=int(get("scheme", "quad_extra", 4)),
                    output_every=int(get("output", "every", 1)),
                    lambda_floor=float(get("model", "floor", 1e-10)))

    mkind = get("mesh", "kind", "voronoi")
    domain = get("mesh", "domain", (0.0, 0.0, 1.0, 1.0))
    if not (isinstance(domain, tuple) and len(domain) == 4):
        raise ConfigError(f"[mesh] domain needs four numbers, got {domain!r}")
    boundary = get("mesh", "boundary", "dirichlet")
    sides = {}
    if boundary == "sides":
        for side in ("left", "right", "bottom", "top"):
            tag = get("mesh", side, None)
            if tag not in (DIRICHLET, NEUMANN):
                raise ConfigError(f"[mesh] boundary=sides requires {side} = dirichlet|neumann")
            sides[side] = tag
    elif boundary not in (DIRICHLET, NEUMANN):
        raise ConfigError(f"[mesh] boundary must be dirichlet|neumann|sides: {boundary!r}")
    mesh_spec = MeshSpec(
        kind=mkind, n=int(get("mesh", "n", 0)),
        domain=tuple(float(x) for x in domain),
        seed=int(get("mesh", "seed", 0)),
        lloyd_iters=int(get("mesh", "lloyd_iters", 100)),
        boundary=boundary, sides=sides, path=str(get("mesh", "path", "")),
        target_elements=int(get("mesh", "target_elements", 0)))

    preset = get("model", "preset", "generic")
    initial = get("model", "initial",
                  preset if preset in ("manufactured", "wave") else "seeded_region")
    model_spec = ModelSpec(preset=preset, values=dict(raw.get("model", {})),
                           initial=initial,
                           floor=float(get("model", "floor", 1e-10)))

    out_spec = OutputSpec(every=int(get("output", "every", 1)),
                          prefix=str(get("output", "prefix", "run")),
                          snapshots=tuple(np.atleast_1d(
                              np.asarray(get("output", "snapshots", ()), dtype=float))))
    return cfg, model_spec, mesh_spec, out_spec


def normalized_text(cfg: RunConfig, model_spec, mesh_spec, out_spec):
    """Canonical config echo written into the run directory for provenance."""
    buf = io.StringIO()
    buf.write(FORMAT_HEADER + "\n\n")
    buf.write("[mesh]\n")
    buf.write(f"kind = {mesh_spec.kind}\n")
    if mesh_spec.kind == "voronoi":
        buf.write(f"n = {mesh_spec.n}\n")
        buf.write("domain = " + " ".join(repr(v) for v in mesh_spec.domain) + "\n")
        buf.write(f"seed = {mesh_spec.seed}\nlloyd_iters = {mesh_spec.lloyd_iters}\n")
        buf.write(f"boundary = {mesh_spec.boundary}\n")
        for side, tag in mesh_spec.sides.items():
            buf.write(f"{side} = {tag}\n")
    else:
        buf.write(f"path = {mesh_spec.path}\n")
        if mesh_spec.kind == "agglomerate":
            buf.write(f"target_elements = {mesh_spec.target_elements}\n")
    buf.write("\n[model]\n")
    buf.write(f"preset = {model_spec.preset}\ninitial = {model_spec.initial}\n")
    for key in sorted(model_spec.values):
        if key in ("preset", "initial"):
            continue
        val = model_spec.values[key]
        if isinstance(val, tuple):
            val = " ".join(repr(v) for v in val)
        buf.write(f"{key} = {val}\n")
    buf.write("\n[time]\n")
    buf.write(f"theta = {cfg.theta!r}\ndt = {cfg.dt!r}\nT = {cfg.t_final!r}\n")
    buf.write("\n[newton]\n")
    buf.write(f"tol = {cfg.newton.tol!r}\nmax_iters = {cfg.newton.max_iters}\n")
    buf.write(f"relaxation = {cfg.newton.relaxation!r}\n")
    buf.write("\n[scheme]\n")
    buf.write(f"kind = {cfg.scheme}\neta0 = {cfg.eta0}\nepsilon = {cfg.epsilon!r}\n")
    buf.write(f"quad_extra = {cfg.quad_extra}\n")
    buf.write("\n[output]\n")
    buf.write(f"every = {out_spec.every}\nprefix = {out_spec.prefix}\n")
    if len(out_spec.snapshots):
        buf.write("snapshots = " + " ".join(repr(t) for t in out_spec.snapshots) + "\n")
    return buf.getvalue()
