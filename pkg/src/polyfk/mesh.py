"""Polygonal meshes with labeled subdomains and tagged boundary faces.

A :class:`PolyMesh` is the geometric substrate for the DG discretization:
polygonal elements (counter-clockwise vertex loops), a face set that
partitions all polygon edges, per-element subdomain labels, and a
Dirichlet/Neumann tag on every boundary face.  Meshes are immutable after
construction and safe to share between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

DIRICHLET = "dirichlet"
NEUMANN = "neumann"
_TAGS = (DIRICHLET, NEUMANN)


class MeshError(Exception):
    """Invalid mesh topology, geometry or file contents."""


def harmonic_avg(a, b):
    """Harmonic average 2ab/(a+b) of positive scalars (or arrays)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise ValueError("harmonic_avg requires strictly positive inputs")
    return 2.0 * a * b / (a + b)


def arithmetic_avg(a, b):
    """Arithmetic average (a+b)/2."""
    return 0.5 * (np.asarray(a, dtype=float) + np.asarray(b, dtype=float))


def _polygon_area(pts):
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _polygon_centroid(pts):
    x = pts[:, 0]
    y = pts[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * np.sum(cross)
    if abs(a) < 1e-300:
        return pts.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * a)
    cy = np.sum((y + yn) * cross) / (6.0 * a)
    return np.array([cx, cy])


def _polygon_diameter(pts):
    # max pairwise vertex distance; the hull vertices are polygon vertices
    d = pts[:, None, :] - pts[None, :, :]
    return math.sqrt(np.max(np.sum(d * d, axis=2)))


def _segments_properly_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _is_simple_polygon(pts):
    n = len(pts)
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_properly_intersect(a1, a2, pts[j], pts[(j + 1) % n]):
                return False
    return True


def _fan_triangles(pts):
    """Centroid fan of a polygon, or None when the fan is invalid."""
    c = _polygon_centroid(pts)
    n = len(pts)
    tris = np.empty((n, 3, 2))
    for i in range(n):
        tris[i, 0] = c
        tris[i, 1] = pts[i]
        tris[i, 2] = pts[(i + 1) % n]
    areas = 0.5 * ((tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
                   - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1]))
    if np.any(areas <= 0.0):
        return None
    return tris


def _ear_clip(pts):
    """Triangulate a simple CCW polygon by ear clipping."""
    idx = list(range(len(pts)))
    tris = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise MeshError("ear clipping failed; polygon may be degenerate")
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            a, b, c = pts[i0], pts[i1], pts[i2]
            cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
            if cross <= 0.0:
                continue
            ear = True
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = pts[j]
                # barycentric containment test
                d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
                d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0])
                d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0])
                if d1 >= 0 and d2 >= 0 and d3 >= 0:
                    ear = False
                    break
            if ear:
                tris.append(np.array([a, b, c]))
                idx.pop(k)
                clipped = True
                break
        if not clipped:
            raise MeshError("ear clipping failed; polygon is not simple")
    tris.append(np.array([pts[idx[0]], pts[idx[1]], pts[idx[2]]]))
    return np.array(tris)


@dataclass(frozen=True)
class Face:
    """One straight face of the mesh (an edge of a polygonal element)."""

    endpoints: np.ndarray          # (2, 2) coordinates
    normal: np.ndarray             # unit, oriented K+ -> K- (outward on boundary)
    length: float
    elem_plus: int
    elem_minus: int                # -1 on boundary faces
    tag: str | None                # None interior, else 'dirichlet'|'neumann'

    @property
    def is_boundary(self):
        return self.elem_minus < 0


@dataclass
class RegularityReport:
    """Shape/contact regularity ratios of a mesh (Assumption-style diagnostics)."""

    shape_ratio: np.ndarray           # |K| / h_K^2 per element
    contact_ratio: np.ndarray         # min over incident faces of |F| / h_K
    shape_flagged: np.ndarray         # element ids below the shape threshold
    contact_flagged: np.ndarray
    shape_threshold: float
    contact_threshold: float

    def summary(self):
        return {
            "shape_min": float(self.shape_ratio.min()),
            "shape_max": float(self.shape_ratio.max()),
            "shape_mean": float(self.shape_ratio.mean()),
            "contact_min": float(self.contact_ratio.min()),
            "contact_max": float(self.contact_ratio.max()),
            "contact_mean": float(self.contact_ratio.mean()),
        }


class PolyMesh:
    """Immutable 2D polygonal mesh.

    Attributes
    ----------
    vertices : (nv, 2) array
    elements : list of int arrays, CCW vertex loops
    element_label : (ne,) int array
    h_K : (ne,) element diameters
    measure : (ne,) element areas
    centroid : (ne, 2)
    cell_triangles : list of (m, 3, 2) arrays, exact sub-triangulation of
        each element (used for quadrature; agglomerated elements keep their
        fine triangles)
    face_vertices : (nf, 2) int, endpoint vertex ids
    face_elems : (nf, 2) int, (K+, K-); K- == -1 on boundary
    face_normal : (nf, 2) unit normals, K+ -> K- / outward
    face_length : (nf,)
    face_tag : (nf,) int, -1 interior, 0 dirichlet, 1 neumann
    """

    def __init__(self, vertices, elements, element_label, face_vertices,
                 face_elems, face_normal, face_length, face_tag,
                 cell_triangles):
        self.vertices = np.asarray(vertices, dtype=float)
        self.elements = [np.asarray(e, dtype=int) for e in elements]
        self.element_label = np.asarray(element_label, dtype=int)
        self.face_vertices = np.asarray(face_vertices, dtype=int)
        self.face_elems = np.asarray(face_elems, dtype=int)
        self.face_normal = np.asarray(face_normal, dtype=float)
        self.face_length = np.asarray(face_length, dtype=float)
        self.face_tag = np.asarray(face_tag, dtype=int)
        self.cell_triangles = cell_triangles

        self.measure = np.array([_polygon_area(self.vertices[e]) for e in self.elements])
        self.h_K = np.array([_polygon_diameter(self.vertices[e]) for e in self.elements])
        self.centroid = np.array([_polygon_centroid(self.vertices[e]) for e in self.elements])
        if np.any(self.measure <= 0.0):
            bad = int(np.argmin(self.measure))
            raise MeshError(f"element {bad} has non-positive area {self.measure[bad]:g}")
        self._faces = None

    # face_tag encoding
    TAG_INTERIOR = -1
    TAG_DIRICHLET = 0
    TAG_NEUMANN = 1

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_faces(self):
        return len(self.face_length)

    @property
    def interior_faces(self):
        return np.flatnonzero(self.face_tag == self.TAG_INTERIOR)

    @property
    def dirichlet_faces(self):
        return np.flatnonzero(self.face_tag == self.TAG_DIRICHLET)

    @property
    def neumann_faces(self):
        return np.flatnonzero(self.face_tag == self.TAG_NEUMANN)

    @property
    def faces(self):
        """List of :class:`Face` views (built lazily)."""
        if self._faces is None:
            tags = {self.TAG_DIRICHLET: DIRICHLET, self.TAG_NEUMANN: NEUMANN}
            out = []
            for f in range(self.n_faces):
                out.append(Face(
                    endpoints=self.vertices[self.face_vertices[f]].copy(),
                    normal=self.face_normal[f].copy(),
                    length=float(self.face_length[f]),
                    elem_plus=int(self.face_elems[f, 0]),
                    elem_minus=int(self.face_elems[f, 1]),
                    tag=tags.get(int(self.face_tag[f])),
                ))
            self._faces = out
        return self._faces

    def element_faces(self, k):
        """Face indices incident to element k."""
        return np.flatnonzero((self.face_elems[:, 0] == k) | (self.face_elems[:, 1] == k))

    def domain_area(self):
        return float(np.sum(self.measure))


def _resolve_tag(boundary_tags, key, p0, p1):
    if isinstance(boundary_tags, str):
        tag = boundary_tags
    elif callable(boundary_tags):
        tag = boundary_tags(p0, p1)
    elif isinstance(boundary_tags, dict):
        tag = boundary_tags.get(key, boundary_tags.get((key[1], key[0])))
    else:
        tag = None
    if tag not in _TAGS:
        raise MeshError(
            f"untagged or mistagged boundary edge between {tuple(p0)} and {tuple(p1)}: {tag!r}")
    return tag


def build_from_indexed(vertices, element_loops, element_label, boundary_tags,
                       cell_triangles=None):
    """Assemble a PolyMesh from shared-vertex polygon loops.

    Parameters
    ----------
    vertices : (nv, 2) array
    element_loops : sequence of index sequences (loops are normalized to CCW)
    element_label : per-element integer labels
    boundary_tags : 'dirichlet' | 'neumann' | dict[(i, j) -> tag] | callable(p0, p1) -> tag
    cell_triangles : optional explicit sub-triangulation per element

    Raises
    ------
    MeshError
        on non-manifold edges, T-junctions, inconsistent orientation,
        degenerate or self-intersecting polygons, or untagged boundary edges.
    """
    vertices = np.asarray(vertices, dtype=float)
    loops = []
    for e, loop in enumerate(element_loops):
        loop = np.asarray(loop, dtype=int)
        pts = vertices[loop]
        area = _polygon_area(pts)
        if abs(area) < 1e-300:
            raise MeshError(f"element {e} is degenerate (zero area)")
        if area < 0.0:
            loop = loop[::-1]
            pts = pts[::-1]
        if len(loop) > 3 and not _is_simple_polygon(pts):
            raise MeshError(f"element {e} is not a simple polygon")
        loops.append(loop)

    # collect edges; each keyed undirected edge may have at most two owners
    edge_owner: dict[tuple[int, int], list[tuple[int, int, int]]] = {}
    for e, loop in enumerate(loops):
        for i in range(len(loop)):
            a, b = int(loop[i]), int(loop[(i + 1) % len(loop)])
            if a == b:
                raise MeshError(f"element {e} repeats vertex {a} along its loop")
            key = (a, b) if a < b else (b, a)
            edge_owner.setdefault(key, []).append((e, a, b))

    face_vertices = []
    face_elems = []
    face_normal = []
    face_length = []
    face_tag = []
    boundary_edges = []
    for key, owners in edge_owner.items():
        if len(owners) > 2:
            p0, p1 = vertices[key[0]], vertices[key[1]]
            raise MeshError(
                f"non-manifold edge between {tuple(p0)} and {tuple(p1)}: {len(owners)} owners")
        e_plus, a, b = owners[0]
        p0, p1 = vertices[a], vertices[b]
        d = p1 - p0
        length = math.hypot(d[0], d[1])
        if length <= 0.0:
            raise MeshError(f"zero-length edge at {tuple(p0)}")
        normal = np.array([d[1], -d[0]]) / length  # outward for CCW owner
        if len(owners) == 2:
            e_minus, a2, b2 = owners[1]
            if (a2, b2) == (a, b):
                raise MeshError(
                    f"elements {e_plus} and {e_minus} traverse edge {key} in the same "
                    "direction (inconsistent orientation)")
            face_vertices.append((a, b))
            face_elems.append((e_plus, e_minus))
            face_normal.append(normal)
            face_length.append(length)
            face_tag.append(PolyMesh.TAG_INTERIOR)
        else:
            boundary_edges.append((key, e_plus, a, b, normal, length))

    # T-junction check: no mesh vertex may sit strictly inside a boundary edge
    # (a shared-in-part edge shows up as two one-owner edges overlapping a third)
    if boundary_edges:
        tree = cKDTree(vertices)
        for key, e_plus, a, b, normal, length in boundary_edges:
            p0, p1 = vertices[a], vertices[b]
            mid = 0.5 * (p0 + p1)
            tol = 1e-9 * length
            cand = tree.query_ball_point(mid, 0.5 * length + tol)
            d = p1 - p0
            for j in cand:
                if j in (a, b):
                    continue
                q = vertices[j]
                t = np.dot(q - p0, d) / (length * length)
                if t <= 0.0 or t >= 1.0:
                    continue
                dist = abs((q[0] - p0[0]) * d[1] - (q[1] - p0[1]) * d[0]) / length
                if dist < tol:
                    raise MeshError(
                        "non-matching interface: vertex "
                        f"{tuple(q)} lies inside edge {tuple(p0)}-{tuple(p1)}")

    for key, e_plus, a, b, normal, length in boundary_edges:
        tag = _resolve_tag(boundary_tags, (a, b), vertices[a], vertices[b])
        face_vertices.append((a, b))
        face_elems.append((e_plus, -1))
        face_normal.append(normal)
        face_length.append(length)
        face_tag.append(PolyMesh.TAG_DIRICHLET if tag == DIRICHLET else PolyMesh.TAG_NEUMANN)

    if cell_triangles is None:
        cell_triangles = []
        for e, loop in enumerate(loops):
            pts = vertices[loop]
            tris = _fan_triangles(pts)
            if tris is None:
                tris = _ear_clip(pts)
            cell_triangles.append(tris)

    return PolyMesh(vertices, loops, element_label, np.array(face_vertices, dtype=int),
                    np.array(face_elems, dtype=int), np.array(face_normal),
                    np.array(face_length), np.array(face_tag, dtype=int), cell_triangles)


def build_poly_mesh(polygons, labels=None, boundary_tags=DIRICHLET):
    """Build a PolyMesh from raw coordinate loops (vertices are deduplicated).

    Polygons must tile the domain edge-to-edge: shared edges have to coincide
    geometrically within 1e-9 of the local edge length.

    Parameters
    ----------
    polygons : sequence of (k_i, 2) coordinate arrays
    labels : per-polygon integer labels (default all zero)
    boundary_tags : as in :func:`build_from_indexed`; dict keys here are
        vertex-index pairs of the deduplicated vertex array
    """
    polygons = [np.asarray(p, dtype=float) for p in polygons]
    if labels is None:
        labels = np.zeros(len(polygons), dtype=int)
    diams = [_polygon_diameter(p) for p in polygons]
    tol = 1e-9 * min(diams)

    allpts = np.vstack(polygons)
    tree = cKDTree(allpts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(allpts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allpts))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    vertices = allpts[uniq]

    loops = []
    off = 0
    for p in polygons:
        k = len(p)
        loop = inverse[off:off + k]
        if len(np.unique(loop)) != k:
            raise MeshError("polygon collapses under vertex deduplication "
                            f"(tolerance {tol:g}); check input coordinates")
        loops.append(loop)
        off += k
    return build_from_indexed(vertices, loops, labels, boundary_tags)


def mesh_metrics(mesh, shape_threshold=0.05, contact_threshold=0.01):
    """Shape/contact regularity report; flags elements below the thresholds."""
    shape = mesh.measure / mesh.h_K**2
    contact = np.full(mesh.n_elements, np.inf)
    for f in range(mesh.n_faces):
        for k in mesh.face_elems[f]:
            if k >= 0:
                r = mesh.face_length[f] / mesh.h_K[k]
                contact[k] = min(contact[k], r)
    if not (np.all(np.isfinite(shape)) and np.all(shape > 0.0)):
        raise MeshError("non-finite or non-positive shape ratio")
    return RegularityReport(
        shape_ratio=shape,
        contact_ratio=contact,
        shape_flagged=np.flatnonzero(shape < shape_threshold),
        contact_flagged=np.flatnonzero(contact < contact_threshold),
        shape_threshold=shape_threshold,
        contact_threshold=contact_threshold,
    )


# ---------------------------------------------------------------------------
# seeded Lloyd-relaxed Voronoi generation


def _clipped_voronoi(points, domain):
    """Voronoi cells of `points` clipped to a rectangle via mirror generators."""
    from scipy.spatial import Voronoi

    x0, y0, x1, y1 = domain
    n = len(points)
    mirrors = np.vstack([
        np.column_stack([2 * x0 - points[:, 0], points[:, 1]]),
        np.column_stack([2 * x1 - points[:, 0], points[:, 1]]),
        np.column_stack([points[:, 0], 2 * y0 - points[:, 1]]),
        np.column_stack([points[:, 0], 2 * y1 - points[:, 1]]),
    ])
    vor = Voronoi(np.vstack([points, mirrors]))
    cells = []
    for i in range(n):
        region = vor.regions[vor.point_region[i]]
        if -1 in region or len(region) < 3:
            raise MeshError(f"Voronoi cell of seed {i} at {tuple(points[i])} is unbounded")
        pts = vor.vertices[np.asarray(region, dtype=int)]
        if _polygon_area(pts) < 0:
            pts = pts[::-1]
        cells.append(pts)
    return cells


def _snap_and_index(cells, domain, tol):
    """Deduplicate cell vertices, snapping boundary vertices exactly to the walls."""
    x0, y0, x1, y1 = domain
    allpts = np.vstack(cells)
    for wall, axis in ((x0, 0), (x1, 0), (y0, 1), (y1, 1)):
        near = np.abs(allpts[:, axis] - wall) < tol
        allpts[near, axis] = wall
    tree = cKDTree(allpts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(allpts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(allpts))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    vertices = allpts[uniq].copy()

    loops = []
    off = 0
    for pts in cells:
        k = len(pts)
        loop = inverse[off:off + k]
        keep = np.ones(k, dtype=bool)
        for i in range(k):          # drop merged (duplicate) consecutive ids
            if loop[i] == loop[(i + 1) % k]:
                keep[(i + 1) % k] = False
        loops.append(loop[keep])
        off += k
    return vertices, loops


def generate_voronoi(n, domain=(0.0, 0.0, 1.0, 1.0), seed=0, lloyd_iters=100,
                     boundary_tags=DIRICHLET, labels=None):
    """Seeded Lloyd-relaxed Voronoi tessellation of an axis-aligned rectangle.

    Deterministic for fixed (n, domain, seed, lloyd_iters).  All boundary
    faces are tagged Dirichlet unless `boundary_tags` says otherwise.

    Parameters
    ----------
    n : number of cells (>= 1)
    domain : (x0, y0, x1, y1)
    seed : RNG seed for the initial point cloud
    lloyd_iters : centroid-relaxation sweeps
    """
    x0, y0, x1, y1 = (float(v) for v in domain)
    if n < 1:
        raise MeshError("element count must be >= 1")
    if x1 <= x0 or y1 <= y0:
        raise MeshError(f"degenerate domain {domain}")

    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    if n == 1:
        cells = [np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])]
    else:
        for _ in range(lloyd_iters):
            cells = _clipped_voronoi(pts, (x0, y0, x1, y1))
            pts = np.array([_polygon_centroid(c) for c in cells])
        cells = _clipped_voronoi(pts, (x0, y0, x1, y1))
        areas = [abs(_polygon_area(c)) for c in cells]
        scale = math.sqrt((x1 - x0) * (y1 - y0) / n)
        for i, a in enumerate(areas):
            if a < 1e-12 * scale * scale:
                raise MeshError(f"Voronoi cell of seed {i} at {tuple(pts[i])} collapsed")

    h_est = max(_polygon_diameter(c) for c in cells)
    vertices, loops = _snap_and_index(cells, (x0, y0, x1, y1), 1e-9 * h_est)
    if labels is None:
        labels = np.zeros(n, dtype=int)
    return build_from_indexed(vertices, loops, labels, boundary_tags)


def rectangle_side_tags(domain, left=DIRICHLET, right=DIRICHLET,
                        bottom=DIRICHLET, top=DIRICHLET, tol=1e-9):
    """Boundary-tag callable assigning one tag per rectangle side."""
    x0, y0, x1, y1 = domain
    eps = tol * max(x1 - x0, y1 - y0)

    def tagger(p0, p1):
        mx, my = 0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])
        if abs(mx - x0) < eps:
            return left
        if abs(mx - x1) < eps:
            return right
        if abs(my - y0) < eps:
            return bottom
        if abs(my - y1) < eps:
            return top
        raise MeshError(f"boundary edge midpoint {(mx, my)} is on no rectangle side")

    return tagger


# ---------------------------------------------------------------------------
# mesh file format: `polyfk-mesh v1`

_FORMAT_HEADER = "polyfk-mesh v1"


def write_mesh(mesh, path):
    """Write a PolyMesh in the versioned `polyfk-mesh v1` text format."""
    tagname = {PolyMesh.TAG_DIRICHLET: DIRICHLET, PolyMesh.TAG_NEUMANN: NEUMANN}
    with open(path, "w") as fh:
        fh.write(_FORMAT_HEADER + "\n")
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r}\n")
        fh.write(f"elements {mesh.n_elements}\n")
        for e, loop in enumerate(mesh.elements):
            ids = " ".join(str(int(i)) for i in loop)
            fh.write(f"{len(loop)} {ids} {int(mesh.element_label[e])}\n")
        bidx = np.flatnonzero(mesh.face_tag != PolyMesh.TAG_INTERIOR)
        fh.write(f"boundary {len(bidx)}\n")
        for f in bidx:
            a, b = mesh.face_vertices[f]
            fh.write(f"{int(a)} {int(b)} {tagname[int(mesh.face_tag[f])]}\n")


def _read_sections(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != _FORMAT_HEADER:
        raise MeshError(f"{path}: missing '{_FORMAT_HEADER}' header")
    pos = 1

    def expect(word):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != word:
            raise MeshError(f"{path}: expected '{word} <count>', got {lines[pos]!r}")
        pos += 1
        return int(parts[1])

    nv = expect("vertices")
    vertices = np.array([[float(t) for t in lines[pos + i].split()] for i in range(nv)])
    pos += nv
    ne = expect("elements")
    loops, labels = [], []
    for i in range(ne):
        parts = lines[pos + i].split()
        k = int(parts[0])
        if len(parts) != k + 2:
            raise MeshError(f"{path}: malformed element line {lines[pos + i]!r}")
        loops.append([int(t) for t in parts[1:1 + k]])
        labels.append(int(parts[1 + k]))
    pos += ne
    nb = expect("boundary")
    tags = {}
    for i in range(nb):
        a, b, tag = lines[pos + i].split()
        if tag not in _TAGS:
            raise MeshError(f"{path}: unknown boundary tag {tag!r}")
        tags[(int(a), int(b))] = tag
    return vertices, loops, np.array(labels, dtype=int), tags


def read_mesh(path):
    """Read a `polyfk-mesh v1` file into a PolyMesh."""
    vertices, loops, labels, tags = _read_sections(path)
    return build_from_indexed(vertices, loops, labels, tags)


def read_trimesh(path):
    """Read a `polyfk-mesh v1` file whose elements are all triangles."""
    from .agglomerate import TriMesh

    vertices, loops, labels, tags = _read_sections(path)
    for loop in loops:
        if len(loop) != 3:
            raise MeshError(f"{path}: triangle mesh expected, found a {len(loop)}-gon")
    return TriMesh(vertices, np.array(loops, dtype=int), labels, tags)
