"""Label-preserving agglomeration of triangular meshes into polygonal ones.

Aggregates are grown per subdomain label with an area-balanced multi-source
sweep over the triangle adjacency graph, so every coarse element is
edge-connected and single-label, and the interface between differently
labeled regions is exactly the union of fine inter-label edges.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .mesh import DIRICHLET, NEUMANN, MeshError, PolyMesh, _TAGS, build_from_indexed


@dataclass
class TriMesh:
    """Triangle mesh with per-element labels and tagged boundary edges.

    Triangles must be positively oriented; every boundary edge must carry a
    tag; labels must cover all elements.
    """

    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) vertex ids
    element_label: np.ndarray   # (nt,)
    boundary_edge_tag: dict     # (i, j) -> 'dirichlet' | 'neumann'

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=int)
        self.element_label = np.asarray(self.element_label, dtype=int)
        if len(self.element_label) != len(self.triangles):
            raise MeshError("labels must cover all triangles")
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        self._area = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                            - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        if np.any(self._area <= 0.0):
            bad = int(np.argmin(self._area))
            raise MeshError(f"triangle {bad} is not positively oriented")
        edges = self._edge_map()
        tags = dict(self.boundary_edge_tag)
        normalized = {}
        for key, tag in tags.items():
            if tag not in _TAGS:
                raise MeshError(f"unknown boundary tag {tag!r} on edge {key}")
            normalized[(min(key), max(key))] = tag
        for key, owners in edges.items():
            if len(owners) == 1 and key not in normalized:
                p0, p1 = self.vertices[key[0]], self.vertices[key[1]]
                raise MeshError(f"untagged boundary edge between {tuple(p0)} and {tuple(p1)}")
        self.boundary_edge_tag = normalized

    @property
    def n_triangles(self):
        return len(self.triangles)

    def area(self):
        return self._area.copy()

    def _edge_map(self):
        owners: dict[tuple[int, int], list[int]] = {}
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                key = (a, b) if a < b else (b, a)
                owners.setdefault(key, []).append(t)
        for key, own in owners.items():
            if len(own) > 2:
                raise MeshError(f"non-manifold edge {key}")
        return owners

    def adjacency(self):
        """Triangle adjacency (shared-edge) lists."""
        adj = [[] for _ in range(self.n_triangles)]
        for own in self._edge_map().values():
            if len(own) == 2:
                adj[own[0]].append(own[1])
                adj[own[1]].append(own[0])
        return adj

    def to_polymesh(self):
        """Interpret each triangle as its own polygonal element."""
        return build_from_indexed(self.vertices, list(self.triangles),
                                  self.element_label, self.boundary_edge_tag)


def _components(tris, adj, mask):
    comps = []
    seen = np.zeros(len(mask), dtype=bool)
    for t in tris:
        if seen[t]:
            continue
        stack = [t]
        seen[t] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if mask[v] and not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(comp)
    return comps


def _grow_regions(comp, n_regions, adj, area):
    """Split a connected triangle set into n connected, area-balanced regions."""
    comp = list(comp)
    if n_regions <= 1:
        return [comp]
    in_comp = set(comp)

    # deterministic farthest-point seeds by graph distance
    def bfs_dist(srcs):
        dist = {t: np.inf for t in comp}
        dq = []
        for s in srcs:
            dist[s] = 0
            dq.append(s)
        head = 0
        while head < len(dq):
            u = dq[head]
            head += 1
            for v in adj[u]:
                if v in in_comp and dist[v] == np.inf:
                    dist[v] = dist[u] + 1
                    dq.append(v)
        return dist

    seeds = [min(comp)]
    while len(seeds) < n_regions:
        dist = bfs_dist(seeds)
        far = max(comp, key=lambda t: (dist[t], t))
        if dist[far] == 0:
            break
        seeds.append(far)

    assign = {}
    region_area = [0.0] * len(seeds)
    frontiers = [[] for _ in seeds]
    heap = []
    for r, s in enumerate(seeds):
        assign[s] = r
        region_area[r] = area[s]
        frontiers[r] = [v for v in adj[s] if v in in_comp]
        heapq.heappush(heap, (region_area[r], r))
    n_assigned = len(seeds)

    while n_assigned < len(comp):
        while True:
            a, r = heapq.heappop(heap)
            if a == region_area[r]:
                break
        grew = False
        front = frontiers[r]
        while front:
            t = front.pop(0)
            if t in assign:
                continue
            assign[t] = r
            region_area[r] += area[t]
            n_assigned += 1
            front.extend(v for v in adj[t] if v in in_comp and v not in assign)
            grew = True
            break
        if grew or front:
            heapq.heappush(heap, (region_area[r], r))
        if not grew and not front and not heap:
            raise MeshError("agglomeration region growth stalled")

    regions = [[] for _ in seeds]
    for t in sorted(assign):
        regions[assign[t]].append(t)
    return [r for r in regions if r]


def _euler_characteristic(region, triangles):
    verts = set()
    edges = set()
    for t in region:
        tri = triangles[t]
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            verts.add(a)
            edges.add((a, b) if a < b else (b, a))
    return len(verts) - len(edges) + len(region)


def _trace_boundary(region, triangles):
    """Outer CCW vertex loop of a union of triangles (single loop expected)."""
    region_set = set(region)
    owners: dict[tuple[int, int], list[int]] = {}
    directed = {}
    for t in region:
        tri = triangles[t]
        for i in range(3):
            a, b = int(tri[i]), int(tri[(i + 1) % 3])
            key = (a, b) if a < b else (b, a)
            owners.setdefault(key, []).append(t)
            directed[(a, b)] = t
    boundary = [e for e, own in owners.items()
                if len(own) == 1 or not all(t in region_set for t in own)]
    # keep the orientation used by the region's own triangle
    directed_boundary = []
    for a, b in boundary:
        if (a, b) in directed and directed[(a, b)] in region_set:
            directed_boundary.append((a, b))
        else:
            directed_boundary.append((b, a))
    succ = {}
    for a, b in directed_boundary:
        if a in succ:
            raise MeshError("aggregate boundary is not a simple loop (pinched vertex)")
        succ[a] = b
    start = directed_boundary[0][0]
    loop = [start]
    cur = succ[start]
    while cur != start:
        loop.append(cur)
        cur = succ.pop(cur)
        if len(loop) > len(directed_boundary):
            raise MeshError("aggregate boundary tracing failed")
    if len(loop) != len(directed_boundary):
        raise MeshError("aggregate boundary has more than one loop")
    return loop


def agglomerate(tri: TriMesh, target_elements: int) -> PolyMesh:
    """Agglomerate a labeled triangle mesh into ~target_elements polygons.

    Each aggregate is edge-connected and single-label; the interface between
    differently labeled aggregates is exactly the set of fine inter-label
    edges; total area is conserved exactly (aggregates reuse the fine
    triangles for quadrature).

    Disconnected label regions smaller than one aggregate become their own
    aggregate.  The final element count matches the target up to the graph
    partition granularity (about +-10%).
    """
    labels = np.unique(tri.element_label)
    if target_elements < len(labels):
        raise MeshError(
            f"target {target_elements} is below the number of distinct labels {len(labels)}")

    area = tri.area()
    total_area = float(area.sum())
    adj_all = tri.adjacency()

    comps = []
    for lab in labels:
        mask = tri.element_label == lab
        adj = [[v for v in adj_all[t] if mask[v]] if mask[t] else []
               for t in range(tri.n_triangles)]
        for comp in _components(np.flatnonzero(mask), adj, mask):
            comps.append((lab, sorted(comp), adj))

    counts = [max(1, round(target_elements * sum(area[t] for t in comp) / total_area))
              for _, comp, _ in comps]
    # nudge the per-component counts so the total hits the target when possible
    while sum(counts) > target_elements:
        i = max(range(len(comps)), key=lambda j: (counts[j], j))
        if counts[i] == 1:
            break
        counts[i] -= 1
    while sum(counts) < target_elements:
        i = max(range(len(comps)),
                key=lambda j: (sum(area[t] for t in comps[j][1]) / counts[j], j))
        counts[i] += 1

    aggregates = []
    agg_labels = []
    for (lab, comp, adj), n in zip(comps, counts):
        regions = _grow_regions(comp, n, adj, area)
        # re-split any region that is not simply connected (holes are illegal)
        final = []
        queue = list(regions)
        rounds = 0
        while queue:
            region = queue.pop(0)
            if len(region) > 1 and _euler_characteristic(region, tri.triangles) != 1:
                rounds += 1
                if rounds > 4 * max(1, n):
                    raise MeshError("agglomeration could not remove a hole in an aggregate")
                queue.extend(_grow_regions(region, 2, adj, area))
            else:
                final.append(region)
        for region in final:
            aggregates.append(region)
            agg_labels.append(lab)

    loops = [_trace_boundary(region, tri.triangles) for region in aggregates]
    cell_triangles = [tri.vertices[tri.triangles[region]] for region in aggregates]
    return build_from_indexed(tri.vertices, loops, np.array(agg_labels, dtype=int),
                              tri.boundary_edge_tag, cell_triangles=cell_triangles)
