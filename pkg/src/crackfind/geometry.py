"""Meshes, embedded crack polylines, and pixel-based test inclusions.

Everything downstream (assembly, boundary maps, reconstruction) treats the
objects built here as immutable: coordinate arrays are frozen after
construction, and crack embedding returns a fresh ``Mesh`` instead of
mutating its input.

Conventions:

* Triangles are counter-clockwise vertex index triples.
* Boundary edges are directed so the domain lies on the left; together they
  traverse the whole boundary exactly once.
* The measurement arc (gamma) is a nonempty, connected subset of the
  boundary edges. Currents are applied and voltages read only there.
* Cracks are simple chains of interior mesh edges, each chain tagged
  insulating or conducting.
* Pixels tile the bounding rectangle of the domain; admissible pixel unions
  act as test inclusions for the reconstruction loops.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

INSULATING = "insulating"
CONDUCTING = "conducting"
KINDS = (INSULATING, CONDUCTING)


def _signed_areas(vertices, triangles):
    p = vertices[triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def _edge_key(a, b, n):
    lo, hi = (a, b) if a < b else (b, a)
    return int(lo) * n + int(hi)


def point_segment_distance(pt, a, b):
    """Distance from point ``pt`` to the closed segment ``a``-``b``.

    ``a`` and ``b`` may be arrays of segments (shape (k, 2)); returns the
    per-segment distances in that case.
    """
    pt = np.asarray(pt, dtype=float)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    d = b - a
    l2 = np.einsum("ij,ij->i", d, d)
    safe = np.where(l2 == 0.0, 1.0, l2)
    t = np.clip(np.einsum("ij,ij->i", pt - a, d) / safe, 0.0, 1.0)
    proj = a + t[:, None] * d
    out = np.linalg.norm(pt - proj, axis=1)
    return out if out.size > 1 else float(out[0])


def _segments_intersect(p0, p1, q0, q1):
    # proper or touching intersection of closed segments
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q0, q1, p0)
    d2 = orient(q0, q1, p1)
    d3 = orient(p0, p1, q0)
    d4 = orient(p0, p1, q1)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_seg(a, b, c):
        return (
            min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14
            and min(a[1], b[1]) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14
        )

    if d1 == 0 and on_seg(q0, q1, p0):
        return True
    if d2 == 0 and on_seg(q0, q1, p1):
        return True
    if d3 == 0 and on_seg(p0, p1, q0):
        return True
    if d4 == 0 and on_seg(p0, p1, q1):
        return True
    return False


def _segment_intersects_rect(p0, p1, x0, y0, x1, y1, tol=1e-12):
    # Liang-Barsky clip of the closed segment against the closed rectangle
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, p0[0] - x0),
        (dx, x1 - p0[0]),
        (-dy, p0[1] - y0),
        (dy, y1 - p0[1]),
    ):
        if p == 0.0:
            if q < -tol:
                return False
        else:
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    return t0 <= t1 + tol


class Mesh:
    """Conforming triangle mesh with an oriented boundary and a marked arc.

    Parameters
    ----------
    vertices : (n, 2) float array
        Vertex coordinates.
    triangles : (t, 3) int array
        Counter-clockwise vertex index triples.
    boundary_edges : (b, 2) int array
        Directed boundary edges with the domain on the left, covering the
        whole boundary exactly once.
    gamma_edges : (g, 2) int array
        The measurement arc: a nonempty subset of ``boundary_edges`` that
        is connected along the boundary.
    check : bool
        Run the full invariant check (positive areas, conformity, closed
        oriented boundary, connected gamma). Disable only for meshes that
        were already validated.
    """

    def __init__(self, vertices, triangles, boundary_edges, gamma_edges, check=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        self.gamma_edges = np.ascontiguousarray(gamma_edges, dtype=np.int64)
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.gamma_edges):
            arr.setflags(write=False)
        self._cache = {}
        if check:
            self._validate()

    # ------------------------------------------------------------------ #
    def _validate(self):
        v, t = self.vertices, self.triangles
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be a (t, 3) array")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        areas = _signed_areas(v, t)
        if np.any(areas <= 0):
            raise ValueError("all triangles must have positive signed area")

        n = len(v)
        undirected = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        keys = (
            np.minimum(undirected[:, 0], undirected[:, 1]) * n
            + np.maximum(undirected[:, 0], undirected[:, 1])
        )
        uniq, counts = np.unique(keys, return_counts=True)
        if np.any(counts > 2):
            raise ValueError("non-conforming mesh: an edge is shared by > 2 triangles")
        hull_keys = set(uniq[counts == 1].tolist())

        be = self.boundary_edges
        if be.ndim != 2 or be.shape[1] != 2:
            raise ValueError("boundary_edges must be a (b, 2) array")
        be_keys = {_edge_key(a, b, n) for a, b in be}
        if len(be_keys) != len(be):
            raise ValueError("duplicate boundary edge")
        if be_keys != hull_keys:
            raise ValueError("boundary_edges must cover the mesh hull exactly once")
        directed = set()
        for tri in t:
            directed.add((int(tri[0]), int(tri[1])))
            directed.add((int(tri[1]), int(tri[2])))
            directed.add((int(tri[2]), int(tri[0])))
        for a, b in be:
            if (int(a), int(b)) not in directed:
                raise ValueError("boundary edge oriented with the domain on the right")
        outdeg = {}
        indeg = {}
        for a, b in be:
            outdeg[int(a)] = outdeg.get(int(a), 0) + 1
            indeg[int(b)] = indeg.get(int(b), 0) + 1
        for vtx in set(outdeg) | set(indeg):
            if outdeg.get(vtx, 0) != 1 or indeg.get(vtx, 0) != 1:
                raise ValueError("boundary edges do not form simple closed loops")

        ge = self.gamma_edges
        if len(ge) == 0:
            raise ValueError("gamma must be nonempty")
        ge_keys = {_edge_key(a, b, n) for a, b in ge}
        if not ge_keys <= be_keys:
            raise ValueError("gamma_edges must be a subset of boundary_edges")
        if len(ge_keys) != len(ge):
            raise ValueError("duplicate gamma edge")
        # connectivity along the boundary via shared vertices
        adj = {}
        for a, b in ge:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        start = int(ge[0, 0])
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if set(adj) != seen:
            raise ValueError("gamma must be connected along the boundary")

    # ------------------------------------------------------------------ #
    def __str__(self):
        return "Mesh(vertices=%d, triangles=%d, boundary_edges=%d, gamma_edges=%d)" % (
            len(self.vertices),
            len(self.triangles),
            len(self.boundary_edges),
            len(self.gamma_edges),
        )

    __repr__ = __str__

    def tri_areas(self):
        if "areas" not in self._cache:
            a = _signed_areas(self.vertices, self.triangles)
            a.setflags(write=False)
            self._cache["areas"] = a
        return self._cache["areas"]

    def edge_tris(self):
        """Map from undirected edge key (lo * n + hi) to incident triangles."""
        if "edge_tris" not in self._cache:
            n = len(self.vertices)
            out = {}
            for ti, tri in enumerate(self.triangles):
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    out.setdefault(_edge_key(a, b, n), []).append(ti)
            self._cache["edge_tris"] = out
        return self._cache["edge_tris"]

    def vertex_tris(self):
        """Per-vertex list of incident triangle indices."""
        if "vertex_tris" not in self._cache:
            out = [[] for _ in range(len(self.vertices))]
            for ti, tri in enumerate(self.triangles):
                for vtx in tri:
                    out[int(vtx)].append(ti)
            self._cache["vertex_tris"] = out
        return self._cache["vertex_tris"]

    def boundary_vertex_set(self):
        if "bvs" not in self._cache:
            self._cache["bvs"] = set(self.boundary_edges.ravel().tolist())
        return self._cache["bvs"]

    def edge_key(self, a, b):
        return _edge_key(a, b, len(self.vertices))

    def h_max(self):
        e = np.concatenate(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return float(np.max(np.linalg.norm(d, axis=1)))

    def gamma_vertices(self):
        """Vertices of the measurement arc, ordered along the boundary.

        Follows the boundary orientation. For a gamma that is the full
        closed boundary the walk starts at the smallest vertex index and
        each vertex appears once; for a proper arc the list runs from one
        arc end to the other (one more vertex than edges).
        """
        nxt = {int(a): int(b) for a, b in self.gamma_edges}
        has_in = set(nxt.values())
        starts = [a for a in nxt if a not in has_in]
        if starts:
            cur = min(starts)  # open arc
            closed = False
        else:
            cur = min(nxt)  # full loop
            closed = True
        order = [cur]
        while len(order) <= len(nxt):
            cur = nxt.get(cur)
            if cur is None or (closed and cur == order[0]):
                break
            order.append(cur)
        return np.array(order, dtype=np.int64)

    def gamma_edge_lengths(self):
        d = self.vertices[self.gamma_edges[:, 0]] - self.vertices[self.gamma_edges[:, 1]]
        return np.linalg.norm(d, axis=1)

    def boundary_segments(self):
        return self.vertices[self.boundary_edges[:, 0]], self.vertices[self.boundary_edges[:, 1]]

    def distance_to_boundary(self, pt):
        a, b = self.boundary_segments()
        return float(np.min(point_segment_distance(pt, a, b)))

    def containing_triangle(self, pt):
        """Index of a triangle whose closure contains ``pt``, or -1."""
        v, t = self.vertices, self.triangles
        a = v[t[:, 0]]
        e1 = v[t[:, 1]] - a
        e2 = v[t[:, 2]] - a
        d = np.asarray(pt, dtype=float) - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        s = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        u = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        ok = (s >= -1e-12) & (u >= -1e-12) & (s + u <= 1 + 1e-12)
        idx = np.nonzero(ok)[0]
        return int(idx[0]) if idx.size else -1

    # ------------------------------------------------------------------ #
    def to_json(self):
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "gamma_edges": self.gamma_edges.tolist(),
        }

    @classmethod
    def from_json(cls, data, check=True):
        return cls(
            np.array(data["vertices"], dtype=float),
            np.array(data["triangles"], dtype=np.int64),
            np.array(data["boundary_edges"], dtype=np.int64),
            np.array(data["gamma_edges"], dtype=np.int64),
            check=check,
        )


# ---------------------------------------------------------------------- #
# mesh builders
# ---------------------------------------------------------------------- #


def build_rect_mesh(width, height, target_h):
    """Structured triangulation of [0, width] x [0, height].

    Cells are split along the "/" diagonal, so axis-parallel and 45-degree
    lines through grid points run along mesh edges. The longest edge is the
    cell diagonal, below 1.5 * target_h. Gamma defaults to the whole
    boundary. At least two cells per side are generated so the mesh always
    has interior vertices.
    """
    if not (width > 0 and height > 0 and target_h > 0):
        raise ValueError("width, height and target_h must be positive")
    nx = max(2, int(math.ceil(width / target_h)))
    ny = max(2, int(math.ceil(height / target_h)))
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    xx, yy = np.meshgrid(xs, ys)
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    tris = []
    for iy in range(ny):
        for ix in range(nx):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            tris.append((v00, v10, v01))
            tris.append((v10, v11, v01))
    bedges = []
    for ix in range(nx):
        bedges.append((vid(ix, 0), vid(ix + 1, 0)))
    for iy in range(ny):
        bedges.append((vid(nx, iy), vid(nx, iy + 1)))
    for ix in range(nx, 0, -1):
        bedges.append((vid(ix, ny), vid(ix - 1, ny)))
    for iy in range(ny, 0, -1):
        bedges.append((vid(0, iy), vid(0, iy - 1)))
    bedges = np.array(bedges, dtype=np.int64)
    return Mesh(vertices, np.array(tris, dtype=np.int64), bedges, bedges)


def build_disk_mesh(radius, target_h):
    """Triangulation of a disk by concentric rings (n-th ring has 6n vertices).

    The boundary is the regular polygon inscribed in the circle of the given
    radius. Ring spacing and circumferential spacing are both close to
    target_h, and the longest edge stays below 1.5 * target_h.
    """
    if not (radius > 0 and target_h > 0):
        raise ValueError("radius and target_h must be positive")
    K = max(2, int(math.ceil(radius / target_h)))
    verts = [(0.0, 0.0)]
    ring_start = [0]
    for k in range(1, K + 1):
        r = radius * k / K
        m = 6 * k
        ring_start.append(len(verts))
        ang = 2.0 * np.pi * np.arange(m) / m
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    verts = np.array(verts, dtype=float)

    tris = []
    # center fan
    s1 = ring_start[1]
    for i in range(6):
        tris.append((0, s1 + i, s1 + (i + 1) % 6))
    # annuli: zip ring k (inner) with ring k+1 (outer) by angle
    for k in range(1, K):
        n_in, n_out = 6 * k, 6 * (k + 1)
        si, so = ring_start[k], ring_start[k + 1]
        i = j = 0
        while i < n_in or j < n_out:
            adv_in = (i + 1) / n_in if i < n_in else np.inf
            adv_out = (j + 1) / n_out if j < n_out else np.inf
            # ties advance the inner ring, keeping the zip centered on the
            # shared angles (otherwise the closing edge spans a whole sector)
            if adv_out < adv_in:
                tris.append((so + j % n_out, so + (j + 1) % n_out, si + i % n_in))
                j += 1
            else:
                tris.append((si + i % n_in, so + j % n_out, si + (i + 1) % n_in))
                i += 1
    m = 6 * K
    so = ring_start[K]
    bedges = np.array([(so + i, so + (i + 1) % m) for i in range(m)], dtype=np.int64)
    return Mesh(verts, np.array(tris, dtype=np.int64), bedges, bedges)


def refine_mesh(mesh, cracks=None):
    """Regular midpoint refinement; every triangle splits into four.

    Original vertices keep their indices, so the coarse trace nodes are a
    subset of the fine ones and coarse piecewise-linear data interpolates
    exactly. Crack chains are carried over with edge midpoints inserted.
    Returns the refined mesh, or (mesh, cracks) when ``cracks`` is given.
    """
    nv = len(mesh.vertices)
    t = mesh.triangles
    mid = {}
    new_pts = []

    def midpoint(a, b):
        key = _edge_key(a, b, nv)
        if key not in mid:
            mid[key] = nv + len(new_pts)
            new_pts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return mid[key]

    tris = []
    for a, b, c in t:
        mab = midpoint(a, b)
        mbc = midpoint(b, c)
        mca = midpoint(c, a)
        tris.extend([(a, mab, mca), (mab, b, mbc), (mca, mbc, c), (mab, mbc, mca)])

    def split_edges(edges):
        out = []
        for a, b in edges:
            m = midpoint(a, b)
            out.append((a, m))
            out.append((m, b))
        return np.array(out, dtype=np.int64)

    vertices = np.vstack([mesh.vertices, np.array(new_pts, dtype=float)])
    fine = Mesh(
        vertices,
        np.array(tris, dtype=np.int64),
        split_edges(mesh.boundary_edges),
        split_edges(mesh.gamma_edges),
        check=False,
    )
    if cracks is None:
        return fine
    comps = []
    for comp in cracks.components:
        chain = [comp.chain[0]]
        for a, b in comp.edges():
            chain.append(midpoint(a, b))
            chain.append(b)
        comps.append(CrackComponent(chain, comp.kind))
    out = CrackSet(comps)
    out.validate(fine)
    return fine, out


def mark_gamma(mesh, selector):
    """Return a mesh with gamma replaced by the edges matching ``selector``.

    Selector forms:

    * ``"all"``: the whole boundary.
    * ``{"side": "left"|"right"|"bottom"|"top"}``: edges of one side of an
      axis-aligned rectangle (matched by midpoint coordinate).
    * ``{"box": [xmin, ymin, xmax, ymax]}``: edges with both endpoints in
      the closed box.
    * ``{"angle": [a0, a1]}``: edges whose midpoint polar angle (radians,
      measured from the domain centroid) lies in [a0, a1].
    * a callable taking the edge midpoint ``(x, y)`` and returning bool.

    The selection must be nonempty and connected along the boundary.
    """
    be = mesh.boundary_edges
    mids = 0.5 * (mesh.vertices[be[:, 0]] + mesh.vertices[be[:, 1]])
    if selector == "all":
        keep = np.ones(len(be), dtype=bool)
    elif callable(selector):
        keep = np.array([bool(selector(m[0], m[1])) for m in mids])
    elif isinstance(selector, dict) and "side" in selector:
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        tol = 1e-9 * max(hi[0] - lo[0], hi[1] - lo[1])
        side = selector["side"]
        if side == "left":
            keep = np.abs(mids[:, 0] - lo[0]) < tol
        elif side == "right":
            keep = np.abs(mids[:, 0] - hi[0]) < tol
        elif side == "bottom":
            keep = np.abs(mids[:, 1] - lo[1]) < tol
        elif side == "top":
            keep = np.abs(mids[:, 1] - hi[1]) < tol
        else:
            raise ValueError("unknown side %r" % (side,))
    elif isinstance(selector, dict) and "box" in selector:
        x0, y0, x1, y1 = selector["box"]
        p = mesh.vertices[be[:, 0]]
        q = mesh.vertices[be[:, 1]]
        keep = (
            (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
            & (q[:, 0] >= x0) & (q[:, 0] <= x1) & (q[:, 1] >= y0) & (q[:, 1] <= y1)
        )
    elif isinstance(selector, dict) and "angle" in selector:
        a0, a1 = selector["angle"]
        c = mesh.vertices.mean(axis=0)
        ang = np.arctan2(mids[:, 1] - c[1], mids[:, 0] - c[0])
        ang = np.where(ang < a0, ang + 2 * np.pi, ang)
        keep = (ang >= a0) & (ang <= a1)
    else:
        raise ValueError("unrecognized gamma selector %r" % (selector,))
    if not keep.any():
        raise ValueError("gamma selector matched no boundary edge")
    return Mesh(mesh.vertices, mesh.triangles, be, be[keep])


# ---------------------------------------------------------------------- #
# cracks
# ---------------------------------------------------------------------- #


class CrackComponent:
    """One crack: a simple chain of interior mesh edges plus its kind."""

    def __init__(self, chain, kind):
        if kind not in KINDS:
            raise ValueError("kind must be one of %s" % (KINDS,))
        self.chain = tuple(int(v) for v in chain)
        self.kind = kind
        if len(self.chain) < 2:
            raise ValueError("a crack chain needs at least one edge")
        if len(set(self.chain)) != len(self.chain):
            raise ValueError("crack chain must be simple")

    def edges(self):
        return [(self.chain[i], self.chain[i + 1]) for i in range(len(self.chain) - 1)]

    def __repr__(self):
        return "CrackComponent(kind=%s, vertices=%d)" % (self.kind, len(self.chain))


class CrackSet:
    """Disjoint crack components; may mix insulating and conducting kinds."""

    def __init__(self, components=()):
        self.components = tuple(components)

    def __len__(self):
        return len(self.components)

    def __repr__(self):
        return "CrackSet(%s)" % (", ".join(repr(c) for c in self.components),)

    def kinds(self):
        return {c.kind for c in self.components}

    def of_kind(self, kind):
        return CrackSet([c for c in self.components if c.kind == kind])

    def edge_keys(self, mesh):
        """Undirected edge keys of every crack edge."""
        out = set()
        for comp in self.components:
            for a, b in comp.edges():
                out.add(mesh.edge_key(a, b))
        return out

    def vertex_set(self):
        out = set()
        for comp in self.components:
            out.update(comp.chain)
        return out

    def validate(self, mesh):
        """Check all invariants against the mesh; raise ValueError on failure."""
        bvs = mesh.boundary_vertex_set()
        et = mesh.edge_tris()
        seen_vertices = set()
        for comp in self.components:
            cv = set(comp.chain)
            if cv & bvs:
                raise ValueError("crack touches the boundary")
            if cv & seen_vertices:
                raise ValueError("crack components share a vertex")
            seen_vertices |= cv
            for a, b in comp.edges():
                tris = et.get(mesh.edge_key(a, b))
                if tris is None or len(tris) != 2:
                    raise ValueError("crack chain must follow interior mesh edges")
            for v in comp.chain:
                if mesh.distance_to_boundary(mesh.vertices[v]) <= 0:
                    raise ValueError("crack vertex on the boundary")
        if len(self.components) > 1:
            for i in range(len(self.components)):
                for j in range(i + 1, len(self.components)):
                    vi = mesh.vertices[list(self.components[i].chain)]
                    vj = mesh.vertices[list(self.components[j].chain)]
                    d = np.min(
                        np.linalg.norm(vi[:, None, :] - vj[None, :, :], axis=2)
                    )
                    if d <= 0:
                        raise ValueError("crack components must stay separated")
        if self.components and not self._interior_connected(mesh):
            raise ValueError("cracks must leave the domain interior connected")

    def _interior_connected(self, mesh):
        cut = self.edge_keys(mesh)
        et = mesh.edge_tris()
        nt = len(mesh.triangles)
        adj = [[] for _ in range(nt)]
        for key, tris in et.items():
            if len(tris) == 2 and key not in cut:
                a, b = tris
                adj[a].append(b)
                adj[b].append(a)
        seen = np.zeros(nt, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return bool(seen.all())

    def to_json(self):
        return {
            "components": [
                {"chain": list(c.chain), "kind": c.kind} for c in self.components
            ]
        }

    @classmethod
    def from_json(cls, data, mesh=None):
        cs = cls([CrackComponent(c["chain"], c["kind"]) for c in data["components"]])
        if mesh is not None:
            cs.validate(mesh)
        return cs


def embed_crack(mesh, polyline, kind, cracks=None):
    """Embed a polyline crack along mesh edges; returns (new mesh, crack set).

    Vertices of the mesh near the polyline are relocated onto it (anchors of
    the polyline move their nearest vertex exactly; intermediate path
    vertices move to their orthogonal projection), so the resulting chain of
    mesh edges coincides with the polyline. The relocation must keep every
    triangle positively oriented, otherwise the polyline is not resolvable
    at this mesh size and the call fails.

    ``cracks`` carries previously embedded components; their vertices are
    never moved, and the new component must stay disjoint from them.
    """
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("polyline must be a list of at least two 2D points")
    if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
        raise ValueError("consecutive polyline points must be distinct")
    for i in range(len(pts) - 1):
        for j in range(i + 2, len(pts) - 1):
            if _segments_intersect(pts[i], pts[i + 1], pts[j], pts[j + 1]):
                raise ValueError("polyline must not self-intersect")
    for p in pts:
        if mesh.containing_triangle(p) < 0:
            raise ValueError("polyline leaves the domain")
        if mesh.distance_to_boundary(p) <= 1e-12:
            raise ValueError("polyline touches the boundary")

    existing = cracks.components if cracks is not None else ()
    blocked = mesh.boundary_vertex_set() | set().union(
        *(set(c.chain) for c in existing), set()
    )

    # nearest free vertex for each polyline anchor
    anchors = []
    for p in pts:
        d = np.linalg.norm(mesh.vertices - p, axis=1)
        order = np.argsort(d)
        pick = next((int(v) for v in order if int(v) not in blocked), None)
        if pick is None:
            raise ValueError("no interior vertex available near polyline point")
        anchors.append(pick)
    if len(set(anchors)) != len(anchors):
        raise ValueError("polyline is too short for the mesh resolution")

    # adjacency over interior, unblocked vertices
    n = len(mesh.vertices)
    adj = {}
    tri = mesh.triangles
    pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    for a, b in pairs:
        a, b = int(a), int(b)
        if a in blocked or b in blocked:
            continue
        adj.setdefault(a, set()).add(b)
        adj.setdefault(b, set()).add(a)

    def dijkstra(src, dst, seg_a, seg_b):
        seg_len = float(np.linalg.norm(seg_b - seg_a))
        dist = {src: 0.0}
        prev = {}
        heap = [(0.0, src)]
        while heap:
            du, u = heapq.heappop(heap)
            if u == dst:
                break
            if du > dist.get(u, np.inf):
                continue
            pu = mesh.vertices[u]
            for w in adj.get(u, ()):
                pw = mesh.vertices[w]
                dev = point_segment_distance(pw, seg_a[None, :], seg_b[None, :])
                cost = float(np.linalg.norm(pw - pu)) + 20.0 * float(dev)
                nd = du + cost
                if nd < dist.get(w, np.inf) - 1e-15:
                    dist[w] = nd
                    prev[w] = u
                    heapq.heappush(heap, (nd, w))
        if dst not in dist:
            raise ValueError("no edge path between polyline points")
        path = [dst]
        while path[-1] != src:
            path.append(prev[path[-1]])
        return path[::-1]

    chain = [anchors[0]]
    moved = {anchors[0]: pts[0].copy()}
    for s in range(len(pts) - 1):
        path = dijkstra(anchors[s], anchors[s + 1], pts[s], pts[s + 1])
        seg = pts[s + 1] - pts[s]
        seg_len2 = float(seg @ seg)
        last_t = 0.0
        for v in path[1:]:
            t = float((mesh.vertices[v] - pts[s]) @ seg) / seg_len2
            if v == anchors[s + 1]:
                moved[v] = pts[s + 1].copy()
            else:
                if t <= last_t or t >= 1.0:
                    raise ValueError("edge path does not advance along the polyline")
                moved[v] = pts[s] + t * seg
                last_t = t
            chain.append(v)
    if len(set(chain)) != len(chain):
        raise ValueError("crack chain must be simple")

    new_vertices = mesh.vertices.copy()
    for v, p in moved.items():
        new_vertices[v] = p
    areas = _signed_areas(new_vertices, mesh.triangles)
    if np.any(areas <= 0):
        raise ValueError("crack not resolvable at this mesh size (triangle flip)")

    new_mesh = Mesh(
        new_vertices, mesh.triangles, mesh.boundary_edges, mesh.gamma_edges, check=False
    )
    comp = CrackComponent(chain, kind)
    out = CrackSet(tuple(existing) + (comp,))
    out.validate(new_mesh)
    return new_mesh, out


# ---------------------------------------------------------------------- #
# pixels
# ---------------------------------------------------------------------- #


class PixelGrid:
    """Square pixels tiling the bounding rectangle of a mesh.

    Pixel index is row-major: ``p = iy * nx + ix`` with ``ix`` fastest.
    Triangles are assigned to the pixel containing their centroid, so every
    triangle belongs to exactly one pixel. ``boundary_pixels`` are the
    pixels whose closed square touches the domain boundary; admissible test
    inclusions must avoid them.
    """

    def __init__(self, mesh, nx, ny):
        if nx < 1 or ny < 1:
            raise ValueError("nx, ny must be positive")
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        hx = (hi[0] - lo[0]) / nx
        hy = (hi[1] - lo[1]) / ny
        if abs(hx - hy) > 1e-9 * max(hx, hy):
            raise ValueError("pixels must be square: nx, ny mismatch the domain aspect")
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(0.5 * (hx + hy))
        self.mesh = mesh
        self.origin = np.array([lo[0], lo[1]], dtype=float)
        self.origin.setflags(write=False)

        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        ix = np.clip(((cent[:, 0] - lo[0]) / hx).astype(int), 0, nx - 1)
        iy = np.clip(((cent[:, 1] - lo[1]) / hy).astype(int), 0, ny - 1)
        self.tri_pixel = iy * nx + ix
        self.tri_pixel.setflags(write=False)

        a, b = mesh.boundary_segments()
        touched = set()
        for p0, p1 in zip(a, b):
            for pix in self._pixels_near_segment(p0, p1):
                touched.add(pix)
        self.boundary_pixels = frozenset(touched)
        self.nonempty_pixels = frozenset(np.unique(self.tri_pixel).tolist())
        self._pixel_tris = None

    def _pixels_near_segment(self, p0, p1, tol=1e-12):
        x0, y0 = self.origin
        h = self.h
        ix_lo = max(0, int(math.floor((min(p0[0], p1[0]) - x0) / h - tol)))
        ix_hi = min(self.nx - 1, int(math.floor((max(p0[0], p1[0]) - x0) / h + tol)))
        iy_lo = max(0, int(math.floor((min(p0[1], p1[1]) - y0) / h - tol)))
        iy_hi = min(self.ny - 1, int(math.floor((max(p0[1], p1[1]) - y0) / h + tol)))
        out = []
        for iy in range(iy_lo, iy_hi + 1):
            for ix in range(ix_lo, ix_hi + 1):
                sq = self.square(iy * self.nx + ix)
                if _segment_intersects_rect(p0, p1, *sq):
                    out.append(iy * self.nx + ix)
        return out

    def pixels_touching_segment(self, p0, p1):
        """Pixels whose closed square meets the closed segment p0-p1."""
        return set(self._pixels_near_segment(np.asarray(p0, float), np.asarray(p1, float)))

    @property
    def n_pixels(self):
        return self.nx * self.ny

    def coords(self, p):
        return p % self.nx, p // self.nx

    def index(self, ix, iy):
        return iy * self.nx + ix

    def square(self, p):
        ix, iy = self.coords(p)
        x0 = self.origin[0] + ix * self.h
        y0 = self.origin[1] + iy * self.h
        return x0, y0, x0 + self.h, y0 + self.h

    def center(self, p):
        x0, y0, x1, y1 = self.square(p)
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    def neighbors4(self, p):
        ix, iy = self.coords(p)
        out = []
        if ix > 0:
            out.append(p - 1)
        if ix < self.nx - 1:
            out.append(p + 1)
        if iy > 0:
            out.append(p - self.nx)
        if iy < self.ny - 1:
            out.append(p + self.nx)
        return out

    def pixel_tris(self, p):
        """Triangle indices assigned to pixel ``p``."""
        if self._pixel_tris is None:
            order = np.argsort(self.tri_pixel, kind="stable")
            split = np.searchsorted(self.tri_pixel[order], np.arange(self.n_pixels + 1))
            self._pixel_tris = [
                order[split[i]:split[i + 1]] for i in range(self.n_pixels)
            ]
        return self._pixel_tris[p]

    def to_json(self):
        return {
            "origin": self.origin.tolist(),
            "nx": self.nx,
            "ny": self.ny,
            "h": self.h,
        }

    @classmethod
    def from_json(cls, data, mesh):
        grid = cls(mesh, int(data["nx"]), int(data["ny"]))
        if (
            abs(grid.h - data["h"]) > 1e-9 * grid.h
            or np.max(np.abs(grid.origin - np.asarray(data["origin"]))) > 1e-9 * grid.h
        ):
            raise ValueError("pixel grid does not match the mesh extent")
        return grid


class PixelSet:
    """A union of pixels used as a test inclusion."""

    def __init__(self, grid, members=()):
        self.grid = grid
        self.members = frozenset(int(m) for m in members)
        for m in self.members:
            if not (0 <= m < grid.n_pixels):
                raise ValueError("pixel index out of range")

    def __len__(self):
        return len(self.members)

    def __eq__(self, other):
        return (
            isinstance(other, PixelSet)
            and self.grid is other.grid
            and self.members == other.members
        )

    def __hash__(self):
        return hash(self.members)

    def __repr__(self):
        return "PixelSet(%d pixels)" % len(self.members)

    @classmethod
    def from_rect(cls, grid, ix0, iy0, ix1, iy1):
        """Pixels with ix0 <= ix <= ix1 and iy0 <= iy <= iy1."""
        members = [
            grid.index(ix, iy)
            for iy in range(iy0, iy1 + 1)
            for ix in range(ix0, ix1 + 1)
        ]
        return cls(grid, members)

    def mask(self):
        m = np.zeros((self.grid.ny, self.grid.nx), dtype=bool)
        for p in self.members:
            ix, iy = self.grid.coords(p)
            m[iy, ix] = True
        return m

    def minus(self, pixel):
        return PixelSet(self.grid, self.members - {int(pixel)})

    def union(self, other):
        return PixelSet(self.grid, self.members | other.members)

    def boundary_members(self):
        """Member pixels edge-adjacent to the complement, in index order."""
        out = []
        for p in sorted(self.members):
            nbrs = self.grid.neighbors4(p)
            if len(nbrs) < 4 or any(q not in self.members for q in nbrs):
                out.append(p)
        return out

    def dilate(self, rings=1):
        """Grow by ``rings`` layers of 8-neighbors (clipped to the grid)."""
        cur = set(self.members)
        for _ in range(rings):
            grown = set(cur)
            for p in cur:
                ix, iy = self.grid.coords(p)
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        jx, jy = ix + dx, iy + dy
                        if 0 <= jx < self.grid.nx and 0 <= jy < self.grid.ny:
                            grown.add(self.grid.index(jx, jy))
            cur = grown
        return PixelSet(self.grid, cur)

    def triangles(self):
        """Sorted indices of the triangles inside the member pixels."""
        if not self.members:
            return np.zeros(0, dtype=np.int64)
        parts = [self.grid.pixel_tris(p) for p in sorted(self.members)]
        return np.sort(np.concatenate(parts))

    def vertex_set(self, mesh):
        """Vertices incident to any member-pixel triangle."""
        t = self.triangles()
        return set(mesh.triangles[t].ravel().tolist()) if t.size else set()

    def to_json(self):
        return {"grid": self.grid.to_json(), "members": sorted(self.members)}


def pixelset_is_admissible(p):
    """Whether the pixel union is a valid test inclusion.

    Requires a connected complement (every non-member pixel can reach the
    outside of the grid through edge-adjacent non-members), no diagonal
    corner contacts in any 2x2 block, and no member touching the domain
    boundary. The empty set is admissible.
    """
    if not p.members:
        return True
    if p.members & p.grid.boundary_pixels:
        return False
    # a pixel with no triangles lies outside the meshed domain
    if p.members - p.grid.nonempty_pixels:
        return False
    nx, ny = p.grid.nx, p.grid.ny
    m = p.mask()

    # corner contacts: either diagonal pattern in a 2x2 block (pad with
    # complement so blocks straddling the grid edge are covered)
    pad = np.zeros((ny + 2, nx + 2), dtype=bool)
    pad[1:-1, 1:-1] = m
    a = pad[:-1, :-1]
    b = pad[:-1, 1:]
    c = pad[1:, :-1]
    d = pad[1:, 1:]
    if np.any((a & d & ~b & ~c) | (b & c & ~a & ~d)):
        return False

    # complement connectivity to the grid exterior
    comp = ~m
    seen = np.zeros_like(comp)
    stack = []
    for ix in range(nx):
        for iy in (0, ny - 1):
            if comp[iy, ix] and not seen[iy, ix]:
                seen[iy, ix] = True
                stack.append((ix, iy))
    for iy in range(ny):
        for ix in (0, nx - 1):
            if comp[iy, ix] and not seen[iy, ix]:
                seen[iy, ix] = True
                stack.append((ix, iy))
    while stack:
        ix, iy = stack.pop()
        for jx, jy in ((ix - 1, iy), (ix + 1, iy), (ix, iy - 1), (ix, iy + 1)):
            if 0 <= jx < nx and 0 <= jy < ny and comp[jy, jx] and not seen[jy, jx]:
                seen[jy, jx] = True
                stack.append((jx, jy))
    return bool(np.all(seen[comp]))


def interior_pixel_set(grid):
    """Pixels that hold domain triangles and keep clear of the boundary."""
    return PixelSet(grid, grid.nonempty_pixels - grid.boundary_pixels)


def peel_candidates(p):
    """All admissible sets reachable by removing one boundary pixel of ``p``.

    Candidates are generated in row-major pixel order, so the result is
    deterministic. The list is empty when no single removal stays
    admissible.
    """
    out = []
    for m in p.boundary_members():
        q = p.minus(m)
        if pixelset_is_admissible(q):
            out.append(q)
    return out
