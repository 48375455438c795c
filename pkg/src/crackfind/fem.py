"""Piecewise-linear finite elements on slit and constrained triangulations.

The degree-of-freedom map realizes four kinds of constrained spaces on one
mesh:

* insulating cracks: every interior vertex of a chain carries one dof per
  side of the slit (the two fans of incident triangles), while the chain
  tips keep a single dof, so the crack opens but stays attached at its ends;
* conducting cracks: all vertices of a component share one dof, which makes
  the potential constant there and balances the flux jump weakly;
* an excluded pixel region: its triangles drop out of the bilinear form and
  enclosed vertices lose their dofs (Neumann hole);
* a frozen pixel region: each connected component of the region collapses
  to a single dof (potential locally constant there).

Potentials are grounded by pinning one boundary dof during the solve and
subtracting the mean of the trace over the measurement arc afterwards.
"""

from __future__ import annotations

import json

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry
from .geometry import CONDUCTING, INSULATING

MEAN_FREE_RTOL = 1e-9
RESIDUAL_RTOL = 1e-10


class Conductivity:
    """Positive per-triangle background conductivity."""

    def __init__(self, mesh, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 0:
            v = np.full(len(mesh.triangles), float(v))
        if v.shape != (len(mesh.triangles),):
            raise ValueError("need one conductivity value per triangle")
        if not np.all(v > 0):
            raise ValueError("conductivity must be strictly positive")
        self.values = v
        self.values.setflags(write=False)

    @classmethod
    def constant(cls, mesh, value=1.0):
        return cls(mesh, value)

    @classmethod
    def from_spec(cls, mesh, spec):
        """Build from a number or a {default, boxes: [{box, value}]} mapping."""
        if isinstance(spec, (int, float)):
            return cls(mesh, float(spec))
        vals = np.full(len(mesh.triangles), float(spec.get("default", 1.0)))
        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        for rule in spec.get("boxes", ()):
            x0, y0, x1, y1 = rule["box"]
            inside = (
                (cent[:, 0] >= x0)
                & (cent[:, 0] <= x1)
                & (cent[:, 1] >= y0)
                & (cent[:, 1] <= y1)
            )
            vals[inside] = float(rule["value"])
        return cls(mesh, vals)


class Field:
    """A dof vector tied to the DofMap it was solved on."""

    def __init__(self, values, dofmap):
        self.values = np.asarray(values, dtype=float)
        self.dofmap = dofmap

    def __repr__(self):
        return "Field(%d dofs)" % len(self.values)


class ElementVectorField:
    """Per-triangle constant 2-vector supported on a set of triangles."""

    def __init__(self, mesh, values, support):
        self.mesh = mesh
        self.support = np.asarray(sorted(set(int(t) for t in support)), dtype=np.int64)
        v = np.zeros((len(mesh.triangles), 2))
        values = np.asarray(values, dtype=float)
        if values.shape == (len(self.support), 2):
            v[self.support] = values
        elif values.shape == v.shape:
            v[self.support] = values[self.support]
        else:
            raise ValueError("values must cover the support or the whole mesh")
        self.values = v
        self.values.setflags(write=False)

    def __repr__(self):
        return "ElementVectorField(%d support triangles)" % len(self.support)


def gamma_mass(mesh):
    """Mass matrix of piecewise-linear functions on the measurement arc.

    Rows and columns follow ``mesh.gamma_vertices()`` order.
    """
    if "gamma_mass" not in mesh._cache:
        order = mesh.gamma_vertices()
        pos = {int(v): i for i, v in enumerate(order)}
        G = len(order)
        M = np.zeros((G, G))
        for a, b in mesh.gamma_edges:
            ell = float(np.linalg.norm(mesh.vertices[a] - mesh.vertices[b]))
            ia, ib = pos[int(a)], pos[int(b)]
            M[ia, ia] += ell / 3.0
            M[ib, ib] += ell / 3.0
            M[ia, ib] += ell / 6.0
            M[ib, ia] += ell / 6.0
        M.setflags(write=False)
        mesh._cache["gamma_mass"] = M
    return mesh._cache["gamma_mass"]


def _hat_gradients(mesh):
    # gradients of the three nodal hats per triangle, shape (t, 3, 2)
    if "hat_grads" not in mesh._cache:
        p = mesh.vertices[mesh.triangles]
        e = p[:, [2, 0, 1], :] - p[:, [1, 2, 0], :]
        g = np.stack([-e[..., 1], e[..., 0]], axis=-1)
        g /= (2.0 * mesh.tri_areas())[:, None, None]
        g.setflags(write=False)
        mesh._cache["hat_grads"] = g
    return mesh._cache["hat_grads"]


class DofMap:
    """Vertex-to-dof assignment realizing one constrained space.

    ``corner_dof`` has one dof index per triangle corner (-1 on excluded
    triangles), which is the resolution needed to keep the two sides of an
    insulating slit apart. ``vertex_dof`` gives a representative dof per
    vertex (the side-A dof for slit vertices, -1 for vertices swallowed by
    an excluded region) and is what boundary traces use.
    """

    def __init__(self, mesh, cracks, excluded, frozen, corner_dof, active_tri, n_dofs, counts):
        self.mesh = mesh
        self.cracks = cracks
        self.excluded = excluded
        self.frozen = frozen
        self.corner_dof = corner_dof
        self.active_tri = active_tri
        self.n_dofs = int(n_dofs)
        self.counts = counts
        for arr in (self.corner_dof, self.active_tri):
            arr.setflags(write=False)

        vertex_dof = np.full(len(mesh.vertices), -1, dtype=np.int64)
        tri = mesh.triangles
        # reversed order: lower triangle indices win as representatives
        for t in range(len(tri) - 1, -1, -1):
            if active_tri[t]:
                vertex_dof[tri[t]] = corner_dof[t]
        # side A of a slit vertex is the fan that kept the original dof;
        # make the representative deterministic: smallest dof at the vertex
        for comp in cracks.components:
            if comp.kind != INSULATING:
                continue
            for v in comp.chain:
                dofs = [
                    corner_dof[t, list(tri[t]).index(v)]
                    for t in mesh.vertex_tris()[v]
                    if active_tri[t]
                ]
                vertex_dof[v] = min(dofs)
        self.vertex_dof = vertex_dof
        self.vertex_dof.setflags(write=False)

        self.gamma_order = mesh.gamma_vertices()
        self.gamma_dofs = self.vertex_dof[self.gamma_order]
        if np.any(self.gamma_dofs < 0):
            raise ValueError("a measurement-arc vertex lost its dof")
        self.gamma_dofs.setflags(write=False)

    def config_label(self):
        parts = []
        ins = sum(1 for c in self.cracks.components if c.kind == INSULATING)
        con = sum(1 for c in self.cracks.components if c.kind == CONDUCTING)
        if ins:
            parts.append("ins:%d" % ins)
        if con:
            parts.append("con:%d" % con)
        if self.excluded is not None and len(self.excluded):
            parts.append("excluded:%dpx" % len(self.excluded))
        if self.frozen is not None and len(self.frozen):
            parts.append("frozen:%dpx" % len(self.frozen))
        return "+".join(parts) if parts else "none"

    def __repr__(self):
        return "DofMap(%s, %d dofs)" % (self.config_label(), self.n_dofs)


def build_dofmap(mesh, cracks=None, excluded=None, frozen=None):
    """Construct the dof map for a crack set and an optional pixel region.

    ``excluded`` and ``frozen`` are mutually exclusive. Regions must be
    admissible pixel sets and may not touch any crack vertex: mixing a
    region with a crack inside it has no defined meaning here and is
    rejected outright.
    """
    if cracks is None:
        cracks = geometry.CrackSet()
    if excluded is not None and len(excluded) == 0:
        excluded = None
    if frozen is not None and len(frozen) == 0:
        frozen = None
    if excluded is not None and frozen is not None:
        raise ValueError("excluded and frozen regions are mutually exclusive")
    region = excluded if excluded is not None else frozen
    if region is not None and not geometry.pixelset_is_admissible(region):
        raise ValueError("region must be an admissible pixel set")
    if cracks.components:
        cracks.validate(mesh)
        if region is not None:
            if cracks.vertex_set() & region.vertex_set(mesh):
                raise ValueError("cracks overlapping the region are not supported")

    nv = len(mesh.vertices)
    tri = mesh.triangles
    corner = tri.astype(np.int64).copy()
    active = np.ones(len(tri), dtype=bool)
    vt = mesh.vertex_tris()

    # insulating slits: a second dof for the far-side fan of each interior
    # chain vertex
    next_dof = nv
    slit_extra = 0
    for comp in cracks.components:
        if comp.kind != INSULATING:
            continue
        ch = comp.chain
        for i in range(1, len(ch) - 1):
            v, prv, nxt = ch[i], ch[i - 1], ch[i + 1]
            tris_v = vt[v]
            cut = {frozenset((v, prv)), frozenset((v, nxt))}
            pair = {}
            for t in tris_v:
                for w in tri[t]:
                    w = int(w)
                    if w != v and frozenset((v, w)) not in cut:
                        pair.setdefault(w, []).append(t)
            adj = {t: [] for t in tris_v}
            for ts in pair.values():
                if len(ts) == 2:
                    adj[ts[0]].append(ts[1])
                    adj[ts[1]].append(ts[0])
            comp_id = {}
            n_sides = 0
            for t0 in tris_v:
                if t0 in comp_id:
                    continue
                stack = [t0]
                comp_id[t0] = n_sides
                while stack:
                    u = stack.pop()
                    for w in adj[u]:
                        if w not in comp_id:
                            comp_id[w] = n_sides
                            stack.append(w)
                n_sides += 1
            if n_sides != 2:
                raise ValueError("slit vertex fan does not split into two sides")
            for t in tris_v:
                if comp_id[t] == 1:
                    c = list(tri[t]).index(v)
                    corner[t, c] = next_dof
            next_dof += 1
            slit_extra += 1

    # ties: conducting chains and frozen-region components map onto their
    # smallest vertex id
    remap = np.arange(next_dof, dtype=np.int64)
    tied_reduction = 0
    for comp in cracks.components:
        if comp.kind != CONDUCTING:
            continue
        rep = min(comp.chain)
        for v in comp.chain:
            remap[v] = rep
        tied_reduction += len(comp.chain) - 1

    frozen_reduction = 0
    if frozen is not None:
        todo = set(frozen.members)
        while todo:
            seed = min(todo)
            block = {seed}
            stack = [seed]
            todo.discard(seed)
            while stack:
                p = stack.pop()
                for q in frozen.grid.neighbors4(p):
                    if q in todo:
                        todo.discard(q)
                        block.add(q)
                        stack.append(q)
            verts = geometry.PixelSet(frozen.grid, block).vertex_set(mesh)
            rep = min(verts)
            for v in verts:
                remap[v] = rep
            frozen_reduction += len(verts) - 1

    corner = remap[corner]

    excluded_vertices = 0
    if excluded is not None:
        active[excluded.triangles()] = False
        used = np.unique(tri[active])
        excluded_vertices = nv - len(used)

    used_dofs = np.unique(corner[active])
    dense = np.full(next_dof, -1, dtype=np.int64)
    dense[used_dofs] = np.arange(len(used_dofs))
    final = np.where(active[:, None], dense[corner], -1)

    counts = {
        "vertices": nv,
        "slit_extra": slit_extra,
        "tied_reduction": tied_reduction,
        "excluded_vertices": excluded_vertices,
        "frozen_reduction": frozen_reduction,
    }
    return DofMap(
        mesh, cracks, excluded, frozen, final, active, len(used_dofs), counts
    )


def assemble_stiffness(mesh, gamma0, dm):
    """Sparse symmetric stiffness matrix of the weighted Dirichlet form."""
    if dm.mesh is not mesh:
        raise ValueError("dof map was built for a different mesh")
    g = _hat_gradients(mesh)
    areas = mesh.tri_areas()
    local = np.einsum("tic,tjc->tij", g, g) * (areas * gamma0.values)[:, None, None]
    act = dm.active_tri
    rows = np.repeat(dm.corner_dof[act], 3, axis=1).reshape(-1)
    cols = np.tile(dm.corner_dof[act], (1, 3)).reshape(-1)
    vals = local[act].reshape(-1)
    K = sp.coo_matrix((vals, (rows, cols)), shape=(dm.n_dofs, dm.n_dofs)).tocsr()
    return 0.5 * (K + K.T)


class Factorization:
    """Direct factorization of the grounded stiffness, reusable across solves.

    One dof (the first measurement-arc vertex) is pinned to zero, which
    makes the reduced matrix positive definite; callers re-ground the
    solution by subtracting the trace mean.
    """

    def __init__(self, K, dm):
        self.dm = dm
        self.pin = int(dm.gamma_dofs[0])
        keep = np.ones(dm.n_dofs, dtype=bool)
        keep[self.pin] = False
        self.keep = keep
        self.K = K
        self._lu = spla.splu(K[keep][:, keep].tocsc())

    def solve(self, b):
        x = np.zeros(self.dm.n_dofs)
        x[self.keep] = self._lu.solve(b[self.keep])
        return x


def _ground(dm, x):
    M = gamma_mass(dm.mesh)
    w = M.sum(axis=1)
    mean = float(w @ x[dm.gamma_dofs]) / float(w.sum())
    return x - mean


def _check_residual(K, x, b):
    bn = float(np.linalg.norm(b))
    if bn == 0.0:
        return 0.0
    r = float(np.linalg.norm(K @ x - b))
    if r > RESIDUAL_RTOL * bn:
        raise RuntimeError(
            "linear solve did not converge: relative residual %.3e" % (r / bn)
        )
    return r / bn


def solve_neumann(K, dm, f, fact=None):
    """Solve the weak problem for a mean-free current on the arc.

    ``f`` holds nodal current-density values on the ordered arc vertices.
    The result is grounded: its trace has zero mean.
    """
    f = np.asarray(f, dtype=float)
    M = gamma_mass(dm.mesh)
    if f.shape != (len(M),):
        raise ValueError("current vector does not match the arc nodes")
    total = float(M.sum(axis=1) @ f)
    scale = float(M.sum()) * max(1.0, float(np.max(np.abs(f))))
    if abs(total) > MEAN_FREE_RTOL * scale:
        raise ValueError("boundary current must be mean-free on the arc")
    b = np.zeros(dm.n_dofs)
    np.add.at(b, dm.gamma_dofs, M @ f)
    if fact is None:
        fact = Factorization(K, dm)
    x = fact.solve(b)
    _check_residual(K, x, b)
    return Field(_ground(dm, x), dm)


def solve_source(K, dm, F, fact=None):
    """Solve for the potential generated by an interior element source."""
    if F.mesh is not dm.mesh:
        raise ValueError("source field lives on a different mesh")
    g = _hat_gradients(dm.mesh)
    areas = dm.mesh.tri_areas()
    b = np.zeros(dm.n_dofs)
    for t in F.support:
        if not dm.active_tri[t]:
            raise ValueError("source support meets the excluded region")
        contrib = areas[t] * (g[t] @ F.values[t])
        np.add.at(b, dm.corner_dof[t], contrib)
    if fact is None:
        fact = Factorization(K, dm)
    x = fact.solve(b)
    _check_residual(K, x, b)
    return Field(_ground(dm, x), dm)


def energy(K, a, b):
    """Bilinear energy form of two fields on the same dof map."""
    if a.dofmap is not b.dofmap:
        raise ValueError("fields live on different dof maps")
    return float(a.values @ (K @ b.values))


def gradient_on(field, region):
    """Per-triangle gradient of a field, restricted to a region.

    ``region`` is a PixelSet or an iterable of triangle indices. Triangles
    outside the region (or excluded from the dof map) carry a zero vector.
    """
    dm = field.dofmap
    mesh = dm.mesh
    if isinstance(region, geometry.PixelSet):
        tris = region.triangles()
    else:
        tris = np.asarray(sorted(set(int(t) for t in region)), dtype=np.int64)
    tris = tris[dm.active_tri[tris]] if tris.size else tris
    g = _hat_gradients(mesh)
    vals = np.zeros((len(tris), 2))
    for k, t in enumerate(tris):
        u = field.values[dm.corner_dof[t]]
        vals[k] = u @ g[t]
    return ElementVectorField(mesh, vals, tris)


def trace_on_gamma(field):
    """Nodal trace on the ordered measurement-arc vertices."""
    return field.values[field.dofmap.gamma_dofs].copy()


def embed_field(field, target_dm):
    """Re-express a field in a larger space on the same mesh.

    Works per triangle corner, so it is exact whenever the source space is
    a subspace of the target space (for example: an unslit solution viewed
    in a slit space, or a frozen-region solution viewed without the
    region). Inconsistent corner values mean the spaces do not nest.
    """
    src = field.dofmap
    if src.mesh is not target_dm.mesh:
        raise ValueError("dof maps live on different meshes")
    out = np.full(target_dm.n_dofs, np.nan)
    act = target_dm.active_tri & src.active_tri
    scale = max(1.0, float(np.max(np.abs(field.values))))
    for t in np.nonzero(act)[0]:
        for c in range(3):
            d_t = target_dm.corner_dof[t, c]
            v = field.values[src.corner_dof[t, c]]
            if np.isnan(out[d_t]):
                out[d_t] = v
            elif abs(out[d_t] - v) > 1e-9 * scale:
                raise ValueError("field is not representable in the target space")
    if np.any(np.isnan(out)):
        raise ValueError("target space has dofs outside the source's support")
    return Field(out, target_dm)


def field_to_csv(field, path):
    arr = np.column_stack([np.arange(len(field.values)), field.values])
    np.savetxt(path, arr, fmt=["%d", "%.17g"], delimiter=",", header="dof,value", comments="")


def field_to_vertex_json(field, path=None):
    """Per-vertex values aligned with the mesh schema (side A on slits)."""
    dm = field.dofmap
    vals = [
        float(field.values[d]) if d >= 0 else None for d in dm.vertex_dof
    ]
    payload = {"vertex_values": vals}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(payload, fh)
    return payload
