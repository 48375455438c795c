"""Crack reconstruction from boundary data.

Two methods, both driven by eigenvalue tests on differences of
current-to-voltage matrices. The outer method peels pixels off a large
test region while the data stays bracketed between the region's excluded
and frozen responses; what survives is an upper bound for the crack set.
The inner method probes short axis-aligned edge chains and keeps those
whose response is dominated by the data; their union marks the cracks
from inside.
"""

from __future__ import annotations

import json

import numpy as np

from . import geometry, ndmap

MODES = ("both", "insulating", "conducting")

# extra slack multiple reported with every certificate so near-threshold
# decisions are visible without re-running
MARGIN_SCALE = 10.0


def _tau_for(minuend, tau):
    if tau is not None:
        return float(tau)
    return ndmap.default_tau(minuend)


def _entries(m):
    return m.entries if isinstance(m, ndmap.NdMatrix) else np.asarray(m, dtype=float)


class UpperBoundResult:
    """Outcome of the peeling method.

    ``peel_trace`` records every test in order: the initial region check,
    then one entry per attempted removal with its certificates. A
    certificate holds the test name, the smallest eigenvalue of the
    difference, the threshold used, and the margin to that threshold.
    """

    def __init__(self, final_set, peel_trace, inequalities_used, initial_ok):
        self.final_set = final_set
        self.peel_trace = tuple(peel_trace)
        self.inequalities_used = inequalities_used
        self.initial_ok = bool(initial_ok)

    def accepted_pixels(self):
        return [e["pixel"] for e in self.peel_trace if e["action"] == "peel" and e["passed"]]

    def rejected_pixels(self):
        return sorted({e["pixel"] for e in self.peel_trace if e["action"] == "peel" and not e["passed"]})

    def decision_margins(self):
        """Smallest pass margin and weakest fail margin over the whole trace.

        Margins are min_eig + tau: nonnegative for a pass, negative for a
        fail. Values near zero mean the call was close at the given tau.
        """
        pass_m, fail_m = None, None
        for entry in self.peel_trace:
            for cert in entry["certificates"]:
                m = cert["min_eig"] + cert["tau"]
                if cert["passed"]:
                    pass_m = m if pass_m is None else min(pass_m, m)
                else:
                    fail_m = m if fail_m is None else max(fail_m, m)
        return {"closest_pass": pass_m, "closest_fail": fail_m}

    def to_json(self):
        return {
            "method": "upper_bound_peeling",
            "inequalities_used": self.inequalities_used,
            "initial_ok": self.initial_ok,
            "grid": self.final_set.grid.to_json(),
            "final_members": sorted(self.final_set.members),
            "decision_margins": self.decision_margins(),
            "peel_trace": [dict(e) for e in self.peel_trace],
        }


class InnerResult:
    """Outcome of the test-crack union method.

    ``accepted`` and ``rejected`` partition the candidate list; each entry
    keeps the chain's vertex ids and the eigenvalue certificate of its
    test.
    """

    def __init__(self, kind, accepted, rejected):
        self.kind = kind
        self.accepted = tuple(accepted)
        self.rejected = tuple(rejected)

    def accepted_chains(self):
        return [e["chain"] for e in self.accepted]

    def decision_margins(self):
        pass_m = min((e["min_eig"] + e["tau"] for e in self.accepted), default=None)
        fail_m = max((e["min_eig"] + e["tau"] for e in self.rejected), default=None)
        return {"closest_pass": pass_m, "closest_fail": fail_m}

    def to_json(self):
        return {
            "method": "inner_chain_union",
            "kind": self.kind,
            "accepted": [dict(e) for e in self.accepted],
            "rejected": [dict(e) for e in self.rejected],
            "decision_margins": self.decision_margins(),
        }


def _certificate(name, diff, minuend, tau):
    t = _tau_for(minuend, tau)
    passed, min_eig = ndmap.psd_test(diff, t)
    return {
        "test": name,
        "passed": bool(passed),
        "min_eig": float(min_eig),
        "tau": float(t),
        "close_call": bool(abs(min_eig) < MARGIN_SCALE * t),
    }


def upper_bound_tests(data, mesh, gamma0, basis, region, mode="both", tau=None):
    """Run the bracket tests for one candidate region.

    Returns (all_passed, certificates). In mode "both" the data must sit
    between the region's frozen response and its excluded response; the
    single-kind modes run only the side that detects their crack kind.
    """
    if mode not in MODES:
        raise ValueError("mode must be one of %s" % (MODES,))
    d = _entries(data)
    certs = []
    ok = True
    if mode in ("both", "insulating"):
        upper = ndmap.nd_matrix(mesh, gamma0, {"excluded": region}, basis)
        cert = _certificate("excluded_minus_data", upper.entries - d, upper, tau)
        certs.append(cert)
        ok = ok and cert["passed"]
    if mode in ("both", "conducting"):
        lower = ndmap.nd_matrix(mesh, gamma0, {"frozen": region}, basis)
        cert = _certificate("data_minus_frozen", d - lower.entries, data, tau)
        certs.append(cert)
        ok = ok and cert["passed"]
    return ok, certs


def reconstruct_upper(data, mesh, gamma0, basis, grid, mode="both", tau=None):
    """Shrink a pixel region around the cracks by greedy peeling.

    Starts from every interior pixel with a one-pixel margin to the
    boundary. Each pass scans the current region's boundary pixels in
    index order and removes the first one whose removal keeps all
    applicable tests passing; the loop stops when no removal survives.

    A removal that fails once is never retried: the excluded response of
    any smaller region is dominated by the current one and the frozen
    response dominates it, so both test differences only move further
    negative as peeling proceeds (the thresholds move the same way). The
    trace records each removal's certificates from its first attempt.
    """
    if mode not in MODES:
        raise ValueError("mode must be one of %s" % (MODES,))
    region = geometry.interior_pixel_set(grid)
    trace = []
    ok0, certs0 = upper_bound_tests(data, mesh, gamma0, basis, region, mode, tau)
    trace.append(
        {"action": "initial", "pixels": len(region), "passed": ok0, "certificates": certs0}
    )
    if not ok0:
        # data inconsistent with every crack set inside the start region
        return UpperBoundResult(region, trace, mode, initial_ok=False)

    dead = set()
    while True:
        advanced = False
        for cand in geometry.peel_candidates(region):
            (pixel,) = region.members - cand.members
            if pixel in dead:
                continue
            ok, certs = upper_bound_tests(data, mesh, gamma0, basis, cand, mode, tau)
            trace.append(
                {"action": "peel", "pixel": int(pixel), "passed": ok, "certificates": certs}
            )
            if ok:
                region = cand
                advanced = True
                break
            dead.add(pixel)
        if not advanced:
            break
    return UpperBoundResult(region, trace, mode, initial_ok=True)


def _single_kind_label(label, kind):
    tag = "ins:" if kind == geometry.INSULATING else "con:"
    other = "con:" if kind == geometry.INSULATING else "ins:"
    return tag in label and other not in label


def reconstruct_inner(data, mesh, gamma0, basis, candidates, kind, tau=None):
    """Classify candidate chains by whether the data dominates their response.

    For insulating data a chain is kept when data - N_chain stays positive
    semidefinite; for conducting data when N_chain - data does. The data
    must come from cracks of the single matching kind; a config label
    showing both kinds is refused.
    """
    if kind not in geometry.KINDS:
        raise ValueError("kind must be one of %s" % (geometry.KINDS,))
    label = getattr(data, "config_label", "") or ""
    if "ins:" in label and "con:" in label:
        raise ValueError("data mixes crack kinds; inner tests need single-kind data")
    if ("ins:" in label or "con:" in label) and not _single_kind_label(label, kind):
        raise ValueError("data kind does not match the requested test kind")
    d = _entries(data)
    accepted, rejected = [], []
    for raw in candidates:
        comp = raw if isinstance(raw, geometry.CrackComponent) else geometry.CrackComponent(raw, kind)
        if comp.kind != kind:
            raise ValueError("candidate kind does not match the requested test kind")
        n_chain = ndmap.nd_matrix(mesh, gamma0, geometry.CrackSet([comp]), basis)
        if kind == geometry.INSULATING:
            diff, minuend = d - n_chain.entries, data
        else:
            diff, minuend = n_chain.entries - d, n_chain
        cert = _certificate("chain", diff, minuend, tau)
        entry = {
            "chain": [int(v) for v in comp.chain],
            "min_eig": cert["min_eig"],
            "tau": cert["tau"],
            "close_call": cert["close_call"],
        }
        (accepted if cert["passed"] else rejected).append(entry)
    return InnerResult(kind, accepted, rejected)


def axis_chain_candidates(mesh, region, lengths=(1, 2, 4)):
    """Horizontal and vertical interior-edge chains inside a pixel region.

    Chains follow consecutive collinear mesh edges; every chain vertex must
    be an interior vertex lying in the closed union of the region's pixel
    squares. Returned as vertex-id tuples, deterministically ordered by
    orientation, line, offset, and length.
    """
    verts = mesh.vertices
    nv = len(verts)
    bvs = mesh.boundary_vertex_set()
    tol = 1e-9 * mesh.h_max()

    lines = {"h": {}, "v": {}}
    for key, tris in mesh.edge_tris().items():
        if len(tris) != 2:
            continue
        a, b = divmod(key, nv)
        if a in bvs or b in bvs:
            continue
        dx = verts[b, 0] - verts[a, 0]
        dy = verts[b, 1] - verts[a, 1]
        if abs(dy) <= tol:
            axis, level, lo = "h", verts[a, 1], (a if dx > 0 else b)
            hi = b if lo == a else a
            sort_key = verts[lo, 0]
        elif abs(dx) <= tol:
            axis, level, lo = "v", verts[a, 0], (a if dy > 0 else b)
            hi = b if lo == a else a
            sort_key = verts[lo, 1]
        else:
            continue
        lines[axis].setdefault(round(float(level), 9), []).append((sort_key, lo, hi))

    grid = region.grid
    members = region.members

    def in_region(v):
        # closed squares: a vertex on a pixel edge belongs to both pixels
        fx = (verts[v, 0] - grid.origin[0]) / grid.h
        fy = (verts[v, 1] - grid.origin[1]) / grid.h
        eps = 1e-9
        for ix in {int(np.floor(fx - eps)), int(np.floor(fx + eps))}:
            for iy in {int(np.floor(fy - eps)), int(np.floor(fy + eps))}:
                if 0 <= ix < grid.nx and 0 <= iy < grid.ny and grid.index(ix, iy) in members:
                    return True
        return False

    out = []
    for axis in ("h", "v"):
        for level in sorted(lines[axis]):
            edges = sorted(lines[axis][level])
            # split into maximal runs of consecutive edges
            runs, cur = [], [edges[0]]
            for e in edges[1:]:
                if e[1] == cur[-1][2]:
                    cur.append(e)
                else:
                    runs.append(cur)
                    cur = [e]
            runs.append(cur)
            for run in runs:
                chain_all = [run[0][1]] + [e[2] for e in run]
                keep = [in_region(v) for v in chain_all]
                for k in lengths:
                    for s in range(len(chain_all) - k):
                        if all(keep[s : s + k + 1]):
                            out.append(tuple(chain_all[s : s + k + 1]))
    return out


def _truth_pixels_and_segments(ground_truth, grid):
    mesh = grid.mesh
    pixels = set()
    seg_a, seg_b = [], []
    for comp in ground_truth.components:
        pts = mesh.vertices[np.asarray(comp.chain, dtype=np.int64)]
        for a, b in zip(pts[:-1], pts[1:]):
            pixels |= grid.pixels_touching_segment(a, b)
            seg_a.append(a)
            seg_b.append(b)
    if seg_a:
        return pixels, np.asarray(seg_a), np.asarray(seg_b)
    return pixels, np.zeros((0, 2)), np.zeros((0, 2))


def _dist_to_segments(pt, seg_a, seg_b):
    if len(seg_a) == 0:
        return None
    d = geometry.point_segment_distance(pt, seg_a, seg_b)
    return float(np.min(d)) if np.ndim(d) else float(d)


def score(result, ground_truth, grid):
    """Quality metrics of a reconstruction against the true crack set.

    Ground truth is rasterized as the pixels whose closed square meets a
    crack segment. Because a crack lying on a pixel edge meets both
    adjacent pixels while either one alone covers it, set agreement is
    judged with one pixel of slack: precision allows results within the
    1-dilated truth, and the reported recall counts truth pixels within
    the 1-dilated result ("recall_strict" counts exact membership).
    """
    truth, seg_a, seg_b = _truth_pixels_and_segments(ground_truth, grid)

    if isinstance(result, InnerResult):
        truth_edges = set()
        for comp in ground_truth.components:
            for a, b in comp.edges():
                truth_edges.add(grid.mesh.edge_key(a, b))
        covered = set()
        for chain in result.accepted_chains():
            for a, b in zip(chain[:-1], chain[1:]):
                covered.add(grid.mesh.edge_key(a, b))
        n_truth = len(truth_edges)
        return {
            "kind": result.kind,
            "n_candidates": len(result.accepted) + len(result.rejected),
            "n_accepted": len(result.accepted),
            "n_rejected": len(result.rejected),
            "edge_coverage": (len(truth_edges & covered) / n_truth) if n_truth else 1.0,
        }

    final = result.final_set
    members = final.members
    dil_truth = geometry.PixelSet(grid, truth).dilate(1).members if truth else frozenset()
    dil_final = final.dilate(1).members if members else frozenset()

    recall_strict = (len(members & truth) / len(truth)) if truth else 1.0
    recall = (len(truth & dil_final) / len(truth)) if truth else 1.0
    precision = (len(members & dil_truth) / len(members)) if members else 1.0

    h_res = None
    if members:
        dists = [_dist_to_segments(np.asarray(grid.center(p)), seg_a, seg_b) for p in sorted(members)]
        h_res = max(d for d in dists) if dists[0] is not None else None
    h_truth = None
    if len(seg_a) and members:
        centers = np.asarray([grid.center(p) for p in sorted(members)])
        samples = []
        for a, b in zip(seg_a, seg_b):
            n = max(2, int(np.ceil(np.linalg.norm(b - a) / (0.5 * grid.h))) + 1)
            t = np.linspace(0.0, 1.0, n)
            samples.append(a[None, :] + t[:, None] * (b - a)[None, :])
        samples = np.concatenate(samples)
        gaps = np.min(np.linalg.norm(samples[:, None, :] - centers[None, :, :], axis=2), axis=1)
        h_truth = float(np.max(gaps))

    return {
        "n_truth_pixels": len(truth),
        "n_final_pixels": len(members),
        "recall_strict": recall_strict,
        "recall": recall,
        "precision": precision,
        "hausdorff_result_to_truth": h_res,
        "hausdorff_truth_to_result": h_truth,
    }


def result_to_json_file(result, path):
    with open(path, "w") as fh:
        json.dump(result.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def raster_csv(pixelset, path):
    """Write the pixel mask as a CSV grid of 0/1, row iy ascending."""
    np.savetxt(path, pixelset.mask().astype(int), fmt="%d", delimiter=",")
