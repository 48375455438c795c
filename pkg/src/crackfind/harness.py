"""Scenario configuration and experiment orchestration.

A scenario file describes one synthetic experiment: the domain and its
measurement arc, the background conductivity, the cracks, the pixel grid,
the current basis size, and the methods to run on the simulated data.
``run_scenario`` builds everything, generates the measured matrix, runs the
selected methods, and returns a report in which every verdict carries a
stored eigenvalue certificate.

Data generation supports two safeguards against self-confirming synthetic
experiments. With ``anti_crime`` the crack signature is computed on a once
refined mesh (with the coarse current basis carried over by trace
interpolation, which is exact for piecewise-linear currents) and
transplanted onto the inversion mesh's crack-free response, so the data no
longer comes from the same discrete operator the inversion inverts. With
``noise > 0`` a seeded symmetric perturbation of relative spectral norm
``noise`` is added.

Reports are deterministic: timings are kept out of ``report.json`` and go
to a separate volatile file, so identical configs and seeds reproduce
identical report bytes.
"""

import dataclasses
import hashlib
import json
import os
import time

import numpy as np

from . import fem, geometry, locpot, ndmap, reconstruct

SHAPES = ("rect", "disk")
METHODS = ("upper", "inner", "chain", "locpot")
KIND_NAMES = {"insulating": geometry.INSULATING, "conducting": geometry.CONDUCTING}


class ScenarioError(ValueError):
    """Scenario rejected; ``problems`` itemizes every violation found."""

    def __init__(self, problems):
        problems = [str(p) for p in problems]
        super().__init__("invalid scenario: " + "; ".join(problems))
        self.problems = problems


@dataclasses.dataclass(frozen=True)
class Scenario:
    """One synthetic experiment, fully determined by its fields and seed."""

    name: str = "scenario"
    shape: str = "rect"
    size: tuple = (1.0, 1.0)
    h: float = 1.0 / 32
    gamma: object = "all"
    gamma0: object = 1.0
    cracks: tuple = ()
    grid: tuple = (8, 8)
    M: int = 32
    tau: object = None
    methods: tuple = ("upper",)
    mode: str = "both"
    inner_lengths: tuple = (1, 2, 4)
    locpot_n: tuple = ()
    noise: float = 0.0
    anti_crime: bool = False
    seed: int = 0

    def to_json(self):
        out = dataclasses.asdict(self)
        out["size"] = list(self.size)
        out["grid"] = list(self.grid)
        out["methods"] = list(self.methods)
        out["inner_lengths"] = list(self.inner_lengths)
        out["locpot_n"] = list(self.locpot_n)
        out["cracks"] = [
            {"kind": kind, "polyline": [list(p) for p in poly]}
            for kind, poly in self.cracks
        ]
        return out

    def crack_set_kinds(self):
        return {kind for kind, _ in self.cracks}


def _check_gamma(gamma, problems):
    if gamma == "all":
        return
    if not isinstance(gamma, dict) or len(gamma) != 1:
        problems.append("gamma must be 'all' or a one-key selector dict")
        return
    key, val = next(iter(gamma.items()))
    if key == "side":
        if val not in ("left", "right", "bottom", "top"):
            problems.append("gamma side must be left/right/bottom/top")
    elif key == "box":
        if len(val) != 4 or not all(isinstance(x, (int, float)) for x in val):
            problems.append("gamma box needs [xmin, ymin, xmax, ymax]")
    elif key == "angle":
        if len(val) != 2 or not all(isinstance(x, (int, float)) for x in val):
            problems.append("gamma angle needs [a0, a1]")
    else:
        problems.append("unknown gamma selector %r" % key)


def _check_gamma0(gamma0, problems):
    if isinstance(gamma0, (int, float)):
        if gamma0 <= 0:
            problems.append("gamma0 must be positive")
        return
    if not isinstance(gamma0, dict):
        problems.append("gamma0 must be a number or a {default, boxes} map")
        return
    if float(gamma0.get("default", 1.0)) <= 0:
        problems.append("gamma0 default must be positive")
    for i, rule in enumerate(gamma0.get("boxes", ())):
        box = rule.get("box", ())
        if len(box) != 4:
            problems.append("gamma0 box %d needs [xmin, ymin, xmax, ymax]" % i)
        if float(rule.get("value", 0.0)) <= 0:
            problems.append("gamma0 box %d value must be positive" % i)


def _point_inside(shape, size, p):
    x, y = p
    if shape == "rect":
        return 0 < x < size[0] and 0 < y < size[1]
    return x * x + y * y < size[0] ** 2


def validate_scenario(s):
    """Static consistency checks; returns a list of problems (empty = ok)."""
    problems = []
    if not s.name or not isinstance(s.name, str):
        problems.append("name must be a nonempty string")
    if s.shape not in SHAPES:
        problems.append("shape must be one of %s" % (SHAPES,))
        return problems
    want = 2 if s.shape == "rect" else 1
    if len(s.size) != want or any(float(x) <= 0 for x in s.size):
        problems.append("size needs %d positive number(s) for %s" % (want, s.shape))
        return problems
    extent = min(s.size) if s.shape == "rect" else 2 * s.size[0]
    if not 0 < s.h <= extent / 4:
        problems.append("h must be positive and at most a quarter of the domain")
    _check_gamma(s.gamma, problems)
    _check_gamma0(s.gamma0, problems)
    for i, (kind, poly) in enumerate(s.cracks):
        if kind not in KIND_NAMES:
            problems.append("crack %d: kind must be insulating or conducting" % i)
        if len(poly) < 2:
            problems.append("crack %d: polyline needs at least two points" % i)
        for p in poly:
            if len(p) != 2:
                problems.append("crack %d: points must be 2D" % i)
                break
            if not _point_inside(s.shape, s.size, p):
                problems.append("crack %d: point %s is not inside the domain" % (i, list(p)))
                break
    if len(s.grid) != 2 or any(int(n) < 3 for n in s.grid):
        problems.append("grid needs nx, ny >= 3 (a margin ring plus an interior)")
    if int(s.M) < 1:
        problems.append("M must be at least 1")
    if s.tau is not None and not float(s.tau) > 0:
        problems.append("tau must be positive when given")
    if any(m not in METHODS for m in s.methods):
        problems.append("methods must be a subset of %s" % (METHODS,))
    if len(set(s.methods)) != len(s.methods):
        problems.append("methods must not repeat")
    if s.mode not in reconstruct.MODES:
        problems.append("mode must be one of %s" % (reconstruct.MODES,))
    if any(int(k) < 1 for k in s.inner_lengths):
        problems.append("inner_lengths must be positive")
    if any(int(n) < 1 for n in s.locpot_n):
        problems.append("locpot_n values must be positive")
    if not float(s.noise) >= 0:
        problems.append("noise must be nonnegative")
    kinds = s.crack_set_kinds()
    if "inner" in s.methods and len(kinds) != 1:
        problems.append("the inner method needs cracks of exactly one kind")
    if "locpot" in s.methods and kinds != set(KIND_NAMES):
        problems.append("locpot needs one insulating and one conducting crack region")
    return problems


def scenario_from_dict(obj):
    """Build a validated Scenario from a parsed config mapping."""
    if not isinstance(obj, dict):
        raise ScenarioError(["config must be a JSON object"])
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ScenarioError(["unknown fields: %s" % ", ".join(unknown)])
    kw = dict(obj)
    try:
        if "size" in kw:
            kw["size"] = tuple(float(x) for x in kw["size"])
        if "grid" in kw:
            kw["grid"] = tuple(int(x) for x in kw["grid"])
        for key in ("methods", "inner_lengths", "locpot_n"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "cracks" in kw:
            kw["cracks"] = tuple(
                (c["kind"], tuple((float(p[0]), float(p[1])) for p in c["polyline"]))
                for c in kw["cracks"]
            )
        if "h" in kw:
            kw["h"] = float(kw["h"])
        if "M" in kw:
            kw["M"] = int(kw["M"])
        if "noise" in kw:
            kw["noise"] = float(kw["noise"])
        if "seed" in kw:
            kw["seed"] = int(kw["seed"])
        if "anti_crime" in kw:
            kw["anti_crime"] = bool(kw["anti_crime"])
        if kw.get("tau") is not None and "tau" in kw:
            kw["tau"] = float(kw["tau"])
        s = Scenario(**kw)
    except (TypeError, KeyError, ValueError, IndexError) as exc:
        raise ScenarioError(["malformed field: %s" % exc]) from exc
    problems = validate_scenario(s)
    if problems:
        raise ScenarioError(problems)
    return s


def load_scenario(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(["config is not valid JSON: %s" % exc]) from exc
    return scenario_from_dict(obj)


@dataclasses.dataclass
class Built:
    """Meshed realization of a scenario on the inversion mesh."""

    mesh: object
    cracks: object
    grid: object
    gamma0: object
    basis: object
    V: object
    W: object


def _crack_region(grid, cracks, kind):
    # pixels meeting the cracks of one kind; both wings of every crack edge
    # lie inside, so the slit space nests in the region's excluded space
    touch = set()
    for comp in cracks.of_kind(kind).components:
        pts = grid.mesh.vertices[list(comp.chain)]
        for a, b in zip(pts[:-1], pts[1:]):
            touch |= grid.pixels_touching_segment(a, b)
    interior = geometry.interior_pixel_set(grid)
    return geometry.PixelSet(grid, touch & interior.members)


def build_scenario(s):
    """Mesh the scenario; raises ScenarioError with every build failure."""
    problems = validate_scenario(s)
    if problems:
        raise ScenarioError(problems)
    if s.shape == "rect":
        mesh = geometry.build_rect_mesh(s.size[0], s.size[1], s.h)
    else:
        mesh = geometry.build_disk_mesh(s.size[0], s.h)
    if s.gamma != "all":
        try:
            mesh = geometry.mark_gamma(mesh, s.gamma)
        except ValueError as exc:
            raise ScenarioError(["gamma selector: %s" % exc]) from exc
    cracks = None
    for i, (kind, poly) in enumerate(s.cracks):
        try:
            mesh, cracks = geometry.embed_crack(mesh, poly, KIND_NAMES[kind], cracks=cracks)
        except ValueError as exc:
            problems.append("crack %d: %s" % (i, exc))
    if problems:
        raise ScenarioError(problems)
    if cracks is None:
        cracks = geometry.CrackSet([])
    try:
        grid = geometry.PixelGrid(mesh, s.grid[0], s.grid[1])
    except ValueError as exc:
        raise ScenarioError(["grid: %s" % exc]) from exc
    try:
        basis = ndmap.build_basis(mesh, s.M)
    except ValueError as exc:
        raise ScenarioError(["basis: %s" % exc]) from exc
    gamma0 = fem.Conductivity.from_spec(mesh, s.gamma0)
    V = _crack_region(grid, cracks, geometry.INSULATING)
    W = _crack_region(grid, cracks, geometry.CONDUCTING)
    if {"chain", "locpot"} & set(s.methods):
        if V.members & W.members:
            raise ScenarioError(
                ["insulating and conducting crack regions overlap; separate the cracks"]
            )
        # the bracket regions live in the interior pixel ring, so a crack
        # poking into a boundary pixel would escape every frozen/excluded set
        lo = grid.origin + grid.h
        hi = grid.origin + np.array([grid.nx - 1, grid.ny - 1]) * grid.h
        for i, comp in enumerate(cracks.components):
            pts = mesh.vertices[list(comp.chain)]
            if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
                problems.append(
                    "crack %d reaches into the boundary pixel ring; the chain and "
                    "localized-potential methods need cracks inside the interior pixels" % i
                )
        if problems:
            raise ScenarioError(problems)
    return Built(mesh, cracks, grid, gamma0, basis, V, W)


def carry_basis(basis, fine_mesh):
    """Re-express a current basis on a refinement of its mesh.

    Every fine arc node lies on a coarse arc edge, so the piecewise-linear
    basis functions interpolate exactly and the result spans the same
    currents; orthonormality carries over because the arc and its measure
    are unchanged.
    """
    cm = basis.mesh
    order_c = cm.gamma_vertices()
    order_f = fine_mesh.gamma_vertices()
    pos_c = {int(v): i for i, v in enumerate(order_c)}
    A = cm.vertices[cm.gamma_edges[:, 0]]
    B = cm.vertices[cm.gamma_edges[:, 1]]
    AB = B - A
    L2 = np.einsum("ij,ij->i", AB, AB)
    vals = np.zeros((len(order_f), basis.M))
    for row, v in enumerate(order_f):
        v = int(v)
        if v in pos_c:
            vals[row] = basis.vectors[pos_c[v]]
            continue
        p = fine_mesh.vertices[v]
        t = np.einsum("ij,ij->i", p[None, :] - A, AB) / L2
        t = np.clip(t, 0.0, 1.0)
        d = np.linalg.norm(A + t[:, None] * AB - p[None, :], axis=1)
        e = int(np.argmin(d))
        if d[e] > 1e-9 * np.sqrt(L2[e]):
            raise ValueError("arc node %d is not on a coarse arc edge" % v)
        a, b = int(cm.gamma_edges[e, 0]), int(cm.gamma_edges[e, 1])
        vals[row] = (1 - t[e]) * basis.vectors[pos_c[a]] + t[e] * basis.vectors[pos_c[b]]
    return ndmap.CurrentBasis(fine_mesh, vals)


def generate_data(s, built):
    """Measured matrix for the scenario, with a provenance record.

    Anti-crime data keeps the inversion mesh's crack-free response and adds
    the crack signature computed on a once refined mesh, so the systematic
    part of the discretization error stays matched while the crack part
    comes from a different discrete operator.
    """
    provenance = {"seed": s.seed, "anti_crime": bool(s.anti_crime), "noise": float(s.noise)}
    if s.anti_crime:
        fine, fine_cracks = geometry.refine_mesh(built.mesh, built.cracks)
        fine_basis = carry_basis(built.basis, fine)
        fine_gamma0 = fem.Conductivity.from_spec(fine, s.gamma0)
        N_empty = ndmap.nd_matrix(built.mesh, built.gamma0, None, built.basis)
        Nf_crack = ndmap.nd_matrix(fine, fine_gamma0, fine_cracks, fine_basis)
        Nf_empty = ndmap.nd_matrix(fine, fine_gamma0, None, fine_basis)
        entries = N_empty.entries + (Nf_crack.entries - Nf_empty.entries)
        entries = 0.5 * (entries + entries.T)
        data = ndmap.NdMatrix(entries, built.basis, "anti-crime:" + Nf_crack.config_label)
        provenance["fine_triangles"] = int(len(fine.triangles))
        provenance["signature_norm"] = float(
            np.linalg.norm(Nf_crack.entries - Nf_empty.entries, 2)
        )
    else:
        config = built.cracks if s.cracks else None
        data = ndmap.nd_matrix(built.mesh, built.gamma0, config, built.basis)
    if s.noise > 0:
        rng = np.random.default_rng(s.seed)
        noisy = ndmap.symmetric_noise(data, s.noise, rng)
        provenance["noise_norm"] = float(
            np.linalg.norm(noisy.entries - data.entries, 2)
        )
        data = noisy
    return data, provenance


def _chain_report(built, data, tau):
    """The five-configuration comparison chain around the crack-free map."""
    mesh, gamma0, basis = built.mesh, built.gamma0, built.basis
    ins = built.cracks.of_kind(geometry.INSULATING)
    con = built.cracks.of_kind(geometry.CONDUCTING)
    mats = [
        ndmap.nd_matrix(mesh, gamma0, {"excluded": built.V}, basis),
        ndmap.nd_matrix(mesh, gamma0, ins, basis),
        ndmap.nd_matrix(mesh, gamma0, None, basis),
        ndmap.nd_matrix(mesh, gamma0, con, basis),
        ndmap.nd_matrix(mesh, gamma0, {"frozen": built.W}, basis),
    ]
    tests = []
    for hi, lo in zip(mats, mats[1:]):
        t = tau if tau is not None else ndmap.default_tau(hi)
        ok, eig = ndmap.psd_test(hi.entries - lo.entries, t)
        tests.append(
            {
                "test": "%s >= %s" % (hi.config_label, lo.config_label),
                "passed": bool(ok),
                "min_eig": float(eig),
                "tau": float(t),
            }
        )
    # the measured matrix must sit inside the bracket around its crack set
    t = tau if tau is not None else ndmap.default_tau(mats[0])
    ok_hi, eig_hi = ndmap.psd_test(mats[0].entries - data.entries, t)
    t_lo = tau if tau is not None else ndmap.default_tau(data)
    ok_lo, eig_lo = ndmap.psd_test(data.entries - mats[-1].entries, t_lo)
    tests.append(
        {
            "test": "%s >= data" % mats[0].config_label,
            "passed": bool(ok_hi),
            "min_eig": float(eig_hi),
            "tau": float(t),
        }
    )
    tests.append(
        {
            "test": "data >= %s" % mats[-1].config_label,
            "passed": bool(ok_lo),
            "min_eig": float(eig_lo),
            "tau": float(t_lo),
        }
    )
    return {"tests": tests, "passed": all(e["passed"] for e in tests)}


def run_scenario(s, out_dir=None):
    """Execute a scenario end to end; optionally write the artifact set."""
    timings = {}
    t0 = time.perf_counter()
    built = build_scenario(s)
    timings["build"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    data, provenance = generate_data(s, built)
    timings["data"] = time.perf_counter() - t0

    results = {}
    artifacts = {"data_matrix.json": data.to_json()}
    if s.noise > 0:
        scale = s.tau if s.tau is not None else ndmap.default_tau(data)
        results["noise_check"] = {
            "noise_norm": provenance["noise_norm"],
            "tau": float(scale),
            "exceeds_tau": bool(provenance["noise_norm"] > scale),
        }

    for method in s.methods:
        t0 = time.perf_counter()
        if method == "upper":
            res = reconstruct.reconstruct_upper(
                data, built.mesh, built.gamma0, built.basis, built.grid,
                mode=s.mode, tau=s.tau,
            )
            results["upper"] = {
                "report": res.to_json(),
                "score": reconstruct.score(res, built.cracks, built.grid),
            }
            artifacts["upper_result.json"] = res.to_json()
            artifacts["upper_raster.csv"] = res.final_set
        elif method == "inner":
            kind = KIND_NAMES[next(iter(s.crack_set_kinds()))]
            lengths = tuple(
                k for k in s.inner_lengths if kind != geometry.INSULATING or k >= 2
            )
            region = geometry.interior_pixel_set(built.grid)
            cands = reconstruct.axis_chain_candidates(built.mesh, region, lengths)
            res = reconstruct.reconstruct_inner(
                data, built.mesh, built.gamma0, built.basis, cands, kind, tau=s.tau
            )
            results["inner"] = {
                "report": res.to_json(),
                "score": reconstruct.score(res, built.cracks, built.grid),
            }
            artifacts["inner_result.json"] = res.to_json()
        elif method == "chain":
            results["chain"] = _chain_report(built, data, s.tau)
            artifacts["chain_result.json"] = results["chain"]
        elif method == "locpot":
            results["locpot"] = {}
            n_values = list(s.locpot_n) or None
            for variant in ("insulating", "conducting"):
                seq, rep = locpot.run_localized_demo(
                    built.mesh, built.gamma0, built.cracks, built.grid,
                    built.V, built.W, built.basis, variant, n_values=n_values,
                )
                results["locpot"][variant] = rep
                artifacts["locpot_%s.csv" % variant] = (seq, rep)
        timings[method] = time.perf_counter() - t0

    report = RunReport(
        scenario=s.to_json(),
        provenance=provenance,
        results=results,
        manifest={},
        timings=timings,
    )
    if out_dir is not None:
        _write_artifacts(report, artifacts, out_dir)
    return report


@dataclasses.dataclass
class RunReport:
    """Everything a scenario run produced, minus the volatile timings."""

    scenario: dict
    provenance: dict
    results: dict
    manifest: dict
    timings: dict

    def to_json(self):
        return {
            "scenario": self.scenario,
            "data_provenance": self.provenance,
            "results": self.results,
            "manifest": self.manifest,
        }


def _dump_json(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _sha256_bytes(blob):
    return hashlib.sha256(blob).hexdigest()


def _write_artifacts(report, artifacts, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    blobs = {"scenario.json": _dump_json(report.scenario).encode()}
    for name, payload in artifacts.items():
        if name.endswith(".json"):
            blobs[name] = _dump_json(payload).encode()
            continue
        # CSV artifacts are produced by their own writers, then hashed back
        path = os.path.join(out_dir, name)
        if name.startswith("locpot"):
            locpot.sequence_to_csv(payload[0], payload[1], path)
        else:
            reconstruct.raster_csv(payload, path)
        with open(path, "rb") as fh:
            blobs[name] = fh.read()
    for name, blob in blobs.items():
        with open(os.path.join(out_dir, name), "wb") as fh:
            fh.write(blob)
    report.manifest = {name: _sha256_bytes(blob) for name, blob in sorted(blobs.items())}
    report_blob = _dump_json(report.to_json()).encode()
    with open(os.path.join(out_dir, "report.json"), "wb") as fh:
        fh.write(report_blob)
    manifest = dict(report.manifest)
    manifest["report.json"] = _sha256_bytes(report_blob)
    with open(os.path.join(out_dir, "manifest.json"), "wb") as fh:
        fh.write(_dump_json({"files": manifest, "volatile": ["timings.json"]}).encode())
    with open(os.path.join(out_dir, "timings.json"), "w") as fh:
        fh.write(_dump_json({k: round(v, 6) for k, v in report.timings.items()}))
