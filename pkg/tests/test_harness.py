import hashlib
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crackfind import cli, geometry, harness, ndmap
from crackfind.geometry import refine_mesh


MIXED = {
    "name": "mixed",
    "shape": "rect",
    "size": [1.0, 1.0],
    "h": 1 / 16,
    "cracks": [
        {"kind": "insulating", "polyline": [[2 / 16, 13 / 16], [6 / 16, 13 / 16]]},
        {"kind": "conducting", "polyline": [[10 / 16, 13 / 16], [14 / 16, 13 / 16]]},
    ],
    "grid": [8, 8],
    "M": 20,
    "methods": ["upper", "chain"],
    "seed": 5,
}


@pytest.fixture(scope="module")
def mixed_scenario():
    return harness.scenario_from_dict(MIXED)


@pytest.fixture(scope="module")
def mixed_run(mixed_scenario, tmp_path_factory):
    out = tmp_path_factory.mktemp("mixed_run")
    report = harness.run_scenario(mixed_scenario, out_dir=str(out))
    return report, out


def test_scenario_roundtrip(mixed_scenario):
    echo = mixed_scenario.to_json()
    again = harness.scenario_from_dict(echo)
    assert again == mixed_scenario
    assert json.dumps(echo, sort_keys=True)  # fully serializable


def test_scenario_validation_itemizes_all_problems():
    bad = dict(MIXED)
    bad["shape"] = "rect"
    bad["M"] = 0
    bad["noise"] = -1.0
    bad["mode"] = "sideways"
    bad["cracks"] = [{"kind": "porous", "polyline": [[0.5, 0.5], [2.5, 0.5]]}]
    with pytest.raises(harness.ScenarioError) as err:
        harness.scenario_from_dict(bad)
    text = " ".join(err.value.problems)
    assert len(err.value.problems) >= 4
    assert "M" in text and "noise" in text and "mode" in text and "kind" in text


def test_scenario_unknown_field_rejected():
    with pytest.raises(harness.ScenarioError) as err:
        harness.scenario_from_dict({"cheese": 1})
    assert "cheese" in err.value.problems[0]


def test_inner_method_requires_single_kind():
    bad = dict(MIXED)
    bad["methods"] = ["inner"]
    with pytest.raises(harness.ScenarioError) as err:
        harness.scenario_from_dict(bad)
    assert any("inner" in p for p in err.value.problems)


def test_build_scenario_regions_disjoint(mixed_scenario):
    built = harness.build_scenario(mixed_scenario)
    assert len(built.cracks.components) == 2
    assert built.V.members and built.W.members
    assert not (built.V.members & built.W.members)
    assert geometry.pixelset_is_admissible(built.V)


def test_carry_basis_is_exact_interpolation(mixed_scenario):
    built = harness.build_scenario(mixed_scenario)
    fine, _ = refine_mesh(built.mesh, built.cracks)
    fb = harness.carry_basis(built.basis, fine)
    assert fb.M == built.basis.M
    # orthonormality carries over because the functions are unchanged
    assert np.allclose(fb.gram, np.eye(fb.M), atol=1e-11)
    pos_f = {int(v): i for i, v in enumerate(fine.gamma_vertices())}
    for i, v in enumerate(built.mesh.gamma_vertices()):
        assert np.allclose(fb.vectors[pos_f[int(v)]], built.basis.vectors[i])


def test_anti_crime_changes_data_not_verdicts():
    # needs the scale where pixel gates are resolved by the basis; coarser
    # meshes leave borderline probes that the transplant legitimately flips
    import dataclasses

    s = harness.scenario_from_dict(
        {
            "name": "ac",
            "h": 1 / 32,
            "cracks": [
                {"kind": "insulating", "polyline": [[8 / 32, 26 / 32], [16 / 32, 26 / 32]]},
                {"kind": "conducting", "polyline": [[20 / 32, 26 / 32], [28 / 32, 26 / 32]]},
            ],
            "grid": [8, 8],
            "M": 32,
            "seed": 0,
        }
    )
    built = harness.build_scenario(s)
    plain, _ = harness.generate_data(s, built)
    ac, prov = harness.generate_data(dataclasses.replace(s, anti_crime=True), built)
    gap = np.linalg.norm(ac.entries - plain.entries, 2)
    assert gap > 1e3 * ndmap.default_tau(plain)  # far above solver tolerance
    assert prov["anti_crime"] and prov["signature_norm"] > 0

    from crackfind import reconstruct

    a = reconstruct.reconstruct_upper(plain, built.mesh, built.gamma0, built.basis, built.grid)
    b = reconstruct.reconstruct_upper(ac, built.mesh, built.gamma0, built.basis, built.grid)
    assert a.final_set.members == b.final_set.members == {50, 51, 53, 54}


def test_noise_is_seeded_and_bounded(mixed_scenario):
    import dataclasses

    built = harness.build_scenario(mixed_scenario)
    noisy_scn = dataclasses.replace(mixed_scenario, noise=1e-3, seed=21)
    a, prov_a = harness.generate_data(noisy_scn, built)
    b, _ = harness.generate_data(noisy_scn, built)
    assert np.array_equal(a.entries, b.entries)
    c, _ = harness.generate_data(dataclasses.replace(noisy_scn, seed=22), built)
    assert not np.array_equal(a.entries, c.entries)
    assert np.allclose(a.entries, a.entries.T)
    clean, _ = harness.generate_data(mixed_scenario, built)
    norm = np.linalg.norm(a.entries - clean.entries, 2)
    assert prov_a["noise_norm"] == pytest.approx(norm)
    assert norm <= 1e-3 * np.linalg.norm(clean.entries, 2) * (1 + 1e-9)


def test_run_report_structure(mixed_run):
    report, _ = mixed_run
    res = report.results
    assert res["chain"]["passed"]
    assert len(res["chain"]["tests"]) == 6
    up = res["upper"]
    assert up["score"]["recall"] == 1.0 and up["score"]["precision"] == 1.0
    for entry in up["report"]["peel_trace"]:
        names = [c["test"] for c in entry["certificates"]]
        assert names == ["excluded_minus_data", "data_minus_frozen"]
    assert report.timings.keys() == {"build", "data", "upper", "chain"}


def test_artifacts_match_manifest(mixed_run):
    report, out = mixed_run
    files = set(os.listdir(out))
    assert {"report.json", "manifest.json", "timings.json"} <= files
    for name, digest in report.manifest.items():
        blob = (out / name).read_bytes()
        assert hashlib.sha256(blob).hexdigest() == digest
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["volatile"] == ["timings.json"]
    blob = (out / "report.json").read_bytes()
    assert manifest["files"]["report.json"] == hashlib.sha256(blob).hexdigest()
    loaded = json.loads(blob)
    assert loaded["scenario"] == report.scenario


def test_rerun_is_byte_identical(mixed_scenario, mixed_run, tmp_path):
    _, first = mixed_run
    harness.run_scenario(mixed_scenario, out_dir=str(tmp_path))
    names = set(os.listdir(first))
    assert names == set(os.listdir(tmp_path))
    for name in names - {"timings.json"}:
        assert (first / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_empty_crack_scenario_reports_empty_set(tmp_path):
    s = harness.scenario_from_dict(
        {"name": "empty", "h": 1 / 8, "grid": [4, 4], "M": 8, "methods": ["upper"]}
    )
    report = harness.run_scenario(s)
    assert report.results["upper"]["report"]["final_members"] == []
    assert report.results["upper"]["report"]["initial_ok"] is True


def _write_config(tmp_path, obj, name="scn.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_upper_roundtrip(tmp_path, capsys):
    cfg = _write_config(tmp_path, MIXED)
    code = cli.main(["reconstruct-upper", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert "upper_result.json" in summary["artifacts"]
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["results"]["upper"]["score"]["recall"] == 1.0
    assert rep["scenario"]["methods"] == ["upper"]


def test_cli_verify_monotonicity_exit_codes(tmp_path, capsys):
    cfg = _write_config(tmp_path, MIXED)
    assert cli.main(["verify-monotonicity", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_cli_override_flags(tmp_path, capsys):
    cfg = _write_config(tmp_path, MIXED)
    out = str(tmp_path / "s")
    code = cli.main(
        ["simulate", "--config", cfg, "--out", out, "--modes", "12", "--seed", "9",
         "--noise", "1e-4", "--anti-crime", "on"]
    )
    assert code == 0
    capsys.readouterr()
    with open(os.path.join(out, "report.json")) as fh:
        rep = json.load(fh)
    scn = rep["scenario"]
    assert scn["M"] == 12 and scn["seed"] == 9 and scn["anti_crime"] is True
    assert rep["data_provenance"]["noise_norm"] > 0
    assert rep["results"]["noise_check"]["exceeds_tau"] is True

    # ndmatrix strips measurement effects: the pure operator on this mesh
    code = cli.main(["ndmatrix", "--config", cfg, "--out", str(tmp_path / "n"),
                     "--noise", "1e-4", "--anti-crime", "on"])
    assert code == 0
    rep = json.loads((tmp_path / "n" / "report.json").read_text())
    assert rep["scenario"]["anti_crime"] is False and rep["scenario"]["noise"] == 0.0


def test_cli_malformed_config_exits_2(tmp_path, capsys):
    bad = _write_config(tmp_path, {"shape": "torus"}, "bad.json")
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "invalid config"

    assert cli.main(["simulate", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x")]) == 2
    assert json.loads(capsys.readouterr().out)["error"] == "unreadable config"

    mixed_inner = dict(MIXED)
    cfg = _write_config(tmp_path, mixed_inner, "mi.json")
    assert cli.main(["reconstruct-inner", "--config", cfg, "--out", str(tmp_path / "x")]) == 2
    assert "problems" in json.loads(capsys.readouterr().out)


def test_cli_inner_single_kind(tmp_path, capsys):
    scn = {
        "name": "ins",
        "h": 1 / 16,
        "cracks": [{"kind": "insulating", "polyline": [[4 / 16, 8 / 16], [8 / 16, 8 / 16]]}],
        "grid": [8, 8],
        "M": 16,
        "inner_lengths": [2],
        "seed": 1,
    }
    cfg = _write_config(tmp_path, scn, "ins.json")
    code = cli.main(["reconstruct-inner", "--config", cfg, "--out", str(tmp_path / "i")])
    assert code == 0
    capsys.readouterr()
    rep = json.loads((tmp_path / "i" / "report.json").read_text())
    sc = rep["results"]["inner"]["score"]
    assert sc["edge_coverage"] == 1.0
    # the three two-edge windows inside the four-edge crack
    assert sc["n_accepted"] == 3


@settings(max_examples=25, deadline=None)
@given(
    h_div=st.sampled_from([4, 8, 16]),
    n=st.integers(3, 10),
    M=st.integers(1, 12),
    noise=st.floats(0, 1e-2),
    seed=st.integers(0, 2**32 - 1),
)
def test_scenario_normalization_idempotent(h_div, n, M, noise, seed):
    obj = {
        "name": "prop",
        "h": 1.0 / h_div,
        "grid": [n, n],
        "M": M,
        "noise": noise,
        "seed": seed,
        "methods": [],
    }
    s = harness.scenario_from_dict(obj)
    assert harness.scenario_from_dict(s.to_json()) == s
