import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mfield.cli import main
from mfield.harness import (
    ScenarioError,
    bundled_scenarios,
    fixture_dir,
    load_fixture,
    load_scenario,
    poly_from_json,
    poly_to_json,
    run_scenario,
    validate_scenario,
)
from mfield.mesh import load_mesh, save_mesh, torus_lattice
from mfield.wick import PlainPolynomial, WickPolynomial, poly_allclose

SMALL = {
    "name": "small",
    "seed": 11,
    "meshes": {"t": {"kind": "torus_lattice", "params": {"size": [6, 6]}}},
    "checks": [
        {"type": "decomp", "name": "band", "mesh": "t", "omega": [6, 7, 8, 9, 10, 11], "masses": [1.0]},
        {"type": "markov", "name": "m", "mesh": "t", "mass": 1.0, "omega": [6, 7, 8, 9, 10, 11], "samples": 1, "count": 3, "degree": 2},
        {"type": "rp", "name": "rp", "reflection": {"kind": "torus", "n": 6}, "mass": 1.0, "families": 2, "size": 4, "degree": 2},
    ],
}


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def err_path(doc):
    with pytest.raises(ScenarioError) as exc:
        validate_scenario(doc)
    return exc.value.path


class TestSchema:
    def test_bundled_are_valid(self):
        found = bundled_scenarios()
        assert set(found) == {"torus-markov", "theorem1-markov", "theorem2-rp",
                              "corollary5-rp0", "theorem3-sewing", "theorem4-interacting"}
        for path in found.values():
            load_scenario(path)

    def test_error_paths(self):
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][2]["reflection"]["n"] = 3
        assert err_path(doc) == "checks/2/reflection/n"
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][1]["mass"] = -1
        assert err_path(doc) == "checks/1/mass"
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][0]["mesh"] = "nope"
        assert err_path(doc) == "checks/0/mesh"
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][1]["name"] = "band"
        assert err_path(doc) == "checks/1/name"
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][0]["bogus"] = 1
        assert err_path(doc) == "checks/0"
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][0]["type"] = "nonsense"
        assert err_path(doc) == "checks/0/type"
        doc = json.loads(json.dumps(SMALL))
        del doc["name"]
        assert err_path(doc) == ""

    def test_unreadable(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ScenarioError):
            load_scenario(p)
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "missing.json")


class TestRun:
    def test_small_scenario_passes(self):
        rep = run_scenario(SMALL)
        assert rep.passed, [c.to_dict() for c in rep.checks]
        assert [c.name for c in rep.checks] == ["band", "m", "rp"]

    def test_deterministic(self, tmp_path):
        a = json.loads(run_scenario(SMALL).to_json())
        b = json.loads(run_scenario(SMALL, parallel=True).to_json())
        a.pop("timestamp"), b.pop("timestamp")
        assert a == b
        c = json.loads(run_scenario(SMALL, seed=12).to_json())
        assert c["report_sha256"] != a["report_sha256"]

    def test_tol_override_fails(self):
        assert not run_scenario(SMALL, tol=1e-30).passed

    def test_mesh_file_reference(self, tmp_path):
        save_mesh(torus_lattice(6, 6), tmp_path / "t.json")
        doc = json.loads(json.dumps(SMALL))
        doc["meshes"]["t"] = {"file": "t.json"}
        rep = run_scenario(doc, base_dir=tmp_path)
        assert rep.passed
        assert "t.json" in rep.body()["inputs"]["mesh_files"]

    def test_empty_scenario(self):
        rep = run_scenario({"name": "empty", "checks": []})
        assert rep.passed and rep.checks == []


class TestFixtures:
    def test_bundled(self):
        assert {p.stem for p in fixture_dir().glob("*.json")} >= {"rp_crossing_support", "sew_cap_support"}
        assert {"family", "reflection", "expected"} <= set(load_fixture("rp_crossing_support"))

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MFIELD_FIXTURES", str(tmp_path))
        assert fixture_dir() == tmp_path
        with pytest.raises(ScenarioError):
            load_fixture("rp_crossing_support")
        doc = {"name": "nc", "checks": [{"type": "rp", "name": "rp", "reflection": {"kind": "torus", "n": 8},
                                         "families": 1, "size": 2, "negative_control": "rp_crossing_support"}]}
        with pytest.raises(ScenarioError):
            run_scenario(doc)
        monkeypatch.delenv("MFIELD_FIXTURES")
        src = fixture_dir() / "rp_crossing_support.json"
        shutil.copy(src, tmp_path)
        monkeypatch.setenv("MFIELD_FIXTURES", str(tmp_path))
        assert run_scenario(doc).passed

    def test_poly_json_round_trip(self):
        gen = np.random.default_rng(0)
        f, g = gen.standard_normal((2, 5))
        p = PlainPolynomial.monomial([f, g], 2.0) + PlainPolynomial.constant(0.5)
        assert poly_allclose(poly_from_json(json.loads(json.dumps(poly_to_json(p))), 5), p, rtol=0)
        w = WickPolynomial.monomial("ctx", [f], -1.0)
        back = poly_from_json(poly_to_json(w), 5, "ctx")
        assert back.context == "ctx" and poly_allclose(back, w, rtol=0)


class TestCLI:
    def test_exit_codes(self, tmp_path, capsys):
        good = write(tmp_path, SMALL)
        assert main(["run", str(good), "--out", str(tmp_path / "ok")]) == 0
        assert (tmp_path / "ok" / "report.json").exists()
        assert {p.name for p in (tmp_path / "ok").glob("*.csv")} == {"band.csv", "m.csv", "rp.csv"}
        assert main(["run", str(good), "--tol", "1e-30", "--out", str(tmp_path / "fail")]) == 1
        assert json.loads((tmp_path / "fail" / "report.json").read_text())["verdict"] == "fail"
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" in out

    def test_invalid_input_writes_nothing(self, tmp_path, capsys):
        doc = json.loads(json.dumps(SMALL))
        doc["checks"][2]["reflection"]["n"] = 3
        bad = write(tmp_path, doc)
        assert main(["run", str(bad), "--out", str(tmp_path / "o1")]) == 2
        assert "checks/2/reflection/n" in capsys.readouterr().err
        assert not (tmp_path / "o1").exists()
        (tmp_path / "corrupt.json").write_text('{"vertices": 3}')
        doc = json.loads(json.dumps(SMALL))
        doc["meshes"]["t"] = {"file": "corrupt.json"}
        assert main(["run", str(write(tmp_path, doc, "c.json")), "--out", str(tmp_path / "o2")]) == 2
        assert "meshes/t" in capsys.readouterr().err
        assert not (tmp_path / "o2").exists()

    def test_reports_byte_identical(self, tmp_path):
        good = write(tmp_path, SMALL)
        for d in ("a", "b"):
            assert main(["run", str(good), "--out", str(tmp_path / d), "--parallel"]) == 0
        ra = json.loads((tmp_path / "a" / "report.json").read_text())
        rb = json.loads((tmp_path / "b" / "report.json").read_text())
        ra.pop("timestamp"), rb.pop("timestamp")
        assert ra == rb
        for p in (tmp_path / "a").glob("*.csv"):
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_verify_alias(self, tmp_path, capsys):
        assert main(["verify", "rp0", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "corollary5-rp0" / "report.json").exists()
        assert main(["verify", "no-such-check"]) == 2

    def test_mesh_command(self, tmp_path, capsys):
        out = tmp_path / "m.json"
        assert main(["mesh", "torus_lattice", "size=(4,5)", "--out", str(out)]) == 0
        assert load_mesh(out).vertex_count == 20
        assert main(["mesh", "icosphere", "subdiv=1", "--out", str(tmp_path / "s.json")]) == 0
        assert main(["mesh", "path", "n=-2", "--out", str(tmp_path / "p.json")]) == 2
        assert main(["mesh", "path", "garbage", "--out", str(tmp_path / "p.json")]) == 2

    def test_console_script(self, tmp_path):
        good = write(tmp_path, SMALL)
        res = subprocess.run([sys.executable, "-m", "mfield.cli", "run", str(good), "--out", str(tmp_path / "o")],
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
