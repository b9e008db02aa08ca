"""Command line: exit codes, output formats, schemas and determinism."""
import csv
import filecmp
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gausskj import cli
from gausskj.ou_solver import NumericalError

ROOT = Path(__file__).resolve().parents[1]
HALF = '{"kind": "halfline", "s": 0.5}'
INTERVAL = '{"kind": "interval", "a": -1, "b": 1}'
SQUARE = '{"kind": "polygon", "vertices": [[0, 0], [1, 0], [1, 1], [0, 1]]}'
L_SHAPE = '{"kind": "polygon", "vertices": [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]]}'


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def strip_time(doc):
    if isinstance(doc, list):
        return [strip_time(d) for d in doc]
    return {k: v for k, v in doc.items() if k != "timestamp"}


class TestExitCodes:
    def test_verify_fixed_point(self, capsys):
        code, out, _ = run(capsys, "verify", "--domain", HALF)
        assert code == cli.EXIT_OK
        rep = json.loads(out)
        cli.validate_output(rep, "kj_report")
        fp = rep["fixed_point"]
        assert fp["pass"] and abs(fp["s_dagger_error"]) <= 1e-3
        assert max(fp["chain_gaps"].values()) <= 1e-3

    def test_failing_check(self, capsys):
        code, out, err = run(capsys, "verify", "--domain", INTERVAL, "--h", "0.05", "--m", "64",
                             "--tol-equality", "1e-9")
        assert code == cli.EXIT_FAIL
        assert "FAIL" in err and "energy" in err
        rep = json.loads(out)
        assert rep["all_pass"] is False and rep["theorem_4_2"]["energy"]["pass"] is False

    @pytest.mark.parametrize("doc, pointer", [
        ('{"kind": "interval", "a": 0}', "/:"),
        ('{"kind": "disk", "center": [0, 0], "radius": -1}', "/radius"),
        ('{"kind": "polygon", "vertices": [[0, 0], [1, 0], [1]]}', "/vertices/2"),
        ('{"kind": "ellipse"}', "/kind"),
        ('{"kind": "interval", "a": 1, "b": 0}', "/"),
        ('{"kind": "halfline", "s": 0.5', "/:"),
    ])
    def test_invalid_domain(self, capsys, doc, pointer):
        code, out, err = run(capsys, "torsion", "--domain", doc)
        assert code == cli.EXIT_INVALID
        assert out == ""
        assert err.startswith("invalid input: " + pointer)

    def test_non_convex_needs_override(self, capsys):
        code, _, err = run(capsys, "torsion", "--domain", L_SHAPE, "--h", "0.1")
        assert code == cli.EXIT_INVALID and "convex" in err
        code, out, _ = run(capsys, "torsion", "--domain", L_SHAPE, "--h", "0.1", "--override-convexity")
        assert code == cli.EXIT_OK
        assert json.loads(out)["hypothesis_satisfied"] is False

    def test_missing_domain_and_file(self, capsys, tmp_path):
        assert run(capsys, "frequency")[0] == cli.EXIT_INVALID
        assert run(capsys, "frequency", "--domain", str(tmp_path / "nope.json"))[0] == cli.EXIT_INVALID

    def test_domain_file(self, capsys, tmp_path):
        p = tmp_path / "dom.json"
        p.write_text(INTERVAL)
        code, out, _ = run(capsys, "torsion", "--domain", str(p), "--h", "0.05")
        assert code == cli.EXIT_OK
        assert json.loads(out)["domain"] == {"kind": "interval", "a": -1, "b": 1}

    def test_numerical_failure(self, capsys, monkeypatch):
        def boom(*a, **k):
            raise NumericalError("inverse iteration stalled")
        monkeypatch.setattr(cli, "solve_frequency", boom)
        code, out, err = run(capsys, "frequency", "--domain", INTERVAL)
        assert code == cli.EXIT_NUMERICAL
        assert "stage frequency" in err and out == ""

    def test_pipeline_stage_label(self, capsys, monkeypatch):
        from gausskj import rearrange

        def boom(*a, **k):
            raise NumericalError("inverse iteration stalled")
        monkeypatch.setattr(rearrange, "solve_frequency", boom)
        code, _, err = run(capsys, "verify", "--domain", INTERVAL, "--h", "0.1", "--m", "32")
        assert code == cli.EXIT_NUMERICAL
        assert "stage frequency" in err

    @pytest.mark.parametrize("argv", [["torsion", "--h", "0"], ["torsion", "--m", "8"],
                                      ["torsion", "--format", "xml"], ["nonsense"]])
    def test_argument_errors(self, argv):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 2


class TestOutputs:
    def test_torsion_json(self, capsys):
        code, out, _ = run(capsys, "torsion", "--domain", SQUARE, "--h", "0.05")
        doc = json.loads(out)
        cli.validate_output(doc, "torsion")
        assert doc["characterisation_gap"] <= 1e-10

    def test_torsion_csv(self, capsys):
        code, out, _ = run(capsys, "torsion", "--domain", SQUARE, "--h", "0.1", "--format", "csv")
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["x", "y", "value"]
        vals = np.array(rows[1:], float)
        assert vals[:, 2].min() >= 0

    def test_frequency_json(self, capsys):
        code, out, _ = run(capsys, "frequency", "--domain", INTERVAL, "--h", "0.01")
        doc = json.loads(out)
        cli.validate_output(doc, "frequency")
        assert doc["eigenvalue"] == pytest.approx(2.0, rel=1e-4)
        assert doc["residual"] <= doc["residual_tolerance"]

    def test_rearrange_formats(self, capsys):
        code, text, _ = run(capsys, "rearrange", "--domain", INTERVAL, "--m", "64")
        assert code == 0 and text.splitlines()[0] == "tau,f,Dinv"
        code, out, _ = run(capsys, "rearrange", "--domain", INTERVAL, "--m", "64", "--format", "json")
        doc = json.loads(out)
        cli.validate_output(doc, "rearrange")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in text.splitlines()[1:]])
        np.testing.assert_array_equal(rows, np.array(doc["rows"]))

    def test_halfspace_table_spec_grid(self, capsys):
        code, out, _ = run(capsys, "halfspace-table")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["s", "T", "dT", "Lambda"]
        data = np.array(rows[1:], float)
        assert len(data) == 801
        assert np.all(np.diff(data[:, 1]) < 0)
        assert np.all(np.diff(data[:, 3]) > 0)
        zero = data[np.argmin(np.abs(data[:, 0]))]
        assert zero[0] == 0.0 and abs(zero[3] - 1.0) <= 1e-4

    def test_halfspace_table_json(self, capsys):
        code, out, _ = run(capsys, "halfspace-table", "--s-min", "-1", "--s-max", "1", "--step", "0.5",
                           "--format", "json")
        doc = json.loads(out)
        cli.validate_output(doc, "halfspace_table")
        assert [r[0] for r in doc["rows"]] == [-1.0, -0.5, 0.0, 0.5, 1.0]

    def test_bad_table_range(self, capsys):
        code, _, _ = run(capsys, "halfspace-table", "--s-min", "1", "--s-max", "0")
        assert code == cli.EXIT_INVALID

    def test_csv_round_trip_digits(self, capsys):
        code, out, _ = run(capsys, "halfspace-table", "--s-min", "0.1", "--s-max", "0.3", "--step", "0.1")
        lines = out.splitlines()[1:]
        for ln in lines:
            for field in ln.split(","):
                assert "e" not in field or field.count("e") == 1
                assert "," not in field and " " not in field
                float(field)
        # 0.1 + 0.1 * 1 is not 0.2 in binary; 17 digits keep the difference
        assert lines[1].split(",")[0] == format(0.1 + 0.1, ".17g")

    def test_verify_csv(self, capsys):
        code, out, _ = run(capsys, "verify", "--domain", INTERVAL, "--h", "0.05", "--m", "64", "--format", "csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        names = [r["check"] for r in rows]
        assert "energy" in names and "levset_measure" in names
        assert all(r["pass"] == "true" for r in rows)

    def test_out_file(self, capsys, tmp_path):
        target = tmp_path / "t.json"
        code, out, _ = run(capsys, "torsion", "--domain", INTERVAL, "--h", "0.05", "--out", str(target))
        assert code == 0 and out == ""
        assert json.loads(target.read_text())["h"] == 0.05


class TestSuiteCommand:
    def test_single_domain_deterministic(self, capsys, tmp_path):
        outs = []
        for k in range(2):
            p = tmp_path / f"s{k}.json"
            code, _, _ = run(capsys, "suite", "--domain", INTERVAL, "--h", "0.05", "--m", "64", "--out", str(p))
            assert code == 0
            outs.append(json.loads(p.read_text()))
        cli.validate_output(outs[0], "suite")
        assert json.dumps(strip_time(outs[0]), sort_keys=True) == json.dumps(strip_time(outs[1]), sort_keys=True)

    def test_workers_same_result(self, capsys):
        args = ["suite", "--domain", INTERVAL, "--h", "0.05", "--m", "64"]
        _, a, _ = run(capsys, *args)
        _, b, _ = run(capsys, *args, "--workers", "2")
        assert strip_time(json.loads(a)) == strip_time(json.loads(b))


class TestSchemas:
    def test_docs_copies_identical(self):
        shipped = ROOT / "src" / "gausskj" / "schemas"
        docs = ROOT / "docs" / "schemas"
        names = sorted(p.name for p in shipped.glob("*.json"))
        assert names == sorted(p.name for p in docs.glob("*.json"))
        assert len(names) == len(cli.SCHEMAS)
        for n in names:
            assert filecmp.cmp(shipped / n, docs / n, shallow=False), n

    def test_every_command_has_schema(self):
        for name in cli.OUTPUT_SCHEMA.values():
            assert cli.load_schema(name)["$id"] == f"{name}.schema.json"
        assert set(cli.OUTPUT_SCHEMA) == set(cli.COMMANDS)

    def test_schema_rejects(self):
        import jsonschema
        with pytest.raises(jsonschema.ValidationError):
            cli.validate_output({"version": "x"}, "torsion")
        with pytest.raises(jsonschema.ValidationError):
            cli.validate_output([{"all_pass": True}], "suite")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gausskj", "torsion", "--domain", INTERVAL, "--h", "0.1"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert json.loads(res.stdout)["torsional_rigidity"] > 0


def test_log_level_env():
    res = subprocess.run([sys.executable, "-m", "gausskj", "torsion", "--domain", INTERVAL, "--h", "0.1"],
                         capture_output=True, text=True, timeout=120, env={"KJ_LOG": "debug", "PATH": ""})
    assert res.returncode == 0
