import csv
import io
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from gtetrad import cli
from gtetrad.simlab import generate

ROLE_ARGS = ["--x", "x", "--y", "y", "--z", "z", "--w", "w"]


def schema(name):
    return json.loads(resources.files("gtetrad").joinpath("schemas", name).read_text())


@pytest.fixture(scope="module")
def null_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "null.csv"
    generate("I", 400, 7).to_csv(path)
    return str(path)


@pytest.fixture(scope="module")
def cov_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "cov.csv"
    generate("cov:II.a", 300, 8).to_csv(path)
    return str(path)


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestTestCommand:
    def test_all_methods(self, null_csv, capsys):
        code, out, _ = run(["test", "--input", null_csv, *ROLE_ARGS, "--method", "all"], capsys)
        assert code == 0
        doc = json.loads(out)
        jsonschema.validate(doc, schema("report.schema.json"))
        assert [r["method"] for r in doc["results"]] == ["ct", "gt-gmm", "gt-psmd"]
        assert all(r["p_value"] > 0.05 for r in doc["results"])
        psmd = doc["results"][2]["bridges"]["h"]
        assert (psmd["basis"], psmd["instruments"], psmd["lambda"], psmd["penalty"]) == \
            ("poly:5", "poly:8", 1e-5, "l2")

    def test_permutations(self, null_csv, tmp_path, capsys):
        out = tmp_path / "r.json"
        code, _, _ = run(["test", "--input", null_csv, *ROLE_ARGS, "--permutations", "--out", str(out)], capsys)
        assert code == 0
        doc = json.loads(out.read_text())
        jsonschema.validate(doc, schema("report.schema.json"))
        assert set(doc["sweeps"]) == {"gt-gmm", "gt-psmd"}
        for entries in doc["sweeps"].values():
            assert len(entries) == 12
            assert entries[0]["permutation"] == "(1,2,3,4)"

    def test_sweep_command_csv(self, null_csv, capsys):
        code, out, _ = run(["sweep", "--input", null_csv, *ROLE_ARGS, "--method", "gt-gmm", "--format", "csv"],
                           capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 13
        assert rows[1]["permutation"] == "(1,2,3,4)"
        assert rows[-1]["permutation"] == "(4,3,1,2)"

    def test_covariates_and_standardize(self, cov_csv, capsys):
        code, out, _ = run(["test", "--input", cov_csv, *ROLE_ARGS, "--covariates", "v", "--standardize",
                            "--method", "gt-gmm", "--basis-h", "quadratic"], capsys)
        assert code == 0
        doc = json.loads(out)
        jsonschema.validate(doc, schema("report.schema.json"))
        assert doc["covariates"] == ["v"]
        assert doc["results"][0]["bridges"]["h"]["basis"] == "poly:2+linear-covariates"

    def test_alpha_above_bound(self, null_csv, capsys):
        code, _, err = run(["test", "--input", null_csv, *ROLE_ARGS, "--method", "gt-gmm", "--alpha", "0.3"],
                           capsys)
        assert code == 2
        assert "0.215" in err

    def test_classical_allows_larger_alpha(self, null_csv, capsys):
        code, _, _ = run(["test", "--input", null_csv, *ROLE_ARGS, "--method", "ct", "--alpha", "0.3"], capsys)
        assert code == 0

    def test_missing_column(self, null_csv, capsys):
        code, _, err = run(["test", "--input", null_csv, "--x", "x", "--y", "score5", "--z", "z", "--w", "w"],
                           capsys)
        assert code == 2
        assert "score5" in err

    def test_parse_error(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("x,y,z,w\n1,2,3,4\n1,oops,3,4\n")
        code, _, err = run(["test", "--input", str(path), *ROLE_ARGS], capsys)
        assert code == 2
        assert "row 2" in err

    def test_numerical_error(self, null_csv, capsys):
        code, _, err = run(["test", "--input", null_csv, *ROLE_ARGS, "--method", "gt-psmd", "--basis-h", "pol:14",
                            "--instrument-basis", "pol:16", "--lambda", "0", "--penalty", "none"], capsys)
        assert code == 3
        assert "numerical" in err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["test", "--input", "x.csv"])
        assert info.value.code == 2

    def test_internal_error(self, null_csv, capsys, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("unexpected")
        monkeypatch.setattr(cli, "classical_test", boom)
        code, _, err = run(["test", "--input", null_csv, *ROLE_ARGS, "--method", "ct"], capsys)
        assert code == 1
        assert "internal" in err


class TestSimulateCommand:
    def test_table2_macro(self, capsys):
        code, out, _ = run(["simulate", "--setting", "table2", "--reps", "2", "--seed", "3"], capsys)
        assert code == 0
        doc = json.loads(out)
        jsonschema.validate(doc, schema("study.schema.json"))
        assert len(doc["rows"]) == 30
        assert list(doc["table"]) == ["I", "II.a", "II.b", "III.a", "III.b"]
        assert set(doc["table"]["II.b"]["gt-psmd"]) == {"500", "1000"}

    def test_tables4_macro_csv(self, capsys):
        code, out, _ = run(["simulate", "--setting", "tableS4", "--reps", "1", "--n", "200", "--format", "csv"],
                           capsys)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(out)))
        assert len(rows) == 15
        assert list(rows[0]) == ["setting", "method", "n", "reps", "seed", "rejection_rate", "mc_se"]
        assert rows[0]["setting"] == "cov:I"

    def test_single_replication(self, capsys):
        code, out, _ = run(["simulate", "--setting", "I", "--method", "ct", "--n", "300", "--reps", "1"], capsys)
        assert code == 0
        assert json.loads(out)["rows"][0]["rejection_rate"] in (0.0, 1.0)

    def test_unknown_preset(self, capsys):
        code, _, err = run(["simulate", "--setting", "IV.c", "--reps", "2"], capsys)
        assert code == 2
        assert "IV.c" in err

    def test_bad_sizes(self, capsys):
        assert run(["simulate", "--setting", "I", "--n", "ten"], capsys)[0] == 2
        assert run(["simulate", "--setting", "I", "--workers", "0"], capsys)[0] == 2

    def test_study_failure(self, capsys):
        code, _, _ = run(["simulate", "--setting", "I", "--method", "gt-psmd", "--n", "100", "--reps", "3",
                          "--basis-h", "pol:14", "--instrument-basis", "pol:16", "--lambda", "0",
                          "--penalty", "none"], capsys)
        assert code == 3

    @pytest.mark.parametrize("fmt", ["json", "csv"])
    def test_byte_identical(self, tmp_path, fmt, capsys):
        args = ["simulate", "--setting", "II.a,III.a", "--n", "150", "--reps", "6", "--seed", "9", "--format", fmt]
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        assert run(args + ["--out", str(a)], capsys)[0] == 0
        assert run(args + ["--out", str(b)], capsys)[0] == 0
        assert run(args + ["--out", str(c), "--workers", "3"], capsys)[0] == 0
        assert a.read_bytes() == b.read_bytes() == c.read_bytes()

    def test_env_workers(self, tmp_path, monkeypatch, capsys):
        args = ["simulate", "--setting", "I", "--method", "gt-gmm", "--n", "150", "--reps", "4"]
        _, serial, _ = run(args, capsys)
        monkeypatch.setenv("GTETRAD_WORKERS", "2")
        _, parallel, _ = run(args, capsys)
        assert serial == parallel


def test_module_entry_point(null_csv):
    proc = subprocess.run([sys.executable, "-m", "gtetrad", "test", "--input", null_csv, *ROLE_ARGS,
                           "--method", "ct"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["results"][0]["method"] == "ct"
