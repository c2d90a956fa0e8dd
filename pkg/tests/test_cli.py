import os

import pytest

from cellcycle.cli import RUN_KEYS, parse_args, read_config
from cellcycle.errors import ConfigParseError

from cli_cases import cases, data_files, invoke


@pytest.fixture(scope="module")
def argv_cases(tmp_path_factory):
    return cases(str(tmp_path_factory.mktemp("inputs")))


@pytest.mark.parametrize("name", ["audit", "simulate", "simulate_many", "push", "fm", "couple", "couple_kappa",
                                  "mix", "invariant", "clt", "lil"])
def test_subcommand_succeeds(argv_cases, tmp_path, name):
    code, out, err = invoke(argv_cases[name] + ["--output", str(tmp_path)])
    assert code == 0, err
    files = set(os.listdir(tmp_path))
    assert {"summary.txt", "summary.kv"} <= files
    kv = dict(line.split("=", 1) for line in (tmp_path / "summary.kv").read_text().splitlines())
    assert kv["seed"] == "0"
    for f in files - {"summary.kv"}:
        assert (tmp_path / f).read_text().startswith("# generated ")
    assert out


def test_audit_output(tmp_path):
    code, out, _ = invoke(["audit", "--model", "affine1d", "--a", "0.5", "-o", str(tmp_path)])
    assert code == 0
    assert "Lambda1 " in out and "= 0.5" in out.split("Lambda1", 1)[1].splitlines()[0]
    assert (tmp_path / "audit.csv").exists()


def test_fm_identical_files(argv_cases, tmp_path):
    a = argv_cases["fm"][1]
    code, out, _ = invoke(["fm", a, a, "-o", str(tmp_path)])
    assert code == 0
    assert "\n0.0\n" in out


def test_unknown_subcommand():
    code, _, err = invoke(["frobnicate"])
    assert code == 1 and "usage" in err.lower()
    assert invoke([])[0] == 1


@pytest.mark.parametrize("argv", [
    ["audit", "--model", "nope"],
    ["audit", "--bogus-param", "1"],
    ["simulate", "--n", "-3"],
    ["mix", "--particles", "0"],
    ["audit", "--seed", "-1"],
    ["audit", "--model", "cellcycle1d", "--alpha", "3"],
    ["simulate", "--x0", "1,2"],
])
def test_validation_failures_exit_1(tmp_path, argv):
    code, _, err = invoke(argv + ["-o", str(tmp_path)])
    assert code == 1 and err.startswith(("error:", "usage"))


def test_runtime_errors_exit_2(tmp_path):
    code, _, err = invoke(["clt", "--observable", "const", "--shift", "5", "--n", "10", "--reps", "10",
                           "--burn-in", "10", "--n-samples", "2000", "-o", str(tmp_path)])
    assert code == 2 and "NonCenteredObservable" in err
    code, _, err = invoke(["lil", "--observable", "zero", "--n-max", "100", "--reps", "2", "--burn-in", "10",
                           "--n-samples", "2000", "-o", str(tmp_path)])
    assert code == 2 and "SigmaZero" in err
    code, _, err = invoke(["simulate", "--model", "cellcycle1d", "--x0", "-1", "-o", str(tmp_path)])
    assert code == 2 and "PreconditionError" in err
    code, _, err = invoke(["fm", str(tmp_path / "missing.csv"), str(tmp_path / "missing.csv"), "-o", str(tmp_path)])
    assert code == 2


def test_degenerate_clt_reported(tmp_path):
    code, out, _ = invoke(["clt", "--observable", "zero", "--n", "10", "--reps", "10", "--burn-in", "10",
                           "--n-samples", "2000", "-o", str(tmp_path)])
    assert code == 0 and "degenerate" in out and "true" in out


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_config_unknown_key_has_line(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[model]\nname = affine1d\n\n[experiment]\nn = 5\nwidgets = 3\n")
    with pytest.raises(ConfigParseError, match=r"c\.ini:6: unknown key 'widgets'"):
        read_config(cfg, "simulate")
    code, _, err = invoke(["simulate", "--config", cfg])
    assert code == 1 and "ConfigParseError" in err and ":6:" in err


def test_config_errors(tmp_path):
    bad_section = _write(tmp_path / "s.ini", "[extras]\nx = 1\n")
    with pytest.raises(ConfigParseError, match="unknown section"):
        read_config(bad_section, "audit")
    bad_value = _write(tmp_path / "v.ini", "[run]\n\nseed = banana\n")
    with pytest.raises(ConfigParseError, match=r"v\.ini:3: \[run\] seed"):
        parse_args(["audit", "--config", bad_value])
    broken = _write(tmp_path / "b.ini", "no section header\n")
    with pytest.raises(ConfigParseError):
        read_config(broken, "audit")
    with pytest.raises(ConfigParseError):
        read_config(str(tmp_path / "absent.ini"), "audit")


def test_flags_override_config(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[model]\nname = cellcycle1d\nalpha = 0.25\n\n[experiment]\nn = 5\nx0 = 3\n\n"
                                     "[run]\nseed = 11\nthreads = 2\n")
    rc = parse_args(["simulate", "--config", cfg])
    assert rc.model == "cellcycle1d" and rc.model_params == {"alpha": 0.25}
    assert rc.experiment["n"] == 5 and rc.experiment["x0"] == [3.0] and rc.seed == 11 and rc.threads == 2
    rc = parse_args(["simulate", "--config", cfg, "--n", "7", "--seed", "3", "--alpha", "0.5", "--model", "affine1d"])
    assert rc.model == "affine1d" and rc.model_params == {"alpha": 0.5}
    assert rc.experiment["n"] == 7 and rc.seed == 3


def test_defaults():
    rc = parse_args(["audit"])
    assert rc.seed == RUN_KEYS["seed"][1] == 0 and rc.timestamp and rc.threads == 1
    assert parse_args(["audit", "--no-timestamp"]).timestamp is False


def test_matrix_params():
    rc = parse_args(["audit", "--model", "affineNd", "--A", "[[0.5, 0.1], [0, 0.4]]"])
    assert rc.model_params["A"] == [[0.5, 0.1], [0, 0.4]]


def test_no_timestamp_and_determinism(argv_cases, tmp_path):
    argv = argv_cases["couple"]
    for d in ("r1", "r2"):
        assert invoke(argv + ["--no-timestamp", "-o", str(tmp_path / d)])[0] == 0
    one, two = data_files(tmp_path / "r1"), data_files(tmp_path / "r2")
    assert one == two
    assert not (tmp_path / "r1" / "coupled.csv").read_text().startswith("#")
    assert invoke(argv + ["--seed", "1", "--no-timestamp", "-o", str(tmp_path / "r3")])[0] == 0
    assert data_files(tmp_path / "r3")["coupled.csv"] != one["coupled.csv"]


def test_no_stray_temp_files(argv_cases, tmp_path):
    invoke(argv_cases["simulate"] + ["-o", str(tmp_path)])
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_csv_locale_free(argv_cases, tmp_path):
    invoke(argv_cases["simulate"] + ["--no-timestamp", "-o", str(tmp_path)])
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "index,x0,t,h0"
    float(lines[1].split(",")[1])
