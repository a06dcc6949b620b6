import json
import subprocess
import sys

import pytest

from rangepc import cli

# small instances of every subcommand, shared with the acceptance suite
SMALL = {
    "sir": ["--R", "2", "--p", "0.1", "--horizon", "8"],
    "brw": ["--R", "3", "--theta", "1", "--N", "6", "--reps", "3"],
    "couple": ["--R", "2", "--theta", "1", "--horizon", "5", "--scenarios", "4"],
    "tanaka": ["--R", "2", "--N", "6", "--reps", "2"],
    "kernels": ["--R", "2", "--n", "3"],
    "estimate-pc": ["--R", "2,3", "--G_max", "20", "--trials", "256", "--levels", "3", "--min_trials", "256"],
    "scaling": ["--R", "1,2,3", "--G_max", "20", "--trials", "256", "--levels", "3", "--min_trials", "256",
                "--gamma_lo", "-10", "--gamma_hi", "10"],
    "block": ["--budget", "1"],
    "oriented": ["--q", "0.5,0.95", "--N", "30", "--trials", "20"],
    "battery": ["--reps", "200", "--n", "3"],
}


def _run(tmp_path, name, extra, *opts):
    out = tmp_path / name
    code = cli.main([name, "--seed", "42", "--out", str(out), *opts, *SMALL[name], *extra])
    return code, out


def _files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


@pytest.mark.parametrize("name", sorted(SMALL))
def test_subcommand_deterministic_across_runs_and_threads(tmp_path, name):
    c1, o1 = _run(tmp_path / "a", name, [])
    c2, o2 = _run(tmp_path / "b", name, [], "--threads", "2")
    assert c1 == c2 and c1 in (0, 1)
    assert _files(o1) == _files(o2)


def test_missing_required_key_exits_2_without_output(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["sir", "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["sir", "--R", "2", "--colour", "red"],
    ["sir", "--R", "two"],
    ["kernels", "--R", "2", "--kind", "nonsense"],
    ["oriented", "--q", "1.5"],
    ["sir", "--R", "2", "--threads", "0"],
    ["sir", "--R"],
])
def test_config_errors(tmp_path, argv):
    out = tmp_path / "o"
    assert cli.main(argv + ["--out", str(out)]) == 2
    assert not out.exists()


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"R": 2, "p": 0.1, "horizon": 4, "seed": 5}))
    out = tmp_path / "o"
    assert cli.main(["sir", "--config", str(cfg), "--horizon", "6", "--out", str(out)]) == 0
    rec = json.loads((out / "record.json").read_text())
    assert rec["config"]["horizon"] == 6 and rec["config"]["R"] == 2 and rec["seed"] == 5
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert cli.main(["sir", "--config", str(bad)]) == 2
    assert cli.main(["sir", "--config", str(tmp_path / "missing.json")]) == 2


def test_seed_precedence(monkeypatch):
    monkeypatch.setenv("RANGEPC_SEED", "77")
    assert cli.resolve_config("sir", {"R": 2}, {}, None)["seed"] == 77
    assert cli.resolve_config("sir", {"R": 2, "seed": 3}, {}, None)["seed"] == 3
    assert cli.resolve_config("sir", {"R": 2, "seed": 3}, {}, 9)["seed"] == 9
    monkeypatch.delenv("RANGEPC_SEED")
    assert cli.resolve_config("sir", {"R": 2}, {}, None)["seed"] == 0


def test_record_round_trip(tmp_path):
    rec, tables = cli.run_subcommand("kernels", {"R": 2})
    back = cli.ExperimentRecord.from_json(rec.to_json())
    assert back.to_json() == rec.to_json()
    assert rec.wall_time is None
    timed, _ = cli.run_subcommand("kernels", {"R": 2}, timing=True)
    assert timed.wall_time >= 0


def test_tanaka_reports_residuals(tmp_path):
    code, out = _run(tmp_path, "tanaka", [])
    assert code == 0
    rec = json.loads((out / "record.json").read_text())
    assert rec["checks"] and all(c["passed"] for c in rec["checks"])
    assert rec["checks"][0]["value"] <= 1e-8


def test_failed_check_exits_1(tmp_path, capsys):
    # an impossible gamma window turns the range check into a failure
    code, _ = _run(tmp_path, "scaling", ["--gamma_lo", "5", "--gamma_hi", "6"])
    assert code == 1
    assert "check failed" in capsys.readouterr().err


def test_csv_quoting_and_json_tables(tmp_path):
    tab = cli.Table(["a", "b"], [["x,y", 1], ['say "hi"', 2.5]])
    assert tab.to_csv() == 'a,b\r\n"x,y",1\r\n"say ""hi""",2.5\r\n'
    assert json.loads(tab.to_json()) == [{"a": "x,y", "b": 1}, {"a": 'say "hi"', "b": 2.5}]
    out = tmp_path / "j"
    assert cli.main(["kernels", "--R", "2", "--format", "json", "--out", str(out)]) == 0
    assert all(p.suffix == ".json" for p in out.iterdir())


def test_stdout_record_without_out(capsys):
    assert cli.main(["kernels", "--R", "2"]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["subcommand"] == "kernels" and rec["version"]


def test_console_script_runs():
    res = subprocess.run([sys.executable, "-m", "rangepc.cli", "kernels", "--R", "1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["subcommand"] == "kernels"
