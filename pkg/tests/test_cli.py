import json
import subprocess
import sys

import pytest

from mnflow.cli import ERROR, OK, VERDICT_FAILED, main
from mnflow.config import (BUILTIN, ConfigError, build_initial_data, builtin_scenario, load_scenario,
                           scenario_from_dict)
from mnflow.norms import initial_norm

TINY_MONITOR = {"name": "tiny-monitor", "mode": "monitor", "seed": 3, "domain": {"n": 8, "L": 6.0},
                "scheme": {"T_end": 0.2, "dt": 0.05},
                "data": {"kind": "gaussian", "width": 0.8, "target_norm": 1e-3}}
TINY_DECAY = {"name": "tiny-decay", "mode": "linear-decay", "domain": {"n": 32, "L": 32.0},
              "params": {"mu": 0.25, "pressure": {"kind": "linear", "a": 1.0}},
              "data": {"kind": "decay", "width": 0.5},
              "decay": {"cells": [["state", 2.0]], "points_per_decade": 6}}


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj), encoding="utf-8")
    return p


def test_version_and_list(capsys):
    assert main(["version"]) == OK
    assert capsys.readouterr().out.startswith("mnflow ")
    assert main(["list-scenarios"]) == OK
    out = capsys.readouterr().out
    assert all(name in out for name in BUILTIN)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mnflow", "version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("mnflow ")


def test_bookkeeping_exit_codes(capsys, tmp_path):
    assert main(["bookkeeping", "--N", "3", "--output-dir", str(tmp_path)]) == OK
    assert json.loads((tmp_path / "bookkeeping.json").read_text())["verdict"] == "pass"
    assert main(["bookkeeping", "--N", "2"]) == VERDICT_FAILED
    assert main(["bookkeeping", "--N", "1"]) == ERROR


def test_validate(tmp_path, capsys):
    assert main(["validate", str(write(tmp_path, "ok.json", TINY_MONITOR))]) == OK
    assert json.loads(capsys.readouterr().out)["violations"] == []
    bad = dict(TINY_MONITOR, params={"mu": -1.0, "sigma": 0.5})
    assert main(["validate", str(write(tmp_path, "bad.json", bad))]) == VERDICT_FAILED
    report = json.loads(capsys.readouterr().out)
    assert any(v.startswith("params.mu:") for v in report["violations"])
    assert main(["validate", str(write(tmp_path, "typo.json", dict(TINY_MONITOR, sceme={})))]) == VERDICT_FAILED
    assert main(["validate", str(tmp_path / "missing.json")]) == ERROR


def test_config_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError, match="scheme.dtt: unknown key"):
        scenario_from_dict(dict(TINY_MONITOR, scheme={"dtt": 0.1}))
    with pytest.raises(ConfigError, match="<root>"):
        load_scenario(write(tmp_path, "list.json", [1, 2]))
    with pytest.raises(ConfigError):
        builtin_scenario("no-such-scenario")


def test_target_norm_scaling():
    sc = scenario_from_dict(TINY_MONITOR)
    s = build_initial_data(sc)
    assert initial_norm(s, sc.params, sc.domain).total == pytest.approx(1e-3, rel=1e-10)


def test_run_errors(tmp_path, capsys):
    assert main(["run", "no-such-scenario"]) == ERROR
    bad = write(tmp_path, "bad.json", dict(TINY_MONITOR, params={"mu": -1.0}))
    assert main(["run", str(bad), "--output-dir", str(tmp_path / "o")]) == ERROR


def test_picard_zero_run(tmp_path, capsys):
    out = tmp_path / "pz"
    assert main(["run", "picard-zero", "--output-dir", str(out)]) == OK
    names = {p.name for p in out.iterdir()}
    assert {"picard_report.json", "picard_iterates.csv", "picard_norms.csv", "energy.csv",
            "norms_vs_time.gp", "norms_vs_time.dat", "scenario.json", "metadata.json"} <= names
    rep = json.loads((out / "picard_report.json").read_text())
    assert rep["picard"]["iterates"] == 1


def test_csv_headers_and_line_endings(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["run", str(write(tmp_path, "m.json", TINY_MONITOR)), "--output-dir", str(out)]) == OK
    raw = (out / "monitor.csv").read_bytes()
    assert b"\r" not in raw
    header = raw.split(b"\n")[0].decode().split(",")
    assert header == ["nonlinear.estimate_monitor:" + c for c in ("entry", "lhs", "rhs", "ratio")]


def test_decay_run_and_figures(tmp_path, capsys):
    out = tmp_path / "d"
    code = main(["run", str(write(tmp_path, "d.json", TINY_DECAY)), "--output-dir", str(out)])
    assert code in (OK, VERDICT_FAILED)
    header = (out / "decay_fits.csv").read_text().splitlines()[0]
    assert header.startswith("decay.run_decay_table:quantity,")
    gp = (out / "decay_loglog.gp").read_text()
    assert "decay_loglog.dat" in gp and "set logscale x" in gp
    assert (out / "decay_loglog.png").read_bytes()[:4] == b"\x89PNG"


def test_rerun_is_byte_identical(tmp_path, capsys):
    cfg = str(write(tmp_path, "m.json", TINY_MONITOR))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--output-dir", str(a)]) == OK
    assert main(["run", cfg, "--output-dir", str(b)]) == OK
    files = sorted(p.name for p in a.iterdir() if p.name != "metadata.json")
    assert files == sorted(p.name for p in b.iterdir() if p.name != "metadata.json")
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_several_configs_in_parallel(tmp_path, capsys):
    code = main(["run", "bookkeeping-N3", "bookkeeping-N2", "--jobs", "2", "--output-dir", str(tmp_path)])
    assert code == VERDICT_FAILED
    assert (tmp_path / "bookkeeping-N3" / "bookkeeping.json").exists()
    assert (tmp_path / "bookkeeping-N2" / "bookkeeping.json").exists()
