import json

import pytest

from kslab import acceptance
from kslab.cli import GROUPS, main


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMOKE = '[acceptance]\nscale = "smoke"\n'


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema"] == 1 and report["passed"]
    assert [c["id"] for c in report["checks"]] == list(GROUPS["verify"])
    assert "PASS" in capsys.readouterr().out


def test_negative_time_step_is_a_configuration_error(tmp_path, capsys):
    cfg = _write(tmp_path, "[solver]\ndt = -0.001\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "solver.dt" in err and "line 2" in err


def test_bad_flag_value_is_a_configuration_error(tmp_path, capsys):
    assert main(["solve", "--t", "2.0", "--out", str(tmp_path)]) == 2
    assert "functional.t" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "[solver]\ndt = 0.5\nT = 2.0\n\n[measure]\npreset = \"dirac\"\n")
    with pytest.warns(RuntimeWarning, match="stability"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o"), "--override-stability"]) == 3
    assert "solver error" in capsys.readouterr().err
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["results"]["solver_error"]["path_index"] == 0


def test_simulate_writes_paths(tmp_path):
    cfg = _write(tmp_path, "[solver]\nT = 0.05\nM_p = 200\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    for tag in ("grid", "particle"):
        for ext in ("csv", "json", "svg"):
            assert (out / f"path_{tag}.{ext}").stat().st_size > 0
    assert (out / "path_grid.csv").read_text().startswith("t,x,weight")


def test_solve_outputs(tmp_path):
    out = tmp_path / "o"
    argv = ["solve", "--phi", "squared-cos", "--mu", "dirac", "--t", "0.4", "--M", "20", "--N", "64", "--seed", "3", "--out", str(out), "--surface"]
    assert main(argv) == 0
    doc = json.loads((out / "solve.json").read_text())
    assert set(doc) >= {"value", "stderr", "config_hash", "seed"} and doc["seed"] == 3
    assert 0.0 <= doc["value"] <= 1.0
    assert (out / "u_surface.csv").read_text().splitlines()[0] == "center,t,u,stderr"
    assert (out / "u_surface.svg").exists()


def test_flags_override_config(tmp_path):
    cfg = _write(tmp_path, "[run]\nseed = 1\n")
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--seed", "8", "--M", "4", "--t", "0.45", "--out", str(out)]) == 0
    assert json.loads((out / "solve.json").read_text())["seed"] == 8
    assert "seed = 8" in (out / "config.toml").read_text()


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("smoke")
    cfg = _write(base, SMOKE)
    codes, reports = [], []
    for i, workers in enumerate(("1", "1", "3")):
        out = base / f"run{i}"
        codes.append(main(["all", "--config", cfg, "--out", str(out), "--workers", workers]))
        reports.append((out / "report.json").read_bytes())
    return codes, reports, base


def test_all_is_byte_reproducible(smoke_runs):
    _, reports, _ = smoke_runs
    assert reports[0] == reports[1] == reports[2]


def test_all_lists_every_criterion_once(smoke_runs):
    codes, reports, base = smoke_runs
    report = json.loads(reports[0])
    ids = [c["id"] for c in report["checks"]]
    assert ids == list(acceptance.CRITERIA)
    # the exit status reflects the checks
    assert codes[0] == (0 if report["passed"] else 1)
    timings = json.loads((base / "run0" / "timings.json").read_text())
    assert "total" in timings and "timings" not in report
    for name in ("approx_convergence.csv", "approx_convergence.svg", "bp_certificates.json", "dynkin_convergence.svg"):
        assert name in report["artifacts"]
