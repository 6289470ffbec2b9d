import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from stabkit.cli import EXIT_ERROR, EXIT_NEGATIVE, EXIT_OK, EXIT_USAGE, emit_decay_csv, run
from stabkit.operators import ControlSystem, dumps_system
from stabkit.pipeline import Trajectory


def write_system(path, A, B, **kw):
    path.write_text(dumps_system(ControlSystem(A, B, **kw)))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_audit_heat_passes(tmp_path):
    code = run(["audit", "--model", "heat", "--N", "32", "--alpha", "5", "--out", str(tmp_path)])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "audit.json").read_text())
    assert report["hautus"]["min_margin"] > 0
    assert report["pipeline"]["passed"]
    assert read_csv(tmp_path / "hautus.csv")[0] == ["re_lambda", "im_lambda", "margin"]


def test_audit_hidden_mode_is_negative(tmp_path):
    f = write_system(tmp_path / "s.json", np.diag([1.0, -2.0, 0.5]), [[1.0], [1.0], [0.0]])
    code = run(["audit", "--system", f, "--alpha", "1", "--out", str(tmp_path / "o")])
    assert code == EXIT_NEGATIVE
    report = json.loads((tmp_path / "o" / "audit.json").read_text())
    phi = np.array(report["pbh"]["failures"][0]["phi"])
    assert np.allclose(np.hypot(phi[:, 0], phi[:, 1]), [0, 0, 1])
    assert report["hautus"]["worst_witness"]


def test_synthesize_uncontrollable_reports_witness(tmp_path, capsys):
    f = write_system(tmp_path / "s.json", np.diag([1.0, 2.0]), [[1.0], [0.0]])
    assert run(["synthesize", "--system", f, "--alpha", "0.5", "--out", str(tmp_path)]) == EXIT_NEGATIVE
    assert "witness" in capsys.readouterr().err


def test_malformed_system_reports_line(tmp_path, capsys):
    lines = dumps_system(ControlSystem([[-1.0]], [[1.0]])).splitlines()
    lines[3] += " ,,"
    f = tmp_path / "bad.json"
    f.write_text("\n".join(lines))
    assert run(["sweep", "--system", str(f), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "line 4" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        run(["frobnicate"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        run(["sweep", "--alpha", "fast"])
    assert info.value.code == EXIT_USAGE
    assert run(["sweep", "--out", str(tmp_path)]) == EXIT_USAGE
    cfg = tmp_path / "c.json"
    cfg.write_text('{"speed": 3}')
    assert run(["sweep", "--model", "heat", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_and_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "heat", "N": 6, "alpha": 2.0}))
    assert run(["sweep", "--config", str(cfg), "--alpha", "3", "--out", str(tmp_path)]) == EXIT_OK
    r = json.loads((tmp_path / "sweep.json").read_text())
    assert r["model"]["N"] == 6
    assert r["reports"][0]["alpha"] == 3.0


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("STABKIT_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["model", "heat", "--N", "4"]) == EXIT_OK
    assert (tmp_path / "env" / "system.json").exists()
    f = str(tmp_path / "env" / "system.json")
    assert run(["constants", "--system", f, "--alpha", "1"]) == EXIT_OK
    assert json.loads((tmp_path / "env" / "constants.json").read_text())["certified"]


def test_rapid_sweep_fractional(tmp_path):
    code = run(["sweep", "--model", "fractional", "--n-grid", "32", "--alphas", "0.5,1,2",
                "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert len(json.loads((tmp_path / "sweep.json").read_text())["reports"]) == 3
    assert (tmp_path / "hautus_2.csv").exists()


def test_decay_csv_header_only_for_empty_horizon(tmp_path):
    tr = Trajectory(np.array([0.0]), np.ones((1, 1)), 0.0, float("nan"), float("nan"))
    emit_decay_csv(tr, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text() == "t,norm,rate_fit\n"


def test_decay_csv_scalar_exponential(tmp_path):
    f = write_system(tmp_path / "s.json", [[-1.0]], [[1.0]])
    run(["simulate", "--system", f, "--open-loop", "--horizon", "10", "--dt", "0.1",
         "--out", str(tmp_path)])
    rows = read_csv(tmp_path / "decay.csv")
    assert rows[0] == ["t", "norm", "rate_fit"]
    t = np.array([float(r[0]) for r in rows[1:]])
    nrm = np.array([float(r[1]) for r in rows[1:]])
    assert np.allclose(nrm, np.exp(-t), rtol=0, atol=1e-12)
    assert len({r[2] for r in rows[1:]}) == 1
    traj = read_csv(tmp_path / "trajectory.csv")
    assert traj[0] == ["t", "re_0", "im_0", "norm"]


def test_decay_csv_heat_closed_loop_monotone(tmp_path):
    code = run(["simulate", "--model", "heat", "--N", "16", "--alpha", "5", "--out", str(tmp_path)])
    assert code == EXIT_OK
    nrm = np.array([float(r[1]) for r in read_csv(tmp_path / "decay.csv")[1:]])
    assert np.all(np.diff(nrm[len(nrm) // 10:]) < 0)


def test_rerun_is_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run([sys.executable, "-m", "stabkit", "simulate", "--model", "heat",
                        "--N", "8", "--alpha", "2", "--seed", "7", "--out", str(out)],
                       check=True, capture_output=True)
        outs.append(out)
    for name in ("decay.csv", "trajectory.csv", "simulate.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
