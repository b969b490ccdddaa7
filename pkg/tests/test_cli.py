import io
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from epsensing import synth_jordan_model
from epsensing.cli import main

CANONICAL_M = [[0, 1, 1, 0], [1, 0, 0, -1], [-1, 0, 0, 1], [0, 1, 1, 0]]


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_sweep_to_file_with_sidecar(tmp_path):
    path = tmp_path / "a.csv"
    code, _, _ = run("sweep", "--scenario", "ep_all_modes", "--output", str(path))
    assert code == 0
    lines = path.read_text().splitlines()
    assert lines[0] == "theta,I1,delta_theta_cr,delta_theta_het,status"
    assert len(lines) == 22
    fit = json.loads((tmp_path / "a.csv.fit.json").read_text())
    assert fit["exponent"] == pytest.approx(2.0, abs=0.1)
    assert fit["fit_range"] == [1e-3, 1e-1]
    assert "stderr" in fit


def test_sweep_stdout_is_deterministic():
    a = run("sweep", "--scenario", "ep_one_mode")
    b = run("sweep", "--scenario", "ep_one_mode")
    assert a[0] == 0 and a[1] == b[1]
    assert json.loads(a[2])["exponent"] == pytest.approx(1.0, abs=0.1)


def test_sweep_tsv_and_overrides():
    code, out, _ = run(
        "sweep", "--scenario", "single_mode_plain", "--format", "tsv",
        "--theta-min", "1e-2", "--theta-max", "1", "--points-per-decade", "5",
    )
    assert code == 0
    rows = out.splitlines()
    assert rows[0].split("\t")[0] == "theta"
    assert len(rows) == 12
    assert float(rows[-1].split("\t")[0]) == pytest.approx(1.0)


def test_sweep_detuned_cutoff():
    code, _, err = run("sweep", "--scenario", "ep_detuned")
    assert code == 0
    doc = json.loads(err)
    assert doc["delta"] / 3 <= doc["cutoff_theta"] <= doc["delta"] * 3


def test_sweep_delta_override_moves_cutoff():
    code, _, err = run("sweep", "--scenario", "ep_detuned", "--delta", "0.01")
    assert code == 0
    doc = json.loads(err)
    assert doc["fit_range"] == [0.1, 10.0]
    assert 0.01 / 3 <= doc["cutoff_theta"] <= 0.03


def test_unknown_scenario_lists_names():
    code, _, err = run("sweep", "--scenario", "nonsense")
    assert code == 2
    for name in ("ep_all_modes", "ep_one_mode", "single_mode_plain", "ep_detuned"):
        assert name in err


def test_sweep_failure_exit_code():
    code, _, err = run("sweep", "--theta-min", "1e-7", "--theta-max", "1e-5")
    assert code == 3
    assert "failed" in err


def test_bad_grid_is_config_error():
    assert run("sweep", "--theta-min", "1", "--theta-max", "0.1")[0] == 2


def test_config_document_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"scenario": "ep_all_modes", "grid": {"min": 1e-2, "max": 1e-1, "points_per_decade": 5}}))
    code, out, _ = run("sweep", "--config", str(cfg))
    assert code == 0 and len(out.splitlines()) == 7
    code, out, _ = run("sweep", "--config", str(cfg), "--points-per-decade", "10")
    assert code == 0 and len(out.splitlines()) == 12


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("scenari: ep_all_modes\n")
    assert run("sweep", "--config", str(cfg))[0] == 2


def test_scenario_document(tmp_path):
    doc = {
        "name": "scaled_coupling",
        "model": {"kind": "two_mode", "Gamma1": 2.0, "Gamma2": 2.0, "G": 2.0},
        "probe": {"kind": "random", "seed": 5},
        "grid": {"min": "1e-3", "max": "1e-1", "points_per_decade": 10},
    }
    path = tmp_path / "scenario.yaml"
    path.write_text(yaml.safe_dump(doc))
    code, _, err = run("sweep", "--scenario", str(path))
    assert code == 0
    summary = json.loads(err)
    assert summary["scenario"] == "scaled_coupling"
    assert summary["exponent"] == pytest.approx(2.0, abs=0.1)


def test_workers_env(monkeypatch):
    serial = run("sweep")[1]
    monkeypatch.setenv("EPSENSING_WORKERS", "2")
    assert run("sweep")[1] == serial


def write_yaml(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_jordan_canonical(tmp_path):
    code, out, _ = run("jordan", "--input", write_yaml(tmp_path, "m.yaml", {"M": CANONICAL_M}))
    assert code == 0
    assert out.splitlines()[0] == "blocks: [2,2]; EP order: 1"
    assert "N_max: 2" in out
    assert "rank sequence: [4,2,0]" in out
    assert "residual:" in out


def test_jordan_zero_matrix_bare_list(tmp_path):
    code, out, _ = run("jordan", "--input", write_yaml(tmp_path, "z.yaml", np.zeros((4, 4)).tolist()))
    assert code == 0
    assert out.splitlines()[0] == "blocks: [1,1,1,1]; EP order: 0"


def test_jordan_synthetic_third_order(tmp_path):
    M = synth_jordan_model(3, seed=2).tolist()
    code, out, _ = run("jordan", "--input", write_yaml(tmp_path, "s.yaml", {"M": M}))
    assert code == 0
    assert "EP order: 2" in out.splitlines()[0]


def test_jordan_with_pi(tmp_path):
    Pi = np.diag([2.0, 1.0, 2.0, 1.0])
    M = (np.array(CANONICAL_M) @ Pi).tolist()
    code, out, _ = run("jordan", "--input", write_yaml(tmp_path, "p.yaml", {"M": M, "Pi": Pi.tolist()}))
    assert code == 0 and out.startswith("blocks: [2,2]")


def test_jordan_non_square(tmp_path):
    code, _, err = run("jordan", "--input", write_yaml(tmp_path, "n.yaml", {"M": [[1, 2, 3], [4, 5, 6]]}))
    assert code == 2
    assert "square" in err


def test_jordan_missing_file():
    assert run("jordan", "--input", "/nonexistent/m.yaml")[0] == 2


def test_oracle_threshold_is_instability():
    code, _, err = run("oracle", "--delta", "0")
    assert code == 4
    assert "threshold" in err


def test_oracle_too_short_never_passes():
    code, _, _ = run("oracle", "--delta", "0.2", "--theta", "0.1", "--duration", "10")
    assert code == 3


@pytest.mark.slow
def test_oracle_default_run_passes():
    code, out, _ = run("oracle", "--delta", "0.2", "--theta", "0.1", "--duration", "1e4")
    assert code == 0, out
    lines = [line for line in out.splitlines() if not line.startswith("#")]
    assert lines[0].split("\t") == ["entry", "analytic", "estimated", "stderr", "tolerance", "result"]
    assert len(lines) == 17
    assert all(line.endswith("pass") for line in lines[1:])


def test_bound_single_and_range():
    code, out, _ = run("bound", "--delta", "0.05")
    assert code == 0 and "I_UB:" in out
    code, out, err = run("bound", "--delta-min", "1e-3", "--delta-max", "1e-1")
    assert code == 0
    assert out.splitlines()[0] == "delta,I_UB"
    exponent = float(err.split()[2])
    assert exponent == pytest.approx(-4, abs=0.3)


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "epsensing", "sweep", "--scenario", "nonsense"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 2
    assert "ep_detuned" in proc.stderr


def test_argparse_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--format", "xml"])
    assert exc.value.code == 2
