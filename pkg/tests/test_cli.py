import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from jumprev.cli import main


def run_cli(*argv):
    """In-process invocation: returns (exit code)."""
    return main(list(argv))


def run_proc(*argv):
    """Subprocess invocation: returns CompletedProcess."""
    return subprocess.run([sys.executable, "-m", "jumprev.cli", *argv],
                          capture_output=True, text=True)


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_n_paths_zero_is_config_error(tmp_path):
    assert run_cli("simulate", "--demo", "cycle3", "--seed", "3",
                   "--n-paths", "0", "--out", str(tmp_path)) == 2


def test_missing_seed_is_config_error(tmp_path):
    assert run_cli("simulate", "--demo", "cycle3", "--out", str(tmp_path)) == 2


def test_unreadable_config_is_config_error(tmp_path):
    assert run_cli("simulate", "--config", str(tmp_path / "nope.json"),
                   "--seed", "1", "--out", str(tmp_path)) == 2


def test_ac_violation_exits_3_and_names_state(tmp_path):
    proc = run_proc("reverse", "--demo", "acviolation", "--out", str(tmp_path))
    assert proc.returncode == 3
    assert "state 1" in proc.stderr


def test_successful_reverse_exits_0(tmp_path):
    assert run_cli("reverse", "--demo", "poisson", "--out", str(tmp_path)) == 0


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def test_reverse_poisson_kernel_csv(tmp_path):
    assert run_cli("reverse", "--demo", "poisson", "--out", str(tmp_path)) == 0
    with open(tmp_path / "backward_kernel.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    hit = [r for r in rows if abs(float(r["t"]) - 0.5) < 1e-12
           and r["from"] == "2" and r["to"] == "1"]
    assert hit
    assert float(hit[0]["rate"]) == pytest.approx(4.0, abs=1e-9)


def test_simulate_levy_writes_sidecar(tmp_path):
    assert run_cli("simulate", "--demo", "levy", "--seed", "5",
                   "--n-paths", "200", "--out", str(tmp_path)) == 0
    with open(tmp_path / "levy_reversal.json") as fh:
        sidecar = json.load(fh)
    assert sidecar["drift"] == [-0.25]
    jumps = sorted(a["jump"][0] for a in sidecar["atoms"])
    assert jumps == [-1.0, 0.5]
    assert sidecar["support"] == [[-3.0, -0.1]]
    assert (tmp_path / "ensemble.jsonl").exists()
    assert (tmp_path / "summary.csv").exists()


def test_entropy_unit_tilt_zero(tmp_path):
    assert run_cli("entropy", "--demo", "tilt", "--tilt", "1.0",
                   "--out", str(tmp_path)) == 0
    with open(tmp_path / "entropy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["running_term"]) == 0.0 for r in rows)


def test_entropy_killing_tilt(tmp_path):
    # reference is the unit-rate counting process: running term = m T = 1
    assert run_cli("entropy", "--demo", "tilt", "--tilt", "0.0",
                   "--out", str(tmp_path)) == 0
    with open(tmp_path / "entropy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["running_term"]) == pytest.approx(1.0, abs=1e-9)


def test_entropy_double_tilt(tmp_path):
    assert run_cli("entropy", "--demo", "tilt", "--out", str(tmp_path)) == 0
    with open(tmp_path / "entropy.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["running_term"]) == pytest.approx(
        2 * math.log(2) - 1, abs=1e-6)
    assert float(rows[-1]["quadrature_error"]) <= 1e-6


def test_verify_writes_verdict_and_report(tmp_path, capsys):
    rc = run_cli("verify", "--demo", "cycle3", "--seed", "31",
                 "--n-paths", "8000", "--out", str(tmp_path))
    out = capsys.readouterr().out
    assert rc == 0
    assert "VERDICT: PASS" in out
    assert (tmp_path / "reversal_report.csv").exists()
    assert (tmp_path / "intensity.csv").exists()


def test_verify_perturbed_fails_with_exit_4(tmp_path, capsys):
    rc = run_cli("verify", "--demo", "cycle3", "--seed", "31",
                 "--n-paths", "8000", "--perturb", "1.2", "--out", str(tmp_path))
    out = capsys.readouterr().out
    assert rc == 4
    assert "VERDICT: FAIL" in out


def test_marginals_csv_written(tmp_path):
    assert run_cli("marginals", "--demo", "cycle3", "--out", str(tmp_path)) == 0
    with open(tmp_path / "marginals.csv", newline="") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["t", "c0", "mass"]


def test_explicit_config_document(tmp_path):
    doc = {
        "spec": {
            "space": {"kind": "finite", "n_states": 2},
            "drift": {"kind": "zero", "dimension": 1},
            "kernel": {"kind": "finite_rate_matrix",
                       "rates": [[0.0, 1.0], [1.0, 0.0]]},
            "delta": 0.0,
            "initial_law": {"kind": "vector", "probabilities": [0.7, 0.3]},
            "horizon": 1.0,
        },
        "marginals": {"grid": np.linspace(0, 1, 11).tolist()},
        "seed": 4,
    }
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    assert run_cli("marginals", "--config", str(cfg), "--out", str(tmp_path)) == 0
    assert run_cli("reverse", "--config", str(cfg), "--out", str(tmp_path)) == 0


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_simulate_deterministic_across_runs_and_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "--demo", "cycle3", "--seed", "7",
                   "--n-paths", "500", "--threads", "1", "--out", str(a)) == 0
    assert run_cli("simulate", "--demo", "cycle3", "--seed", "7",
                   "--n-paths", "500", "--threads", "3", "--out", str(b)) == 0
    assert (a / "ensemble.jsonl").read_bytes() == (b / "ensemble.jsonl").read_bytes()
    assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()


def test_verify_deterministic_report(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out, threads in ((a, "1"), (b, "2")):
        rc = run_cli("verify", "--demo", "cycle3", "--seed", "13",
                     "--n-paths", "3000", "--threads", threads, "--out", str(out))
        assert rc == 0
    assert (a / "reversal_report.csv").read_bytes() == \
        (b / "reversal_report.csv").read_bytes()


def test_demo_writes_resolved_config(tmp_path):
    assert run_cli("demo", "cycle3", "--seed", "3", "--n-paths", "300",
                   "--out", str(tmp_path)) == 0
    with open(tmp_path / "config.json") as fh:
        doc = json.load(fh)
    assert doc["demo"] == "cycle3"
    assert doc["spec"]["kernel"]["kind"] == "finite_rate_matrix"
