import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kpert import cli

FIXTURES = Path(cli.fixture_path(""))


def run_cli(*argv):
    return cli.main(list(argv))


def test_series_zero_measure_ratio_one(tmp_path):
    code = run_cli("series", "--config",
                   str(FIXTURES / "series_zero_measure.json"),
                   "--out", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "series.csv").read_text().strip().splitlines()
    assert rows[0] == "s,x,p,p_mu,ratio,truncation_index,status"
    for row in rows[1:]:
        assert row.split(",")[4] == "1.0"


def test_series_atomless_ratio(tmp_path):
    code = run_cli("series", "--config",
                   str(FIXTURES / "series_atomless.json"),
                   "--out", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "series.csv").read_text().strip().splitlines()
    import math
    for row in rows[1:]:
        assert abs(float(row.split(",")[4]) - math.exp(0.25)) < 1e-3


def test_malformed_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("series", "--config", str(bad)) == 2


def test_unknown_kernel_exit_2(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kernel": {"name": "heat"}}))
    assert run_cli("series", "--config", str(cfg)) == 2


def test_certify_discrete_fixture_exit_0(tmp_path):
    code = run_cli("certify", "--config",
                   str(FIXTURES / "certify_discrete.json"),
                   "--out", str(tmp_path))
    assert code == 0
    certs = json.loads((tmp_path / "certificates.json").read_text())
    assert [c["status"] for c in certs] == ["VALID"] * 3
    assert [c["slice"] for c in certs] == [1, 2, 3]
    csv_rows = (tmp_path / "certificates.csv").read_text().splitlines()
    assert csv_rows[0] == \
        "slice,eta,beta,bound,measured_ratio,margin,status,samples"


def test_certify_atom_violation_exit_4(tmp_path):
    code = run_cli("certify", "--config",
                   str(FIXTURES / "certify_atom_violation.json"),
                   "--out", str(tmp_path))
    assert code == 4
    certs = json.loads((tmp_path / "certificates.json").read_text())
    assert any(c["status"] == "HYPOTHESIS_FAIL" for c in certs)


def test_certify_kappa_fixture_exit_0(tmp_path):
    code = run_cli("certify", "--config",
                   str(FIXTURES / "certify_kappa.json"),
                   "--out", str(tmp_path))
    assert code == 0
    certs = json.loads((tmp_path / "certificates.json").read_text())
    assert all(c["status"] == "VALID" for c in certs)
    assert len(certs) == 4


def test_invalid_certificates_exit_3(tmp_path, monkeypatch):
    import kpert.bounds as bnd
    from kpert.bounds import BoundCertificate
    fake = [BoundCertificate(1, 0.5, 0.5, 2.0, 3.0, "INVALID", 4)]
    monkeypatch.setattr(cli.bnd, "certify",
                        lambda *a, **k: fake)
    code = run_cli("certify", "--config",
                   str(FIXTURES / "certify_discrete.json"),
                   "--out", str(tmp_path))
    assert code == 3


def test_oracle_check(tmp_path):
    assert run_cli("oracle-check", "--out", str(tmp_path)) == 0
    rows = (tmp_path / "oracles.csv").read_text().strip().splitlines()
    assert rows[0] == "case,measured,expected,rel_error"
    for row in rows[1:]:
        assert float(row.split(",")[-1]) < 1e-3


def test_kato_command(tmp_path):
    assert run_cli("kato", "--windows", "0.5,0.25", "--out",
                   str(tmp_path)) == 0
    rows = (tmp_path / "kato.csv").read_text().strip().splitlines()
    assert rows[0] == "h,k_h"
    vals = [float(r.split(",")[1]) for r in rows[1:]]
    assert vals[0] > vals[1]


def test_3g_command(tmp_path):
    assert run_cli("3g", "--seed", "3", "--samples", "5000",
                   "--out", str(tmp_path)) == 0
    text = (tmp_path / "3g.csv").read_text()
    assert "all_in_range,True" in text


def test_weyl_command(tmp_path):
    assert run_cli("weyl", "--out", str(tmp_path)) == 0
    rows = (tmp_path / "weyl.csv").read_text().strip().splitlines()
    for row in rows[1:]:
        assert float(row.split(",")[-1]) < 1e-6


def test_reproduce_only_filter(tmp_path, capsys):
    code = run_cli("reproduce", "--only", "determinism", "--seed", "7",
                   "--out", str(tmp_path))
    out = capsys.readouterr().out
    assert code == 0
    assert "determinism" in out and "PASS" in out
    assert (tmp_path / "reproduce_summary.csv").exists()
    assert (tmp_path / "artifacts.txt").exists()


def test_reproduce_unknown_filter():
    assert run_cli("reproduce", "--only", "nonexistent") == 2


def test_reproduce_outputs_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("reproduce", "--only", "determinism", "--seed", "7",
                       "--out", str(out)) == 0
    assert (a / "artifacts.txt").read_bytes() == \
        (b / "artifacts.txt").read_bytes()
    assert (a / "reproduce_summary.csv").read_text().splitlines()[1].split(",")[:3] == \
        (b / "reproduce_summary.csv").read_text().splitlines()[1].split(",")[:3]


def test_console_entry_point_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "kpert.cli", "weyl", "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0


def test_kp_threads_env(monkeypatch):
    monkeypatch.setenv("KP_THREADS", "3")
    assert cli.worker_count() == 3
    monkeypatch.setenv("KP_THREADS", "bogus")
    assert cli.worker_count() == 1
    assert cli.pmap(lambda v: v * v, [1, 2, 3]) == [1, 4, 9]
