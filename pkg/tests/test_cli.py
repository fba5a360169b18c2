"""Command-line driver tests: artifact layout, manifests, exit codes,
and the flag surface of every subcommand, all on small fast configs."""

import hashlib
import json

import numpy as np
import pytest

from pamlab import heat_kernel
from pamlab.cli import main


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(
        json.dumps(
            {
                "d": 1,
                "beta": 0.5,
                "dt": 0.01,
                "T": 1.0,
                "replicas": 110,
                "checkpoint_stride": 10,
                "window": 0.5,
            }
        )
    )
    return str(path)


def read_manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


def check_manifest(directory):
    m = read_manifest(directory)
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((directory / name).read_bytes()).hexdigest() == digest
    return m


def test_kernel_subcommand(tmp_path):
    out = tmp_path / "vals.csv"
    rc = main(["kernel", "--d", "2", "--t", "0.5,0.1", "--site", "1:-1", "--table-out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,site,p"
    t, site, p = lines[1].split(",")
    assert (t, site) == ("0.1", "1:-1")
    assert float(p) == heat_kernel(0.1, (1, -1), 2, 1.0)
    m = check_manifest(tmp_path)
    assert m["subcommand"] == "kernel" and m["status"] == "complete"
    # full-table mode
    rc = main(["kernel", "--d", "1", "--t", "0.2", "--radius", "6", "--table-out", str(tmp_path / "tab.csv")])
    assert rc == 0
    assert len((tmp_path / "tab.csv").read_text().splitlines()) == 1 + 13


def test_kernel_bad_flags_exit_2(tmp_path):
    assert main(["kernel", "--d", "1", "--t", "oops", "--table-out", str(tmp_path / "x.csv")]) == 2
    assert main(["kernel", "--d", "2", "--t", "0.5", "--site", "1:2:3", "--table-out", str(tmp_path / "y.csv")]) == 2
    # a radius too small to hold the kernel mass is caught, not silently wrong
    assert main(["kernel", "--d", "1", "--t", "9.0", "--radius", "3", "--table-out", str(tmp_path / "z.csv")]) == 2


def test_simulate_layout(tmp_path, cfg_file):
    out = tmp_path / "sim"
    rc = main(["simulate", "--config", cfg_file, "--out", str(out)])
    assert rc == 0
    m = check_manifest(out)
    assert m["status"] == "complete" and m["master_seed"] == 20260814
    series = sorted(out.glob("series_*.csv"))
    assert len(series) == 110
    header = (out / "series_0.csv").read_text().splitlines()[0]
    assert header == "t,Z,logZ,I,V,intI,escaped"
    table = np.genfromtxt(out / "ensemble.csv", delimiter=",", names=True)
    assert abs(table["Z_mean"][-1] - 1.0) < 4.0 * table["Z_stderr"][-1]


def test_verify_honest_and_controls(tmp_path, cfg_file):
    rc = main(["verify", "--config", cfg_file, "--out", str(tmp_path / "h/report.json")])
    assert rc == 0
    report = json.loads((tmp_path / "h/report.json").read_text())
    assert {v["name"] for v in report["verdicts"]} >= {"martingale", "qv"}
    assert all(v["passed"] for v in report["verdicts"])
    assert report["localization"] is not None and report["classification"]
    check_manifest(tmp_path / "h")
    rc = main(
        ["verify", "--config", cfg_file, "--control", "biased", "--tests", "martingale",
         "--out", str(tmp_path / "b/report.json")]
    )
    assert rc == 4  # the broken scheme must be flagged
    biased = json.loads((tmp_path / "b/report.json").read_text())
    assert not biased["verdicts"][0]["passed"]


def test_verify_rejects_unknown_test(tmp_path, cfg_file):
    assert main(["verify", "--config", cfg_file, "--tests", "bogus", "--out", str(tmp_path / "r.json")]) == 2


def test_verify_ito_with_explicit_window(tmp_path):
    cfg = tmp_path / "ito.json"
    cfg.write_text(json.dumps({"d": 1, "beta": 1.0, "dt": 0.01, "T": 10.0, "replicas": 12, "ito_stride": 2}))
    out = tmp_path / "ito_report.json"
    # default eps0 puts the certificate window beyond the horizon, so the
    # window length comes from the flag and claim2 reports not-applicable
    rc = main(["verify-ito", "--config", str(cfg), "--t0", "2.0", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["t0"] == 2.0
    status = {v["name"]: v["status"] for v in report["verdicts"]}
    assert status["claim1"] == "pass" and status["claim2"] == "not-applicable"
    assert len(report["replicas"]) == 12
    check_manifest(tmp_path)


def test_second_moment_csv(tmp_path):
    cfg = tmp_path / "sm.json"
    cfg.write_text(
        json.dumps({"d": 2, "beta": 0.4, "dt": 0.05, "T": 1.0, "replicas": 40, "checkpoint_stride": 4})
    )
    out = tmp_path / "sm.csv"
    rc = main(["second-moment", "--config", str(cfg), "--pairs", "500", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "estimator,mean,stderr,n"
    rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
    assert rows["env_mc_Z2"][3] == "40" and rows["path_pair_expL"][3] == "500"
    # the two routes target the same quantity; at this scale they agree loosely
    assert abs(float(rows["env_mc_Z2"][1]) - float(rows["path_pair_expL"][1])) < 0.2


def test_phase_scan_csv(tmp_path):
    cfg = tmp_path / "ps.json"
    cfg.write_text(json.dumps({"d": 1, "dt": 0.02, "T": 1.0, "replicas": 30, "window": 0.5}))
    out = tmp_path / "scan.csv"
    rc = main(["phase-scan", "--config", str(cfg), "--beta-grid", "0.0:0.8:0.4", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "beta,p_hat1,p_hat2,intI_rate,windowmax_I_median,classification"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert float(first[0]) == 0.0 and abs(float(first[1])) < 1e-12


def test_constants_subcommand(tmp_path, capsys):
    rc = main(["constants", "--d", "1", "--beta", "1.0", "--eps0", "0.001", "--out", str(tmp_path / "c.json")])
    assert rc == 0
    printed = json.loads(capsys.readouterr().out)
    stored = json.loads((tmp_path / "c.json").read_text())
    assert printed == stored and stored["t0"] > 0
    check_manifest(tmp_path)
    assert main(["constants", "--d", "3", "--beta", "0.5"]) == 3
    assert main(["constants", "--d", "1", "--beta", "1.0", "--eps0", "0.5"]) == 2


def test_worker_env_validation(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv("APL_THREADS", "zero")
    assert main(["simulate", "--config", cfg_file, "--out", str(tmp_path / "s")]) == 2
