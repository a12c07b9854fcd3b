import csv
import json

import pytest

from nlsgibbs import cli
from nlsgibbs.fourier_state import FourierState, save_state
from nlsgibbs.gibbs import read_samples

from test_harness import TOML


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_sample(tmp_path, capsys):
    out = tmp_path / "s.jsonl"
    code, cap = run(capsys, "sample", "--beta", 16, "--n", 20, "--truncation", 3, "--out", out)
    assert code == 0
    report = json.loads(cap.out)
    assert report["n"] == 20 and 1 <= report["ess"] <= 20
    samples = read_samples(out)
    assert len(samples) == 20 and samples[0].state.N == 3


def test_sample_q_mismatch(tmp_path):
    with pytest.raises(SystemExit, match="q-1"):
        cli.main(["sample", "--beta", "16", "--n", "2", "--q", "3", "--c", "1.0",
                  "--out", str(tmp_path / "x")])


def test_build_and_check_nf(tmp_path, capsys):
    pkg = tmp_path / "pkg.json"
    code, cap = run(capsys, "build-nf", "--n", 4, "--tk", 1, "--beta", 32, "--out", pkg)
    assert code == 0
    assert json.loads(cap.out)["resonances"] == 12
    code, cap = run(capsys, "check-nf", pkg, "--samples", 10)
    report = json.loads(cap.out)
    assert code == 0 and report["pass"]
    assert max(report["homological"].values()) < 1e-12


def test_build_nf_rejects_bad_delta(tmp_path, capsys):
    code, cap = run(capsys, "build-nf", "--n", 2, "--tk", 1, "--beta", 32, "--delta", 0.5,
                    "--out", tmp_path / "p.json")
    assert code == 2
    assert "delta*beta" in cap.err


def test_evolve(tmp_path, capsys):
    state = tmp_path / "state.json"
    save_state(state, FourierState.from_modes(3, {0: 0.3, 1: 0.2j, -2: 0.1}))
    pkg = tmp_path / "pkg.json"
    run(capsys, "build-nf", "--n", 3, "--tk", 1, "--beta", 32, "--out", pkg)
    out = tmp_path / "traj.csv"
    code, cap = run(capsys, "evolve", "--state", state, "--dt", 1e-3, "--t-end", 0.1,
                    "--observe", 20, "--k-max", 2, "--phi", pkg, "--out", out)
    assert code == 0
    assert json.loads(cap.out)["conservation"]["l2_drift"] < 1e-12
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "H", "l2", "action_-2", "action_-1", "action_0", "action_1",
                       "action_2", "phi6_1"]
    assert len(rows) == 1 + 6


def test_evolve_missing_state(tmp_path, capsys):
    code, cap = run(capsys, "evolve", "--state", tmp_path / "nope.json", "--t-end", 1,
                    "--out", tmp_path / "o.csv")
    assert code == 2


def test_drift(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(TOML.replace("horizon_c = 0.004", "horizon_c = 0.001"))
    out = tmp_path / "drift.csv"
    code, cap = run(capsys, "drift", "--config", cfg, "--out", out, "--all-modes")
    assert code == 0
    summary = json.loads(cap.out)
    assert len(summary["runs"]) == 2
    assert "corollary" in summary["runs"][0]
    assert len(summary["runs"][0]["chebyshev"]["1"]) == 4
    header = out.read_text().splitlines()[0]
    assert header == "sample,k,T,drift_I_normalized,drift_phi_normalized,flags"


def test_verify_lemma(tmp_path, capsys):
    cfg = tmp_path / "exp.toml"
    cfg.write_text(TOML)
    code, cap = run(capsys, "verify-lemma", "gau", "--config", cfg)
    verdict = json.loads(cap.out)
    assert set(verdict) >= {"lemma", "estimate", "bound_or_slope", "pass"}
    assert code == (0 if verdict["pass"] else 1)
    with pytest.raises(SystemExit):
        cli.main(["verify-lemma", "unknown", "--config", str(cfg)])
