import json

import numpy as np
import pytest

from privlogit.cli import EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE, main
from privlogit.data import export_csv, synthetic


def run(args, tmp_path):
    path = tmp_path / "report.json"
    code = main(args + ["--report", str(path)])
    return code, json.loads(path.read_text()) if path.exists() else None


def test_fit_identity_keys_matches_plaintext(tmp_path):
    code, rep = run(["fit", "--synthetic", "300,4,1", "-K", "1", "--identity-keys", "--escrow"], tmp_path)
    assert code == EXIT_OK
    assert rep["auc_train"]["encrypted"] == rep["auc_train"]["plaintext"]


def test_fit_parity_and_escrow_counts(tmp_path):
    code, rep = run(["fit", "--synthetic", "300,4,1", "-K", "3", "--lambda", "0.5", "--escrow"], tmp_path)
    assert code == EXIT_OK and rep["parity"]["passed"] and rep["escrow_accesses"] > 0
    _, rep2 = run(["fit", "--synthetic", "300,4,1", "-K", "3", "--lambda", "0.5"], tmp_path)
    assert rep2["escrow_accesses"] == 0 and rep2["parity"] is None


def test_reports_reproducible(tmp_path):
    args = ["fit", "--synthetic", "200,3,2", "-K", "2", "--seed", "4"]
    _, a = run(args, tmp_path)
    _, b = run(args, tmp_path)
    a.pop("timings_ms"), b.pop("timings_ms")
    assert a == b


def test_verify_tamper_decrypt_fails(tmp_path):
    code, rep = run(["verify", "--synthetic", "300,4,1", "-K", "3", "--tamper", "decrypt"], tmp_path)
    assert code == EXIT_CHECK_FAILED
    checks = {v["check"]: v["passed"] for v in rep["verification"]}
    assert checks == {"encryption": True, "decryption": False}


def test_verify_honest(tmp_path):
    code, rep = run(["verify", "--synthetic", "300,4,1", "-K", "3"], tmp_path)
    assert code == EXIT_OK and all(v["passed"] for v in rep["verification"])


def test_cv_with_csv(tmp_path):
    x, y, _ = synthetic(200, 3, seed=0)
    export_csv(tmp_path / "d.csv", x, y)
    code, rep = run(["cv", "--dataset", str(tmp_path / "d.csv"), "--label", "label", "-K", "2",
                     "--folds", "3", "--escrow", "--shuffle"], tmp_path)
    assert code == EXIT_OK and rep["parity"]["passed"]
    assert len(rep["auc_test"]["encrypted_folds"]) == 3


def test_bench_table(tmp_path):
    code, rep = run(["bench", "--synthetic", "2000,6", "--sweep", "1,3", "--max-iters", "3"], tmp_path)
    assert code == EXIT_OK
    table = (tmp_path / "report.timings.csv").read_text().splitlines()
    assert table[0] == "phase,K,time_ms" and len(table) == 1 + 2 * 4
    assert all(v >= 0 for v in rep["timings_ms"].values())


def test_attack_subset(tmp_path):
    code, rep = run(["attack", "--which", "cpa,collusion", "-K", "3"], tmp_path)
    assert code == EXIT_OK
    assert rep["extra"]["cpa_fixture"]["columns"][0]["dimension"] == 6
    assert rep["extra"]["collusion"]["row_matched_error"] > 0.1


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["fit"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["fit", "--synthetic", "50,2", "-K", "2", "--split", "0.3,0.3"])
