import csv
import hashlib
import json

import numpy as np
import pytest

from mdcr.cli import main
from mdcr.distributions import DEFAULT_TABLE, standardized_sample
from mdcr.synthesis import write_domain_csv


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["generate", "--preset", "ell3_m2", "--n", "3000", "--seed", "7", "--out", str(out)]) == 0
    return out


def test_generate_outputs(generated):
    names = sorted(p.name for p in generated.iterdir())
    assert names == ["domain_1.csv", "domain_2.csv", "manifest.json", "model.json"]
    with open(generated / "domain_1.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 16 and len(rows[0]) == 3001
    manifest = json.loads((generated / "manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["finished"]
    assert set(manifest["outputs"]) == {"domain_1.csv", "domain_2.csv", "model.json"}


def test_generate_is_byte_identical(generated, tmp_path):
    assert main(["generate", "--preset", "ell3_m2", "--n", "3000", "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("domain_1.csv", "domain_2.csv", "model.json"):
        assert sha(tmp_path / name) == sha(generated / name)


def test_generate_config_error_points_at_line(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "m": 2,\n  "d": 31\n}\n')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert f"{cfg}:3:" in capsys.readouterr().err


def test_generate_bad_json(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{\n  "m": 2,\n  "d" 30\n}\n')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert f"{cfg}:3:" in capsys.readouterr().err


def test_generate_from_config_with_preset(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "ell3_m3", "n": 200, "seed": 1}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("domain_*.csv"))) == 3


def test_pipeline_outputs(generated, tmp_path):
    out = tmp_path / "run"
    assert main(["pipeline", "--data", str(generated), "--model", str(generated / "model.json"), "--out", str(out)]) == 0
    for name in ("recovered.json", "B_hat.csv", "match_table.csv", "scores.json", "manifest.json"):
        assert (out / name).exists()
    rec = json.loads((out / "recovered.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert rec["manifest_sha256"] == manifest["manifest_sha256"]
    assert set(rec) >= {"ell_hat", "A_hat", "edges", "order_permutation", "diagnostics"}


def test_pipeline_oracle_scores_are_zero(generated, tmp_path):
    out = tmp_path / "orc"
    assert main(["pipeline", "--model", str(generated / "model.json"), "--oracle", "--out", str(out)]) == 0
    scores = json.loads((out / "scores.json").read_text())
    assert scores["ell_hat"] == 3
    assert scores["score_B"] < 1e-9 and scores["score_A"] < 1e-9


def test_pipeline_mismatched_header(tmp_path, capsys):
    (tmp_path / "domain_1.csv").write_text("variable,0,1,2\nx,1,2,3\n")
    (tmp_path / "domain_2.csv").write_text("variable,0,1,2\nx,1,2\n")
    assert main(["pipeline", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert "domain_2.csv:2:" in capsys.readouterr().err


def test_pipeline_needs_two_domains(generated, tmp_path):
    assert main(["pipeline", "--csv", str(generated / "domain_1.csv"), "--out", str(tmp_path)]) == 2


def test_pipeline_transpose(generated, tmp_path):
    from mdcr.synthesis import read_domain_csv

    for e in (1, 2):
        X, labels = read_domain_csv(generated / f"domain_{e}.csv")
        with open(tmp_path / f"t{e}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"] + labels)
            for j, col in enumerate(X.T):
                w.writerow([j] + [repr(float(x)) for x in col])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["pipeline", "--csv", str(tmp_path / "t1.csv"), str(tmp_path / "t2.csv"), "--transpose", "--out", str(a)]) == 0
    assert main(["pipeline", "--data", str(generated), "--out", str(b)]) == 0
    assert sha(a / "B_hat.csv") == sha(b / "B_hat.csv")


def test_pipeline_no_shared_exit_code(tmp_path):
    rng = np.random.default_rng(0)
    for e, laws in enumerate([(0, 2), (4, 6)], start=1):
        S = np.stack([standardized_sample(DEFAULT_TABLE[k], 4000, rng) for k in laws])
        X = rng.uniform(0.5, 1, (3, 2)) @ S
        write_domain_csv(tmp_path / f"domain_{e}.csv", X, ["a", "b", "c"])
    assert main(["pipeline", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == 0
    assert main(["pipeline", "--data", str(tmp_path), "--require-shared", "--out", str(tmp_path / "o")]) == 3


def test_pipeline_stage_failure_exit_code(generated, tmp_path, capsys):
    assert main(["pipeline", "--data", str(generated), "--gamma", "1e9", "--out", str(tmp_path)]) == 4
    assert "stage 'matching'" in capsys.readouterr().err


SWEEP = {"preset": "ell3_m2", "grid": {"m": [2, 3], "n": [500, 800]}, "trials": 2, "seed": 5}


def write_sweep(tmp_path, **kw):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps(dict(SWEEP, **kw), indent=2))
    return cfg


def test_sweep_outputs_and_thread_invariance(tmp_path):
    cfg = write_sweep(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1", "--svg"]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    for name in ("trials.csv", "aggregate.json", "aggregate.csv"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)
    agg = json.loads((tmp_path / "a" / "aggregate.json").read_text())
    assert len(agg["cells"]) == 4
    assert (tmp_path / "a" / "score_B.svg").exists()


def test_sweep_threads_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MDCR_THREADS", "0")
    assert main(["sweep", "--config", str(write_sweep(tmp_path)), "--out", str(tmp_path / "a")]) == 2


def test_sweep_zero_trials(tmp_path):
    assert main(["sweep", "--config", str(write_sweep(tmp_path)), "--trials", "0", "--out", str(tmp_path / "a")]) == 2


def test_sweep_config_error_line(tmp_path, capsys):
    cfg = write_sweep(tmp_path, trials=-1)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2
    line = next(i for i, l in enumerate(cfg.read_text().splitlines(), 1) if '"trials"' in l)
    assert f"{cfg}:{line}:" in capsys.readouterr().err


def test_sweep_resume_has_no_duplicates(tmp_path):
    cfg = write_sweep(tmp_path)
    out = tmp_path / "a"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    full = (out / "trials.csv").read_text()
    lines = full.splitlines(keepends=True)
    (out / "trials.csv").write_text("".join(lines[:4]))
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "trials.csv").read_text() == full


def test_sweep_refuses_foreign_results(tmp_path):
    out = tmp_path / "a"
    assert main(["sweep", "--config", str(write_sweep(tmp_path)), "--out", str(out)]) == 0
    assert main(["sweep", "--config", str(write_sweep(tmp_path, seed=6)), "--out", str(out)]) == 2


def test_bounds_output(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bounds", "--n", "10000", "--kappa", "0.2", "--domains", "2", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 2
    assert float(rows[1]["bound"]) == pytest.approx(float(rows[0]["bound"]) ** 2, rel=1e-12)


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["generate", "--out", "x", "--bogus"]) == 2
