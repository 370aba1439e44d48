import json
import time

import numpy as np
import pytest

from drg.cli import main
from drg.checks import DEFAULT_BOUNDS, check_bilinear_bound
from drg.engine import EngineConfig, EngineState
from drg.bench import CSV_HEADER

from .helpers import family_z


def write_config(path, **fields):
    path.write_text(json.dumps(fields))
    return str(path)


SEED8 = "00" * 7 + "2a"  # 64 bits, n = 8 needs 32


@pytest.fixture(scope="module")
def matured_checkpoint(tmp_path_factory):
    d = tmp_path_factory.mktemp("mature")
    cfg = write_config(d / "cfg.json", n=8, seed=SEED8)
    steps = EngineConfig(n=8, seed=bytes.fromhex(SEED8)).maturity_steps
    assert main(["run", "--config", cfg, "--steps", str(steps), "--out", str(d / "ckpt.json")]) == 0
    return d / "ckpt.json"


# --- run ------------------------------------------------------------------

def test_run_zero_steps_is_usage_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8)
    assert main(["run", "--config", cfg, "--steps", "0", "--out", str(tmp_path / "o.json")]) == 1
    assert "steps" in capsys.readouterr().err


def test_run_rejects_bad_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8, colour="red")
    assert main(["run", "--config", cfg, "--steps", "1", "--out", str(tmp_path / "o.json")]) == 1
    assert "colour" in capsys.readouterr().err
    cfg = write_config(tmp_path / "c.json", n=8, seed="00ff")
    assert main(["run", "--config", cfg, "--steps", "1", "--out", str(tmp_path / "o.json")]) == 1
    assert "32 bits" in capsys.readouterr().err
    assert main(["run", "--steps", "1"]) == 1  # missing --out


def test_run_logs_are_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8)
    for name in ("a", "b"):
        assert main(["run", "--config", cfg, "--steps", "6", "--out", str(tmp_path / f"{name}.json")]) == 0
    a = (tmp_path / "a.steps.jsonl").read_bytes()
    assert a == (tmp_path / "b.steps.jsonl").read_bytes()
    records = [json.loads(line) for line in a.splitlines()]
    assert [r["m"] for r in records] == list(range(1, 7))
    assert set(records[0]) >= {"m", "objective_fast", "objective_slow", "reached_target", "repick_count", "mix_weight"}
    report = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert report["steps"] == 6 and 0 <= report["defeat_rate"] <= 1


def test_run_resume_matches_single_run(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8)
    main(["run", "--config", cfg, "--steps", "4", "--out", str(tmp_path / "whole.json")])
    main(["run", "--config", cfg, "--steps", "2", "--out", str(tmp_path / "half.json")])
    main(["run", "--resume", str(tmp_path / "half.json"), "--steps", "2", "--out", str(tmp_path / "rest.json")])
    whole = json.loads((tmp_path / "whole.json").read_text())
    rest = json.loads((tmp_path / "rest.json").read_text())
    assert whole == rest


def test_partition_run_budget(tmp_path, capsys):
    seed = "01" * 10  # n = 16 needs 80 bits
    cfg = write_config(tmp_path / "c.json", n=16, method="partition", seed=seed)
    t0 = time.perf_counter()
    assert main(["run", "--config", cfg, "--steps", "1000", "--out", str(tmp_path / "o.json")]) == 0
    assert time.perf_counter() - t0 < 60


# --- emit -----------------------------------------------------------------

def test_emit_one_line(matured_checkpoint, capsys):
    assert main(["emit", "--checkpoint", str(matured_checkpoint), "--count", "1"]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert len(lines) == 1 and len(lines[0]) == 8 and set(lines[0]) <= {"0", "1"}


def test_emit_before_maturity(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8)
    main(["run", "--config", cfg, "--steps", "3", "--out", str(tmp_path / "young.json")])
    capsys.readouterr()
    assert main(["emit", "--checkpoint", str(tmp_path / "young.json")]) == 2
    err = capsys.readouterr().err
    need = EngineConfig(n=8, seed=bytes.fromhex(SEED8)).maturity_steps
    assert f"= {need} steps" in err and f"{need - 3} remaining" in err


def test_emit_frequencies(matured_checkpoint, tmp_path):
    out = tmp_path / "vectors.txt"
    T = 10**4
    assert main(["emit", "--checkpoint", str(matured_checkpoint), "--count", str(T), "--out", str(out)]) == 0
    X = np.array([[c == "1" for c in line] for line in out.read_text().splitlines()], dtype=float)
    assert X.shape == (T, 8)
    ckpt = json.loads(matured_checkpoint.read_text())
    mu = EngineState.from_json(ckpt).phi.moments().mu
    se = np.sqrt(np.maximum(mu * (1 - mu), 1e-12) / T)
    # 3 sigma, family-wise over the n coordinates
    assert np.all(np.abs(X.mean(axis=0) - mu) <= family_z(8) * se)


# --- protocol-sim ---------------------------------------------------------

def test_protocol_sim_formats(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", n=8, seed=SEED8)
    assert main(["protocol-sim", "--config", cfg, "--rounds", "200", "--adversary", "constant"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["eve_gap"] == rep["mean_va_sq"]
    assert main(["protocol-sim", "--config", cfg, "--rounds", "200", "--format", "csv"]) == 0
    header, row = capsys.readouterr().out.splitlines()
    assert header.split(",")[:3] == ["rounds", "adversary", "pair_gap"]
    assert row.split(",")[1] == "bilinear"
    assert main(["protocol-sim", "--config", cfg, "--adversary", "telepath"]) == 1


# --- bench ----------------------------------------------------------------

def test_bench_csv(capsys):
    assert main(["bench", "--method", "partition", "--sizes", "32,64,128", "--repeats", "1"]) == 0
    cap = capsys.readouterr()
    lines = cap.out.splitlines()
    assert lines[0] == CSV_HEADER == "n,method,fit_ms,search_ms,total_ms"
    assert [line.split(",")[0] for line in lines[1:]] == ["32", "64", "128"]
    assert "partition log-log slope" in cap.err
    assert main(["bench", "--sizes", "7,8"]) == 1


# --- verify ---------------------------------------------------------------

def test_tampered_bound_fails_check():
    assert check_bilinear_bound(DEFAULT_BOUNDS).passed
    assert not check_bilinear_bound({**DEFAULT_BOUNDS, "bilinear": 0.1}).passed


def test_verify_fast_within_budget(capsys):
    t0 = time.perf_counter()
    code = main(["verify", "--level", "fast"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    assert elapsed < 120
    assert "check" in out.splitlines()[0] and "property" in out.splitlines()[0]
    # every check that ran is listed, and the exit code reflects failures
    failed = out.count(" FAIL ")
    assert code == (3 if failed else 0)


def test_verify_tampered_constant_exits_three(capsys):
    assert main(["verify", "--level", "fast", "--bilinear-bound", "0.5"]) == 3
