import csv
import json
import subprocess
import sys

import pytest

from bpfactor import cli


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_sizes():
    assert cli.parse_sizes("8..64") == [8, 16, 32, 64]
    assert cli.parse_sizes("16,8") == [8, 16]
    assert cli.parse_sizes(4) == [4]
    with pytest.raises(cli.UsageError):
        cli.parse_sizes("12")


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "gradcheck", "instances": 2, "colour": "red"}))
    assert cli.main(["gradcheck", "--config", str(cfg)]) == 2
    assert "colour" in capsys.readouterr().err


def test_config_for_other_command_rejected(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "bench"}))
    assert cli.main(["gradcheck", "--config", str(cfg)]) == 2


def test_bad_values_are_usage_errors():
    assert cli.main(["factorize", "--N", "12"]) == 2
    assert cli.main(["factorize", "--transform", "wavelet"]) == 2
    assert cli.main(["factorize", "--trials", "2"]) == 2
    assert cli.main(["bench", "--repetitions", "5"]) == 2


def test_short_and_abbreviated_flags_rejected():
    with pytest.raises(SystemExit) as exc:
        cli.main(["gradcheck", "--ste", "1e-5"])
    assert exc.value.code == 2


def test_gradcheck_default_passes(tmp_path, capsys):
    assert cli.main(["gradcheck", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "gradcheck.csv")
    assert len(rows) == 20
    assert any(r["arch"] == "bpbp" and r["field"] == "complex" and r["N"] == "16" for r in rows)
    assert max(float(r["rel_error"]) for r in rows) < 1e-6
    assert "worst relative error" in capsys.readouterr().out


def test_gradcheck_larger_step_is_worse():
    small = cli.run_gradcheck(8, 1e-5, seed=0)
    big = cli.run_gradcheck(8, 1e-3, seed=0)
    assert max(r["rel_error"] for r in big) > max(r["rel_error"] for r in small)


def test_verify_exact_default_run(tmp_path):
    assert cli.main(["verify-exact", "--N-max", "256", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "exact.csv")
    assert all(r["passed"] == "true" for r in rows)
    summary = read_csv(tmp_path / "exact_summary.csv")
    assert {r["transform"] for r in summary} == {"dft", "idft", "hadamard", "circulant", "dct", "dst", "toeplitz"}
    assert all("max_abs_error" in r for r in summary)
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["N_max"] == 256 and cfg["command"] == "verify-exact"


def test_verify_exact_corruption_fails(tmp_path):
    assert cli.main(["verify-exact", "--N-max", "16", "--corrupt", "--out", str(tmp_path)]) == 1


def test_baselines_command(tmp_path):
    assert cli.main(["baselines", "--transform", "legendre,randn", "--N", "8", "--out", str(tmp_path), "--strict"]) == 0
    rows = read_csv(tmp_path / "baselines.csv")
    assert len(rows) == 6
    assert list(rows[0]) == ["transform", "N", "method", "budget", "rmse", "wall_ms"]


def test_bench_command(tmp_path):
    assert cli.main(["bench", "--N", "16..64", "--backend", "numpy", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert rows[0]["operation"] == "noop"
    assert {r["backend"] for r in rows} == {"numpy"}
    assert json.loads((tmp_path / "slopes.json").read_text()) == {}


def test_factorize_deterministic_and_replayable(tmp_path):
    args = ["factorize", "--transform", "dft,hadamard", "--N", "4", "--trials", "4", "--max-steps", "600", "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
    assert (a / "models" / "dft_N4.json").read_bytes() == (b / "models" / "dft_N4.json").read_bytes()
    # replay from the emitted config
    c = tmp_path / "c"
    assert cli.main(["factorize", "--config", str(a / "config.json"), "--out", str(c)]) == 0
    assert (a / "results.csv").read_bytes() == (c / "results.csv").read_bytes()
    rows = read_csv(a / "results.csv")
    assert [(r["transform"], r["N"]) for r in rows] == [("dft", "4"), ("hadamard", "4")]
    assert len(read_csv(a / "search" / "dft_N4.csv")) == 4
    table = read_csv(a / "table.csv")
    assert list(table[0]) == ["transform", "N=4"]


def test_factorize_strict_exit_code(tmp_path):
    args = ["factorize", "--transform", "dft", "--N", "16", "--trials", "4", "--max-steps", "8", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    assert cli.main(args + ["--strict"]) == 1


def test_factorize_parallel_matches_serial(tmp_path, monkeypatch):
    monkeypatch.delenv("BF_THREADS", raising=False)
    args = ["factorize", "--transform", "hadamard", "--N", "4,8", "--trials", "4", "--max-steps", "200"]
    assert cli.main(args + ["--out", str(tmp_path / "s")]) == 0
    assert cli.main(args + ["--threads", "2", "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "s" / "results.csv").read_bytes() == (tmp_path / "p" / "results.csv").read_bytes()


def test_report(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    (run / "results.csv").write_text(
        "transform,N,arch,rmse,steps,trials,hardened_at,rounding_distance,passed\n"
        "dft,8,bp,3e-06,100,16,,0.0,1\n"
        "dft,16,bp,0.2,100,16,,0.0,0\n"
        "randn,8,bp,0.14,100,16,,0.0,1\n"
    )
    (run / "config.json").write_text(json.dumps({"command": "factorize", "seed": 0}))
    out = tmp_path / "rep"
    assert cli.main(["report", "--inputs", str(run), "--out", str(out)]) == 0
    md = (out / "report.md").read_text()
    assert "| dft | 3.0e-06 | 2.0e-01 |" in md
    assert cli.config_hash({"command": "factorize", "seed": 0}) in md
    svg = (out / "heatmap.svg").read_text()
    assert svg.count("<rect") == 3
    assert cli.heat_color(3e-6) in svg
    assert cli.heat_color(3e-6).startswith("#2c")  # recovered band is green
    assert not cli.heat_color(0.2).startswith("#2c")


def test_report_missing_input(tmp_path):
    assert cli.main(["report", "--inputs", str(tmp_path / "nope")]) == 2


def test_console_script_entry():
    out = subprocess.run([sys.executable, "-m", "bpfactor.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in cli.COMMANDS:
        assert cmd in out.stdout
