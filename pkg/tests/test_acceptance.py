"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (visible even without -s) and then
asserts. The recovery grid is the slow one: it runs the full 16-trial search
on every cell through the CLI, which takes on the order of half an hour on
one core.
"""

import csv
import math
import time

import numpy as np
import pytest

from bpfactor import baselines as bl
from bpfactor import bench
from bpfactor import butterfly as bf
from bpfactor import cli
from bpfactor.exact import verify_exact_factorizations
from bpfactor.numeric import Rng, frobenius_rmse
from bpfactor.permutation import inert_steps
from bpfactor.train import harden_and_refit, search
from bpfactor.transforms import TransformSpec, generate

RECOVERY_KINDS = ("dft", "dct", "dst", "hadamard", "hartley")


@pytest.fixture
def announce(capsys):
    def _announce(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    return _announce


def test_exact_factorizations(announce):
    t0 = time.perf_counter()
    rows = verify_exact_factorizations(sizes=[1 << j for j in range(1, 11)], toeplitz_max=512)
    elapsed = time.perf_counter() - t0
    bad = [r for r in rows if not r["passed"]]
    kinds = {r["transform"] for r in rows}
    ok = not bad and elapsed < 60 and kinds >= {"dft", "idft", "hadamard", "circulant", "dct", "dst", "toeplitz"}
    worst = max(rows, key=lambda r: r["max_abs_error"])
    announce(1, "exact factorizations", ok,
             f"{len(rows)} cases, worst {worst['max_abs_error']:.1e} ({worst['transform']} N={worst['N']}), "
             f"{elapsed:.1f}s")
    assert not bad, bad
    assert elapsed < 60


def _factorize(tmp_path, name, transforms, sizes):
    out = tmp_path / name
    rc = cli.main(["factorize", "--transform", transforms, "--N", sizes, "--trials", "16",
                   "--seed", "0", "--out", str(out)])
    assert rc == 0
    with open(out / "results.csv") as f:
        return list(csv.DictReader(f))


def test_recovery_grid(tmp_path, announce):
    t0 = time.perf_counter()
    rows = _factorize(tmp_path, "bp", ",".join(RECOVERY_KINDS), "8,16,32,64")
    rows += _factorize(tmp_path, "conv", "conv", "8,16,32")
    elapsed = time.perf_counter() - t0
    assert {(r["transform"], r["arch"]) for r in rows if r["transform"] == "conv"} == {("conv", "bpbp")}
    assert len(rows) == 5 * 4 + 3
    bad = [(r["transform"], r["N"], r["rmse"]) for r in rows if not float(r["rmse"]) < 1e-4]
    worst = max(rows, key=lambda r: float(r["rmse"]))
    announce(2, "recovery grid", not bad,
             f"{len(rows) - len(bad)}/{len(rows)} cells < 1e-4, worst {float(worst['rmse']):.2e} "
             f"({worst['transform']} N={worst['N']}), {elapsed / 60:.1f} min")
    assert not bad, bad


def test_controls(announce):
    rnd = search(TransformSpec("randn", 8), "bp", 16, master_seed=0)
    spec = TransformSpec("legendre", 8)
    leg = search(spec, "bp", 16, master_seed=0)
    base = {k: v[0] for k, v in bl.baseline_rmses(generate(spec), bl.budget_for("bp", 8)).items()}
    randn_ok = rnd.final_rmse > 5e-2
    leg_abs = leg.final_rmse <= 5e-2
    leg_rel = all(leg.final_rmse < v for v in base.values())
    detail = (f"randn {rnd.final_rmse:.3f} (> 0.05 {'ok' if randn_ok else 'no'}); "
              f"legendre {leg.final_rmse:.3f} (<= 0.05 {'ok' if leg_abs else 'no'}; baselines "
              + ", ".join(f"{k} {v:.3f}" for k, v in sorted(base.items()))
              + f" -> below all {'ok' if leg_rel else 'no'})")
    announce(3, "randn / legendre controls", randn_ok and leg_abs and leg_rel, detail)
    assert randn_ok
    assert leg_abs, detail
    assert leg_rel, detail


def test_gradient_check(announce):
    t0 = time.perf_counter()
    rows = cli.run_gradcheck(instances=20, step=1e-5, seed=0)
    elapsed = time.perf_counter() - t0
    worst = max(r["rel_error"] for r in rows)
    ok = len(rows) == 20 and worst < 1e-6 and elapsed < 60
    announce(4, "gradient check", ok, f"20 instances, worst relative error {worst:.1e}, {elapsed:.1f}s")
    assert len(rows) == 20
    assert all(r["N"] <= 16 for r in rows)
    assert worst < 1e-6
    assert elapsed < 60


def test_fast_multiply_matches_dense(announce):
    rng = Rng(5)
    worst_ratio = 0.0
    for m in range(2, 9):
        N = 1 << m
        for i in range(100):
            field = "complex" if i % 2 else "real"
            stack = bf.init_random(N, field, rng)
            x = rng.normal(0.0, 1.0, N)
            if field == "complex":
                x = x + 1j * rng.normal(0.0, 1.0, N)
            err = np.abs(bf.fast_multiply(stack, x) - bf.expand_dense(stack) @ x).max()
            worst_ratio = max(worst_ratio, err / (1e-12 * np.linalg.norm(x) * m))
    ok = worst_ratio < 1.0
    announce(5, "fast multiply vs dense", ok,
             f"700 pairs, N=4..256, worst error / bound = {worst_ratio:.2e}")
    assert ok


def test_complexity_scaling(announce):
    records = bench.run(sizes=[1 << j for j in range(8, 14)], ops=("butterfly_matvec", "dense_matvec"))
    checks = cli.bench_checks(records)
    dense = bench.loglog_slope(records, "dense_matvec")
    fly = bench.loglog_slope(records, "butterfly_matvec")
    ok = all(passed for _, passed in checks)
    announce(6, "complexity scaling", ok,
             f"dense slope {dense:.2f}, butterfly slope {fly:.2f}, "
             + "; ".join(f"{name} {'ok' if p else 'no'}" for name, p in checks))
    assert ok, checks


def test_eckart_young(announce):
    rng = Rng(11)
    N = 32
    worst = 0.0
    for i in range(10):
        T = rng.normal(0.0, 1.0, N * N).reshape(N, N)
        r = 1 + i % 8
        L = bl.lowrank_approx(T, 2 * N * r)
        sv = np.linalg.svd(T, compute_uv=False)
        tail = math.sqrt(float(np.sum(sv[r:] ** 2)))
        worst = max(worst, abs(np.linalg.norm(T - L) - tail) / tail)
    ok = worst < 1e-8
    announce(7, "Eckart-Young", ok, f"10 matrices 32x32, worst relative gap {worst:.1e}")
    assert ok


def test_hardening_dft16(announce):
    spec = TransformSpec("dft", 16)
    res = search(spec, "bp", 16, master_seed=0)
    active = ~inert_steps(16)
    dist = max(float(np.abs(np.asarray(p)[active] - np.round(np.asarray(p)[active])).max())
               for p in res.learned_probabilities)
    refit = harden_and_refit(res, 500)
    refit_rmse = frobenius_rmse(generate(spec), refit.model.expand())
    ok = res.final_rmse < 1e-4 and dist <= 0.05 and refit_rmse < 1e-3
    announce(8, "hardening", ok,
             f"DFT N=16 rmse {res.final_rmse:.1e}, max distance of learned probabilities to {{0,1}} {dist:.3f}, "
             f"hardened+refit rmse {refit_rmse:.1e}")
    assert res.final_rmse < 1e-4
    assert dist <= 0.05
    assert refit_rmse < 1e-3
