"""Equal-budget baselines: sparse, low-rank and sparse + low-rank approximations.

Budgets count stored scalars. An s-sparse matrix stores s entries, a rank-r
factorization stores r * 2N (two N x r factors), and a butterfly model stores
its twiddles plus permutation logits.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .model import parse_arch
from .numeric import frobenius_rmse, reconstruct, truncated_svd
from . import transforms as tz

SPLITS = (0.0, 0.25, 0.5, 0.75, 1.0)


def budget_for(arch: str, N: int, tied: bool = False, extra_perm: bool = False) -> int:
    """Trainable scalars of a butterfly model (complex entries count once)."""
    k, r = parse_arch(arch)
    n = r * N
    m = n.bit_length() - 1
    logits = 3 if tied else 3 * m
    total = k * (4 * n - 4 + logits)
    if extra_perm:
        total += 3 * m
    return total


def sparse_approx(T: np.ndarray, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries; ties go to the earlier entry in row-major order."""
    T = np.asarray(T)
    if not 0 <= s <= T.size:
        raise ValueError(f"s must lie in [0, {T.size}], got {s}")
    out = np.zeros_like(T)
    if s == 0:
        return out
    flat = np.abs(T).ravel()
    keep = np.argsort(-flat, kind="stable")[:s]
    out.ravel()[keep] = T.ravel()[keep]
    return out


def rank_for(budget: int, N: int) -> int:
    return budget // (2 * N)


def lowrank_approx(T: np.ndarray, budget: int) -> np.ndarray:
    """Best rank-r approximation with r = floor(budget / 2N), via truncated SVD."""
    T = np.asarray(T)
    N = T.shape[0]
    r = rank_for(budget, N)
    if r < 1:
        raise ValueError(f"budget {budget} is below one rank-1 term ({2 * N})")
    r = min(r, min(T.shape))
    return reconstruct(*truncated_svd(T, r))


def _lowrank_rank(T: np.ndarray, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros_like(T)
    return reconstruct(*truncated_svd(T, min(r, min(T.shape))))


@dataclass
class SplitResult:
    S: np.ndarray
    L: np.ndarray
    error: float
    iterations: int
    s: int
    r: int
    oscillated: bool = False


def sparse_plus_lowrank(T: np.ndarray, budget: int, split: float, max_iter: int = 200,
                        tol: float = 1e-10) -> SplitResult:
    """Alternate S <- sparse(T - L), L <- lowrank(T - S).

    ``split`` is the share of the budget given to the sparse part; the rest
    buys rank-(rest // 2N) terms. Stops when the Frobenius error improves by
    less than ``tol`` or after ``max_iter`` rounds; returns the best iterate.
    """
    T = np.asarray(T)
    N = T.shape[0]
    if not 0.0 <= split <= 1.0:
        raise ValueError("split must lie in [0, 1]")
    s = min(int(round(split * budget)), T.size)
    r = (budget - s) // (2 * N)
    L = np.zeros_like(T, dtype=np.result_type(T, np.float64))
    S = np.zeros_like(L)
    best = None
    prev = np.inf
    oscillated = False
    it = 0
    for it in range(1, max_iter + 1):
        S = sparse_approx(T - L, s)
        L = _lowrank_rank(T - S, r)
        err = float(np.linalg.norm(T - S - L))
        if best is None or err < best[2]:
            best = (S, L, err)
        if err > prev + tol:
            oscillated = True
        if prev - err < tol:
            break
        prev = err
    S, L, err = best
    return SplitResult(S, L, err, it, s, r, oscillated)


def best_sparse_plus_lowrank(T: np.ndarray, budget: int, splits=SPLITS) -> SplitResult:
    """Best split on the grid; the grid includes the pure sparse and pure low-rank ends."""
    results = [sparse_plus_lowrank(T, budget, f) for f in splits]
    return min(results, key=lambda res: res.error)


def baseline_rmses(T: np.ndarray, budget: int) -> dict:
    """RMSE of the three baselines at one budget, plus wall time in ms."""
    out = {}
    t0 = time.perf_counter()
    out["sparse"] = (frobenius_rmse(T, sparse_approx(T, min(budget, T.size))), time.perf_counter() - t0)
    t0 = time.perf_counter()
    if rank_for(budget, T.shape[0]) >= 1:
        out["lowrank"] = (frobenius_rmse(T, lowrank_approx(T, budget)), time.perf_counter() - t0)
    t0 = time.perf_counter()
    res = best_sparse_plus_lowrank(T, budget)
    out["sparse+lowrank"] = (frobenius_rmse(T, res.S + res.L), time.perf_counter() - t0)
    return out


def arch_for(kind: str) -> str:
    return "bpbp" if kind == "conv" else "bp"


def baseline_table(kinds, sizes, seed: int = 0) -> list[dict]:
    """Rows (transform, N, method, budget, rmse, wall_ms) at butterfly-matched budgets."""
    rows = []
    for kind in kinds:
        for N in sizes:
            spec = tz.TransformSpec(kind, N, seed=seed)
            T = tz.generate(spec)
            budget = budget_for(arch_for(kind), N, extra_perm=kind in ("dct", "dst"))
            for method, (rmse, wall) in baseline_rmses(T, budget).items():
                rows.append({"transform": kind, "N": N, "method": method, "budget": budget,
                             "rmse": rmse, "wall_ms": 1000.0 * wall})
    return rows


def table_csv(rows: list[dict], with_timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["transform", "N", "method", "budget", "rmse", "wall_ms"])
    for r in rows:
        wall = f"{r['wall_ms']:.3f}" if with_timing else ""
        w.writerow([r["transform"], r["N"], r["method"], r["budget"], f"{r['rmse']:.6e}", wall])
    return buf.getvalue()
