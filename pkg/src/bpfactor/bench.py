"""Single-threaded matvec timing: butterfly vs exact FFT stack vs dense.

Each record is the median (and IQR) over >= 31 repetitions after 5 warmup
calls. Inputs and outputs are allocated before timing starts. Small sizes
repeat the call inside one repetition so every timed interval is well above
the clock resolution; times are reported per call. A no-op record measures
the harness overhead itself.

Dense matrices are cycled through a pool of at least DENSE_POOL_BYTES, so
small sizes are not timed from a warm L2 while large ones stream from memory;
every dense size then runs in the same (memory-bound) regime. Butterfly
parameters are O(N) and stay cache-resident at every benchmarked size.
"""

from __future__ import annotations

import csv
import io
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from ._accel import USE_NUMBA
from . import butterfly as bf
from .exact import fft_bp
from .numeric import Rng, _matvec_nb, _matvec_np

OPS = ("butterfly_matvec", "exact_fft_matvec", "dense_matvec")
DEFAULT_SIZES = tuple(1 << j for j in range(4, 14))
MIN_INTERVAL_NS = 20_000
DENSE_POOL_BYTES = 16 << 20


@dataclass
class BenchRecord:
    operation: str
    N: int
    median_ns: float
    iqr_ns: float
    repetitions: int
    backend: str = "numba"


def set_single_thread() -> None:
    # the kernels are serial already; this pins any threading layer numba loads
    try:
        import numba

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            numba.set_num_threads(1)
    except Exception:
        pass


def _time(fn, repetitions: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    # pick an inner count so one repetition spans at least MIN_INTERVAL_NS
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        dt = time.perf_counter_ns() - t0
        if dt >= MIN_INTERVAL_NS or inner >= 1 << 16:
            break
        inner *= 2
    samples = np.empty(repetitions)
    for r in range(repetitions):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples[r] = (time.perf_counter_ns() - t0) / inner
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return float(med), float(q3 - q1)


def _kernels(backend: str):
    if backend == "numba":
        if not USE_NUMBA:
            raise RuntimeError("numba backend requested but numba is disabled")
        return kernels._bfly_vec_nb, _matvec_nb
    if backend == "numpy":
        return kernels._bfly_vec_np, _matvec_np
    raise ValueError(f"unknown backend {backend!r}")


def run(sizes=DEFAULT_SIZES, ops=OPS, repetitions: int = 31, warmup: int = 5, seed: int = 0,
        backend: str | None = None) -> list[BenchRecord]:
    if repetitions < 31:
        raise ValueError("need at least 31 repetitions")
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    bfly, matvec = _kernels(backend)
    set_single_thread()
    rng = Rng(seed)
    records = []

    def noop():
        pass

    med, iqr = _time(noop, repetitions, warmup)
    records.append(BenchRecord("noop", 0, med, iqr, repetitions, backend))

    for N in sizes:
        x = rng.normal(0.0, 1.0, N)
        out = np.empty(N)
        if "butterfly_matvec" in ops:
            tw = np.ascontiguousarray(bf.init_random(N, "real", rng).twiddle)
            med, iqr = _time(lambda: bfly(tw, x, out), repetitions, warmup)
            records.append(BenchRecord("butterfly_matvec", N, med, iqr, repetitions, backend))
        if "exact_fft_matvec" in ops:
            f = fft_bp(N)
            ftw = np.ascontiguousarray(f.butterfly.twiddle)
            perm = f.permutation.perm
            xc = x.astype(np.complex128)
            xp = np.empty(N, dtype=np.complex128)
            outc = np.empty(N, dtype=np.complex128)

            def fft_call():
                np.take(xc, perm, out=xp)
                bfly(ftw, xp, outc)

            med, iqr = _time(fft_call, repetitions, warmup)
            records.append(BenchRecord("exact_fft_matvec", N, med, iqr, repetitions, backend))
        if "dense_matvec" in ops:
            copies = -(-DENSE_POOL_BYTES // (8 * N * N))
            pool = [rng.normal(0.0, 1.0 / N, N * N).reshape(N, N) for _ in range(copies)]
            y = np.zeros(N)
            turn = [0]

            def dense_call():
                A = pool[turn[0]]
                turn[0] = (turn[0] + 1) % copies
                y[:] = 0.0
                matvec(A, x, y)

            med, iqr = _time(dense_call, repetitions, warmup)
            records.append(BenchRecord("dense_matvec", N, med, iqr, repetitions, backend))
            del pool
    return records


def loglog_slope(records: list[BenchRecord], op: str, lo: int = 1 << 8, hi: int = 1 << 13,
                 backend: str | None = None) -> float:
    pts = [(r.N, r.median_ns) for r in records
           if r.operation == op and lo <= r.N <= hi and (backend is None or r.backend == backend)]
    if len(pts) < 2:
        raise ValueError(f"need two sizes of {op} in [{lo}, {hi}]")
    n, t = np.array(pts, dtype=float).T
    return float(np.polyfit(np.log(n), np.log(t), 1)[0])


def records_csv(records: list[BenchRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["operation", "N", "median_ns", "iqr_ns", "repetitions", "backend"])
    for r in records:
        w.writerow([r.operation, r.N, f"{r.median_ns:.1f}", f"{r.iqr_ns:.1f}", r.repetitions, r.backend])
    return buf.getvalue()


def slopes(records: list[BenchRecord]) -> dict:
    out = {}
    for backend in sorted({r.backend for r in records}):
        for op in OPS:
            try:
                out[f"{op}[{backend}]"] = loglog_slope(records, op, backend=backend)
            except ValueError:
                pass
    return out
