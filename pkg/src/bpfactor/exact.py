"""Hand-built butterfly factorizations of classic transforms, and their verification.

Every constructor returns BP modules with hard permutations. Dense matrices are
obtained by running the fast path on the identity, so the comparison against
the formula generators in ``transforms`` checks the factorization itself.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import butterfly as bf
from . import permutation as pm
from .butterfly import ButterflyStack, check_power_of_two
from .numeric import Rng
from .permutation import HardPermutation
from . import transforms as tz


@dataclass(frozen=True)
class BPModuleExact:
    butterfly: ButterflyStack
    permutation: HardPermutation
    # (m, 3) table of elementary choices producing ``permutation``, if known
    choices: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.butterfly.N != self.permutation.N:
            raise ValueError("butterfly and permutation sizes differ")

    @property
    def N(self) -> int:
        return self.butterfly.N

    def apply_rows(self, X: np.ndarray) -> np.ndarray:
        return bf.apply_rows(self.butterfly, self.permutation.apply(X))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return bf.fast_multiply(self.butterfly, self.permutation.apply(x))

    def expand(self) -> np.ndarray:
        """B P via the fast path on the identity."""
        return self.apply_rows(np.eye(self.N, dtype=self.butterfly.twiddle.dtype)).T.copy()

    def to_model(self):
        from .model import BPModel, BPProductModel

        return BPProductModel(self.N, (self._as_bp_model(),))

    def _as_bp_model(self):
        from .model import BPModel

        if self.choices is None:
            raise ValueError("permutation has no known elementary-choice table")
        stack = ButterflyStack(self.N, self.butterfly.twiddle, "complex")
        return BPModel(stack, pm.from_choices(self.N, self.choices))


@dataclass(frozen=True)
class BPProductExact:
    """S (B_1 P_1) ... (B_k P_k) S^T, optionally followed by the real part."""

    N: int
    modules: tuple
    r: int = 1
    post_real_part: bool = False

    def __post_init__(self):
        n = self.N * self.r
        for mod in self.modules:
            if mod.N != n:
                raise ValueError(f"module size {mod.N} != r*N = {n}")

    @property
    def k(self) -> int:
        return len(self.modules)

    def apply_rows(self, X: np.ndarray, real_part: bool | None = None) -> np.ndarray:
        n = self.N * self.r
        X = np.asarray(X)
        Y = np.zeros((X.shape[0], n), dtype=np.complex128)
        Y[:, : self.N] = X
        for mod in reversed(self.modules):
            Y = mod.apply_rows(Y)
        Y = Y[:, : self.N]
        take_real = self.post_real_part if real_part is None else real_part
        return Y.real.copy() if take_real else Y

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.apply_rows(np.asarray(x)[None, :])[0]

    def expand(self, real_part: bool | None = None) -> np.ndarray:
        return self.apply_rows(np.eye(self.N), real_part).T.copy()

    def to_model(self):
        from .model import BPProductModel

        return BPProductModel(self.N, tuple(m._as_bp_model() for m in self.modules), self.r,
                              None, self.post_real_part)


# -- twiddle helpers -----------------------------------------------------------


def _roots(n: int, sign: int) -> np.ndarray:
    """exp(sign * 2 pi i k / n) for k < n/2, with the angle reduced exactly."""
    k = np.arange(n // 2)
    return np.exp(sign * 2j * np.pi * k / n)


def _fft_twiddle(N: int, sign: int = -1) -> np.ndarray:
    m = check_power_of_two(N)
    levels = []
    for j in range(1, m + 1):
        n = 1 << j
        w = _roots(n, sign)
        d = np.empty((2, 2, n // 2), dtype=np.complex128)
        d[0, 0] = 1
        d[0, 1] = w
        d[1, 0] = 1
        d[1, 1] = -w
        levels.append(d)
    return np.concatenate(levels, axis=2)


def scale_rows(stack: ButterflyStack, d: np.ndarray) -> ButterflyStack:
    """diag(d) @ stack, folded into the outermost level."""
    d = np.asarray(d)
    N = stack.N
    h = N // 2
    tw = np.array(stack.twiddle, dtype=np.result_type(stack.twiddle, d))
    tw[0, :, h - 1 :] *= d[:h]
    tw[1, :, h - 1 :] *= d[h:]
    field = "complex" if np.iscomplexobj(tw) else stack.field
    return ButterflyStack(N, tw, field)


def _bitrev_choices(N: int) -> np.ndarray:
    m = check_power_of_two(N)
    c = np.zeros((m, 3), dtype=bool)
    c[:, 0] = True
    return c


def even_then_reversed_odd_choices(N: int) -> np.ndarray:
    """a then c at the top step: [0, 1, 2, 3] -> [0, 2, 3, 1]."""
    m = check_power_of_two(N)
    c = np.zeros((m, 3), dtype=bool)
    if N > 2:
        c[0, 0] = True
        c[0, 2] = True
    return c


def even_then_reversed_odd(N: int) -> HardPermutation:
    check_power_of_two(N)
    return HardPermutation(np.r_[np.arange(0, N, 2), np.arange(N - 1, 0, -2)])


# -- constructors ------------------------------------------------------------


def fft_bp(N: int) -> BPModuleExact:
    """Raw DFT: butterflies [[I, W], [I, -W]] after bit reversal."""
    check_power_of_two(N)
    stack = ButterflyStack(N, _fft_twiddle(N, -1).reshape(2, 2, N - 1), "complex")
    return BPModuleExact(stack, pm.bit_reversal(N), _bitrev_choices(N))


def ifft_bp(N: int) -> BPModuleExact:
    """Inverse of the raw DFT; 1/N folded into the outermost level."""
    check_power_of_two(N)
    tw = _fft_twiddle(N, +1).reshape(2, 2, N - 1)
    tw[:, :, N // 2 - 1 :] /= N
    return BPModuleExact(ButterflyStack(N, tw, "complex"), pm.bit_reversal(N), _bitrev_choices(N))


def hadamard_bp(N: int) -> BPModuleExact:
    """Normalized Hadamard: every level is [[I, I], [I, -I]] / sqrt(2); no permutation."""
    m = check_power_of_two(N)
    s = 1.0 / np.sqrt(2.0)
    tw = np.full((2, 2, N - 1), s)
    tw[1, 1] = -s
    return BPModuleExact(ButterflyStack(N, tw, "real"), pm.identity_perm(N), np.zeros((m, 3), dtype=bool))


def dct_bp2(N: int) -> BPProductExact:
    """Raw DCT = Re(diag(e^{-i pi k / 2N}) F P') with P' = evens, then odds reversed."""
    check_power_of_two(N)
    k = np.arange(N)
    f = fft_bp(N)
    left = BPModuleExact(scale_rows(f.butterfly, np.exp(-1j * np.pi * k / (2 * N))), f.permutation, f.choices)
    right = BPModuleExact(bf.identity(N, "complex"), even_then_reversed_odd(N), even_then_reversed_odd_choices(N))
    return BPProductExact(N, (left, right), 1, True)


def dst_bp2(N: int) -> BPProductExact:
    """Raw DST = Re(diag(i e^{-i pi (k+1) / 2N}) F diag(e^{-2 pi i n / N}) D P').

    D = diag(I, -I) negates the reversed odd half. The input diagonal shifts
    the DFT output by one frequency so row k carries frequency k + 1; both
    diagonals together form the right butterfly.
    """
    check_power_of_two(N)
    k = np.arange(N)
    f = fft_bp(N)
    left = BPModuleExact(scale_rows(f.butterfly, 1j * np.exp(-1j * np.pi * (k + 1) / (2 * N))),
                         f.permutation, f.choices)
    D = np.r_[np.ones(N // 2), -np.ones(N // 2)]
    right = BPModuleExact(bf.diagonal(np.exp(-2j * np.pi * k / N) * D), even_then_reversed_odd(N),
                          even_then_reversed_odd_choices(N))
    return BPProductExact(N, (left, right), 1, True)


def negation_diagonal(N: int) -> np.ndarray:
    """D = diag(I, -I)."""
    check_power_of_two(N)
    return np.r_[np.ones(N // 2), -np.ones(N // 2)]


def circulant_bp2(h: np.ndarray) -> BPProductExact:
    """circulant(h) = F^{-1} diag(F h) F; diag(F h) folded into the right FFT butterfly."""
    h = np.asarray(h, dtype=np.complex128)
    N = h.shape[0]
    check_power_of_two(N)
    f = fft_bp(N)
    d = f.apply(h)
    right = BPModuleExact(scale_rows(f.butterfly, d), f.permutation, f.choices)
    return BPProductExact(N, (ifft_bp(N), right), 1, False)


def toeplitz_embedding(t: np.ndarray) -> np.ndarray:
    """First column of the 2N circulant whose upper-left block is toeplitz(t)."""
    t = np.asarray(t)
    L = t.shape[0]
    if L % 2 == 0:
        raise ValueError(f"Toeplitz needs 2N - 1 diagonal values, got {L}")
    N = (L + 1) // 2
    # t lists t_{-N+1} .. t_{N-1}; t_j sits at index j + N - 1
    pos = t[N - 1 :]
    neg = t[: N - 1]
    return np.r_[pos, 0, neg]


def toeplitz_bp2r2(t: np.ndarray) -> BPProductExact:
    """Toeplitz = S circulant_{2N}(embedding) S^T, i.e. a (BP)^2 over 2N with r = 2."""
    t = np.asarray(t)
    if t.ndim != 1 or t.shape[0] % 2 == 0:
        raise ValueError(f"Toeplitz needs 2N - 1 diagonal values, got shape {t.shape}")
    N = (t.shape[0] + 1) // 2
    check_power_of_two(N)
    inner = circulant_bp2(toeplitz_embedding(t))
    return BPProductExact(N, inner.modules, 2, False)


def toeplitz_product_bp(ts) -> BPProductExact:
    """T_1 T_2 ... T_k as (BP)^{2k}_2.

    Between consecutive Toeplitz blocks the projector S^T S = diag(I, 0) is
    folded into the outermost level of the next block's left butterfly.
    """
    blocks = [toeplitz_bp2r2(t) for t in ts]
    if not blocks:
        raise ValueError("need at least one Toeplitz matrix")
    N = blocks[0].N
    if any(b.N != N for b in blocks):
        raise ValueError("Toeplitz sizes differ")
    proj = np.r_[np.ones(N), np.zeros(N)]
    mods = list(blocks[0].modules)
    for b in blocks[1:]:
        left, right = b.modules
        left = BPModuleExact(scale_rows(left.butterfly, proj), left.permutation, left.choices)
        mods.extend([left, right])
    return BPProductExact(N, tuple(mods), 2, False)


# -- orthogonal polynomials ----------------------------------------------------


class PolyMatrix:
    """Matrix of real polynomials; ``coeffs[i, j, d]`` multiplies x^d."""

    def __init__(self, coeffs: np.ndarray):
        c = np.asarray(coeffs, dtype=np.float64)
        if c.ndim != 3 or c.shape[2] < 1:
            raise ValueError("coeffs must have shape (rows, cols, degree + 1)")
        self.coeffs = c

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[1]

    @property
    def degree_bound(self) -> int:
        return self.coeffs.shape[2] - 1

    def degree(self) -> int:
        nz = np.nonzero(np.any(self.coeffs != 0, axis=(0, 1)))[0]
        return int(nz[-1]) if nz.size else 0

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise ValueError("inner dimensions differ")
        da, db = self.coeffs.shape[2], other.coeffs.shape[2]
        out = np.zeros((self.rows, other.cols, da + db - 1))
        for d in range(da):
            a = self.coeffs[:, :, d]
            if not a.any():
                continue
            out[:, :, d : d + db] += np.einsum("ik,kjd->ijd", a, other.coeffs)
        return PolyMatrix(out)

    def nnz(self) -> int:
        """Number of nonzero polynomial entries."""
        return int(np.count_nonzero(np.any(self.coeffs != 0, axis=2)))

    @classmethod
    def identity(cls, n: int) -> "PolyMatrix":
        return cls(np.eye(n)[:, :, None])

    def __call__(self, x: float) -> np.ndarray:
        return np.polynomial.polynomial.polyval(x, np.moveaxis(self.coeffs, 2, 0))


@dataclass(frozen=True)
class RecurrenceParams:
    """p_0 = c_1, p_1 = a_1 x + b_1, p_i = (a_i x + b_i) p_{i-1} + c_i p_{i-2}.

    Arrays are indexed by i (index 0 unused).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if not len(self.a) == len(self.b) == len(self.c):
            raise ValueError("parameter arrays must have equal length")
        if len(self.a) < 2:
            raise ValueError("need parameters from index 1")
        if self.c[1] == 0 or np.any(np.asarray(self.a[1:]) == 0):
            raise ValueError("c_1 and every a_i must be nonzero")

    @property
    def max_index(self) -> int:
        return len(self.a) - 1


def legendre_params(n: int) -> RecurrenceParams:
    """Legendre recurrence up to index n."""
    a = np.zeros(n + 1)
    b = np.zeros(n + 1)
    c = np.zeros(n + 1)
    a[1], c[1] = 1.0, 1.0
    for k in range(2, n + 1):
        a[k] = (2 * k - 1) / k
        c[k] = -(k - 1) / k
    return RecurrenceParams(a, b, c)


def transition(params: RecurrenceParams, s: int) -> PolyMatrix:
    """T_s maps [p_s, p_{s-1}] to [p_{s+1}, p_s]; it uses the index-(s+1) parameters."""
    if s == 0:
        return PolyMatrix.identity(2)
    i = s + 1
    if i > params.max_index:
        raise ValueError(f"need recurrence parameters up to index {i}")
    co = np.zeros((2, 2, 2))
    co[0, 0] = [params.b[i], params.a[i]]
    co[0, 1, 0] = params.c[i]
    co[1, 0, 0] = 1.0
    return PolyMatrix(co)


def transition_product(params: RecurrenceParams, hi: int, lo: int) -> PolyMatrix:
    """T_hi T_{hi-1} ... T_lo (identity when hi < lo)."""
    M = PolyMatrix.identity(2)
    for s in range(lo, hi + 1):
        M = transition(params, s) @ M
    return M


def _blockdiag(blocks) -> PolyMatrix:
    rows = sum(b.rows for b in blocks)
    cols = sum(b.cols for b in blocks)
    deg = max(b.coeffs.shape[2] for b in blocks)
    out = np.zeros((rows, cols, deg))
    r = c = 0
    for b in blocks:
        out[r : r + b.rows, c : c + b.cols, : b.coeffs.shape[2]] = b.coeffs
        r += b.rows
        c += b.cols
    return PolyMatrix(out)


def _stack_block(T: PolyMatrix) -> PolyMatrix:
    """The 4 x 2 block [I; T]."""
    deg = T.coeffs.shape[2]
    out = np.zeros((4, 2, deg))
    out[0, 0, 0] = out[1, 1, 0] = 1.0
    out[2:] = T.coeffs
    return PolyMatrix(out)


def orthopoly_transition_factorization(params: RecurrenceParams, n: int) -> list[PolyMatrix]:
    """Sparse factors whose product maps [p_1, p_0] to [p_0, ..., p_{n-1}].

    Returns log2(n) + 1 factors, leftmost first. The first selects the odd
    rows of the stacked column [T_{[j:0]} [p_1; p_0]]_j = [p_{j+1}; p_j]_j. The
    factor at position k from the right (k = 0, 1, ...) is block diagonal
    with 2^k blocks [I; T_{[s+h-1:s]}] of halving span h.
    """
    levels = check_power_of_two(n) if n >= 2 else None
    if levels is None:
        raise ValueError("n must be a power of two >= 2")
    if params.max_index < n:
        raise ValueError(f"need recurrence parameters up to index {n}")
    factors = []
    # spans[k] = list of (s, length) segments at depth k; depth 0 is (1, n)
    segs = [(1, n)]
    for _ in range(levels):
        blocks = []
        nxt = []
        for s, L in segs:
            h = L // 2
            blocks.append(_stack_block(transition_product(params, s + h - 1, s)))
            nxt.extend([(s, h), (s + h, h)])
        factors.append(_blockdiag(blocks))
        segs = nxt
    factors.reverse()
    sel = np.zeros((n, 2 * n, 1))
    sel[np.arange(n), 2 * np.arange(n) + 1, 0] = 1.0
    return [PolyMatrix(sel)] + factors


def orthopoly_initial(params: RecurrenceParams) -> PolyMatrix:
    """Column [p_1; p_0]."""
    co = np.zeros((2, 1, 2))
    co[0, 0] = [params.b[1], params.a[1]]
    co[1, 0, 0] = params.c[1]
    return PolyMatrix(co)


def orthopoly_coefficients(params: RecurrenceParams, n: int) -> np.ndarray:
    """(n, n + 1) coefficient matrix of p_0..p_{n-1} via the factorization."""
    v = orthopoly_initial(params)
    for F in reversed(orthopoly_transition_factorization(params, n)):
        v = F @ v
    out = np.zeros((n, n + 1))
    c = v.coeffs[:, 0, :]
    w = min(c.shape[1], n + 1)
    out[:, :w] = c[:, :w]
    return out


def orthopoly_recurrence_coefficients(params: RecurrenceParams, n: int) -> np.ndarray:
    """Same table computed directly from the three-term recurrence."""
    out = np.zeros((n, n + 1))
    out[0, 0] = params.c[1]
    if n > 1:
        out[1, 0], out[1, 1] = params.b[1], params.a[1]
    for i in range(2, n):
        out[i, 1:] += params.a[i] * out[i - 1, :-1]
        out[i] += params.b[i] * out[i - 1] + params.c[i] * out[i - 2]
    return out


# -- verification ------------------------------------------------------------

THRESHOLDS = {
    "dft": 1e-10,
    "idft": 1e-10,
    "hadamard": 1e-10,
    "circulant": 1e-9,
    "dct": 1e-9,
    "dst": 1e-9,
    "toeplitz": 1e-9,
}


def _corrupt(mod: BPModuleExact) -> BPModuleExact:
    tw = np.array(mod.butterfly.twiddle)
    tw[0, 1, -1] += 1e-3
    return BPModuleExact(ButterflyStack(mod.N, tw, mod.butterfly.field), mod.permutation, mod.choices)


def verify_exact_factorizations(sizes=None, toeplitz_max: int = 512, seed: int = 0, corrupt: bool = False) -> list[dict]:
    """Compare every exact construction with its dense formula matrix.

    Returns one record per (transform, N): max_abs_error and passed. With
    ``corrupt`` set, one FFT twiddle is perturbed (negative control).
    """
    if sizes is None:
        sizes = [1 << j for j in range(1, 11)]
    rows = []

    def record(name, N, err, extra=None):
        rec = {"transform": name, "N": N, "max_abs_error": float(err), "passed": bool(err < THRESHOLDS[name])}
        if extra:
            rec.update(extra)
        rows.append(rec)

    for N in sizes:
        fft = fft_bp(N)
        if corrupt:
            fft = _corrupt(fft)
        F = tz.dft_matrix(N)
        record("dft", N, np.abs(fft.expand() - F).max())
        inv = ifft_bp(N)
        record("idft", N, np.abs(inv.expand() - F.conj() / N).max())
        record("hadamard", N, np.abs(hadamard_bp(N).expand() - tz.hadamard_matrix(N)).max())
        h = tz.conv_filter(N, seed)
        err = np.abs(circulant_bp2(h).expand() - tz.circulant(h)).max() / np.linalg.norm(h)
        record("circulant", N, err)
        record("dct", N, np.abs(dct_bp2(N).expand() - tz.dct_matrix(N)).max())
        record("dst", N, np.abs(dst_bp2(N).expand() - tz.dst_matrix(N)).max())
        if N <= toeplitz_max:
            rng = Rng(seed + N)
            t = rng.normal(0.0, 1.0, 2 * N - 1)
            err = np.abs(toeplitz_bp2r2(t).expand() - tz.toeplitz(t)).max()
            record("toeplitz", N, err, {"r": 2})
    return rows


def report_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["transform", "N", "r", "max_abs_error", "passed"])
    for r in rows:
        w.writerow([r["transform"], r["N"], r.get("r", 1), f"{r['max_abs_error']:.3e}", str(r["passed"]).lower()])
    return buf.getvalue()
