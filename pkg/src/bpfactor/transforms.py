"""Dense target matrices: DFT, DCT, DST, convolution, Hadamard, Hartley, Legendre, Randn.

Entry (k, n) of every matrix maps input x_n to output X_k. ``normalized``
scaling gives each transform norm on the order of 1:

=========  ======================================
DFT        1/sqrt(N)
Hartley    1/sqrt(N)
DCT, DST   sqrt(2/N)
Hadamard   1/sqrt(2) per recursion level (always)
conv       filter h with ||h|| = 1 (always)
Legendre   row k scaled by sqrt((2k+1)/N)
Randn      unscaled, entries ~ N(1, 1/N)
=========  ======================================
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial

import numpy as np

from .butterfly import check_power_of_two
from .numeric import Rng

KINDS = ("dft", "dct", "dst", "conv", "hadamard", "hartley", "legendre", "randn")


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    N: int
    scaling: str = "normalized"
    seed: int = 0
    h: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transform {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.scaling not in ("raw", "normalized"):
            raise ValueError(f"scaling must be 'raw' or 'normalized', got {self.scaling!r}")
        if self.kind == "legendre":
            if self.N < 2:
                raise ValueError("Legendre needs N >= 2")
        else:
            check_power_of_two(self.N)
        if self.h is not None and len(self.h) != self.N:
            raise ValueError(f"filter length {len(self.h)} does not match N = {self.N}")

    def filter(self) -> np.ndarray:
        if self.kind != "conv":
            raise ValueError("only convolution specs carry a filter")
        if self.h is not None:
            return np.asarray(self.h, dtype=np.complex128)
        return conv_filter(self.N, self.seed)

    def metadata(self) -> dict:
        meta = {"kind": self.kind, "N": self.N, "scaling": self.scaling, "seed": self.seed}
        if self.kind == "conv":
            h = self.filter()
            meta["filter_norm"] = float(np.linalg.norm(h))
        return meta


def conv_filter(N: int, seed: int) -> np.ndarray:
    """Seeded complex Gaussian filter normalized to unit norm."""
    rng = Rng(seed)
    re = rng.normal(0.0, 0.5, N)
    im = rng.normal(0.0, 0.5, N)
    h = re + 1j * im
    return h / np.linalg.norm(h)


def dft_matrix(N: int) -> np.ndarray:
    idx = np.arange(N)
    # reduce the exponent mod N first so large N keeps full accuracy
    e = np.outer(idx, idx) % N
    return np.exp(-2j * np.pi * e / N)


def dct_matrix(N: int) -> np.ndarray:
    k = np.arange(N)[:, None]
    n = np.arange(N)[None, :]
    return np.cos(np.pi / N * (n + 0.5) * k)


def dst_matrix(N: int) -> np.ndarray:
    k = np.arange(N)[:, None]
    n = np.arange(N)[None, :]
    return np.sin(np.pi / N * (n + 0.5) * (k + 1))


def hadamard_matrix(N: int) -> np.ndarray:
    """Orthonormal Sylvester-Hadamard matrix.

    The 1/sqrt(2) of each recursion level is applied once at the end as
    2^(-m/2), so every entry is exactly +-2^(-m/2).
    """
    m = check_power_of_two(N)
    H = np.ones((1, 1))
    while H.shape[0] < N:
        H = np.block([[H, H], [H, -H]])
    return H * 2.0 ** (-m / 2)


def hartley_matrix(N: int) -> np.ndarray:
    idx = np.arange(N)
    arg = 2 * np.pi * (np.outer(idx, idx) % N) / N
    return np.cos(arg) + np.sin(arg)


def legendre_poly_coeffs(k: int) -> np.ndarray:
    """Monomial coefficients (ascending powers) of L_k from the three-term recurrence."""
    if k < 0:
        raise ValueError("k must be non-negative")
    prev = np.array([1.0])
    if k == 0:
        return prev
    cur = np.array([0.0, 1.0])
    for j in range(2, k + 1):
        nxt = np.zeros(j + 1)
        nxt[1:] += (2 * j - 1) / j * cur
        nxt[: j - 1] -= (j - 1) / j * prev
        prev, cur = cur, nxt
    return cur


def legendre_rodrigues_coeffs(k: int) -> list[Fraction]:
    """Exact coefficients of L_k = (1 / (2^k k!)) d^k/dx^k (x^2 - 1)^k."""
    # (x^2 - 1)^k = sum_i C(k, i) (-1)^(k-i) x^(2i)
    poly = {2 * i: Fraction(comb(k, i) * (-1) ** (k - i)) for i in range(k + 1)}
    for _ in range(k):
        poly = {p - 1: c * p for p, c in poly.items() if p > 0}
    denom = Fraction(2**k * factorial(k))
    out = [Fraction(0)] * (k + 1)
    for p, c in poly.items():
        out[p] = c / denom
    return out


def legendre_values(kmax: int, x: np.ndarray) -> np.ndarray:
    """L_0..L_{kmax-1} evaluated pointwise at x by the recurrence; shape (kmax, len(x))."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((kmax, x.size))
    out[0] = 1.0
    if kmax > 1:
        out[1] = x
    for k in range(2, kmax):
        out[k] = ((2 * k - 1) * x * out[k - 1] - (k - 1) * out[k - 2]) / k
    return out


def legendre_matrix(N: int) -> np.ndarray:
    """Entry (k, n) = L_k(2n/N - 1)."""
    return legendre_values(N, 2 * np.arange(N) / N - 1)


def circulant(h: np.ndarray) -> np.ndarray:
    """A_jk = h[(j - k) mod N]."""
    h = np.asarray(h)
    N = h.shape[0]
    j = np.arange(N)[:, None]
    k = np.arange(N)[None, :]
    return h[(j - k) % N]


def toeplitz(t: np.ndarray) -> np.ndarray:
    """T_jk = t_{j-k}; ``t`` lists t_{-N+1}, ..., t_{N-1} (length 2N - 1)."""
    t = np.asarray(t)
    L = t.shape[0]
    if L % 2 == 0 or L < 1:
        raise ValueError(f"Toeplitz needs 2N - 1 diagonal values, got {L}")
    N = (L + 1) // 2
    j = np.arange(N)[:, None]
    k = np.arange(N)[None, :]
    return t[(j - k) + N - 1]


def generate(spec: TransformSpec) -> np.ndarray:
    N = spec.N
    norm = spec.scaling == "normalized"
    kind = spec.kind
    if kind == "dft":
        M = dft_matrix(N)
        return M / np.sqrt(N) if norm else M
    if kind == "dct":
        M = dct_matrix(N)
        return M * np.sqrt(2.0 / N) if norm else M
    if kind == "dst":
        M = dst_matrix(N)
        return M * np.sqrt(2.0 / N) if norm else M
    if kind == "hartley":
        M = hartley_matrix(N)
        return M / np.sqrt(N) if norm else M
    if kind == "hadamard":
        return hadamard_matrix(N)
    if kind == "conv":
        return circulant(spec.filter())
    if kind == "legendre":
        M = legendre_matrix(N)
        if norm:
            M = M * np.sqrt((2 * np.arange(N) + 1) / N)[:, None]
        return M
    if kind == "randn":
        rng = Rng(spec.seed)
        return rng.normal(1.0, 1.0 / N, N * N).reshape(N, N)
    raise AssertionError(kind)


def is_real(kind: str) -> bool:
    return kind in ("dct", "dst", "hadamard", "hartley", "legendre", "randn")
