"""Butterfly matrices with tied blocks and an O(N log N) multiply."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numeric import Rng


def check_power_of_two(N: int) -> int:
    """Return log2(N); raise if N is not a power of two >= 2."""
    N = int(N)
    if N < 2 or N & (N - 1):
        raise ValueError(f"N must be a power of 2 and >= 2 (zero-pad the input otherwise), got {N}")
    return N.bit_length() - 1


def _dtype(field: str):
    if field == "real":
        return np.float64
    if field == "complex":
        return np.complex128
    raise ValueError(f"field must be 'real' or 'complex', got {field!r}")


@dataclass(frozen=True)
class ButterflyStack:
    """Product L_m ... L_1 of tied butterfly factors for N = 2**m.

    ``twiddle`` has shape (2, 2, N - 1); see ``kernels`` for the packing.
    Level j is block-diagonal with N / 2**j copies of the block
    [[D1, D2], [D3, D4]], each D of length 2**(j-1). Level 1 touches the
    input first.
    """

    N: int
    twiddle: np.ndarray
    field: str = "complex"

    def __post_init__(self):
        check_power_of_two(self.N)
        if self.field == "real" and np.iscomplexobj(self.twiddle) and np.any(np.imag(self.twiddle)):
            raise ValueError("real field with complex twiddles")
        src = np.real(self.twiddle) if self.field == "real" and np.iscomplexobj(self.twiddle) else self.twiddle
        tw = np.array(src, dtype=_dtype(self.field))
        if tw.shape != (2, 2, self.N - 1):
            raise ValueError(f"twiddle must have shape (2, 2, {self.N - 1}), got {tw.shape}")
        tw.setflags(write=False)
        object.__setattr__(self, "twiddle", tw)

    @property
    def m(self) -> int:
        return self.N.bit_length() - 1

    @property
    def num_params(self) -> int:
        """Learnable scalars (complex entries count once): 4N - 4."""
        return self.twiddle.size

    def level(self, j: int) -> np.ndarray:
        """The (2, 2, 2**(j-1)) diagonals of level j (1-based)."""
        if not 1 <= j <= self.m:
            raise IndexError(j)
        h = 1 << (j - 1)
        return self.twiddle[:, :, h - 1 : 2 * h - 1]

    def levels(self) -> list[np.ndarray]:
        return [self.level(j) for j in range(1, self.m + 1)]

    def to_json(self) -> dict:
        levels = []
        for j, d in enumerate(self.levels(), start=1):
            entry = {"j": j}
            for name, (a, b) in zip(("D1", "D2", "D3", "D4"), ((0, 0), (0, 1), (1, 0), (1, 1))):
                c = np.asarray(d[a, b], dtype=np.complex128)
                entry[name] = [[float(z.real), float(z.imag)] for z in c]
            levels.append(entry)
        return {"N": self.N, "field": self.field, "levels": levels}

    @classmethod
    def from_json(cls, doc: dict | str) -> "ButterflyStack":
        if isinstance(doc, str):
            doc = json.loads(doc)
        levels = []
        for entry in sorted(doc["levels"], key=lambda e: e["j"]):
            d = np.empty((2, 2, len(entry["D1"])), dtype=np.complex128)
            for name, (a, b) in zip(("D1", "D2", "D3", "D4"), ((0, 0), (0, 1), (1, 0), (1, 1))):
                d[a, b] = [complex(re, im) for re, im in entry[name]]
            levels.append(d if doc["field"] == "complex" else d.real)
        return from_blocks(levels, field=doc["field"])


def from_blocks(levels, field: str | None = None) -> ButterflyStack:
    """Build a stack from per-level diagonals, finest level first.

    ``levels[j-1]`` has shape (2, 2, 2**(j-1)).
    """
    levels = [np.asarray(d) for d in levels]
    m = len(levels)
    if m == 0:
        raise ValueError("need at least one level")
    N = 1 << m
    for j, d in enumerate(levels, start=1):
        if d.shape != (2, 2, 1 << (j - 1)):
            raise ValueError(f"level {j} must have shape (2, 2, {1 << (j - 1)}), got {d.shape}")
    if field is None:
        field = "complex" if any(np.iscomplexobj(d) for d in levels) else "real"
    tw = np.concatenate(levels, axis=2)
    return ButterflyStack(N, tw, field)


def identity(N: int, field: str = "real") -> ButterflyStack:
    tw = np.zeros((2, 2, N - 1), dtype=_dtype(field))
    tw[0, 0] = 1
    tw[1, 1] = 1
    return ButterflyStack(N, tw, field)


def diagonal(d: np.ndarray, field: str | None = None) -> ButterflyStack:
    """Diagonal matrix diag(d) as a butterfly: placed on the outermost level."""
    d = np.asarray(d)
    N = d.shape[0]
    if field is None:
        field = "complex" if np.iscomplexobj(d) else "real"
    stack = identity(N, field)
    tw = np.array(stack.twiddle)
    h = N // 2
    tw[0, 0, h - 1 :] = d[:h]
    tw[1, 1, h - 1 :] = d[h:]
    return ButterflyStack(N, tw, field)


def init_random(N: int, field: str, rng: Rng) -> ButterflyStack:
    """Entries ~ N(0, 1/2); complex entries get N(0, 1/4) real and imaginary parts.

    Each factor has two nonzeros per row, so E[L^* L] = I.
    """
    check_power_of_two(N)
    size = 4 * (N - 1)
    if field == "real":
        tw = rng.normal(0.0, 0.5, size)
    elif field == "complex":
        re = rng.normal(0.0, 0.25, size)
        im = rng.normal(0.0, 0.25, size)
        tw = re + 1j * im
    else:
        raise ValueError(field)
    return ButterflyStack(N, tw.reshape(2, 2, N - 1), field)


def fast_multiply(stack: ButterflyStack, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """O(N log N) product: 2 multiplies and 1 add per output entry per level."""
    x = np.asarray(x)
    if x.shape != (stack.N,):
        raise ValueError(f"expected a vector of length {stack.N}, got shape {x.shape}")
    dtype = np.result_type(stack.twiddle, x)
    x = np.ascontiguousarray(x, dtype=dtype)
    tw = stack.twiddle if stack.twiddle.dtype == dtype else stack.twiddle.astype(dtype)
    if out is None:
        out = np.empty(stack.N, dtype=dtype)
    return kernels.bfly_vec(tw, x, out)


def apply_rows(stack: ButterflyStack, X: np.ndarray) -> np.ndarray:
    """Apply the butterfly to every row of X (shape (K, N))."""
    X = np.asarray(X)
    dtype = np.result_type(stack.twiddle, X)
    X = np.ascontiguousarray(X, dtype=dtype)
    acts = np.empty((stack.m,) + X.shape, dtype=dtype)
    return kernels.bfly_fwd(stack.twiddle.astype(dtype, copy=False), X, acts)


def level_dense(stack: ButterflyStack, j: int) -> np.ndarray:
    """Dense N x N matrix of level j alone."""
    d = stack.level(j)
    N = stack.N
    h = d.shape[2]
    L = np.zeros((N, N), dtype=stack.twiddle.dtype)
    for s in range(0, N, 2 * h):
        idx = np.arange(h)
        for a in range(2):
            for b in range(2):
                L[s + a * h + idx, s + b * h + idx] = d[a, b]
    return L


def expand_dense(stack: ButterflyStack) -> np.ndarray:
    """Dense matrix L_m ... L_1 by explicit products of the level matrices."""
    M = np.eye(stack.N, dtype=stack.twiddle.dtype)
    for j in range(1, stack.m + 1):
        M = level_dense(stack, j) @ M
    return M


def multiply_count(N: int) -> tuple[int, int]:
    """(multiplies, adds) of one fast_multiply call."""
    m = check_power_of_two(N)
    return 2 * N * m, N * m
