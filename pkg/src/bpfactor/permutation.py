"""Relaxed recursive permutations and their hard (discrete) counterparts.

At recursion step k (chunk size n = N / 2**k) three elementary permutations
act independently inside every contiguous chunk:

* ``a`` -- even indices first, then odd ([0, 1, 2, 3] -> [0, 2, 1, 3])
* ``b`` -- reverse the first half
* ``c`` -- reverse the second half

A relaxed step is (p_c P^c + (1-p_c) I)(p_b P^b + (1-p_b) I)(p_a P^a + (1-p_a) I)
with p_s = sigmoid(logit_s), so ``a`` touches the vector first. Step 0 (chunk
size N) is applied first. Index arrays follow ``y = x[perm]``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from . import kernels
from .butterfly import check_power_of_two

KINDS = ("a", "b", "c")


def elementary(kind: str, chunk_size: int, n: int) -> np.ndarray:
    """Index array of one elementary permutation applied chunk-wise to length n."""
    if kind not in KINDS:
        raise ValueError(f"unknown permutation kind {kind!r}")
    if chunk_size < 2 or chunk_size % 2 or n % chunk_size:
        raise ValueError(f"invalid chunk size {chunk_size} for length {n}")
    base = np.arange(n).reshape(-1, chunk_size)
    h = chunk_size // 2
    if kind == "a":
        out = np.concatenate([base[:, 0::2], base[:, 1::2]], axis=1)
    elif kind == "b":
        out = np.concatenate([base[:, :h][:, ::-1], base[:, h:]], axis=1)
    else:
        out = np.concatenate([base[:, :h], base[:, h:][:, ::-1]], axis=1)
    return out.ravel()


def apply_elementary(kind: str, chunk_size: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x[elementary(kind, chunk_size, x.shape[0])]


@lru_cache(maxsize=None)
def factor_chain(N: int) -> tuple[np.ndarray, np.ndarray]:
    """(perms, inverses), each (3m, N), in application order a, b, c per step."""
    m = check_power_of_two(N)
    perms = np.empty((3 * m, N), dtype=np.int64)
    for k in range(m):
        for s, kind in enumerate(KINDS):
            perms[3 * k + s] = elementary(kind, N >> k, N)
    inv = np.argsort(perms, axis=1)
    perms.setflags(write=False)
    inv.setflags(write=False)
    return perms, inv


def inert_steps(N: int) -> np.ndarray:
    """Boolean (m, 3) mask of factors that are the identity at their chunk size.

    Only the last step (chunk size 2) qualifies: all three kinds fix pairs.
    """
    m = check_power_of_two(N)
    mask = np.zeros((m, 3), dtype=bool)
    mask[m - 1, :] = True
    return mask


@dataclass(frozen=True)
class HardPermutation:
    """Discrete permutation as an index map: y = x[perm]."""

    perm: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.perm, dtype=np.int64)
        if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(p.size)):
            raise ValueError("not a bijection")
        p.setflags(write=False)
        object.__setattr__(self, "perm", p)

    @property
    def N(self) -> int:
        return self.perm.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[..., self.perm]

    def matrix(self) -> np.ndarray:
        P = np.zeros((self.N, self.N))
        P[np.arange(self.N), self.perm] = 1.0
        return P

    def inverse(self) -> "HardPermutation":
        return HardPermutation(np.argsort(self.perm))

    def compose(self, first: "HardPermutation") -> "HardPermutation":
        """Permutation applying ``first`` and then ``self``."""
        return HardPermutation(first.perm[self.perm])

    def to_list(self) -> list[int]:
        return [int(i) for i in self.perm]

    def __eq__(self, other):
        return isinstance(other, HardPermutation) and np.array_equal(self.perm, other.perm)

    def __hash__(self):
        return hash(self.perm.tobytes())


def identity_perm(N: int) -> HardPermutation:
    return HardPermutation(np.arange(N))


def bit_reversal(N: int) -> HardPermutation:
    m = check_power_of_two(N)
    idx = np.arange(N)
    rev = np.zeros(N, dtype=np.int64)
    for b in range(m):
        rev |= ((idx >> b) & 1) << (m - 1 - b)
    return HardPermutation(rev)


@dataclass(frozen=True)
class RelaxedPermutationStack:
    """m relaxed steps; ``logits`` is (m, 3), or (1, 3) when tied."""

    N: int
    logits: np.ndarray
    tied: bool = False

    def __post_init__(self):
        m = check_power_of_two(self.N)
        lg = np.array(self.logits, dtype=np.float64).reshape(-1, 3)
        if lg.shape[0] != (1 if self.tied else m):
            raise ValueError(f"logits must have shape ({1 if self.tied else m}, 3), got {lg.shape}")
        lg.setflags(write=False)
        object.__setattr__(self, "logits", lg)

    @property
    def m(self) -> int:
        return self.N.bit_length() - 1

    @property
    def num_params(self) -> int:
        return self.logits.size

    def probabilities(self) -> np.ndarray:
        """(m, 3) array of p_a, p_b, p_c per step."""
        return np.broadcast_to(expit(self.logits), (self.m, 3))

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "tied": self.tied,
            "logits": [[_encode_float(v) for v in row] for row in self.logits],
        }

    @classmethod
    def from_json(cls, doc: dict | str) -> "RelaxedPermutationStack":
        if isinstance(doc, str):
            doc = json.loads(doc)
        logits = np.array([[_decode_float(v) for v in row] for row in doc["logits"]])
        return cls(doc["N"], logits, bool(doc["tied"]))


def _encode_float(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _decode_float(v) -> float:
    return float(v)


def zeros(N: int, tied: bool = False) -> RelaxedPermutationStack:
    """All logits 0 (p = 1/2 everywhere)."""
    m = check_power_of_two(N)
    return RelaxedPermutationStack(N, np.zeros((1 if tied else m, 3)), tied)


def from_choices(N: int, choices, tied: bool = False) -> RelaxedPermutationStack:
    """Hard stack from an (m, 3) boolean table, or (1, 3) if tied (logits +-inf)."""
    c = np.asarray(choices, dtype=bool).reshape(-1, 3)
    return RelaxedPermutationStack(N, np.where(c, np.inf, -np.inf), tied)


def identity_stack(N: int) -> RelaxedPermutationStack:
    m = check_power_of_two(N)
    return from_choices(N, np.zeros((m, 3), dtype=bool))


def bit_reversal_stack(N: int) -> RelaxedPermutationStack:
    m = check_power_of_two(N)
    c = np.zeros((m, 3), dtype=bool)
    c[:, 0] = True
    return from_choices(N, c)


def apply_rows(stack: RelaxedPermutationStack, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X)
    if X.shape[-1] != stack.N:
        raise ValueError(f"expected length {stack.N}, got {X.shape[-1]}")
    perms, _ = factor_chain(stack.N)
    p = np.ascontiguousarray(stack.probabilities().ravel())
    acts = np.empty((perms.shape[0],) + X.shape, dtype=X.dtype)
    return kernels.perm_fwd(perms, p, X, acts)


def relaxed_apply(stack: RelaxedPermutationStack, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (stack.N,):
        raise ValueError(f"expected a vector of length {stack.N}, got shape {x.shape}")
    dtype = np.result_type(x, np.float64)
    return apply_rows(stack, x.astype(dtype)[None, :])[0]


def expand_dense(stack: RelaxedPermutationStack) -> np.ndarray:
    """Dense operator; column i is relaxed_apply(stack, e_i)."""
    return apply_rows(stack, np.eye(stack.N)).T.copy()


def harden(stack: RelaxedPermutationStack) -> tuple[HardPermutation, float]:
    """Round every p_s to {0, 1} (0.5 rounds up); return (permutation, max rounding distance)."""
    p = stack.probabilities()
    hard = p >= 0.5
    dist = float(np.max(np.abs(p - hard)))
    perms, _ = factor_chain(stack.N)
    idx = np.arange(stack.N)
    for f, on in enumerate(hard.ravel()):
        if on:
            idx = idx[perms[f]]
    return HardPermutation(idx), dist


def hardened_stack(stack: RelaxedPermutationStack) -> RelaxedPermutationStack:
    """Same stack with logits pushed to +-inf."""
    return RelaxedPermutationStack(stack.N, np.where(expit(stack.logits) >= 0.5, np.inf, -np.inf), stack.tied)


def entropy(stack: RelaxedPermutationStack) -> float:
    """Sum of binary entropies over stored logits (a tied triple counts once)."""
    p = expit(stack.logits)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(q > 0, q * np.log(q), 0.0))
    return float(np.sum(h))


def step_outcomes(n: int) -> list[HardPermutation]:
    """All 8 hard outcomes of a single step on a chunk of size n."""
    out = []
    for choice in itertools.product((False, True), repeat=3):
        idx = np.arange(n)
        for kind, on in zip(KINDS, choice):
            if on:
                idx = idx[elementary(kind, n, n)]
        out.append(HardPermutation(idx))
    return out
