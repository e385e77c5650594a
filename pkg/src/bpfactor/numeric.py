"""Dense linear-algebra substrate: seeded sampling, matvec, RMSE, truncated SVD.

Matrices are plain numpy arrays (``float64`` for the real field,
``complex128`` for the complex field). Everything is double precision.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit, pick

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> tuple[int, int]:
    x = (x + _GOLDEN) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


# ---------------------------------------------------------------------------
# xoshiro256** kernels. State lives in a uint64[4] array so the numba and the
# pure-python paths advance exactly the same stream.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _rotl_nb(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def _next_nb(s):
    result = _rotl_nb(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl_nb(s[3], 45)
    return result


@njit(cache=True)
def _normals_nb(s, out, mean, std):
    two_pi = 2.0 * np.pi
    scale = 2.0**-53
    for i in range(out.shape[0]):
        a = _next_nb(s) >> np.uint64(11)
        b = _next_nb(s) >> np.uint64(11)
        u1 = (float(a) + 1.0) * scale
        u2 = float(b) * scale
        out[i] = mean + std * (math.sqrt(-2.0 * math.log(u1)) * math.cos(two_pi * u2))


def _next_py(s):
    s0, s1, s2, s3 = (int(v) for v in s)
    result = (((((s1 * 5) & _MASK) << 7) | (((s1 * 5) & _MASK) >> 57)) & _MASK) * 9 & _MASK
    t = (s1 << 17) & _MASK
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3
    return result


def _normals_py(s, out, mean, std):
    for i in range(out.shape[0]):
        a = _next_py(s) >> 11
        b = _next_py(s) >> 11
        u1 = (a + 1.0) * 2.0**-53
        u2 = b * 2.0**-53
        out[i] = mean + std * (math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2))


_normals = pick(_normals_nb, _normals_py)


class Rng:
    """xoshiro256** generator seeded through SplitMix64.

    The stream is fixed by the seed alone, so runs are reproducible across
    machines (up to libm rounding in ``log``/``cos``).
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        x = self.seed
        words = []
        for _ in range(4):
            x, z = _splitmix64(x)
            words.append(z)
        self.state = np.array(words, dtype=np.uint64)

    def next_u64(self) -> int:
        if USE_NUMBA:
            return int(_next_nb(self.state))
        return _next_py(self.state)

    def uniform(self) -> float:
        """Uniform draw in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self, mean: float = 0.0, variance: float = 1.0, size: int | None = None):
        if variance < 0:
            raise ValueError(f"variance must be non-negative, got {variance}")
        n = 1 if size is None else int(size)
        out = np.empty(n, dtype=np.float64)
        _normals(self.state, out, float(mean), math.sqrt(variance))
        if variance == 0:
            out[:] = mean
        return float(out[0]) if size is None else out

    def spawn(self, index: int) -> "Rng":
        """Independent child stream determined by (seed, index)."""
        return Rng(derive_seed(self.seed, index))


def derive_seed(master: int, index: int) -> int:
    _, a = _splitmix64((int(master) & _MASK) ^ ((int(index) * _GOLDEN) & _MASK))
    _, b = _splitmix64(a)
    return b


def gaussian(rng: Rng, mean: float, variance: float) -> float:
    return rng.normal(mean, variance)


# ---------------------------------------------------------------------------
# matvec / metrics
# ---------------------------------------------------------------------------


@njit(cache=True)
def _matvec_nb(A, x, y):
    rows, cols = A.shape
    for i in range(rows):
        acc = y[i]
        for j in range(cols):
            acc += A[i, j] * x[j]
        y[i] = acc


def _matvec_np(A, x, y):
    # column sweep keeps the per-row ascending-j accumulation order
    for j in range(A.shape[1]):
        y += A[:, j] * x[j]


_matvec = pick(_matvec_nb, _matvec_np)


def dense_matvec(A: np.ndarray, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """y_i = sum_j A_ij x_j, accumulated in ascending j for every row.

    Deliberately not BLAS: this is the O(N^2) reference the fast algorithms
    are checked and timed against.
    """
    A = np.asarray(A)
    x = np.asarray(x)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, x is {x.shape}")
    dtype = np.result_type(A, x, np.float64)
    A = np.ascontiguousarray(A, dtype=dtype)
    x = np.ascontiguousarray(x, dtype=dtype)
    if out is None:
        out = np.zeros(A.shape[0], dtype=dtype)
    else:
        out[:] = 0
    _matvec(A, x, out)
    return out


def frobenius_rmse(A: np.ndarray, B: np.ndarray) -> float:
    """sqrt(mean |A_ij - B_ij|^2)."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    d = A - B
    return math.sqrt(float(np.vdot(d, d).real) / d.size)


# ---------------------------------------------------------------------------
# one-sided (Hestenes) Jacobi SVD
# ---------------------------------------------------------------------------

_ROT_TOL = 1e-15


@njit(cache=True)
def _jacobi_sweep_nb(A, V, zero_tol):
    n = A.shape[1]
    rows = A.shape[0]
    rotations = 0
    for p in range(n - 1):
        for q in range(p + 1, n):
            alpha = 0.0
            beta = 0.0
            gamma = 0.0 + 0.0j
            for i in range(rows):
                ap = A[i, p]
                aq = A[i, q]
                alpha += (ap.real * ap.real + ap.imag * ap.imag)
                beta += (aq.real * aq.real + aq.imag * aq.imag)
                gamma += ap.conjugate() * aq
            g = abs(gamma)
            if alpha <= zero_tol or beta <= zero_tol or g <= _ROT_TOL * math.sqrt(alpha * beta):
                continue
            rotations += 1
            phase = gamma / g
            zeta = (beta - alpha) / (2.0 * g)
            t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = c * t
            for i in range(rows):
                ap = A[i, p]
                aq = A[i, q] * phase.conjugate()
                A[i, p] = c * ap - s * aq
                A[i, q] = s * ap + c * aq
            for i in range(V.shape[0]):
                vp = V[i, p]
                vq = V[i, q] * phase.conjugate()
                V[i, p] = c * vp - s * vq
                V[i, q] = s * vp + c * vq
    return rotations


def _jacobi_sweep_np(A, V, zero_tol):
    n = A.shape[1]
    rotations = 0
    for p in range(n - 1):
        for q in range(p + 1, n):
            ap = A[:, p]
            aq = A[:, q]
            alpha = float(np.vdot(ap, ap).real)
            beta = float(np.vdot(aq, aq).real)
            gamma = complex(np.vdot(ap, aq))
            g = abs(gamma)
            if alpha <= zero_tol or beta <= zero_tol or g <= _ROT_TOL * math.sqrt(alpha * beta):
                continue
            rotations += 1
            phase = gamma / g
            zeta = (beta - alpha) / (2.0 * g)
            t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
            c = 1.0 / math.sqrt(1.0 + t * t)
            s = c * t
            aq = aq * phase.conjugate()
            A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
            vp = V[:, p].copy()
            vq = V[:, q] * phase.conjugate()
            V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    return rotations


_jacobi_sweep = pick(_jacobi_sweep_nb, _jacobi_sweep_np)

MAX_SWEEPS = 60


class SVDNotConverged(RuntimeError):
    pass


def _complete_orthonormal(U: np.ndarray, k: int) -> None:
    """Replace columns k.. of U by an orthonormal completion of columns :k."""
    m = U.shape[0]
    basis = [U[:, i] for i in range(k)]
    cand = 0
    for col in range(k, U.shape[1]):
        while True:
            v = np.zeros(m, dtype=U.dtype)
            v[cand % m] = 1.0
            cand += 1
            for b in basis:
                v = v - np.vdot(b, v) * b
            nv = np.linalg.norm(v)
            if nv > 1e-8:
                v = v / nv
                break
        U[:, col] = v
        basis.append(v)


def truncated_svd(A: np.ndarray, r: int):
    """Rank-r SVD by one-sided Jacobi; returns (U, s, V) with A ~ U diag(s) V^H.

    Raises SVDNotConverged after MAX_SWEEPS sweeps without convergence.
    """
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    rows, cols = A.shape
    if not 1 <= r <= min(rows, cols):
        raise ValueError(f"rank {r} out of range for shape {A.shape}")
    if rows < cols:
        U, s, V = truncated_svd(A.conj().T, r)
        return V, s, U

    dtype = np.complex128 if np.iscomplexobj(A) else np.float64
    W = np.array(A, dtype=np.complex128, order="C")
    V = np.eye(cols, dtype=np.complex128)
    fro = float(np.linalg.norm(W))
    zero_tol = (1e-12 * fro) ** 2 / max(cols, 1)
    for _ in range(MAX_SWEEPS):
        if _jacobi_sweep(W, V, zero_tol) == 0:
            break
    else:
        raise SVDNotConverged(f"one-sided Jacobi did not converge in {MAX_SWEEPS} sweeps")

    norms = np.linalg.norm(W, axis=0)
    order = np.argsort(-norms, kind="stable")[:r]
    s = norms[order]
    U = np.zeros((rows, r), dtype=np.complex128)
    nz = 0
    for i, idx in enumerate(order):
        if s[i] > 1e-300 and s[i] > 1e-13 * max(s[0], 1e-300):
            U[:, i] = W[:, idx] / s[i]
            nz = i + 1
        else:
            s[i] = 0.0
    if nz < r:
        _complete_orthonormal(U, nz)
    Vr = V[:, order]
    if dtype == np.float64:
        U, Vr = U.real.copy(), Vr.real.copy()
    return U, s, Vr


def reconstruct(U: np.ndarray, s: np.ndarray, V: np.ndarray) -> np.ndarray:
    return (U * s) @ V.conj().T
