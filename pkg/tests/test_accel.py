"""The numba kernels and the numpy fallbacks must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from bpfactor import kernels, numeric
from bpfactor import butterfly as bf
from bpfactor import permutation as pm
from bpfactor._accel import USE_NUMBA
from bpfactor.numeric import Rng

needs_numba = pytest.mark.skipif(not USE_NUMBA, reason="numba disabled")


@needs_numba
@pytest.mark.parametrize("dtype", [np.float64, np.complex128])
def test_butterfly_fwd_bwd_agree(dtype):
    rng = Rng(1)
    N, K = 16, 5
    field = "real" if dtype is np.float64 else "complex"
    tw = np.ascontiguousarray(bf.init_random(N, field, rng).twiddle)
    X = rng.normal(0, 1, K * N).reshape(K, N).astype(dtype)
    acts_a = np.empty((4, K, N), dtype)
    acts_b = np.empty((4, K, N), dtype)
    Ya = kernels._bfly_fwd_nb(tw, X, acts_a)
    Yb = kernels._bfly_fwd_np(tw, X, acts_b)
    assert np.abs(Ya - Yb).max() < 1e-13
    G = rng.normal(0, 1, K * N).reshape(K, N).astype(dtype)
    ga, gb = np.zeros_like(tw), np.zeros_like(tw)
    Ga = kernels._bfly_bwd_nb(tw, acts_a, G.copy(), ga)
    Gb = kernels._bfly_bwd_np(tw, acts_b, G.copy(), gb)
    assert np.abs(Ga - Gb).max() < 1e-12
    assert np.abs(ga - gb).max() < 1e-12


@needs_numba
def test_permutation_fwd_bwd_agree():
    rng = Rng(2)
    N, K = 16, 3
    perms, inv = pm.factor_chain(N)
    p = np.ascontiguousarray(1 / (1 + np.exp(-rng.normal(0, 1, 12))))
    X = rng.normal(0, 1, K * N).reshape(K, N)
    acts_a, acts_b = np.empty((12, K, N)), np.empty((12, K, N))
    Ya = kernels._perm_fwd_nb(perms, p, X, acts_a)
    Yb = kernels._perm_fwd_np(perms, p, X, acts_b)
    assert np.abs(Ya - Yb).max() < 1e-14
    G = rng.normal(0, 1, K * N).reshape(K, N)
    gpa, gpb = np.empty(12), np.empty(12)
    Ga = kernels._perm_bwd_nb(perms, inv, p, acts_a, G.copy(), gpa)
    Gb = kernels._perm_bwd_np(perms, inv, p, acts_b, G.copy(), gpb)
    assert np.abs(Ga - Gb).max() < 1e-13
    assert np.abs(gpa - gpb).max() < 1e-12


@needs_numba
def test_jacobi_sweep_agree():
    A = Rng(3).normal(0, 1, 48).reshape(8, 6).astype(np.complex128)
    Wa, Wb = A.copy(), A.copy()
    Va, Vb = np.eye(6, dtype=complex), np.eye(6, dtype=complex)
    ra = numeric._jacobi_sweep_nb(Wa, Va, 1e-30)
    rb = numeric._jacobi_sweep_np(Wb, Vb, 1e-30)
    assert ra == rb
    assert np.abs(Wa - Wb).max() < 1e-12 and np.abs(Va - Vb).max() < 1e-12


def test_fallback_selected_by_env():
    code = (
        "import numpy as np\n"
        "from bpfactor import _accel, butterfly as bf, kernels\n"
        "from bpfactor.numeric import Rng\n"
        "assert not _accel.USE_NUMBA\n"
        "assert kernels.bfly_vec is kernels._bfly_vec_np\n"
        "s = bf.init_random(32, 'complex', Rng(0))\n"
        "x = Rng(1).normal(0, 1, 32)\n"
        "print(float(np.abs(bf.fast_multiply(s, x) - bf.expand_dense(s) @ x).max()))\n"
    )
    env = dict(os.environ, BF_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert float(out.stdout) < 1e-12
