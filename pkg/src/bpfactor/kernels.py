"""Hot loops: butterfly and relaxed-permutation passes, forward and backward.

Every kernel has a numba implementation and a pure-numpy fallback with the
same signature; ``_accel.pick`` chooses one at import time.

Layout conventions
------------------
* Twiddles for a size-N butterfly are packed into ``tw`` of shape
  ``(2, 2, N - 1)``. Level ``j`` (1-based, block size ``2**j``) occupies
  ``tw[:, :, h - 1 : 2 * h - 1]`` with ``h = 2**(j - 1)``; ``tw[a, b, off + i]``
  is entry ``i`` of diagonal ``D[a][b]``.
* Batches are row-major ``(K, N)``: each row is one input vector.
"""

import numpy as np

from ._accel import njit, pick


def level_count(N):
    return N.bit_length() - 1


# ---------------------------------------------------------------------------
# butterfly
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bfly_vec_nb(tw, x, out):
    N = x.shape[0]
    for i in range(N):
        out[i] = x[i]
    h = 1
    while h < N:
        off = h - 1
        for s in range(0, N, 2 * h):
            for i in range(h):
                x0 = out[s + i]
                x1 = out[s + h + i]
                out[s + i] = tw[0, 0, off + i] * x0 + tw[0, 1, off + i] * x1
                out[s + h + i] = tw[1, 0, off + i] * x0 + tw[1, 1, off + i] * x1
        h *= 2
    return out


def _bfly_vec_np(tw, x, out):
    N = x.shape[0]
    y = x
    h = 1
    while h < N:
        d = tw[:, :, h - 1 : 2 * h - 1]
        v = y.reshape(-1, 2, h)
        y = np.einsum("abh,cbh->cah", d, v).reshape(N)
        h *= 2
    out[:] = y
    return out


bfly_vec = pick(_bfly_vec_nb, _bfly_vec_np)


@njit(cache=True)
def _bfly_fwd_nb(tw, X, acts):
    K, N = X.shape
    Y = X.copy()
    h = 1
    j = 0
    while h < N:
        off = h - 1
        acts[j, :, :] = Y
        for k in range(K):
            for s in range(0, N, 2 * h):
                for i in range(h):
                    x0 = Y[k, s + i]
                    x1 = Y[k, s + h + i]
                    Y[k, s + i] = tw[0, 0, off + i] * x0 + tw[0, 1, off + i] * x1
                    Y[k, s + h + i] = tw[1, 0, off + i] * x0 + tw[1, 1, off + i] * x1
        h *= 2
        j += 1
    return Y


def _bfly_fwd_np(tw, X, acts):
    K, N = X.shape
    Y = X
    h = 1
    j = 0
    while h < N:
        acts[j] = Y
        d = tw[:, :, h - 1 : 2 * h - 1]
        Y = np.einsum("abh,kcbh->kcah", d, Y.reshape(K, -1, 2, h)).reshape(K, N)
        h *= 2
        j += 1
    return Y.copy() if Y is X else Y


bfly_fwd = pick(_bfly_fwd_nb, _bfly_fwd_np)


@njit(cache=True)
def _bfly_bwd_nb(tw, acts, G, gtw):
    """Backprop G through the butterfly; accumulates into gtw, returns dX."""
    K, N = G.shape
    Gc = G.copy()
    m = acts.shape[0]
    for j in range(m - 1, -1, -1):
        h = 1 << j
        off = h - 1
        for k in range(K):
            for s in range(0, N, 2 * h):
                for i in range(h):
                    x0 = acts[j, k, s + i]
                    x1 = acts[j, k, s + h + i]
                    g0 = Gc[k, s + i]
                    g1 = Gc[k, s + h + i]
                    cx0 = np.conj(x0)
                    cx1 = np.conj(x1)
                    gtw[0, 0, off + i] += g0 * cx0
                    gtw[0, 1, off + i] += g0 * cx1
                    gtw[1, 0, off + i] += g1 * cx0
                    gtw[1, 1, off + i] += g1 * cx1
                    Gc[k, s + i] = np.conj(tw[0, 0, off + i]) * g0 + np.conj(tw[1, 0, off + i]) * g1
                    Gc[k, s + h + i] = np.conj(tw[0, 1, off + i]) * g0 + np.conj(tw[1, 1, off + i]) * g1
    return Gc


def _bfly_bwd_np(tw, acts, G, gtw):
    K, N = G.shape
    m = acts.shape[0]
    for j in range(m - 1, -1, -1):
        h = 1 << j
        sl = slice(h - 1, 2 * h - 1)
        g = G.reshape(K, -1, 2, h)
        x = acts[j].reshape(K, -1, 2, h)
        gtw[:, :, sl] += np.einsum("kcah,kcbh->abh", g, x.conj())
        G = np.einsum("abh,kcah->kcbh", tw[:, :, sl].conj(), g).reshape(K, N)
    return G


bfly_bwd = pick(_bfly_bwd_nb, _bfly_bwd_np)


# ---------------------------------------------------------------------------
# relaxed permutation: a chain of factors  x <- p * x[perm] + (1 - p) * x
# ---------------------------------------------------------------------------


@njit(cache=True)
def _perm_fwd_nb(perms, p, X, acts):
    K, N = X.shape
    Y = X.copy()
    tmp = np.empty(N, dtype=X.dtype)
    for f in range(perms.shape[0]):
        acts[f, :, :] = Y
        pf = p[f]
        if pf == 0.0:
            continue
        for k in range(K):
            for i in range(N):
                tmp[i] = pf * Y[k, perms[f, i]] + (1.0 - pf) * Y[k, i]
            for i in range(N):
                Y[k, i] = tmp[i]
    return Y


def _perm_fwd_np(perms, p, X, acts):
    Y = X
    for f in range(perms.shape[0]):
        acts[f] = Y
        pf = p[f]
        if pf == 0.0:
            continue
        Y = pf * Y[:, perms[f]] + (1.0 - pf) * Y
    return Y.copy() if Y is X else Y


perm_fwd = pick(_perm_fwd_nb, _perm_fwd_np)


@njit(cache=True)
def _perm_bwd_nb(perms, inv, p, acts, G, gp):
    """Backprop through the factor chain; writes dL/dp into gp, returns dX."""
    K, N = G.shape
    Gc = G.copy()
    tmp = np.empty(N, dtype=G.dtype)
    for f in range(perms.shape[0] - 1, -1, -1):
        pf = p[f]
        acc = 0.0
        for k in range(K):
            for i in range(N):
                d = acts[f, k, perms[f, i]] - acts[f, k, i]
                acc += (np.conj(d) * Gc[k, i]).real
        gp[f] = acc
        if pf == 0.0:
            continue
        for k in range(K):
            for i in range(N):
                tmp[i] = (1.0 - pf) * Gc[k, i] + pf * Gc[k, inv[f, i]]
            for i in range(N):
                Gc[k, i] = tmp[i]
    return Gc


def _perm_bwd_np(perms, inv, p, acts, G, gp):
    for f in range(perms.shape[0] - 1, -1, -1):
        x = acts[f]
        gp[f] = np.real(np.vdot(x[:, perms[f]] - x, G))
        pf = p[f]
        if pf != 0.0:
            G = (1.0 - pf) * G + pf * G[:, inv[f]]
    return G


perm_bwd = pick(_perm_bwd_nb, _perm_bwd_np)
