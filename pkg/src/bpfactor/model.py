"""Trainable (BP)^k_r products: flat parameters, objective, analytic gradients.

A model of size N with expansion r works on n = r*N coordinates and represents

    M = S (B_1 P_1)(B_2 P_2) ... (B_k P_k) Q S^T        (optionally Re(M))

where S keeps the leading N coordinates and Q is an optional extra relaxed
permutation on the input side. The objective is mean |M - T|^2 (+ an optional
entropy penalty on the permutation logits).

Complex parameters are optimized as independent real and imaginary parts.
Gradients of complex tensors use the convention g = dL/dRe + i dL/dIm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import butterfly as bf
from . import kernels
from . import permutation as pm
from .butterfly import ButterflyStack, check_power_of_two
from .numeric import Rng, frobenius_rmse
from .permutation import HardPermutation, RelaxedPermutationStack

ARCHS = ("bp", "bpbp")

# starting logit magnitude of the extra permutation (p = 0.95 or 0.05)
EXTRA_LOGIT = 3.0


def parse_arch(arch: str) -> tuple[int, int]:
    """'bp' -> (1, 1), 'bpbp' -> (2, 1), 'bp3r2' -> (3, 2)."""
    a = arch.lower().replace("(", "").replace(")", "").replace("^", "")
    if a == "bp":
        return 1, 1
    if a == "bpbp":
        return 2, 1
    if a.startswith("bp"):
        rest = a[2:]
        k, _, r = rest.partition("r")
        try:
            return int(k), int(r) if r else 1
        except ValueError:
            pass
    raise ValueError(f"unknown architecture {arch!r}; use bp, bpbp or bp<k>r<r>")


@dataclass(frozen=True)
class BPModel:
    butterfly: ButterflyStack
    permutation: RelaxedPermutationStack

    def __post_init__(self):
        if self.butterfly.N != self.permutation.N:
            raise ValueError("butterfly and permutation sizes differ")

    def forward(self, x: np.ndarray) -> np.ndarray:
        return bf.fast_multiply(self.butterfly, pm.relaxed_apply(self.permutation, x))

    def expand(self) -> np.ndarray:
        return bf.expand_dense(self.butterfly) @ pm.expand_dense(self.permutation)


@dataclass(frozen=True)
class BPProductModel:
    """Immutable snapshot of a (BP)^k_r model; ``modules[0]`` is outermost."""

    N: int
    modules: tuple
    r: int = 1
    extra: RelaxedPermutationStack | None = None
    post_real_part: bool = False

    @property
    def k(self) -> int:
        return len(self.modules)

    @property
    def num_params(self) -> int:
        n = sum(m.butterfly.num_params + m.permutation.num_params for m in self.modules)
        return n + (self.extra.num_params if self.extra is not None else 0)

    def expand(self) -> np.ndarray:
        """Brute-force dense path: S (prod B_i P_i) Q S^T."""
        n = self.N * self.r
        M = np.eye(n, dtype=np.complex128)
        for mod in self.modules:
            M = M @ mod.expand()
        if self.extra is not None:
            M = M @ pm.expand_dense(self.extra)
        M = M[: self.N, : self.N]
        if self.post_real_part:
            return M.real.copy()
        if all(mod.butterfly.field == "real" for mod in self.modules):
            return M.real.copy()
        return M

    def apply(self, x: np.ndarray) -> np.ndarray:
        """O(k r N log(rN)) application to a single vector."""
        n = self.N * self.r
        v = np.zeros(n, dtype=np.complex128)
        v[: self.N] = x
        if self.extra is not None:
            v = pm.relaxed_apply(self.extra, v)
        for mod in reversed(self.modules):
            v = mod.forward(v)
        v = v[: self.N]
        return v.real if self.post_real_part else v

    def to_json(self) -> dict:
        return {
            "N": self.N,
            "r": self.r,
            "post_real_part": self.post_real_part,
            "modules": [
                {"butterfly": m.butterfly.to_json(), "permutation": m.permutation.to_json()}
                for m in self.modules
            ],
            "extra": self.extra.to_json() if self.extra is not None else None,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BPProductModel":
        mods = tuple(
            BPModel(ButterflyStack.from_json(m["butterfly"]), RelaxedPermutationStack.from_json(m["permutation"]))
            for m in doc["modules"]
        )
        extra = RelaxedPermutationStack.from_json(doc["extra"]) if doc.get("extra") else None
        return cls(doc["N"], mods, doc["r"], extra, doc["post_real_part"])


@dataclass
class _PermSlot:
    offset: int
    size: int
    tied: bool
    frozen: bool = False


class TrainableProduct:
    """Mutable parameter vector + workspaces for repeated objective/gradient calls.

    Parameter layout: for each module (outermost first) the twiddles
    (real: 4(n-1) values; complex: 4(n-1) real parts then 4(n-1) imaginary
    parts) followed by its logits; then the extra permutation's logits.
    """

    def __init__(self, N: int, k: int = 1, r: int = 1, field: str = "complex",
                 tie_logits: bool = False, extra_perm: bool = False, post_real_part: bool = False,
                 extra_init: np.ndarray | None = None):
        check_power_of_two(N)
        if k < 1 or r < 1:
            raise ValueError("k and r must be >= 1")
        self.N = N
        self.k = k
        self.r = r
        self.n = N * r
        check_power_of_two(self.n)
        self.m = self.n.bit_length() - 1
        self.field = field
        self.complex = field == "complex"
        if field not in ("real", "complex"):
            raise ValueError(field)
        self.tie_logits = tie_logits
        self.post_real_part = post_real_part
        self.dtype = np.complex128 if self.complex else np.float64

        ntw = 4 * (self.n - 1)
        self.tw_size = ntw * (2 if self.complex else 1)
        self.nlogit = 3 if tie_logits else 3 * self.m
        off = 0
        self.tw_off = []
        self.perm_slots = []
        for _ in range(k):
            self.tw_off.append(off)
            off += self.tw_size
            self.perm_slots.append(_PermSlot(off, self.nlogit, tie_logits))
            off += self.nlogit
        # the extra input permutation is never tied: it has to act on one step only
        self.extra_slot = None
        self.extra_init = None
        if extra_perm:
            self.extra_slot = _PermSlot(off, 3 * self.m, False)
            off += 3 * self.m
            if extra_init is not None:
                self.extra_init = np.asarray(extra_init, dtype=bool).reshape(self.m, 3)
        self.size = off
        self.theta = np.zeros(off)
        self.trainable = np.ones(off, dtype=bool)

        self.perms, self.inv = pm.factor_chain(self.n)
        self.active = ~pm.inert_steps(self.n)
        self._ws = None

    # -- parameter access ---------------------------------------------------

    def slots(self):
        return self.perm_slots + ([self.extra_slot] if self.extra_slot is not None else [])

    def twiddles(self, i: int) -> np.ndarray:
        o = self.tw_off[i]
        ntw = 4 * (self.n - 1)
        re = self.theta[o : o + ntw]
        if self.complex:
            return (re + 1j * self.theta[o + ntw : o + 2 * ntw]).reshape(2, 2, self.n - 1)
        return re.reshape(2, 2, self.n - 1).copy()

    def set_twiddles(self, i: int, tw: np.ndarray) -> None:
        o = self.tw_off[i]
        ntw = 4 * (self.n - 1)
        tw = np.asarray(tw).reshape(-1)
        if tw.size != ntw:
            raise ValueError("twiddle size mismatch")
        if self.complex:
            self.theta[o : o + ntw] = tw.real
            self.theta[o + ntw : o + 2 * ntw] = tw.imag if np.iscomplexobj(tw) else 0.0
        else:
            if np.iscomplexobj(tw) and np.any(tw.imag):
                raise ValueError("complex twiddles for a real model")
            self.theta[o : o + ntw] = np.real(tw)

    def logits(self, slot: _PermSlot) -> np.ndarray:
        return self.theta[slot.offset : slot.offset + slot.size].reshape(-1, 3)

    def set_logits(self, slot: _PermSlot, logits) -> None:
        self.theta[slot.offset : slot.offset + slot.size] = np.asarray(logits, dtype=np.float64).reshape(-1)

    def probabilities(self, slot: _PermSlot) -> np.ndarray:
        return np.broadcast_to(expit(self.logits(slot)), (self.m, 3))

    def freeze_permutations(self) -> None:
        """Round all logits to +-inf and stop training them."""
        for slot in self.slots():
            lg = self.logits(slot)
            self.set_logits(slot, np.where(expit(lg) >= 0.5, np.inf, -np.inf))
            slot.frozen = True
            self.trainable[slot.offset : slot.offset + slot.size] = False

    def max_rounding_distance(self, active_only: bool = True) -> float:
        d = 0.0
        for slot in self.slots():
            p = self.probabilities(slot)
            dist = np.abs(p - (p >= 0.5))
            if active_only and not slot.tied:
                dist = dist[self.active]
            d = max(d, float(dist.max()))
        return d

    # -- initialisation / snapshots -----------------------------------------

    def init_random(self, rng: Rng) -> None:
        for i in range(self.k):
            self.set_twiddles(i, bf.init_random(self.n, self.field, rng).twiddle)
        for slot in self.perm_slots:
            self.set_logits(slot, np.zeros(slot.size))
        if self.extra_slot is not None:
            if self.extra_init is None:
                self.set_logits(self.extra_slot, np.zeros(self.extra_slot.size))
            else:
                self.set_logits(self.extra_slot, np.where(self.extra_init, EXTRA_LOGIT, -EXTRA_LOGIT))

    def snapshot(self) -> BPProductModel:
        mods = []
        for i, slot in enumerate(self.perm_slots):
            stack = ButterflyStack(self.n, self.twiddles(i), self.field)
            mods.append(BPModel(stack, RelaxedPermutationStack(self.n, self.logits(slot).copy(), slot.tied)))
        extra = None
        if self.extra_slot is not None:
            extra = RelaxedPermutationStack(self.n, self.logits(self.extra_slot).copy(), self.extra_slot.tied)
        return BPProductModel(self.N, tuple(mods), self.r, extra, self.post_real_part)

    @classmethod
    def from_snapshot(cls, model: BPProductModel) -> "TrainableProduct":
        first = model.modules[0]
        tied = first.permutation.tied
        field = "complex" if any(m.butterfly.field == "complex" for m in model.modules) else "real"
        t = cls(model.N, model.k, model.r, field, tied, model.extra is not None, model.post_real_part)
        for i, mod in enumerate(model.modules):
            if mod.permutation.tied != tied:
                raise ValueError("mixed logit tying is not supported")
            if mod.butterfly.field != field:
                mod = BPModel(ButterflyStack(mod.butterfly.N, mod.butterfly.twiddle, field), mod.permutation)
            t.set_twiddles(i, mod.butterfly.twiddle)
            t.set_logits(t.perm_slots[i], mod.permutation.logits)
        if model.extra is not None:
            t.set_logits(t.extra_slot, model.extra.logits)
        return t

    # -- objective ----------------------------------------------------------

    def _workspace(self):
        if self._ws is None:
            shape = (self.N, self.n)
            self._ws = {
                "bacts": [np.empty((self.m,) + shape, dtype=self.dtype) for _ in range(self.k)],
                "pacts": [np.empty((3 * self.m,) + shape, dtype=self.dtype) for _ in range(len(self.slots()))],
                "X0": np.eye(self.N, self.n, dtype=self.dtype),
            }
        return self._ws

    def _probs_flat(self, slot):
        return np.ascontiguousarray(self.probabilities(slot).ravel())

    def forward(self) -> np.ndarray:
        """Dense N x N matrix via the fast path applied to the identity."""
        return self._forward(keep=False)[0]

    def _forward(self, keep: bool):
        ws = self._workspace()
        X = ws["X0"]
        probs = {}
        si = len(self.slots()) - 1
        if self.extra_slot is not None:
            p = self._probs_flat(self.extra_slot)
            probs[si] = p
            X = kernels.perm_fwd(self.perms, p, X, ws["pacts"][si])
        tws = []
        for i in range(self.k - 1, -1, -1):
            p = self._probs_flat(self.perm_slots[i])
            probs[i] = p
            X = kernels.perm_fwd(self.perms, p, X, ws["pacts"][i])
            tw = self.twiddles(i)
            tws.append(tw)
            X = kernels.bfly_fwd(tw, X, ws["bacts"][i])
        M = X[:, : self.N].T
        if self.post_real_part:
            M = M.real
        return M, probs, tws[::-1]

    def loss_and_grad(self, target: np.ndarray, entropy_weight: float = 0.0):
        """Returns (objective, mse, gradient over the flat parameter vector)."""
        target = np.asarray(target)
        if target.shape != (self.N, self.N):
            raise ValueError(f"target must be {self.N}x{self.N}, got {target.shape}")
        if not self.complex and np.iscomplexobj(target) and np.any(target.imag):
            raise ValueError("complex target needs a complex-field model")
        if self.post_real_part and np.iscomplexobj(target) and np.any(target.imag):
            raise ValueError("complex target cannot be fitted by a real-part output")
        ws = self._workspace()
        M, probs, tws = self._forward(keep=True)
        R = M - target
        mse = float(np.vdot(R, R).real) / self.N**2
        GM = (2.0 / self.N**2) * R
        G = np.zeros((self.N, self.n), dtype=self.dtype)
        G[:, : self.N] = GM.T if self.complex or not np.iscomplexobj(GM) else GM.T.real

        grad = np.zeros(self.size)
        ntw = 4 * (self.n - 1)
        gp = np.empty(3 * self.m)
        for i in range(self.k):
            gtw = np.zeros((2, 2, self.n - 1), dtype=self.dtype)
            G = kernels.bfly_bwd(tws[i], ws["bacts"][i], G, gtw)
            o = self.tw_off[i]
            grad[o : o + ntw] = gtw.real.ravel()
            if self.complex:
                grad[o + ntw : o + 2 * ntw] = gtw.imag.ravel()
            G = kernels.perm_bwd(self.perms, self.inv, probs[i], ws["pacts"][i], G, gp)
            self._logit_grad(self.perm_slots[i], probs[i], gp, grad)
        if self.extra_slot is not None:
            si = len(self.slots()) - 1
            kernels.perm_bwd(self.perms, self.inv, probs[si], ws["pacts"][si], G, gp)
            self._logit_grad(self.extra_slot, probs[si], gp, grad)

        obj = mse
        if entropy_weight:
            for slot in self.slots():
                if slot.frozen:
                    continue
                lg = self.logits(slot).ravel()
                p = expit(lg)
                q = 1.0 - p
                with np.errstate(divide="ignore", invalid="ignore"):
                    h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(q > 0, q * np.log(q), 0.0))
                obj += entropy_weight * float(h.sum())
                dh = np.where(np.isfinite(lg), -lg * p * q, 0.0)
                grad[slot.offset : slot.offset + slot.size] += entropy_weight * dh
        grad[~self.trainable] = 0.0
        return obj, mse, grad

    def _logit_grad(self, slot, p, gp, grad):
        if slot.frozen:
            return
        g = (gp * p * (1.0 - p)).reshape(self.m, 3)
        if slot.tied:
            g = g.sum(axis=0)
        grad[slot.offset : slot.offset + slot.size] = g.ravel()


def hardened_permutations(model: BPProductModel) -> tuple[list[HardPermutation], float]:
    """Round every permutation stack; returns (perms in module order [+ extra], max distance)."""
    perms = []
    dist = 0.0
    stacks = [m.permutation for m in model.modules] + ([model.extra] if model.extra is not None else [])
    for s in stacks:
        hp, d = pm.harden(s)
        perms.append(hp)
        dist = max(dist, d)
    return perms, dist


def model_rmse(model: BPProductModel, target: np.ndarray) -> float:
    """RMSE through the brute-force dense expansion."""
    return frobenius_rmse(target, model.expand())


def random_instance(N: int, arch: str, field: str, rng: Rng, tie_logits: bool = False,
                    extra_perm: bool = False, post_real_part: bool = False) -> TrainableProduct:
    """Random twiddles and logits (logits ~ N(0, 1)) for gradient checks."""
    k, r = parse_arch(arch)
    t = TrainableProduct(N, k, r, field, tie_logits, extra_perm, post_real_part)
    t.init_random(rng)
    for slot in t.slots():
        t.set_logits(slot, rng.normal(0.0, 1.0, slot.size))
    return t


def gradient_check(model: TrainableProduct, target: np.ndarray, step: float = 1e-5,
                   entropy_weight: float = 0.0) -> float:
    """max |analytic - central difference| / max |central difference| over all parameters."""
    theta = model.theta.copy()
    _, _, grad = model.loss_and_grad(target, entropy_weight)
    fd = np.zeros_like(grad)
    try:
        for i in np.nonzero(model.trainable)[0]:
            model.theta[:] = theta
            model.theta[i] += step
            up = model.loss_and_grad(target, entropy_weight)[0]
            model.theta[:] = theta
            model.theta[i] -= step
            down = model.loss_and_grad(target, entropy_weight)[0]
            fd[i] = (up - down) / (2 * step)
    finally:
        model.theta[:] = theta
    scale = float(np.max(np.abs(fd)))
    if scale == 0.0:
        return float(np.max(np.abs(grad)))
    return float(np.max(np.abs(fd - grad)) / scale)
