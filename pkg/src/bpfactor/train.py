"""Adam training of (BP)^k_r models against dense targets, and the trial search.

Training runs in two phases. The relaxed phase optimizes twiddles and logits
together. Once every learnable permutation probability is within
``harden_margin`` of 0 or 1 the permutations are rounded and frozen, Adam is
restarted, and only the twiddles keep training. Without this, the twiddles
keep compensating for a slightly mixed permutation and the loss creeps down
very slowly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import exact
from .model import BPProductModel, TrainableProduct, hardened_permutations, model_rmse, parse_arch
from .numeric import Rng, derive_seed
from .transforms import TransformSpec, generate, is_real

LR_RANGE = (1e-4, 0.5)


class Divergence(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; returns new params and advances ``state``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    if not np.all(np.isfinite(grads)):
        raise Divergence("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * grads * grads
    mhat = state.m / (1 - b1**state.t)
    vhat = state.v / (1 - b2**state.t)
    return params - lr * mhat / (np.sqrt(vhat) + state.eps)


def default_max_steps(N: int) -> int:
    """20000 up to N = 64, doubled for every further doubling of N."""
    steps = 20000
    n = 64
    while n < N:
        n *= 2
        steps *= 2
    return steps


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    max_steps: int = 20000
    seed: int = 0
    tie_logits: bool = False
    field: str = "complex"
    early_stop_rmse: float = 1e-4
    entropy_weight: float = 0.0
    grad_clip: float | None = None
    harden_margin: float | None = 0.05
    plateau_window: int | None = 1000
    trace_every: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.field not in ("real", "complex"):
            raise ValueError(f"field must be real or complex, got {self.field!r}")


@dataclass
class TrainResult:
    final_rmse: float
    steps_used: int
    model: BPProductModel
    hardened_permutations: list
    rounding_distance: float
    learned_probabilities: list
    loss_trace: list
    wall_time: float
    config: TrainConfig
    arch: str = "bp"
    transform: dict = field(default_factory=dict)
    diverged: bool = False
    hardened_at: int | None = None
    search_log: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "final_rmse": self.final_rmse,
            "steps_used": self.steps_used,
            "arch": self.arch,
            "transform": self.transform,
            "diverged": self.diverged,
            "hardened_at": self.hardened_at,
            "rounding_distance": self.rounding_distance,
            "hardened_permutations": [p.to_list() for p in self.hardened_permutations],
            "learned_probabilities": [np.asarray(p).tolist() for p in self.learned_probabilities],
            "wall_time": self.wall_time,
            "config": asdict(self.config),
            "model": self.model.to_json(),
            "search_log": self.search_log,
        }

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "rmse"])
        for step, rmse in self.loss_trace:
            w.writerow([step, f"{rmse:.10e}"])
        return buf.getvalue()


def model_layout(spec: TransformSpec, arch: str, config: TrainConfig) -> dict:
    """Architecture details for a target.

    DCT/DST get an extra input permutation; real targets fitted with complex
    entries keep the real part of the output.
    """
    k, r = parse_arch(arch)
    real_target = is_real(spec.kind)
    extra = spec.kind in ("dct", "dst")
    return {
        "N": spec.N,
        "k": k,
        "r": r,
        "field": config.field,
        "tie_logits": config.tie_logits,
        "extra_perm": extra,
        "post_real_part": real_target and config.field == "complex",
        # starts at the even / reversed-odd reordering used by FFT-based DCT and DST
        "extra_init": exact.even_then_reversed_odd_choices(spec.N * r) if extra else None,
    }


class Trainer:
    """Resumable training loop; ``run(n)`` advances by up to n steps."""

    def __init__(self, target: np.ndarray, model: TrainableProduct, config: TrainConfig):
        self.target = target
        self.model = model
        self.config = config
        self.adam = AdamState.zeros(model.size)
        self.step = 0
        self.rmse = math.inf
        self.trace = []
        self.diverged = False
        self.done = False
        self.hardened_at = None
        self.learned_probs = None
        self.wall = 0.0
        self._mark = (0, math.inf)
        if not model.trainable.any():
            self.done = True
        elif all(s.frozen for s in model.slots()):
            self.hardened_at = 0

    def _maybe_harden(self) -> None:
        margin = self.config.harden_margin
        if margin is None or self.hardened_at is not None:
            return
        peaked = self.model.max_rounding_distance(active_only=True) <= margin
        stalled = False
        window = self.config.plateau_window
        if window and self.step - self._mark[0] >= window:
            # less than a 2x improvement over a whole window: round now
            stalled = self.rmse > 0.5 * self._mark[1]
            self._mark = (self.step, self.rmse)
        if peaked or stalled:
            self.learned_probs = [np.array(self.model.probabilities(s)) for s in self.model.slots()]
            self.model.freeze_permutations()
            self.adam = AdamState.zeros(self.model.size)
            self.hardened_at = self.step

    def run(self, steps: int) -> None:
        cfg = self.config
        t0 = time.perf_counter()
        end = min(self.step + steps, cfg.max_steps)
        while not self.done:
            try:
                obj, mse, grad = self.model.loss_and_grad(self.target, cfg.entropy_weight)
                if not math.isfinite(obj):
                    raise Divergence("non-finite loss")
            except (Divergence, FloatingPointError):
                self.diverged = True
                self.done = True
                break
            self.rmse = math.sqrt(mse)
            if self.step % cfg.trace_every == 0:
                self.trace.append((self.step, self.rmse))
            if self.rmse < cfg.early_stop_rmse or self.step >= cfg.max_steps:
                self.done = True
                break
            if self.step >= end:
                break
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.grad_clip:
                    grad *= cfg.grad_clip / norm
            try:
                self.model.theta = adam_step(self.adam, self.model.theta, grad, cfg.learning_rate)
            except Divergence:
                self.diverged = True
                self.done = True
                break
            self.step += 1
            self._maybe_harden()
        if self.trace and self.trace[-1][0] != self.step and math.isfinite(self.rmse):
            self.trace.append((self.step, self.rmse))
        self.wall += time.perf_counter() - t0

    def result(self, arch: str = "bp", transform: dict | None = None) -> TrainResult:
        snap = self.model.snapshot()
        perms, dist = hardened_permutations(snap)
        learned = self.learned_probs
        if learned is None:
            learned = [np.array(self.model.probabilities(s)) for s in self.model.slots()]
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                rmse = model_rmse(snap, self.target)
        except FloatingPointError:
            rmse = math.inf
        if not math.isfinite(rmse):
            self.diverged = True
            rmse = math.inf
        return TrainResult(
            final_rmse=rmse,
            steps_used=self.step,
            model=snap,
            hardened_permutations=perms,
            rounding_distance=dist,
            learned_probabilities=learned,
            loss_trace=list(self.trace),
            wall_time=self.wall,
            config=self.config,
            arch=arch,
            transform=transform or {},
            diverged=self.diverged,
            hardened_at=self.hardened_at,
        )


def make_trainer(spec: TransformSpec, arch: str, config: TrainConfig, warm_start: BPProductModel | None = None) -> Trainer:
    target = generate(spec)
    if warm_start is not None:
        model = TrainableProduct.from_snapshot(warm_start)
    else:
        lay = model_layout(spec, arch, config)
        model = TrainableProduct(**lay)
        model.init_random(Rng(config.seed))
    if not model.complex and np.iscomplexobj(target):
        raise ValueError(f"{spec.kind} is complex; train it with field='complex'")
    if not model.complex:
        target = np.real(target)
    return Trainer(target, model, config)


def train(spec: TransformSpec, arch: str = "bp", config: TrainConfig = TrainConfig(),
          warm_start: BPProductModel | None = None) -> TrainResult:
    """Run up to ``config.max_steps`` Adam steps; stops early below ``early_stop_rmse``."""
    tr = make_trainer(spec, arch, config, warm_start)
    tr.run(config.max_steps)
    return tr.result(arch, spec.metadata())


def warm_start_fft(N: int) -> BPProductModel:
    """Trainable snapshot holding the exact FFT factorization (raw scaling)."""
    return exact.fft_bp(N).to_model()


def harden_and_refit(result: TrainResult, refit_steps: int, spec: TransformSpec | None = None) -> TrainResult:
    """Round every permutation, freeze it and re-optimize the twiddles only."""
    target = generate(spec) if spec is not None else None
    if target is None:
        kind = result.transform.get("kind")
        if kind is None:
            raise ValueError("result carries no transform metadata; pass spec")
        spec = TransformSpec(kind, result.transform["N"], result.transform.get("scaling", "normalized"),
                             result.transform.get("seed", 0))
        target = generate(spec)
    model = TrainableProduct.from_snapshot(result.model)
    _, dist = hardened_permutations(result.model)
    model.freeze_permutations()
    if not model.complex:
        target = np.real(target)
    cfg = replace(result.config, max_steps=refit_steps, harden_margin=None)
    tr = Trainer(target, model, cfg)
    tr.hardened_at = 0
    tr.run(refit_steps)
    out = tr.result(result.arch, result.transform)
    out.rounding_distance = dist
    out.learned_probabilities = result.learned_probabilities
    out.search_log = result.search_log
    return out


# -- search ------------------------------------------------------------------


def sample_trial(master_seed: int, index: int) -> dict:
    """Hyperparameters for trial ``index``: its own stream from (master seed, index)."""
    seed = derive_seed(master_seed, index)
    rng = Rng(seed)
    lo, hi = LR_RANGE
    lr = math.exp(math.log(lo) + rng.uniform() * (math.log(hi) - math.log(lo)))
    tie = rng.uniform() < 0.5
    init_seed = int(rng.next_u64())
    return {"trial": index, "seed": seed, "init_seed": init_seed, "learning_rate": lr, "tie_logits": tie}


def _rank_key(tr: Trainer, idx: int):
    rmse = tr.rmse if (math.isfinite(tr.rmse) and not tr.diverged) else math.inf
    return (rmse, idx)


def search(spec: TransformSpec, arch: str = "bp", budget: int = 16, master_seed: int = 0,
           max_steps: int | None = None, base: TrainConfig | None = None) -> TrainResult:
    """Successive-halving random search.

    Every trial runs for a quarter of ``max_steps``; the best quarter of the
    trials (by RMSE, ties by index) then continues to ``max_steps``. Returns
    the best trial's result with the full search log attached.
    """
    if budget < 4:
        raise ValueError("budget must be at least 4 trials")
    if max_steps is None:
        max_steps = default_max_steps(spec.N)
    base = base or TrainConfig()
    trainers = []
    params = []
    for i in range(budget):
        hp = sample_trial(master_seed, i)
        cfg = replace(base, learning_rate=hp["learning_rate"], tie_logits=hp["tie_logits"],
                      seed=hp["init_seed"], max_steps=max_steps)
        params.append(hp)
        trainers.append(make_trainer(spec, arch, cfg))

    rung = max(1, max_steps // 4)
    for tr in trainers:
        tr.run(rung)
    order = sorted(range(budget), key=lambda i: _rank_key(trainers[i], i))
    keep = order[: max(1, budget // 4)]
    for i in keep:
        trainers[i].run(max_steps)

    best = min(range(budget), key=lambda i: _rank_key(trainers[i], i))
    log = []
    for i, (tr, hp) in enumerate(zip(trainers, params)):
        rec = dict(hp)
        rec.update({
            "budget": tr.step,
            "promoted": i in keep,
            "rmse": tr.rmse if math.isfinite(tr.rmse) else None,
            "diverged": tr.diverged,
            "hardened_at": tr.hardened_at,
        })
        log.append(rec)
    res = trainers[best].result(arch, spec.metadata())
    res.search_log = log
    res.diverged = all(tr.diverged for tr in trainers)
    return res


def worker_count(threads: int | None = None) -> int:
    env = os.environ.get("BF_THREADS")
    if env:
        return max(1, int(env))
    return max(1, threads or 1)


def dumps(result: TrainResult) -> str:
    return json.dumps(result.to_json(), indent=1, sort_keys=True)
