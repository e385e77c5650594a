import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bpfactor import permutation as pm
from bpfactor.numeric import Rng

sizes = st.sampled_from([2, 4, 8, 16, 32, 64])


def logit(p):
    return math.log(p / (1 - p))


def random_stack(N, seed, tied=False, scale=2.0):
    m = int(math.log2(N))
    return pm.RelaxedPermutationStack(N, Rng(seed).normal(0, scale**2, (1 if tied else m) * 3), tied)


def test_elementary_a():
    assert pm.apply_elementary("a", 4, np.arange(4)).tolist() == [0, 2, 1, 3]


def test_elementary_b():
    assert pm.apply_elementary("b", 4, np.arange(4)).tolist() == [1, 0, 2, 3]
    assert pm.apply_elementary("b", 2, np.arange(2)).tolist() == [0, 1]


def test_elementary_c():
    assert pm.apply_elementary("c", 4, np.arange(4)).tolist() == [0, 1, 3, 2]


def test_elementary_is_chunkwise():
    assert pm.apply_elementary("a", 4, np.arange(8)).tolist() == [0, 2, 1, 3, 4, 6, 5, 7]


@pytest.mark.parametrize("chunk", [0, 3, 6, 16])
def test_elementary_invalid_chunk(chunk):
    with pytest.raises(ValueError):
        pm.apply_elementary("a", chunk, np.arange(8))


def test_relaxed_all_off_is_identity():
    x = np.arange(8.0) * 1.5
    s = pm.RelaxedPermutationStack(8, np.full((3, 3), -np.inf))
    assert np.array_equal(pm.relaxed_apply(s, x), x)


def test_relaxed_a_everywhere_is_bit_reversal():
    s = pm.bit_reversal_stack(8)
    assert pm.relaxed_apply(s, np.arange(8.0)).tolist() == [0, 4, 2, 6, 1, 5, 3, 7]


def test_relaxed_half_a_on_pair_is_identity():
    s = pm.RelaxedPermutationStack(2, [[0.0, -np.inf, -np.inf]])
    assert pm.relaxed_apply(s, np.array([2.0, 5.0])).tolist() == [2.0, 5.0]


def test_relaxed_length_mismatch():
    with pytest.raises(ValueError):
        pm.relaxed_apply(pm.zeros(8), np.ones(4))


def test_expand_zero_probability_is_identity():
    assert np.array_equal(pm.expand_dense(pm.identity_stack(16)), np.eye(16))


def test_expand_hard_is_permutation_matrix():
    c = np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]], dtype=bool)
    P = pm.expand_dense(pm.from_choices(8, c))
    assert set(np.unique(P)) <= {0.0, 1.0}
    assert np.all(P.sum(0) == 1) and np.all(P.sum(1) == 1)


def test_expand_matches_relaxed_apply_on_basis():
    s = random_stack(8, 3)
    cols = np.array([pm.relaxed_apply(s, e) for e in np.eye(8)]).T
    assert np.abs(cols - pm.expand_dense(s)).max() < 1e-14


def test_step_order_reference():
    # independent reference: dense mixtures composed in the documented order
    N = 8
    s = random_stack(N, 4)
    p = s.probabilities()
    M = np.eye(N)
    for k in range(3):
        for f, kind in enumerate("abc"):
            P = np.eye(N)[pm.elementary(kind, N >> k, N)]
            M = (p[k, f] * P + (1 - p[k, f]) * np.eye(N)) @ M
    assert np.abs(M - pm.expand_dense(s)).max() < 1e-14


@given(sizes, st.integers(0, 2**32 - 1), st.booleans())
def test_doubly_stochastic(N, seed, tied):
    P = pm.expand_dense(random_stack(N, seed, tied))
    assert np.abs(P.sum(0) - 1).max() < 1e-12
    assert np.abs(P.sum(1) - 1).max() < 1e-12
    assert P.min() >= -1e-15


@given(sizes, st.integers(0, 2**32 - 1))
def test_harden_matches_infinite_logits(N, seed):
    s = random_stack(N, seed)
    hard, _ = pm.harden(s)
    assert np.array_equal(hard.matrix(), pm.expand_dense(pm.hardened_stack(s)))


@given(sizes, st.integers(0, 2**32 - 1))
def test_hard_relaxed_apply_is_exact_copy(N, seed):
    rng = Rng(seed)
    c = np.array([rng.uniform() < 0.5 for _ in range(3 * int(math.log2(N)))])
    s = pm.from_choices(N, c)
    x = rng.normal(0, 1, N)
    hard, dist = pm.harden(s)
    assert dist == 0.0
    assert np.array_equal(pm.relaxed_apply(s, x), hard.apply(x))


def test_harden_peaked_bit_reversal():
    lg = [[logit(0.99), logit(0.01), logit(0.02)]] * 3
    hard, dist = pm.harden(pm.RelaxedPermutationStack(8, lg))
    assert hard.to_list() == [0, 4, 2, 6, 1, 5, 3, 7]
    assert dist == pytest.approx(0.02, abs=1e-12)


def test_harden_half_rounds_up():
    lg = np.full((3, 3), -np.inf)
    lg[0, 0] = 0.0
    hard, dist = pm.harden(pm.RelaxedPermutationStack(8, lg))
    assert hard.to_list() == pm.elementary("a", 8, 8).tolist()
    assert dist == 0.5


def test_harden_identity_logits():
    lg = np.full((3, 3), -4.0)
    lg[1, 2] = -3.0
    hard, dist = pm.harden(pm.RelaxedPermutationStack(8, lg))
    assert hard == pm.identity_perm(8)
    assert dist == pytest.approx(1 / (1 + math.exp(3.0)))


def test_bit_reversal_examples():
    assert pm.bit_reversal(8).to_list() == [0, 4, 2, 6, 1, 5, 3, 7]
    assert pm.bit_reversal(2).to_list() == [0, 1]
    with pytest.raises(ValueError):
        pm.bit_reversal(12)


@pytest.mark.parametrize("N", [4, 16, 256])
def test_bit_reversal_involution(N):
    b = pm.bit_reversal(N)
    assert b.compose(b) == pm.identity_perm(N)
    for i in range(N):
        assert b.perm[i] == int(format(i, f"0{N.bit_length() - 1}b")[::-1], 2)


def test_eight_outcomes_per_step():
    outs = pm.step_outcomes(8)
    assert len(outs) == 8
    assert len(set(outs)) == 8


def test_entropy_examples():
    assert pm.entropy(pm.bit_reversal_stack(8)) == 0.0
    lg = np.full((3, 3), -np.inf)
    lg[1, 1] = 0.0
    assert pm.entropy(pm.RelaxedPermutationStack(8, lg)) == pytest.approx(math.log(2))
    tied = pm.RelaxedPermutationStack(8, [[0.3, -1.0, 2.0]], tied=True)
    p = 1 / (1 + np.exp(-np.array([0.3, -1.0, 2.0])))
    H = -np.sum(p * np.log(p) + (1 - p) * np.log(1 - p))
    assert pm.entropy(tied) == pytest.approx(H)


def test_tied_levels_share_probabilities():
    s = pm.RelaxedPermutationStack(16, [[0.1, 0.2, 0.3]], tied=True)
    p = s.probabilities()
    assert p.shape == (4, 3)
    assert np.all(p == p[0])
    assert s.num_params == 3


def test_tied_shape_checked():
    with pytest.raises(ValueError):
        pm.RelaxedPermutationStack(8, np.zeros((3, 3)), tied=True)


def test_hard_permutation_bijection_checked():
    with pytest.raises(ValueError):
        pm.HardPermutation([0, 0, 1])


def test_json_roundtrip_with_infinities():
    s = pm.from_choices(8, np.eye(3, dtype=bool))
    back = pm.RelaxedPermutationStack.from_json(json.dumps(s.to_json()))
    assert np.array_equal(back.logits, s.logits) and back.tied == s.tied


def test_inert_last_step():
    mask = pm.inert_steps(16)
    assert mask[-1].all() and not mask[:-1].any()
    for kind in "abc":
        assert pm.elementary(kind, 2, 16).tolist() == list(range(16))
