import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmsg import _kernels
from dmsg.buffer import (GaussianStats, MemoryBuffers, buffer_score, buffer_w2_diagnostic, buffers_json,
                         gaussian_w2_sq, greedy_select, marginal_gain, prob_distance, set_score)
from dmsg.numerics.ops import _softmax
from tests.oracles import selection as oracle

# ---------------------------------------------------------------------------
# distances and scores
# ---------------------------------------------------------------------------


def test_prob_distance_examples():
    P = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.6, 0.4], [1.0, 0.0]])
    assert prob_distance(4, [0], P) == 0.0
    assert prob_distance(1, [0], P) == pytest.approx(math.sqrt(2), abs=1e-15)
    assert prob_distance(3, [0, 2], P) == pytest.approx(math.sqrt(0.02), abs=1e-12)
    assert prob_distance(3, [0, 2], P) == pytest.approx(0.141421, abs=1e-6)
    with pytest.raises(ValueError):
        prob_distance(0, [], P)


def test_score_coincident_singletons():
    P = np.array([[0.3, 0.7], [0.3, 0.7]])
    bufs = {0: [0], 1: [1]}
    assert buffer_score(0, bufs, P) == 0.0
    assert buffer_score(1, bufs, P) == 0.0


def test_score_antipodal_singletons():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert buffer_score(0, {0: [0], 1: [1]}, P) == pytest.approx(math.sqrt(2), abs=1e-15)


def test_score_duplicate_member_intra_zero():
    P = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    # both copies see each other at distance 0, so only inter terms remain
    assert buffer_score(0, {0: [0, 1], 1: [2]}, P) == pytest.approx(2 * math.sqrt(2))


def test_score_needs_two_buffers():
    P = np.eye(2)
    with pytest.raises(ValueError):
        buffer_score(0, {0: [0], 1: []}, P)
    with pytest.raises(ValueError):
        buffer_score(1, {0: [0], 1: []}, P)


def test_score_matches_oracle(rng):
    P = rng.dirichlet(np.ones(4), size=30)
    bufs = {0: [0, 1, 2], 1: [5, 9], 2: [], 3: [20, 21, 22, 23]}
    for c in (0, 1, 3):
        assert buffer_score(c, bufs, P) == pytest.approx(oracle.set_score(bufs, P, [c]), rel=1e-12)
    assert set_score(bufs, P) == pytest.approx(oracle.set_score(bufs, P, [0, 1, 3]), rel=1e-12)


def test_gain_duplicate_of_singleton_is_inter_term_only():
    P = np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    bufs = {0: [0], 1: [2]}
    inter = math.sqrt(2)  # v to buffer 1, normaliser 1/(M-1) = 1
    assert marginal_gain(1, 0, bufs, P) == pytest.approx(inter, abs=1e-15)


def test_gain_into_singleton_counts_both_intra_distances():
    P = np.array([[1.0, 0.0], [0.8, 0.2], [0.0, 1.0]])
    bufs = {0: [0], 1: [2]}
    d01 = math.sqrt(0.08)
    inter_v = math.hypot(0.8, 0.8)
    before = oracle.set_score(bufs, P, [0, 1])
    after = oracle.set_score({0: [0, 1], 1: [2]}, P, [0, 1])
    g = marginal_gain(1, 0, bufs, P)
    assert g == pytest.approx(after - before, abs=1e-12)
    # both members gain the new closest-pair distance; v adds its inter term;
    # buffer 1's member now finds v closer than node 0
    assert g == pytest.approx(2 * d01 + inter_v + (inter_v - math.sqrt(2)), abs=1e-12)


def test_gain_rejects_member():
    with pytest.raises(ValueError):
        marginal_gain(0, 0, {0: [0], 1: [1]}, np.eye(2))


def test_equidistant_candidates_tie_to_lowest_id():
    # swapping columns 1 and 2 maps candidate 1 onto 2 and fixes nodes 0 and 3
    P = np.array([[0.6, 0.2, 0.2], [0.5, 0.3, 0.2], [0.5, 0.2, 0.3], [0.2, 0.4, 0.4]])
    bufs = {0: [0], 1: [3]}
    assert marginal_gain(1, 0, bufs, P) == pytest.approx(marginal_gain(2, 0, bufs, P), abs=1e-12)
    out = greedy_select(MemoryBuffers(2, {1: [3]}), {0: [2, 1, 0]}, P, 2)
    assert out.buffers[0] == [0, 1]


# ---------------------------------------------------------------------------
# greedy selection
# ---------------------------------------------------------------------------


def test_b1_takes_most_confident_node(rng):
    P = rng.dirichlet(np.ones(3), size=30)
    cand = {0: list(range(10)), 1: list(range(10, 20)), 2: list(range(20, 30))}
    out = greedy_select(None, cand, P, 1)
    for c, ids in cand.items():
        assert out.buffers[c] == [ids[int(np.argmax(P[ids, c]))]]


def test_small_class_taken_whole(rng):
    P = rng.dirichlet(np.ones(2), size=10)
    out = greedy_select(None, {0: [0, 1, 2], 1: list(range(3, 10))}, P, 5)
    assert sorted(out.buffers[0]) == [0, 1, 2]
    assert len(out.buffers[1]) == 5


def test_columns_mapping(rng):
    # class ids 7 and 9 live in columns 0 and 1
    P = rng.dirichlet(np.ones(2), size=8)
    out = greedy_select(None, {7: [0, 1, 2, 3], 9: [4, 5, 6, 7]}, P, 1, columns={7: 0, 9: 1})
    assert out.buffers[7] == [int(np.argmax(P[:4, 0]))]
    assert out.buffers[9] == [4 + int(np.argmax(P[4:, 1]))]


def test_select_validation(rng):
    P = rng.dirichlet(np.ones(2), size=4)
    with pytest.raises(ValueError):
        greedy_select(None, {0: []}, P, 2)
    with pytest.raises(ValueError):
        greedy_select(None, {0: [0, 1]}, P, 0)
    with pytest.raises(ValueError):
        greedy_select(MemoryBuffers(2, {0: [0]}), {0: [1]}, P, 2)


def test_previous_buffers_untouched(rng):
    P = rng.dirichlet(np.ones(4), size=40)
    prev = MemoryBuffers(3, {0: [0, 1, 2], 1: [10, 11]})
    out = greedy_select(prev, {2: list(range(20, 30)), 3: list(range(30, 40))}, P, 3)
    assert out.buffers[0] == [0, 1, 2] and out.buffers[1] == [10, 11]
    assert prev.buffers == {0: [0, 1, 2], 1: [10, 11]}


def test_two_by_four_against_brute_force():
    r = np.random.default_rng(99)
    P = np.vstack([r.dirichlet([4, 1], size=4), r.dirichlet([1, 4], size=4)])
    cand = {0: [0, 1, 2, 3], 1: [4, 5, 6, 7]}
    out = greedy_select(None, cand, P, 2)
    best = oracle.brute_force({}, cand, P, 2)
    assert oracle.set_score(out.buffers, P, [0, 1]) >= (1 - 1 / math.e) * best


def _reference_greedy(prev, cand, P, b):
    """Algorithm as specified, with every gain recomputed from scratch."""
    bufs = {k: list(v) for k, v in prev.items()}
    for c in cand:
        bufs[c] = [int(cand[c][np.argmax(P[cand[c], c])])]
    while any(len(bufs[c]) < min(b, len(cand[c])) for c in cand):
        for c in cand:
            if len(bufs[c]) >= min(b, len(cand[c])):
                continue
            gains = [(marginal_gain(v, c, bufs, P), v) for v in cand[c] if v not in bufs[c]]
            top = max(g for g, _ in gains)
            bufs[c].append(min(v for g, v in gains if g >= top - 1e-9 * max(1.0, abs(top))))
    return bufs


@pytest.mark.parametrize("seed", range(25))
def test_cached_greedy_equals_recomputation(seed):
    r = np.random.default_rng([31, seed])
    n_novel, n_prev = int(r.integers(2, 4)), int(r.integers(0, 3))
    P = r.dirichlet(np.ones(n_novel + n_prev), size=120)
    prev = {j: list(range(j * 5, j * 5 + int(r.integers(1, 5)))) for j in range(n_prev)}
    cand = {n_prev + i: list(range(30 + 30 * i, 30 + 30 * i + int(r.integers(3, 30)))) for i in range(n_novel)}
    b = int(r.integers(1, 8))
    out = greedy_select(MemoryBuffers(b, {k: list(v) for k, v in prev.items()}), cand, P, b)
    assert out.buffers == _reference_greedy(prev, cand, P, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 4))
def test_selection_invariants(seed, b, k):
    r = np.random.default_rng(seed)
    sizes = r.integers(1, 12, size=k)
    P = r.dirichlet(np.ones(k), size=int(sizes.sum()))
    starts = np.concatenate([[0], np.cumsum(sizes)])
    cand = {c: list(range(starts[c], starts[c + 1])) for c in range(k)}
    out = greedy_select(None, cand, P, b)
    again = greedy_select(None, cand, P, b)
    assert out.buffers == again.buffers
    for c, ids in out.buffers.items():
        assert len(ids) == min(b, len(cand[c]))
        assert len(set(ids)) == len(ids)
        assert set(ids) <= set(cand[c])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40), st.integers(0, 6), st.integers(2, 5))
def test_kernels_match_dense_formulas(seed, m, r_, cols):
    r = np.random.default_rng(seed)
    A, B = r.random((m, cols)), r.random((r_, cols))
    nearest = np.where(r.random(r_) < 0.3, np.inf, r.random(r_))
    D = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)) if r_ else np.zeros((m, 0))
    md = D.min(axis=1) if r_ else np.full(m, np.inf)
    np.testing.assert_allclose(_kernels.min_dist(A, B), md, rtol=1e-12)
    fresh = np.isinf(nearest)
    delta = np.where(fresh, D, np.minimum(D, np.where(fresh, 0, nearest)) - np.where(fresh, 0, nearest)).sum(1)
    np.testing.assert_allclose(_kernels.fold_delta(A, B, nearest), delta, rtol=1e-12, atol=1e-12)
    intra = (md if r_ else 0.0) + delta
    np.testing.assert_allclose(_kernels.intra_gains(A, B, nearest), intra, rtol=1e-12, atol=1e-12)


def test_buffers_json_stable():
    mb = MemoryBuffers(2, {3: [7, 1], 1: [4]})
    assert buffers_json([(1, mb)]) == '[\n {\n  "task": 1,\n  "buffers": {\n   "1": [\n    4\n   ],\n   "3": [\n    7,\n    1\n   ]\n  }\n }\n]'


def test_memory_buffers_helpers():
    mb = MemoryBuffers(3, {0: [1, 2], 1: [], 2: [5]})
    ids, labels = mb.nodes_and_labels()
    assert ids.tolist() == [1, 2, 5] and labels.tolist() == [0, 0, 2]
    assert mb.non_empty() == [0, 2] and mb.total() == 3


# ---------------------------------------------------------------------------
# W2
# ---------------------------------------------------------------------------


def test_w2_identity(rng):
    p = GaussianStats(rng.standard_normal(4), rng.random(4))
    assert gaussian_w2_sq(p, p) == 0.0


def test_w2_mean_shift():
    v = np.array([0.3, 2.0])
    assert gaussian_w2_sq(GaussianStats([0, 0], v), GaussianStats([3, 4], v)) == 25.0


def test_w2_one_dim():
    assert gaussian_w2_sq(GaussianStats([1.0], [4.0]), GaussianStats([1.0], [1.0])) == 1.0


def test_w2_validation():
    with pytest.raises(ValueError):
        GaussianStats([0.0], [-1.0])
    with pytest.raises(ValueError):
        gaussian_w2_sq(GaussianStats([0.0], [1.0]), GaussianStats([0.0, 0.0], [1.0, 1.0]))


def test_diagnostic_whole_class_is_zero(rng):
    X = rng.standard_normal((30, 3))
    assert buffer_w2_diagnostic(X, X) == pytest.approx(0.0, abs=1e-24)


def test_diagnostic_single_point_at_mean(rng):
    X = rng.standard_normal((40, 3))
    with pytest.warns(RuntimeWarning, match="singleton"):
        w = buffer_w2_diagnostic(X, X.mean(axis=0, keepdims=True))
    assert w == pytest.approx(X.var(axis=0, ddof=1).sum(), rel=1e-12)


def test_diagnostic_validation():
    with pytest.raises(ValueError):
        buffer_w2_diagnostic(np.zeros((0, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        buffer_w2_diagnostic(np.zeros((3, 2)), np.zeros((2, 3)))


def _w2_trial(seed, n=60, b=20, k=3, d=8):
    # probabilities from the Bayes head of a Gaussian class mixture
    r = np.random.default_rng([77, seed])
    mu = 1.5 * r.standard_normal((k, d))
    Z = np.concatenate([mu[c] + r.standard_normal((n, d)) for c in range(k)])
    y = np.repeat(np.arange(k), n)
    P = _softmax(Z @ mu.T - 0.5 * (mu ** 2).sum(axis=1))
    cand = {c: np.flatnonzero(y == c) for c in range(k)}
    chosen = greedy_select(None, cand, P, b).buffers[0]
    Zc = Z[cand[0]]
    central = cand[0][np.argsort(np.linalg.norm(Zc - Zc.mean(axis=0), axis=1), kind="stable")[:b]]
    return buffer_w2_diagnostic(Zc, Z[chosen]), buffer_w2_diagnostic(Zc, Z[central])


def test_diverse_buffers_beat_central_cluster():
    # buffers hold about a third of each class's candidates
    wins = sum(g <= c for g, c in (_w2_trial(s) for s in range(50)))
    assert wins >= 45
