import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from nltk.translate.bleu_score import sentence_bleu

from vdcal.cutoff import retain, top_k
from vdcal.metrics import (MetricError, PolicyError, SequenceDistribution, bleu, decomposition_factors, diversity,
                           embedding_diversity, local_precision, local_recall, order_calibration_check, self_bleu,
                           sequence_precision, sequence_recall, shape_calibration_deviation, validity)
from vdcal.ranked_dist import RankedDistribution
from vdcal.valid_set import digits_unconstrained, from_sequences

A, B = 0, 1
AA_AB = from_sequences([[A, A], [A, B]])


def test_sequence_distribution_mass_checked():
    with pytest.raises(MetricError):
        SequenceDistribution({(0,): 0.5})


def test_validity_examples():
    vs = from_sequences([[0], [1]])
    assert validity(SequenceDistribution({(0,): 0.4, (1,): 0.6}), vs) == 1.0
    assert validity(SequenceDistribution({(2,): 1.0}), vs) == 0.0
    digits = digits_unconstrained(2, 3)
    uni = SequenceDistribution({s: 1 / 9 for s in digits.sequences()})
    assert validity(uni, digits) == pytest.approx(1.0, abs=1e-15)


def test_diversity_examples():
    vs = digits_unconstrained(1, 10)
    assert diversity(SequenceDistribution({(i,): 0.1 for i in range(10)}), vs) == pytest.approx(1.0, abs=1e-12)
    assert diversity(SequenceDistribution({(3,): 1.0}), vs) == pytest.approx(0.1, abs=1e-15)
    two = from_sequences([[0], [1]])
    p = 0.7311 / (0.7311 + 0.2689)
    d = diversity(SequenceDistribution({(0,): p, (1,): 1 - p}), two)
    oracle = math.exp(-(p * math.log(p) + (1 - p) * math.log(1 - p))) / 2
    assert d == pytest.approx(oracle, abs=1e-12)
    # quoted value 0.8951 is rounded from an already-rounded entropy
    assert d == pytest.approx(0.8951, abs=2e-4)


def test_diversity_undefined_at_zero_validity():
    with pytest.raises(MetricError):
        diversity(SequenceDistribution({(5,): 1.0}), from_sequences([[0]]))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=12))
def test_diversity_one_iff_uniform(w):
    w = np.asarray(w)
    if w.sum() <= 0:
        return
    vs = digits_unconstrained(1, len(w))
    p = w / w.sum()
    div = diversity(SequenceDistribution({(i,): float(x) for i, x in enumerate(p)}), vs)
    if np.allclose(p, 1 / len(p), atol=1e-15):
        assert abs(div - 1) <= 1e-9
    if abs(div - 1) <= 1e-9:
        # ln n - H = KL(p || uniform) <= ~1e-9, so by Pinsker the TV distance is below 1e-4
        assert 0.5 * np.abs(p - 1 / len(p)).sum() <= 1e-4


def test_local_precision_examples():
    assert local_precision({1, 2}, {1, 2}) == 1
    assert local_precision({1, 2}, {3}) == 0
    assert local_precision({0, 1, 2, 3}, {0, 1, 2}) == 0.75


def test_local_recall_examples():
    vs = from_sequences([[0, 0], [0, 1], [1, 0]])
    assert local_recall({0, 1, 5}, vs) == 1
    assert local_recall({7}, vs) == 0
    assert local_recall({0}, vs) == pytest.approx(2 / 3, abs=0)
    with pytest.raises(MetricError):
        local_recall({0}, vs, (3,))


def test_retained_set_input():
    d = RankedDistribution([0.5, 0.3, 0.2])
    rs = retain(d, top_k(2))
    assert local_precision(rs, {0}) == 0.5


def test_sequence_pr_no_filter():
    everything = lambda prefix: {A, B}  # noqa: E731
    assert sequence_precision(everything, AA_AB) == 0.5
    assert sequence_recall(everything, AA_AB) == 1.0
    f = decomposition_factors(everything, AA_AB)
    assert f.alpha == (0.5, 1.0) and f.precision_product == 0.5


def test_sequence_pr_drop_b_after_a():
    policy = {(): {A, B}, (A,): {A}}
    assert sequence_recall(policy, AA_AB) == 0.5
    assert sequence_precision(policy, AA_AB) == 0.5


def test_sequence_pr_oracle():
    f = decomposition_factors(AA_AB.valid_tokens, AA_AB)
    assert sequence_precision(AA_AB.valid_tokens, AA_AB) == 1.0
    assert sequence_recall(AA_AB.valid_tokens, AA_AB) == 1.0
    assert set(f.alpha) == {1.0} and set(f.beta) == {1.0}


def test_policy_missing_prefix():
    with pytest.raises(PolicyError):
        sequence_precision({(): {A}}, AA_AB)


def test_decomposition_truncation_flag():
    # nothing valid is retained at the root: Q_S never stays valid
    f = decomposition_factors({(): {B}}, AA_AB)
    assert f.alpha == (0.0,) and f.alpha_truncated_at == 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_decomposition_property(seed):
    rng = random.Random(seed)
    vocab, d = rng.randint(2, 5), rng.randint(1, 3)
    seqs = {tuple(rng.randrange(vocab) for _ in range(d)) for _ in range(rng.randint(1, 20))}
    vs = from_sequences(seqs)
    table = {}

    def policy(prefix):
        if prefix not in table:
            table[prefix] = frozenset(rng.sample(range(vocab), rng.randint(1, vocab)))
        return table[prefix]

    f = decomposition_factors(policy, vs)
    assert abs(f.precision_product - sequence_precision(policy, vs)) <= 1e-12
    assert abs(f.recall_product - sequence_recall(policy, vs)) <= 1e-12


@given(st.integers(0, 10**6))
def test_local_recall_monotone_in_top_j(seed):
    rng = random.Random(seed)
    vs = from_sequences({(rng.randrange(6), rng.randrange(3)) for _ in range(8)})
    order = list(range(6))
    rng.shuffle(order)
    rec = [local_recall(set(order[:j]), vs) for j in range(1, 7)]
    assert all(a <= b for a, b in zip(rec, rec[1:]))


def test_order_calibration_examples():
    d = RankedDistribution([0.4, 0.3, 0.2, 0.1], (0, 1, 2, 3))
    assert order_calibration_check(d, {0, 1}).calibrated
    bad = order_calibration_check(d, {0, 2})
    assert not bad.calibrated and bad.violations >= 1
    assert order_calibration_check(d, {0, 1, 2, 3}).calibrated


def test_shape_calibration_examples():
    vs = from_sequences([[0], [1]])
    uni = RankedDistribution([0.5, 0.5], (0, 1))
    assert shape_calibration_deviation(uni, vs) == 0.0
    point = RankedDistribution([1.0, 0.0], (0, 1))
    assert shape_calibration_deviation(point, vs) == pytest.approx(0.5, abs=0)
    single = from_sequences([[0]])
    assert shape_calibration_deviation(RankedDistribution([0.9, 0.1], (0, 1)), single) == 0.0


# text diversity

def test_self_bleu_identical():
    g = [[1, 2, 3, 4, 5]] * 3
    assert self_bleu(g) == pytest.approx(1.0)


def test_self_bleu_disjoint():
    assert self_bleu([[1, 2, 3, 4], [5, 6, 7, 8]]) == 0.0


def test_bleu_matches_nltk():
    hyp = ["the", "cat", "sat", "on", "the", "mat", "today"]
    ref = ["the", "cat", "sat", "on", "a", "mat", "yesterday"]
    assert bleu(hyp, [ref]) == pytest.approx(sentence_bleu([ref], hyp), abs=1e-12)


words = st.lists(st.sampled_from("abcde"), min_size=1, max_size=12)


@settings(max_examples=200, deadline=None)
@given(words, st.lists(words, min_size=1, max_size=3))
def test_bleu_property_vs_nltk(hyp, refs):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        oracle = sentence_bleu(refs, hyp)
    assert bleu(hyp, refs) == pytest.approx(oracle, abs=1e-12)


@given(st.lists(words, min_size=2, max_size=5), st.randoms())
def test_self_bleu_permutation_invariant(gens, rnd):
    shuffled = list(gens)
    rnd.shuffle(shuffled)
    assert self_bleu(gens) == pytest.approx(self_bleu(shuffled), abs=1e-12)


def test_embedding_diversity_examples():
    assert embedding_diversity([[1.0, 0.0], [2.0, 0.0]]) == pytest.approx(0.0, abs=1e-15)
    assert embedding_diversity([[1.0, 0.0], [0.0, 1.0]]) == pytest.approx(1.0)
    assert embedding_diversity([[1.0, 0.0], [-1.0, 0.0]]) == pytest.approx(2.0)
    with pytest.raises(MetricError):
        embedding_diversity([[1.0, 0.0]])


@given(st.lists(st.lists(st.floats(0.1, 5.0), min_size=3, max_size=3), min_size=2, max_size=6),
       st.floats(0.01, 100.0))
def test_embedding_diversity_scale_invariant(vecs, c):
    v = np.asarray(vecs)
    assert embedding_diversity(v * c) == pytest.approx(embedding_diversity(v), abs=1e-12)
