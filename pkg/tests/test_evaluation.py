import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hr_oracle, mrr_oracle, sort_rank
from srsan.data import Session
from srsan.evaluation import (evaluate, hr_at_k, model_ranks, mrr_at_k, popularity_baseline,
                              rank_of_target, ranks_of_targets, report_from_ranks)
from srsan.model import ModelConfig, forward, init_params


def test_rank_examples():
    assert rank_of_target(np.array([0.1, 0.9, 0.3]), 2) == 1
    assert rank_of_target(np.zeros(5), 3) == 3


def test_rank_invalid_label():
    with pytest.raises(ValueError):
        rank_of_target(np.zeros(5), 0)
    with pytest.raises(ValueError):
        rank_of_target(np.zeros(5), 6)


def test_rank_agrees_with_sort_oracle(rng):
    # coarse integer scores force plenty of ties
    scores = rng.integers(0, 6, size=(500, 30)).astype(np.float32)
    labels = rng.integers(1, 31, size=500)
    ranks = ranks_of_targets(scores, labels)
    assert list(ranks) == [sort_rank(list(s), l) for s, l in zip(scores, labels)]


def test_metrics_hand_example():
    ranks = [1, 21, 20, 5]
    assert hr_at_k(ranks, 20) == 0.75
    assert mrr_at_k(ranks, 20) == 0.3125


def test_metric_edges():
    assert hr_at_k([1, 1, 1]) == 1.0 and mrr_at_k([1, 1]) == 1.0
    assert hr_at_k([21, 30], 20) == 0.0
    assert mrr_at_k([21], 20) == 0.0
    with pytest.raises(ValueError):
        hr_at_k([])
    with pytest.raises(ValueError):
        mrr_at_k([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=50), st.integers(1, 60))
def test_metric_properties(ranks, k):
    hr, mrr = hr_at_k(ranks, k), mrr_at_k(ranks, k)
    assert 0 <= mrr <= hr <= 1
    assert hr == pytest.approx(hr_oracle(ranks, k)) and mrr == pytest.approx(mrr_oracle(ranks, k))
    assert hr_at_k(ranks, k + 1) >= hr and mrr_at_k(ranks, k + 1) >= mrr
    rep = report_from_ranks(ranks, k)
    assert rep.n_hit <= rep.n_test == len(ranks)


def test_metrics_invariant_to_monotone_transform(rng):
    scores = rng.standard_normal((200, 40))
    labels = rng.integers(1, 41, size=200)
    base = ranks_of_targets(scores, labels)
    for f in (np.exp, lambda x: 3 * x + 7, lambda x: x ** 3):
        assert np.array_equal(ranks_of_targets(f(scores), labels), base)


@pytest.fixture(scope="module")
def tiny_model():
    cfg = ModelConfig(vocab_size=25, d=8, heads=2, seed=9)
    rng = np.random.default_rng(0)
    inst = [Session(list(rng.integers(1, 26, size=int(rng.integers(1, 6)))), int(rng.integers(1, 26)))
            for _ in range(120)]
    return cfg, init_params(cfg), inst


def test_evaluate_matches_unbatched(tiny_model):
    cfg, params, inst = tiny_model
    rep = evaluate(params, cfg, inst, k=5, batch_size=17)
    ranks = []
    for s in inst:
        scores, _ = forward(params, cfg, np.array([s.items]), np.array([len(s.items)]))
        ranks.append(sort_rank(list(scores[0]), s.label))
    assert rep.hr == hr_oracle(ranks, 5) and rep.mrr == pytest.approx(mrr_oracle(ranks, 5), abs=1e-15)


def test_evaluate_duplicate_and_full_cutoff(tiny_model):
    cfg, params, inst = tiny_model
    rep = evaluate(params, cfg, inst, k=5)
    dup = evaluate(params, cfg, inst + inst, k=5)
    assert (dup.hr, dup.mrr) == (rep.hr, pytest.approx(rep.mrr, abs=1e-15))
    assert evaluate(params, cfg, inst, k=25).hr == 1.0


def test_evaluate_vocab_mismatch(tiny_model):
    cfg, params, _ = tiny_model
    with pytest.raises(ValueError):
        model_ranks(params, cfg, [Session([1, 2], 26)])


def test_popularity_dominant_item():
    train = [Session([i], 7) for i in range(1, 10)]
    test = [Session([3], 7), Session([4, 5], 7)]
    assert popularity_baseline(train, test, k=1, vocab_size=10).hr == 1.0


def test_popularity_uniform_labels():
    V, k, n = 100, 20, 5000
    rng = np.random.default_rng(3)
    train = [Session([1], i) for i in range(1, V + 1)]  # equal counts: ties resolve by index
    test = [Session([1], int(l)) for l in rng.integers(1, V + 1, size=n)]
    rep = popularity_baseline(train, test, k, V)
    p = k / V
    assert abs(rep.hr - p) <= 3 * np.sqrt(p * (1 - p) / n)
    assert popularity_baseline(train, test, k, V) == rep
