import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from implicit_rec import evaluation
from implicit_rec.dataset import leave_one_out_split
from implicit_rec.evaluation import (EvalError, evaluate, ndcg_at_k, one_product_hit, rank_candidates,
                                     recommend_top_k)

from helpers import matrix_from_cells, random_matrix


def brute_ndcg(rank, k):
    rel = [1 if r == rank else 0 for r in range(1, k + 1)]
    dcg = sum((2 ** g - 1) / math.log2(r + 1) for r, g in enumerate(rel, start=1))
    return dcg / 1.0


def split_for(seed=0, n_users=40, n_items=150, n_neg=100):
    m = random_matrix(np.random.default_rng(seed), n_users, n_items, 0.05)
    return leave_one_out_split(m, n_neg, seed)


def test_ndcg_examples():
    assert ndcg_at_k(1, 12) == 1.0
    assert ndcg_at_k(3, 12) == 0.5
    assert ndcg_at_k(13, 12) == 0.0
    assert ndcg_at_k(3, 12) == brute_ndcg(3, 12)
    with pytest.raises(ValueError):
        ndcg_at_k(0)


def test_hit_examples():
    assert one_product_hit(12, 12) == 1
    assert one_product_hit(13, 12) == 0
    with pytest.raises(ValueError):
        one_product_hit(0)


@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 50))
def test_ndcg_monotone(r1, r2, k):
    lo, hi = sorted((r1, r2))
    assert ndcg_at_k(lo, k) >= ndcg_at_k(hi, k)
    assert 0.0 <= ndcg_at_k(hi, k) <= 1.0


def test_tie_break_by_item_index():
    rl = rank_candidates(0, 7, np.array([7, 3, 9, 1]), np.array([1.0, 1.0, 2.0, 1.0]))
    assert rl.items.tolist() == [9, 1, 3, 7]
    assert rl.position_of_positive == 4


def test_oracle_and_antioracle():
    split = split_for()
    truth = dict(split.test_positives)
    oracle = evaluate(lambda u, items: (items == truth[u]).astype(float), split)
    assert oracle.ndcg_mean == 1.0 and oracle.one_product_hit_ratio == 1.0
    anti = evaluate(lambda u, items: -(items == truth[u]).astype(float), split)
    assert anti.ndcg_mean == 0.0 and anti.one_product_hit_ratio == 0.0


def test_hit_ratio_is_mean_of_hits_and_std_population():
    split = split_for(1)
    rng = np.random.default_rng(0)
    table = rng.random((split.train.n_users, split.train.n_items))
    rep = evaluate(lambda u, items: table[u, items], split)
    ranks = [r for _, r, _ in rep.per_user]
    assert rep.one_product_hit_ratio == np.mean([one_product_hit(r) for r in ranks])
    nd = [ndcg_at_k(r) for r in ranks]
    assert rep.ndcg_std == pytest.approx(np.std(nd, ddof=0))


def test_invariant_under_monotone_transform():
    split = split_for(2)
    table = np.random.default_rng(1).random((split.train.n_users, split.train.n_items))
    a = evaluate(lambda u, items: table[u, items], split)
    b = evaluate(lambda u, items: np.exp(5 * table[u, items]) - 3, split)
    assert a.per_user == b.per_user


def test_parallel_matches_serial():
    split = split_for(3)
    table = np.random.default_rng(2).random((split.train.n_users, split.train.n_items))
    f = lambda u, items: table[u, items]
    assert evaluate(f, split, workers=4).per_user == evaluate(f, split).per_user


def test_non_finite_score_reported():
    split = split_for(4)
    with pytest.raises(EvalError, match="non-finite score for user"):
        evaluate(lambda u, items: np.where(items == items[3], np.nan, 0.0), split)
    with pytest.raises(EvalError, match="shape"):
        evaluate(lambda u, items: np.zeros(3), split)


def test_report_files(tmp_path):
    split = split_for(5)
    rep = evaluate(lambda u, items: -items.astype(float), split)
    rep.write(tmp_path, split.train.user_ids)
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["n_users"] == len(split.test_users) and metrics["k"] == 12
    assert metrics["std_kind"] == "population"
    rows = list(csv.DictReader((tmp_path / "per_user.csv").open()))
    assert len(rows) == len(split.test_users)
    assert rows[0]["user_key"] == split.train.user_ids[int(rows[0]["user_index"])]


def test_recommend_full_argsort():
    m = random_matrix(np.random.default_rng(6), 3, 10)
    s = np.random.default_rng(3).random(10)
    items, scores = recommend_top_k(lambda u, it: s[it], m, 1, k=10, exclude_seen=False)
    assert items.tolist() == np.argsort(-s, kind="stable").tolist()
    assert np.all(np.diff(scores) <= 0)


def test_recommend_forced_remaining_items():
    cells = [(0, i, 1, None) for i in range(10) if i not in (2, 5, 8)]
    m = matrix_from_cells(cells, 1, 10)
    items, _ = recommend_top_k(lambda u, it: np.zeros(len(it)), m, 0, k=3)
    assert items.tolist() == [2, 5, 8]
    with pytest.raises(ValueError):
        recommend_top_k(lambda u, it: np.zeros(len(it)), m, 0, k=4)
    with pytest.raises(IndexError):
        recommend_top_k(lambda u, it: np.zeros(len(it)), m, 1, k=1)


def test_recommend_matches_sort_oracle():
    m = random_matrix(np.random.default_rng(7), 5, 30)
    table = np.round(np.random.default_rng(4).random((5, 30)), 1)  # plenty of ties
    for u in range(5):
        items, _ = recommend_top_k(lambda uu, it: table[uu, it], m, u, k=12)
        seen = set(m.items_of(u).tolist())
        oracle = sorted((i for i in range(30) if i not in seen), key=lambda i: (-table[u, i], i))[:12]
        assert items.tolist() == oracle


def test_sampled_auc_bounds():
    split = split_for(8)
    truth = dict(split.test_positives)
    assert evaluation.sampled_auc(lambda u, it: (it == truth[u]).astype(float), split) == 1.0
    assert evaluation.sampled_auc(lambda u, it: np.zeros(len(it)), split) == 0.5
