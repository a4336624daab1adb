"""Rank metrics and the evaluation loop."""

import math

import pytest

from irr.data import Dataset, leave_one_out_split, make_synthetic_dataset
from irr.decoder import RankedList
from irr.evaluation import evaluate, ndcg_at_k, recall_at_k
from irr.indexer import build_prefix_trie, build_sid_table
from irr.model import CompactModel


def ranked(*items):
    return RankedList([(item, -float(n)) for n, item in enumerate(items)], width=len(items))


def test_recall_cases():
    r = ranked("a", "b", "c", "d", "e", "f")
    assert recall_at_k(r, "a", 5) == 1.0
    assert recall_at_k(r, "f", 5) == 0.0
    assert recall_at_k(r, "zz", 5) == 0.0


def test_ndcg_cases():
    r = ranked("a", "b", "c", "d")
    assert ndcg_at_k(r, "a", 10) == 1.0
    assert ndcg_at_k(r, "c", 10) == pytest.approx(1.0 / math.log2(4.0))
    assert ndcg_at_k(r, "c", 2) == 0.0
    assert ndcg_at_k(r, "zz", 10) == 0.0


def test_ndcg_never_exceeds_recall_pointwise(rng):
    items = [f"i{n}" for n in range(12)]
    r = ranked(*items)
    for target in items + ["absent"]:
        for k in (1, 3, 5, 10):
            assert ndcg_at_k(r, target, k) <= recall_at_k(r, target, k)


def _tiny_setup(seed=0):
    log, emb = make_synthetic_dataset(users=60, items=40, rule_order=1, seed=seed)
    table, _ = build_sid_table(emb, levels_total=3, k=8, seed=2)
    dataset = Dataset(leave_one_out_split(log), table)
    model = CompactModel(dataset.code_matrix, 8, 16, layers=1, heads=2,
                         max_hist=8, seed=seed)
    return model, dataset, build_prefix_trie(table)


def test_evaluate_bounds_and_counts():
    model, dataset, trie = _tiny_setup()
    report = evaluate(model, dataset, trie, ks=(5, 10))
    assert report.users == len(dataset.eval_users)
    for k in (5, 10):
        assert 0.0 <= report.recall[k] <= 1.0
        assert 0.0 <= report.ndcg[k] <= 1.0
        assert report.ndcg[k] <= report.recall[k] + 1e-12
    assert report.width == 20


def test_evaluate_rows_have_exact_fields():
    model, dataset, trie = _tiny_setup(seed=1)
    report = evaluate(model, dataset, trie, ks=(5,), width=6)
    for row in report.rows():
        assert set(row) == {"metric", "k", "value", "setting", "mode", "W"}
