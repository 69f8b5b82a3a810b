import csv
import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import TableModel, oracle_metrics, oracle_rank, random_graph
from mmkgc.errors import ConfigError, DataError
from mmkgc.evaluation import (BUCKET_LABELS, EvalReport, QueryRank,
                              bucket_compare, bucket_of, evaluate,
                              filtered_rank, known_triple_index,
                              rank_from_scores, write_bucket_csv,
                              write_metrics_csv)


def make_report(ranks, missing=None):
    report = EvalReport()
    missing = missing or [False] * len(ranks)
    for i, (rank, miss) in enumerate(zip(ranks, missing)):
        report.add(QueryRank(i, 0, i + 1, "tail", float(rank), miss))
    return report


# --- rank_from_scores / filtered_rank ---

def test_rank_top_scorer():
    scores = torch.tensor([0.1, 0.9, 0.3])
    assert rank_from_scores(scores, 1, []) == 1.0


def test_rank_worked_example():
    # scores e0=0.9 e1=0.7 e2=0.5(truth) e3=0.2; e1 filtered -> rank 2.
    scores = torch.tensor([0.9, 0.7, 0.5, 0.2])
    assert rank_from_scores(scores, 2, [1]) == 2.0


def test_rank_constant_scores_midrank():
    for n in (1, 2, 5, 10):
        scores = torch.zeros(n)
        assert rank_from_scores(scores, 0, []) == (n + 1) / 2.0


def test_rank_truth_survives_filter():
    scores = torch.tensor([0.9, 0.5, 0.1])
    assert rank_from_scores(scores, 1, [0, 1]) == 1.0


@given(st.integers(0, 100_000), st.integers(2, 20))
@settings(deadline=None, max_examples=60)
def test_rank_filtering_never_hurts(seed, n):
    rng = np.random.default_rng(seed)
    scores = torch.from_numpy(rng.standard_normal(n))
    truth = int(rng.integers(n))
    filt = [int(e) for e in rng.choice(n, size=n // 3, replace=False)
            if int(e) != truth]
    assert rank_from_scores(scores, truth, filt) <= rank_from_scores(scores, truth, [])


def test_filtered_rank_uses_known_set():
    table = np.zeros((1, 4, 4))
    table[0, 0] = [0.0, 0.9, 0.7, 0.5]  # query (0, r0, ?); truth e3 at 0.5
    model = TableModel(table)
    known = {(0, 0, 1)}
    assert filtered_rank(model, (0, 0, "tail"), 3, known) == 2.0
    assert filtered_rank(model, (0, 0, "tail"), 3, set()) == 3.0


# --- EvalReport metrics ---

def test_metrics_worked_example():
    report = make_report([1, 2, 4])
    m = report.metrics("all")
    assert m["mrr"] == pytest.approx(7.0 / 12.0)
    assert m["hits@1"] == pytest.approx(1.0 / 3.0)
    assert m["hits@3"] == pytest.approx(2.0 / 3.0)
    assert m["hits@10"] == 1.0
    assert m["count"] == 3


def test_metrics_modality_splits():
    report = make_report([1, 10], missing=[True, False])
    assert report.metrics("modality_missing")["mrr"] == 1.0
    assert report.metrics("modality_complete")["mrr"] == pytest.approx(0.1)
    assert report.metrics("all")["count"] == 2
    with pytest.raises(ConfigError):
        report.metrics("validation")


def test_metrics_empty_split():
    report = make_report([2], missing=[False])
    m = report.metrics("modality_missing")
    assert m == {"count": 0, "mrr": 0.0, "hits@1": 0.0, "hits@3": 0.0, "hits@10": 0.0}


@given(st.lists(st.integers(1, 500), min_size=1, max_size=30))
@settings(deadline=None, max_examples=50)
def test_metrics_agree_with_plain_formulas(ranks):
    report = make_report(ranks)
    m = report.metrics("all")
    expected = oracle_metrics(ranks)
    assert m["mrr"] == pytest.approx(expected["mrr"])
    for k in (1, 3, 10):
        assert m[f"hits@{k}"] == pytest.approx(expected[f"hits@{k}"])
    assert m["hits@1"] <= m["hits@3"] <= m["hits@10"]


def test_mrr_strictly_decreases_when_a_rank_worsens():
    base = make_report([1, 5, 9])
    worse = make_report([1, 6, 9])
    assert worse.metrics("all")["mrr"] < base.metrics("all")["mrr"]


def test_report_json_round_trip():
    report = make_report([1, 2.5, 40], missing=[True, False, True])
    clone = EvalReport.from_json(report.to_json())
    assert clone.queries == report.queries
    with pytest.raises(DataError):
        EvalReport.from_json("{not json")


# --- evaluate vs oracle ---

def test_known_triple_index():
    tails, heads = known_triple_index({(0, 1, 2), (0, 1, 3), (5, 1, 2)})
    assert tails[(0, 1)] == {2, 3}
    assert heads[(1, 2)] == {0, 5}


def test_evaluate_matches_bruteforce_oracle():
    rng = np.random.default_rng(17)
    graph = random_graph(rng, 15, 2, 60)
    table = rng.standard_normal((2, 15, 15))
    model = TableModel(table)
    mask = rng.integers(0, 2, size=15).astype(bool)
    known = graph.known_triples
    report = evaluate(model, graph.test, known, mask)

    assert len(report.queries) == 2 * len(graph.test)
    by_key = {(q.head, q.relation, q.tail, q.direction): q for q in report.queries}
    for h, r, t in graph.test.tolist():
        tail_q = by_key[(h, r, t, "tail")]
        head_q = by_key[(h, r, t, "head")]
        assert tail_q.rank == oracle_rank(model, h, r, t, "tail", known, 15)
        assert head_q.rank == oracle_rank(model, t, r, h, "head", known, 15)
        assert tail_q.modality_missing == (not (mask[h] and mask[t]))


def test_evaluate_modality_missing_definition():
    table = np.zeros((1, 3, 3))
    model = TableModel(table)
    test = np.array([[0, 0, 1], [1, 0, 2]])
    mask = np.array([True, True, False])
    report = evaluate(model, test, set(), mask)
    flags = {(q.head, q.tail): q.modality_missing for q in report.queries}
    assert flags[(0, 1)] is False
    assert flags[(1, 2)] is True


# --- buckets ---

def test_bucket_of_boundaries():
    expected = {1: 0, 1.5: 0, 2: 1, 3: 1, 3.5: 1, 4: 2, 10: 2, 11: 3, 50: 3,
                51: 4, 200: 4, 201: 5, 10_000: 5}
    for rank, bucket in expected.items():
        assert bucket_of(rank) == bucket, rank
    with pytest.raises(ValueError):
        bucket_of(0.5)


def test_bucket_compare_identity_is_diagonal():
    report = make_report([1, 2, 7, 30, 100, 600], missing=[True] * 6)
    matrices = bucket_compare(report, report)
    for split in ("all", "modality_missing"):
        matrix = matrices[split]
        assert sum(matrix[i][i] for i in range(6)) == 6
        assert sum(sum(row) for row in matrix) == 6
    assert sum(sum(row) for row in matrices["modality_complete"]) == 0


def test_bucket_compare_rank_sixty_to_one():
    a = make_report([60])
    b = make_report([1])
    matrices = bucket_compare(a, b)
    assert matrices["all"][4][0] == 1
    assert sum(sum(row) for row in matrices["all"]) == 1


def test_bucket_compare_requires_same_queries():
    a = make_report([1, 2])
    b = make_report([1])
    with pytest.raises(ValueError):
        bucket_compare(a, b)


# --- csv emission ---

def test_write_metrics_csv(tmp_path):
    report = make_report([1, 2, 4], missing=[True, False, False])
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, report)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "split,metric,value"
    assert len(lines) == 1 + 3 * 5
    assert f"all,mrr,{7.0 / 12.0!r}" in lines
    assert "modality_missing,count,1.0" in lines


def test_write_bucket_csv(tmp_path):
    report = make_report([1, 300])
    matrices = bucket_compare(report, report)
    path = tmp_path / "buckets.csv"
    write_bucket_csv(path, matrices)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["split", "bucket_a", "bucket_b", "count"]
    assert len(rows) == 1 + 3 * 36
    assert ["all", BUCKET_LABELS[0], BUCKET_LABELS[0], "1"] in rows
    assert ["all", BUCKET_LABELS[5], BUCKET_LABELS[5], "1"] in rows
