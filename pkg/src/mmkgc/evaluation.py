"""Filtered link-prediction evaluation.

Each test triple spawns two queries (predict the tail given head+relation,
and the head given relation+tail). Candidates that form another known
triple are filtered out before ranking; ties share the mid-rank. Reports
aggregate MRR and Hits@k over all queries and over the modality-missing /
modality-complete subsets, and rank-bucket matrices compare two runs query
by query.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .data import KnowledgeGraph
from .errors import ConfigError, DataError

HITS_KS = (1, 3, 10)
DEFAULT_BUCKET_EDGES = (1, 2, 4, 11, 51, 201)
BUCKET_LABELS = ("[1]", "[2,3]", "[4,10]", "[11,50]", "[51,200]", "[201,inf)")
SPLITS = ("all", "modality_missing", "modality_complete")


@dataclass(frozen=True)
class QueryRank:
    head: int
    relation: int
    tail: int
    direction: str
    rank: float
    modality_missing: bool


def rank_from_scores(scores: torch.Tensor, truth: int, filtered_ids) -> float:
    """Mid-rank of the truth among unfiltered candidates.

    rank = 1 + #{strictly greater} + #{equal, excluding the truth}/2.
    ``filtered_ids`` are removed from contention; the truth itself always
    stays in.
    """
    keep = torch.ones(scores.shape[0], dtype=torch.bool)
    ids = torch.as_tensor(list(filtered_ids), dtype=torch.long) if len(filtered_ids) else None
    if ids is not None:
        keep[ids] = False
    keep[truth] = True
    s = scores[keep]
    target = scores[truth]
    greater = int((s > target).sum())
    equal = int((s == target).sum()) - 1
    return 1.0 + greater + equal / 2.0


def filtered_rank(model, query: tuple, truth: int, known_triples) -> float:
    """Rank of ``truth`` for one query, filtering known true candidates.

    ``query`` is (anchor, relation, direction). Filtered candidates are
    entities e != truth such that substituting e yields a known triple.
    """
    anchor, relation, direction = query
    with torch.no_grad():
        scores = model.score_candidates(anchor, relation, direction)
    if direction == "tail":
        filtered = [e for e in range(scores.shape[0])
                    if e != truth and (anchor, relation, e) in known_triples]
    else:
        filtered = [e for e in range(scores.shape[0])
                    if e != truth and (e, relation, anchor) in known_triples]
    return rank_from_scores(scores, truth, filtered)


@dataclass
class EvalReport:
    """Per-query ranks plus aggregates by modality split."""

    queries: list = field(default_factory=list)

    def add(self, q: QueryRank) -> None:
        self.queries.append(q)

    def subset(self, split: str) -> list:
        if split == "all":
            return self.queries
        if split == "modality_missing":
            return [q for q in self.queries if q.modality_missing]
        if split == "modality_complete":
            return [q for q in self.queries if not q.modality_missing]
        raise ConfigError(f"unknown split {split!r}")

    def metrics(self, split: str = "all") -> dict:
        qs = self.subset(split)
        out = {"count": len(qs)}
        if not qs:
            out["mrr"] = 0.0
            for k in HITS_KS:
                out[f"hits@{k}"] = 0.0
            return out
        ranks = np.array([q.rank for q in qs], dtype=np.float64)
        out["mrr"] = float((1.0 / ranks).mean())
        for k in HITS_KS:
            out[f"hits@{k}"] = float((ranks <= k).mean())
        return out

    def summary_rows(self) -> list:
        rows = []
        for split in SPLITS:
            m = self.metrics(split)
            rows.append((split, "count", float(m["count"])))
            rows.append((split, "mrr", m["mrr"]))
            for k in HITS_KS:
                rows.append((split, f"hits@{k}", m[f"hits@{k}"]))
        return rows

    def to_json(self) -> str:
        return json.dumps({
            "queries": [asdict(q) for q in self.queries],
            "metrics": {split: self.metrics(split) for split in SPLITS},
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed report json: {exc}") from exc
        report = cls()
        for item in payload["queries"]:
            report.add(QueryRank(**item))
        return report


def known_triple_index(known_triples) -> tuple:
    """(tails_by_hr, heads_by_rt) dictionaries for fast filtering."""
    tails: dict = {}
    heads: dict = {}
    for h, r, t in known_triples:
        tails.setdefault((h, r), set()).add(t)
        heads.setdefault((r, t), set()).add(h)
    return tails, heads


def evaluate(model, test_triples: np.ndarray, known_triples,
             store_mask: np.ndarray) -> EvalReport:
    """Filtered ranks for every test triple in both directions.

    ``store_mask`` is the pre-completion observation mask; a triple counts
    as modality-missing when its head or tail had no observed feature.
    """
    tails_by, heads_by = known_triple_index(known_triples)
    report = EvalReport()
    mask = np.asarray(store_mask, dtype=bool)
    for h, r, t in np.asarray(test_triples).reshape(-1, 3).tolist():
        missing = not (mask[h] and mask[t])
        with torch.no_grad():
            tail_scores = model.score_candidates(h, r, "tail")
            head_scores = model.score_candidates(t, r, "head")
        tail_filter = [e for e in tails_by.get((h, r), ()) if e != t]
        head_filter = [e for e in heads_by.get((r, t), ()) if e != h]
        report.add(QueryRank(h, r, t, "tail",
                             rank_from_scores(tail_scores, t, tail_filter), missing))
        report.add(QueryRank(h, r, t, "head",
                             rank_from_scores(head_scores, h, head_filter), missing))
    return report


def bucket_of(rank: float, edges=DEFAULT_BUCKET_EDGES) -> int:
    """Index of the rank bucket; fractional mid-ranks floor first."""
    if rank < 1:
        raise ValueError(f"ranks start at 1, got {rank}")
    return bisect_right(edges, math.floor(rank)) - 1


def bucket_compare(report_a: EvalReport, report_b: EvalReport,
                   edges=DEFAULT_BUCKET_EDGES) -> dict:
    """Joint bucket histogram of two reports over identical query sets.

    Cell [i][j] counts queries in bucket i under ``report_a`` and bucket j
    under ``report_b``. Raises if the two reports rank different queries.
    """
    def key(q: QueryRank) -> tuple:
        return (q.head, q.relation, q.tail, q.direction)

    a_by = {key(q): q for q in report_a.queries}
    b_by = {key(q): q for q in report_b.queries}
    if set(a_by) != set(b_by) or len(a_by) != len(report_a.queries) \
            or len(b_by) != len(report_b.queries):
        raise ValueError("bucket_compare requires identical query sets")

    n = len(edges)
    out = {}
    for split in SPLITS:
        matrix = [[0] * n for _ in range(n)]
        for k, qa in a_by.items():
            qb = b_by[k]
            if split == "modality_missing" and not qa.modality_missing:
                continue
            if split == "modality_complete" and qa.modality_missing:
                continue
            matrix[bucket_of(qa.rank, edges)][bucket_of(qb.rank, edges)] += 1
        out[split] = matrix
    return out


def write_metrics_csv(path, report: EvalReport) -> None:
    """split,metric,value rows; floats via repr() so reruns byte-match."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["split", "metric", "value"])
        for split, metric, value in report.summary_rows():
            writer.writerow([split, metric, repr(value)])


def write_bucket_csv(path, matrices: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["split", "bucket_a", "bucket_b", "count"])
        for split in SPLITS:
            matrix = matrices[split]
            for i, row in enumerate(matrix):
                for j, count in enumerate(row):
                    writer.writerow([split, BUCKET_LABELS[i], BUCKET_LABELS[j], count])
