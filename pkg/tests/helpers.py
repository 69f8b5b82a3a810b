"""Shared test utilities: tiny graphs, stub scorers, and an independent
brute-force ranking oracle.

The oracle deliberately avoids every code path in mmkgc.evaluation: it calls
the model one triple at a time through the scalar ``score`` interface and
counts comparisons in plain Python.
"""

import numpy as np

from mmkgc.data import KnowledgeGraph, ModalityStore


def tiny_graph():
    """6 entities, 2 relations, fixed hand-written splits."""
    train = np.array([
        [0, 0, 1], [1, 0, 2], [2, 1, 3], [3, 0, 4], [4, 1, 5], [0, 1, 3],
    ], dtype=np.int64)
    valid = np.array([[1, 1, 4]], dtype=np.int64)
    test = np.array([[2, 0, 5], [0, 0, 3]], dtype=np.int64)
    return KnowledgeGraph(
        [f"e{i}" for i in range(6)], ["r0", "r1"], train, valid, test)


def random_graph(rng, num_entities, num_relations, num_triples):
    """Uniform random triples without self-loops or duplicates, split 80/10/10."""
    seen = set()
    rows = []
    while len(rows) < num_triples:
        h = int(rng.integers(num_entities))
        t = int(rng.integers(num_entities))
        r = int(rng.integers(num_relations))
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        rows.append((h, r, t))
    triples = np.array(rows, dtype=np.int64)
    n_train = max(1, int(0.8 * num_triples))
    n_valid = max(1, (num_triples - n_train) // 2)
    return KnowledgeGraph(
        [f"e{i}" for i in range(num_entities)],
        [f"r{i}" for i in range(num_relations)],
        triples[:n_train],
        triples[n_train:n_train + n_valid],
        triples[n_train + n_valid:],
    )


def complete_store(rng, num_entities, d_v):
    feats = rng.standard_normal((num_entities, d_v)).astype(np.float32)
    return ModalityStore(feats, np.ones(num_entities, dtype=bool))


class TableModel:
    """Stub scorer backed by a fixed lookup table.

    ``table[r][h][t]`` is the score of (h, r, t); used to hand-craft ranking
    scenarios without training anything.
    """

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=np.float64)

    def score(self, h, r, t):
        return float(self.table[r, h, t])

    def score_candidates(self, anchor, relation, direction):
        import torch
        if direction == "tail":
            return torch.from_numpy(self.table[relation, anchor, :].copy())
        if direction == "head":
            return torch.from_numpy(self.table[relation, :, anchor].copy())
        raise ValueError(direction)


def oracle_rank(model, anchor, relation, truth, direction, known, num_entities):
    """Filtered mid-rank by exhaustive scalar enumeration."""
    if direction == "tail":
        target = model.score(anchor, relation, truth)
        cands = [(e, model.score(anchor, relation, e)) for e in range(num_entities)
                 if e == truth or (anchor, relation, e) not in known]
    else:
        target = model.score(truth, relation, anchor)
        cands = [(e, model.score(e, relation, anchor)) for e in range(num_entities)
                 if e == truth or (e, relation, anchor) not in known]
    greater = sum(1 for e, s in cands if s > target)
    equal = sum(1 for e, s in cands if s == target and e != truth)
    return 1.0 + greater + equal / 2.0


def oracle_metrics(ranks):
    """MRR and Hits@{1,3,10} from a plain list of ranks."""
    inv = [1.0 / r for r in ranks]
    out = {"mrr": sum(inv) / len(ranks)}
    for k in (1, 3, 10):
        out[f"hits@{k}"] = sum(1 for r in ranks if r <= k) / len(ranks)
    return out


acceptance_lines: list = []


def record_acceptance(name: str, status: bool, detail: str = "") -> None:
    """Append one PASS/FAIL/SKIP checklist line (also printed immediately)."""
    word = {True: "PASS", False: "FAIL", None: "SKIP"}[status]
    line = f"[acceptance] {name}: {word}"
    if detail:
        line += f"  ({detail})"
    acceptance_lines.append(line)
    print(line, flush=True)
