"""Knowledge-graph data layer: triple files, vocabularies, adjacency with
inverse relations, the visual-feature store, and a synthetic benchmark
generator.

Everything here is numpy-only; torch enters the picture in the model
modules.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def load_triples(path) -> list[tuple[str, str, str]]:
    """Read tab-separated ``head<TAB>relation<TAB>tail`` lines.

    Blank lines are skipped; anything else malformed raises DataError with
    the offending location.
    """
    path = Path(path)
    out = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read triples from {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        h, r, t = (p.strip() for p in parts)
        if not h or not r or not t:
            raise DataError(f"{path}:{lineno}: empty field in triple")
        out.append((h, r, t))
    return out


@dataclass
class KnowledgeGraph:
    """Integer-encoded triples plus adjacency over train edges.

    Relations are doubled internally: relation ``r`` also exists as the
    inverse ``r + num_relations`` so message passing can walk edges in both
    directions. Adjacency is built from the train split only.
    """

    entity_names: list
    relation_names: list
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name, arr in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            arr = np.asarray(arr, dtype=np.int64).reshape(-1, 3)
            setattr(self, name, arr)
            if arr.size:
                if arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= self.num_entities:
                    raise DataError(f"{name} split references entity ids out of range")
                if arr[:, 1].min() < 0 or arr[:, 1].max() >= self.num_relations:
                    raise DataError(f"{name} split references relation ids out of range")
        train_set = self.train_set
        for name, arr in (("valid", self.valid), ("test", self.test)):
            overlap = sum((h, r, t) in train_set for h, r, t in map(tuple, arr))
            if overlap:
                warnings.warn(f"{overlap} {name} triples also appear in train", stacklevel=2)

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    @cached_property
    def train_set(self) -> frozenset:
        return frozenset(map(tuple, self.train.tolist()))

    @cached_property
    def known_triples(self) -> frozenset:
        combined = np.concatenate([self.train, self.valid, self.test], axis=0)
        return frozenset(map(tuple, combined.tolist()))

    @cached_property
    def edges(self) -> list:
        """Per-relation unique (dst, src) edge arrays, inverses included.

        Index ``r`` collects messages for forward edges (tail receives from
        head), index ``r + num_relations`` the reverse. Duplicates in train
        collapse to one edge.
        """
        R = self.num_relations
        buckets: list = [set() for _ in range(2 * R)]
        for h, r, t in self.train.tolist():
            buckets[r].add((t, h))
            buckets[r + R].add((h, t))
        out = []
        for pairs in buckets:
            if pairs:
                arr = np.array(sorted(pairs), dtype=np.int64)
            else:
                arr = np.empty((0, 2), dtype=np.int64)
            out.append(arr)
        return out

    def neighbors(self, entity: int, relation: int) -> np.ndarray:
        """Source entities that send to ``entity`` under (possibly inverse)
        relation id ``relation``."""
        edges = self.edges[relation]
        return edges[edges[:, 0] == entity, 1].copy()


def build_graph(train, valid, test) -> KnowledgeGraph:
    """Integer-encode string triples, assigning ids by first appearance
    scanning train, then valid, then test."""
    entity_ids: dict = {}
    relation_ids: dict = {}

    def encode(triples):
        rows = np.empty((len(triples), 3), dtype=np.int64)
        for i, (h, r, t) in enumerate(triples):
            rows[i, 0] = entity_ids.setdefault(h, len(entity_ids))
            rows[i, 1] = relation_ids.setdefault(r, len(relation_ids))
            rows[i, 2] = entity_ids.setdefault(t, len(entity_ids))
        return rows

    enc = [encode(split) for split in (train, valid, test)]
    return KnowledgeGraph(list(entity_ids), list(relation_ids), *enc)


@dataclass
class ModalityStore:
    """Per-entity visual features with a row-validity mask.

    ``mask[i]`` is True when row ``i`` holds an observed (or completed)
    feature rather than a placeholder.
    """

    features: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(-1)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.mask.shape[0] != self.features.shape[0]:
            raise DataError("mask length does not match feature rows")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def missing_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.mask)

    @property
    def complete_ids(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    def copy(self) -> "ModalityStore":
        return ModalityStore(self.features.copy(), self.mask.copy())


def drop_modality(store: ModalityStore, missing_rate: float, seed: int) -> ModalityStore:
    """Mark floor(missing_rate * n) uniformly chosen entities as missing and
    zero their rows. Requires a fully complete input store."""
    if not 0.0 <= missing_rate <= 1.0:
        raise ConfigError(f"missing_rate must lie in [0, 1], got {missing_rate}")
    if not store.mask.all():
        raise DataError("drop_modality expects a fully complete store")
    n = store.features.shape[0]
    k = int(np.floor(missing_rate * n))
    rng = np.random.default_rng(seed)
    dropped = rng.permutation(n)[:k]
    out = store.copy()
    out.mask[dropped] = False
    out.features[dropped] = 0.0
    return out


# Scale of the shared mean direction of the random feature map. Deep visual
# embeddings are strongly anisotropic with positive-mean activations, so the
# synthetic map gives every column a dominant near-positive cone component;
# the imputation metrics behave very differently on isotropic clouds.
FEATURE_MAP_OFFSET = 0.25

# Zipf exponent for head-entity sampling. Real KGs are hub-dominated; skewed
# degrees concentrate the structural signal the same way.
ENTITY_SKEW = 1.0

# Entities live at latent positions; relation r shifts a head's position by
# a fixed offset and tails are drawn near the shifted point. BANDWIDTH is
# the kernel width of that draw, SHIFT the offset scale relative to the
# unit latent cloud.
LATENT_DIM = 8
LATENT_BANDWIDTH = 0.5
RELATION_SHIFT = 0.3


def synth_mmkg(num_entities: int, num_relations: int, num_triples: int,
               d_v: int = 32, noise_level: float = 0.05, seed: int = 0,
               split_fractions: tuple = (0.8, 0.1, 0.1)) -> tuple:
    """Random multimodal KG whose visual features are a fixed linear map of
    graph neighborhoods.

    Triples follow a latent translation model: entities get positions
    z_i in R^LATENT_DIM, relations get offsets delta_r, heads are sampled
    with Zipf skew and tails near z_h + delta_r, so link prediction on the
    held-out splits is genuinely learnable rather than noise. No duplicates
    or self-loops.

    Features for entity i are ``indicator(neighbors of i, undirected) @ M.T``
    plus isotropic noise, where column t of M is N(mu, I)/sqrt(num_entities)
    and mu is a jittered all-positive direction of scale FEATURE_MAP_OFFSET
    shared by all columns. The indicator covers all three splits: images
    describe the whole entity, not the train subset, which is what makes the
    modality informative beyond the training graph.
    """
    if num_entities < 2 or num_relations < 1:
        raise ConfigError("need at least 2 entities and 1 relation")
    capacity = num_entities * (num_entities - 1) * num_relations
    if num_triples > capacity:
        raise ConfigError(f"cannot place {num_triples} unique triples, capacity {capacity}")
    if abs(sum(split_fractions) - 1.0) > 1e-9 or min(split_fractions) < 0:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {split_fractions}")
    rng = np.random.default_rng(seed)

    z = rng.standard_normal((num_entities, LATENT_DIM))
    delta = RELATION_SHIFT * rng.standard_normal((num_relations, LATENT_DIM))
    weights = np.arange(1, num_entities + 1, dtype=np.float64) ** -ENTITY_SKEW
    weights /= weights.sum()

    # log p(t | h, r): Gaussian kernel around the shifted head position,
    # self-loops excluded. Desk-scale graphs only, the array is E x R x E.
    targets = z[:, None, :] + delta[None, :, :]
    sq = ((targets[:, :, None, :] - z[None, None, :, :]) ** 2).sum(-1)
    logits = -sq / (2.0 * LATENT_BANDWIDTH ** 2)
    eye = np.arange(num_entities)
    logits[eye, :, eye] = -np.inf
    shift = logits.max(-1, keepdims=True)
    logp_tail = logits - (np.log(np.exp(logits - shift).sum(-1, keepdims=True)) + shift)

    if num_triples > capacity // 2:
        # Dense regime: enumerate all (h, r, t) cells and take a weighted
        # sample without replacement via Gumbel keys.
        logp = np.log(weights)[:, None, None] + logp_tail
        keys = logp + rng.gumbel(size=logp.shape)
        keys[eye, :, eye] = -np.inf
        flat = np.argsort(keys.ravel())[-num_triples:]
        h, r, t = np.unravel_index(flat, keys.shape)
        triples = np.stack([h, r, t], axis=1).astype(np.int64)
    else:
        tail_p = np.exp(logp_tail)
        seen = set()
        rows = []
        while len(rows) < num_triples:
            h = int(rng.choice(num_entities, p=weights))
            r = int(rng.integers(num_relations))
            t = int(rng.choice(num_entities, p=tail_p[h, r]))
            if h == t or (h, r, t) in seen:
                continue
            seen.add((h, r, t))
            rows.append((h, r, t))
        triples = np.array(rows, dtype=np.int64)

    order = rng.permutation(num_triples)
    triples = triples[order]
    n_train = int(round(split_fractions[0] * num_triples))
    n_valid = int(round(split_fractions[1] * num_triples))
    train = triples[:n_train]
    valid = triples[n_train:n_train + n_valid]
    test = triples[n_train + n_valid:]

    graph = KnowledgeGraph(
        [f"e{i}" for i in range(num_entities)],
        [f"r{i}" for i in range(num_relations)],
        train, valid, test,
    )

    indicator = np.zeros((num_entities, num_entities), dtype=np.float64)
    indicator[triples[:, 0], triples[:, 2]] = 1.0
    indicator[triples[:, 2], triples[:, 0]] = 1.0
    cone = FEATURE_MAP_OFFSET * (1.0 + 0.2 * rng.standard_normal((d_v, 1)))
    mixing = (rng.standard_normal((d_v, num_entities)) + cone) \
        / np.sqrt(num_entities)
    features = indicator @ mixing.T
    features += noise_level * rng.standard_normal(features.shape)
    store = ModalityStore(features.astype(np.float32), np.ones(num_entities, dtype=bool))
    return graph, store


def save_features(path, store: ModalityStore, entity_names: list) -> None:
    """Text format: ``#dim=<d>`` header, then ``name<TAB>f1 f2 ...`` rows for
    entities whose mask bit is set. repr() keeps the round trip exact."""
    path = Path(path)
    lines = [f"#dim={store.dim}"]
    for i in store.complete_ids.tolist():
        values = " ".join(repr(float(v)) for v in store.features[i])
        lines.append(f"{entity_names[i]}\t{values}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path, entity_names: list) -> ModalityStore:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read features from {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#dim="):
        raise DataError(f"{path}: missing #dim= header")
    try:
        dim = int(lines[0][len("#dim="):])
    except ValueError as exc:
        raise DataError(f"{path}: bad dimension header {lines[0]!r}") from exc
    index = {name: i for i, name in enumerate(entity_names)}
    features = np.zeros((len(entity_names), dim), dtype=np.float32)
    mask = np.zeros(len(entity_names), dtype=bool)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        name, _, rest = line.partition("\t")
        if name not in index:
            raise DataError(f"{path}:{lineno}: unknown entity {name!r}")
        values = rest.split()
        if len(values) != dim:
            raise DataError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
        row = index[name]
        features[row] = [float(v) for v in values]
        if mask[row]:
            raise DataError(f"{path}:{lineno}: duplicate entity {name!r}")
        mask[row] = True
    return ModalityStore(features, mask)


def save_mask(path, store: ModalityStore, entity_names: list) -> None:
    """One entity name per line, listing entities whose features are missing."""
    Path(path).write_text(
        "".join(entity_names[i] + "\n" for i in store.missing_ids.tolist()),
        encoding="utf-8",
    )


def load_mask(path, entity_names: list) -> np.ndarray:
    index = {name: i for i, name in enumerate(entity_names)}
    mask = np.ones(len(entity_names), dtype=bool)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read mask from {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        name = line.strip()
        if not name:
            continue
        if name not in index:
            raise DataError(f"{path}:{lineno}: unknown entity {name!r}")
        mask[index[name]] = False
    return mask


def save_dataset(directory, graph: KnowledgeGraph, store: ModalityStore) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        rows = getattr(graph, split)
        lines = [
            f"{graph.entity_names[h]}\t{graph.relation_names[r]}\t{graph.entity_names[t]}"
            for h, r, t in rows.tolist()
        ]
        (directory / f"{split}.txt").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    save_features(directory / "features.txt", store, graph.entity_names)
    save_mask(directory / "mask.txt", store, graph.entity_names)


def load_dataset(directory) -> tuple:
    directory = Path(directory)
    splits = [load_triples(directory / f"{name}.txt") for name in ("train", "valid", "test")]
    graph = build_graph(*splits)
    store = load_features(directory / "features.txt", graph.entity_names)
    mask_path = directory / "mask.txt"
    if mask_path.exists():
        mask = load_mask(mask_path, graph.entity_names)
        observed = store.mask & mask
        if not (store.mask == observed).all():
            # Mask file may mark extra rows missing; feature file rows for
            # those entities are dropped.
            store.features[~mask] = 0.0
        store = ModalityStore(store.features, observed)
    return graph, store
