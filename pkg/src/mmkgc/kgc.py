"""Multimodal link-prediction models and their margin-based training loop.

Every entity carries a learned structural embedding and a projected visual
feature. Three scoring functions are provided:

  ikrl_like    cross-modal TransE, summing translation distances over all
               four (head-modality, tail-modality) combinations
  tbkgc_like   per-modality TransE plus a fused term on the summed
               modalities
  rsme_gated   relation-gated mix of the two modalities scored with a
               ComplEx-style bilinear form

Negative samples are weighted by a detached softmax over their own scores,
so harder negatives contribute more.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
import torch
from torch import nn

from .data import KnowledgeGraph, ModalityStore
from .errors import ConfigError, DataError, NumericalError
from .numerics import (derive_seed, make_generator, make_optimizer,
                       save_checkpoint, load_checkpoint)

SCORERS = ("ikrl_like", "tbkgc_like", "rsme_gated")


@dataclass
class KgcConfig:
    d: int = 128
    margin: float = 6.0
    beta: float = 2.0
    N: int = 32
    batch_size: int = 1024
    epochs: int = 100
    learning_rate: float = 1e-3
    seed: Optional[int] = None
    optimizer: str = "adam"
    train_visual: bool = False

    def validate(self) -> None:
        if self.d < 1:
            raise ConfigError(f"embedding dim must be positive, got {self.d}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0, got {self.margin}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.N < 1:
            raise ConfigError(f"need at least one negative per positive, got {self.N}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class MultiModalKgcModel(nn.Module):
    """Embeddings plus one of the three scoring functions.

    Visual features arrive as a fixed (num_entities, d_v) matrix; a learned
    linear projection maps them into the scoring space. The raw features
    stay frozen unless ``train_visual`` is set.
    """

    def __init__(self, num_entities: int, num_relations: int, visual: np.ndarray,
                 d: int, scorer: str, seed: int = 0, dtype=torch.float32,
                 train_visual: bool = False):
        super().__init__()
        if scorer not in SCORERS:
            raise ConfigError(f"unknown scorer {scorer!r}; choose from {SCORERS}")
        if scorer == "rsme_gated" and d % 2 != 0:
            raise ConfigError(f"rsme_gated splits dimensions into complex pairs; d={d} is odd")
        self.scorer = scorer
        self.d = d
        gen = make_generator(seed)

        def table(rows: int, cols: int) -> nn.Parameter:
            w = torch.empty(rows, cols, dtype=dtype)
            with torch.no_grad():
                w.normal_(0.0, 1.0, generator=gen)
                w.mul_(1.0 / math.sqrt(cols))
            return nn.Parameter(w)

        self.struct_emb = table(num_entities, d)
        self.rel_emb = table(num_relations, d)
        self.gate_emb = table(num_relations, d)

        # Copy so in-place optimizer updates never alias the caller's array.
        visual_t = torch.tensor(np.asarray(visual), dtype=dtype)
        if train_visual:
            self.visual_raw = nn.Parameter(visual_t)
        else:
            self.register_buffer("visual_raw", visual_t)
        d_v = visual_t.shape[1]
        self.visual_proj = nn.Linear(d_v, d, dtype=dtype)
        bound = 1.0 / math.sqrt(d_v)
        with torch.no_grad():
            self.visual_proj.weight.uniform_(-bound, bound, generator=gen)
            self.visual_proj.bias.uniform_(-bound, bound, generator=gen)

    def visual_emb(self, ids: torch.Tensor) -> torch.Tensor:
        return self.visual_proj(self.visual_raw[ids])

    def score_triples(self, heads: torch.Tensor, relations: torch.Tensor,
                      tails: torch.Tensor) -> torch.Tensor:
        """Batched scores; higher means more plausible."""
        h_s = self.struct_emb[heads]
        t_s = self.struct_emb[tails]
        r = self.rel_emb[relations]
        h_v = self.visual_emb(heads)
        t_v = self.visual_emb(tails)

        if self.scorer == "ikrl_like":
            dist = 0.0
            for h in (h_s, h_v):
                for t in (t_s, t_v):
                    dist = dist + torch.linalg.vector_norm(h + r - t, dim=-1)
            return -dist

        if self.scorer == "tbkgc_like":
            dist = (torch.linalg.vector_norm(h_s + r - t_s, dim=-1)
                    + torch.linalg.vector_norm(h_v + r - t_v, dim=-1)
                    + torch.linalg.vector_norm((h_s + h_v) + r - (t_s + t_v), dim=-1))
            return -dist

        # rsme_gated: sigmoid gate per relation mixes the modalities, then a
        # ComplEx-style form scores the fused embeddings. The first d/2
        # coordinates act as real parts, the rest as imaginary.
        gate = torch.sigmoid(self.gate_emb[relations])
        h = gate * h_v + (1.0 - gate) * h_s
        t = gate * t_v + (1.0 - gate) * t_s
        half = self.d // 2
        hr, hi = h[..., :half], h[..., half:]
        rr, ri = r[..., :half], r[..., half:]
        tr, ti = t[..., :half], t[..., half:]
        return (hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr).sum(-1)

    def score(self, head: int, relation: int, tail: int) -> float:
        """Scalar convenience wrapper over ``score_triples``."""
        with torch.no_grad():
            return float(self.score_triples(
                torch.tensor([head]), torch.tensor([relation]), torch.tensor([tail]))[0])

    def score_candidates(self, anchor: int, relation: int, direction: str) -> torch.Tensor:
        """Scores against every entity as the other argument.

        ``direction="tail"`` scores (anchor, relation, e) for all e;
        ``"head"`` scores (e, relation, anchor). Routed through
        ``score_triples`` so batched and scalar paths share arithmetic.
        """
        n = self.struct_emb.shape[0]
        every = torch.arange(n)
        fixed = torch.full((n,), anchor, dtype=torch.long)
        rel = torch.full((n,), relation, dtype=torch.long)
        if direction == "tail":
            return self.score_triples(fixed, rel, every)
        if direction == "head":
            return self.score_triples(every, rel, fixed)
        raise ConfigError(f"direction must be 'head' or 'tail', got {direction!r}")


def self_adv_weights(scores: torch.Tensor, beta: float) -> torch.Tensor:
    """Softmax over negative-sample scores with inverse temperature beta.

    Detached from the graph by the caller; beta = 0 gives exactly uniform
    weights. Max-subtraction keeps the exponentials in range.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    scaled = beta * scores
    scaled = scaled - scaled.max(dim=-1, keepdim=True).values
    e = torch.exp(scaled)
    return e / e.sum(dim=-1, keepdim=True)


def margin_loss(positive: torch.Tensor, negatives: torch.Tensor,
                weights: torch.Tensor, margin: float) -> torch.Tensor:
    """Hinge on the weighted negative mass:

        max(0, margin - S(positive) + sum_i w_i S(negative_i))

    ``weights`` must already be detached; gradients flow only through the
    scores.
    """
    if negatives.shape != weights.shape:
        raise ValueError("negatives and weights must align")
    slack = margin - positive + (weights * negatives).sum(-1)
    return torch.clamp(slack, min=0.0)


def sample_negatives(triple: tuple, graph: KnowledgeGraph, n: int,
                     rng: np.random.Generator, max_attempts: int = 100) -> np.ndarray:
    """n corrupted copies of one triple, avoiding train-set collisions.

    Each draw flips a fair coin for head vs tail and replaces it with a
    uniform entity; a corrupted triple that exists in train is rejected and
    redrawn, giving up (keeping the collision) after ``max_attempts``.
    """
    h, r, t = triple
    train_set = graph.train_set
    out = np.empty((n, 3), dtype=np.int64)
    for i in range(n):
        for _ in range(max_attempts):
            corrupt_head = rng.integers(2) == 0
            e = int(rng.integers(graph.num_entities))
            cand = (e, r, t) if corrupt_head else (h, r, e)
            if cand not in train_set:
                break
        out[i] = cand
    return out


def sample_negative_batch(triples: np.ndarray, graph: KnowledgeGraph, n: int,
                          rng: np.random.Generator, max_attempts: int = 100) -> np.ndarray:
    """Vectorized negatives for a batch: (B, n, 3).

    The first draw happens in bulk; rows that collide with train triples
    are patched one by one.
    """
    b = len(triples)
    out = np.repeat(triples[:, None, :], n, axis=1).copy()
    corrupt_head = rng.integers(2, size=(b, n)) == 0
    repl = rng.integers(graph.num_entities, size=(b, n))
    out[:, :, 0] = np.where(corrupt_head, repl, out[:, :, 0])
    out[:, :, 2] = np.where(~corrupt_head, repl, out[:, :, 2])

    train_set = graph.train_set
    flat = out.reshape(-1, 3)
    for idx, row in enumerate(map(tuple, flat.tolist())):
        if row not in train_set:
            continue
        h, r, t = triples[idx // n]
        for _ in range(max_attempts - 1):
            ch = rng.integers(2) == 0
            e = int(rng.integers(graph.num_entities))
            cand = (e, r, t) if ch else (h, r, e)
            if cand not in train_set:
                flat[idx] = cand
                break
    return out


def train_kgc(graph: KnowledgeGraph, store: ModalityStore, config: KgcConfig,
              scorer: str, dtype=torch.float32) -> tuple:
    """Train a link predictor on the train split; returns (model, history).

    The modality store must be fully complete (run completion first).
    """
    config.validate()
    if config.seed is None:
        raise ConfigError("kgc seed must be resolved before training")
    if not store.mask.all():
        raise DataError("kgc training requires a fully completed modality store")
    if store.features.shape[0] != graph.num_entities:
        raise DataError("modality store does not cover all entities")

    model = MultiModalKgcModel(
        graph.num_entities, graph.num_relations, store.features, config.d, scorer,
        seed=derive_seed(config.seed, "model"), dtype=dtype,
        train_visual=config.train_visual)
    opt = make_optimizer(model.parameters(), config.learning_rate, config.optimizer)
    neg_rng = np.random.default_rng(derive_seed(config.seed, "negatives"))
    batch_rng = np.random.default_rng(derive_seed(config.seed, "batches"))

    history = {"loss": []}
    train = graph.train
    for epoch in range(config.epochs):
        order = batch_rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            batch = train[order[start:start + config.batch_size]]
            negs = sample_negative_batch(batch, graph, config.N, neg_rng)

            pos = model.score_triples(
                torch.from_numpy(batch[:, 0]), torch.from_numpy(batch[:, 1]),
                torch.from_numpy(batch[:, 2]))
            flat = negs.reshape(-1, 3)
            neg_scores = model.score_triples(
                torch.from_numpy(flat[:, 0]), torch.from_numpy(flat[:, 1]),
                torch.from_numpy(flat[:, 2])).reshape(len(batch), config.N)
            weights = self_adv_weights(neg_scores.detach(), config.beta)
            loss = margin_loss(pos, neg_scores, weights, config.margin).mean()
            if not bool(torch.isfinite(loss)):
                raise NumericalError(f"kgc loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        history["loss"].append(float(np.mean(losses)))
    return model, history


def save_kgc(path, model: MultiModalKgcModel, config: KgcConfig) -> None:
    tensors = dict(model.state_dict())
    save_checkpoint(path, tensors, metadata={
        "kind": "kgc", "scorer": model.scorer, "config": config.to_dict(),
        "num_entities": model.struct_emb.shape[0],
        "num_relations": model.rel_emb.shape[0],
        "d_v": model.visual_raw.shape[1],
    })


def load_kgc(path) -> tuple:
    tensors, metadata = load_checkpoint(path)
    if metadata.get("kind") != "kgc":
        raise DataError(f"{path}: not a kgc checkpoint")
    config = KgcConfig(**metadata["config"])
    visual = tensors["visual_raw"].numpy()
    model = MultiModalKgcModel(
        metadata["num_entities"], metadata["num_relations"], visual, config.d,
        metadata["scorer"], seed=0, train_visual=config.train_visual)
    model.load_state_dict(tensors)
    return model, config
