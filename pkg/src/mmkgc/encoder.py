"""Relational graph convolution over the train split.

Entities carry a learned base embedding; each layer aggregates neighbor
messages per relation (inverse relations included, so information flows
both ways along an edge) with mean-normalized sums plus a self-loop
transform, followed by ReLU:

    s_i <- relu( sum_r sum_{j in N_i^r} (1/|N_i^r|) W_r s_j + W_0 s_i )
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .data import KnowledgeGraph
from .errors import ConfigError
from .numerics import make_generator


class RelationalConvLayer(nn.Module):
    """One round of per-relation message passing.

    ``rel_weight[r]`` transforms messages for relation r (forward and
    inverse directions are distinct relations), ``self_weight`` the node's
    own state.
    """

    def __init__(self, num_relations_doubled: int, dim: int,
                 generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        bound = 1.0 / math.sqrt(dim)
        def uniform(*shape):
            w = torch.empty(*shape, dtype=dtype)
            with torch.no_grad():
                w.uniform_(-bound, bound, generator=generator)
            return nn.Parameter(w)
        self.rel_weight = uniform(num_relations_doubled, dim, dim)
        self.self_weight = uniform(dim, dim)

    def forward(self, x: torch.Tensor, edges: list) -> torch.Tensor:
        out = x @ self.self_weight.T
        for r, pairs in enumerate(edges):
            if len(pairs) == 0:
                continue
            dst = torch.from_numpy(pairs[:, 0])
            src = torch.from_numpy(pairs[:, 1])
            messages = x[src] @ self.rel_weight[r].T
            # Mean over the in-neighborhood: divide each message by the
            # receiver's degree under this relation.
            deg = torch.zeros(x.shape[0], dtype=x.dtype)
            deg.index_add_(0, dst, torch.ones(len(pairs), dtype=x.dtype))
            messages = messages / deg[dst].unsqueeze(1)
            out = out.index_add(0, dst, messages)
        return torch.relu(out)


class RgcnEncoder(nn.Module):
    """Structural encoder: base embeddings refined by L conv layers.

    ``num_layers=0`` is allowed and makes ``encode()`` return the base
    table, which is also what ``encode_plain()`` always does; ablations that
    bypass message passing use the latter.
    """

    def __init__(self, graph: KnowledgeGraph, dim: int, num_layers: int = 2,
                 seed: int = 0, dtype=torch.float32):
        super().__init__()
        if dim < 1:
            raise ConfigError(f"encoder dim must be positive, got {dim}")
        if num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {num_layers}")
        self.graph = graph
        self.dim = dim
        gen = make_generator(seed)
        base = torch.empty(graph.num_entities, dim, dtype=dtype)
        with torch.no_grad():
            base.normal_(0.0, 1.0, generator=gen)
            base.mul_(1.0 / math.sqrt(dim))
        self.base = nn.Parameter(base)
        self.layers = nn.ModuleList([
            RelationalConvLayer(2 * graph.num_relations, dim, gen, dtype)
            for _ in range(num_layers)
        ])

    def encode(self) -> torch.Tensor:
        x = self.base
        edges = self.graph.edges
        for layer in self.layers:
            x = layer(x, edges)
        return x

    def encode_plain(self) -> torch.Tensor:
        """Base embeddings without any message passing."""
        return self.base
