"""Adversarial imputation of missing visual features.

A conditional generator maps an entity's structural embedding plus noise to
a synthetic visual feature; a discriminator scores (structure, visual)
pairs. Training plays the usual minimax game, optionally augmented with a
cross-modal contrastive term that pulls each generated feature toward its
own entity's structural feature and away from other entities' fakes in the
batch. Completion then pools K generated candidates per entity, keeping
the ones the discriminator accepts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import KnowledgeGraph, ModalityStore
from .encoder import RgcnEncoder
from .errors import ConfigError, DataError, NumericalError
from .numerics import derive_seed, init_dense_, make_generator, make_optimizer, save_checkpoint, load_checkpoint

COMPLETION_STRATEGIES = ("gen", "all_gen")


@dataclass
class CompleterConfig:
    """Hyperparameters for adversarial feature completion.

    ``alpha`` weighs the contrastive term (0 disables it entirely);
    ``conditional=False`` feeds the generator noise only; and
    ``use_structural_encoder=False`` swaps graph convolution for plain
    embeddings. The last two exist for ablations.
    """

    d_s: int = 768
    d_z: int = 128
    hidden: int = 256
    num_layers: int = 2
    tau: float = 1.0
    alpha: float = 0.01
    batch_size: int = 128
    epochs: int = 500
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    K: int = 512
    accept_threshold: float = 0.5
    strategy: str = "gen"
    seed: Optional[int] = None
    conditional: bool = True
    use_structural_encoder: bool = True
    non_saturating: bool = False
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.d_s < 1 or self.d_z < 1 or self.hidden < 1:
            raise ConfigError("embedding, noise, and hidden dims must be positive")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.K < 1:
            raise ConfigError(f"K must be positive, got {self.K}")
        if not 0.0 <= self.accept_threshold <= 1.0:
            raise ConfigError(f"accept_threshold must lie in [0, 1], got {self.accept_threshold}")
        if self.strategy not in COMPLETION_STRATEGIES:
            raise ConfigError(f"unknown completion strategy {self.strategy!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Generator(nn.Module):
    """Two-layer MLP from [structure; noise] to a visual feature.

    With ``conditional=False`` the structural half of the input is dropped
    and generation depends on noise alone.
    """

    def __init__(self, d_s: int, d_z: int, hidden: int, d_v: int,
                 generator: torch.Generator, conditional: bool = True,
                 dtype=torch.float32):
        super().__init__()
        self.conditional = conditional
        d_in = d_s + d_z if conditional else d_z
        self.fc1 = nn.Linear(d_in, hidden, dtype=dtype)
        self.fc2 = nn.Linear(hidden, d_v, dtype=dtype)
        init_dense_(self.fc1, generator)
        init_dense_(self.fc2, generator)

    def forward(self, s: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        x = torch.cat([s, z], dim=-1) if self.conditional else z
        return self.fc2(F.leaky_relu(self.fc1(x), 0.01))


class Discriminator(nn.Module):
    """Scores (structure, visual) pairs with a probability of being real."""

    def __init__(self, d_s: int, hidden: int, d_v: int,
                 generator: torch.Generator, dtype=torch.float32):
        super().__init__()
        self.fc_s = nn.Linear(d_s, hidden, dtype=dtype)
        self.head = nn.Linear(hidden + d_v, 1, dtype=dtype)
        init_dense_(self.fc_s, generator)
        init_dense_(self.head, generator)

    def logits(self, s: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.fc_s(s), 0.01)
        return self.head(torch.cat([h, v], dim=-1)).squeeze(-1)

    def forward(self, s: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(s, v))


def adversarial_loss(disc: Discriminator, real: tuple, fake: tuple) -> torch.Tensor:
    """Binary cross-entropy of the pair discriminator.

    L = -( mean log(1 - D(s, g))  over fake pairs
         + mean log D(s, v)       over real pairs )

    The discriminator minimizes this; the generator maximizes it. Evaluated
    in logit space (-log(1-sigmoid(x)) = softplus(x)), which keeps the value
    finite and the gradients alive even when the discriminator saturates.
    """
    s_real, v_real = real
    s_fake, g_fake = fake
    if s_real.shape[0] == 0:
        raise ConfigError("completer requires at least one modality-complete entity")
    if s_fake.shape[0] == 0:
        raise ConfigError("adversarial loss needs at least one generated pair")
    logit_fake = disc.logits(s_fake, g_fake)
    logit_real = disc.logits(s_real, v_real)
    return F.softplus(logit_fake).mean() + F.softplus(-logit_real).mean()


def pair_score(s: torch.Tensor, g: torch.Tensor, tau: float) -> torch.Tensor:
    """exp(cosine(s, g) / tau); inputs must be nonzero vectors."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    ns = torch.linalg.vector_norm(s, dim=-1)
    ng = torch.linalg.vector_norm(g, dim=-1)
    if bool((ns == 0).any()) or bool((ng == 0).any()):
        raise ValueError("pair_score is undefined for zero vectors")
    cos = (s * g).sum(-1) / (ns * ng)
    return torch.exp(cos / tau)


def contrastive_loss(structural: torch.Tensor, generated: torch.Tensor,
                     tau: float) -> torch.Tensor:
    """Cross-modal InfoNCE between structural and generated features.

    Row i's positive pair is (structural[i], generated[i]); the other
    generated rows in the batch act as negatives. Equivalent to
    cross-entropy over the scaled cosine-similarity matrix, so a batch of
    one gives exactly zero. Requires d_v = d_s.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if structural.shape != generated.shape:
        raise ValueError(
            f"shape mismatch {tuple(structural.shape)} vs {tuple(generated.shape)}")
    if structural.shape[0] == 0:
        raise ValueError("contrastive loss needs at least one pair")
    sim = F.normalize(structural, dim=-1) @ F.normalize(generated, dim=-1).T
    targets = torch.arange(structural.shape[0])
    return F.cross_entropy(sim / tau, targets)


@dataclass
class _TrainState:
    encoder: RgcnEncoder
    generator: Generator
    discriminator: Discriminator


def build_completer(graph: KnowledgeGraph, d_v: int, config: CompleterConfig,
                    dtype=torch.float32) -> _TrainState:
    """Construct encoder, generator, and discriminator with sub-seeds
    derived from ``config.seed``."""
    config.validate()
    if config.seed is None:
        raise ConfigError("completer seed must be resolved before building models")
    if config.alpha > 0 and d_v != config.d_s:
        raise ConfigError(
            f"contrastive loss compares structural and visual features by cosine, "
            f"which needs d_v == d_s; got d_v={d_v}, d_s={config.d_s}")
    num_layers = config.num_layers if config.use_structural_encoder else 0
    encoder = RgcnEncoder(graph, config.d_s, num_layers,
                          seed=derive_seed(config.seed, "encoder"), dtype=dtype)
    gen = Generator(config.d_s, config.d_z, config.hidden, d_v,
                    make_generator(derive_seed(config.seed, "generator")),
                    conditional=config.conditional, dtype=dtype)
    disc = Discriminator(config.d_s, config.hidden, d_v,
                         make_generator(derive_seed(config.seed, "discriminator")),
                         dtype=dtype)
    return _TrainState(encoder, gen, disc)


def _structural(state: _TrainState, config: CompleterConfig) -> torch.Tensor:
    if config.use_structural_encoder:
        return state.encoder.encode()
    return state.encoder.encode_plain()


def train_completer(graph: KnowledgeGraph, store: ModalityStore,
                    state: _TrainState, config: CompleterConfig) -> dict:
    """Alternating optimization of discriminator and generator.

    Each step draws a fake batch from a per-epoch shuffled partition of all
    entities and a real batch uniformly (with replacement) from the
    modality-complete set. The discriminator update sees structural
    embeddings detached; the generator update backpropagates through the
    encoder as well, so structure learns to help fool the discriminator.
    Returns per-epoch mean losses.
    """
    config.validate()
    if config.seed is None:
        raise ConfigError("completer seed must be resolved before training")
    complete = store.complete_ids
    if complete.size == 0:
        raise ConfigError("completer requires at least one modality-complete entity")

    dtype = state.generator.fc1.weight.dtype
    visual = torch.from_numpy(store.features).to(dtype)
    opt_d = make_optimizer(state.discriminator.parameters(), config.lr_d, config.optimizer)
    opt_g = make_optimizer(
        list(state.generator.parameters()) + list(state.encoder.parameters()),
        config.lr_g, config.optimizer)

    noise_gen = make_generator(derive_seed(config.seed, "train", "noise"))
    batch_rng = np.random.default_rng(derive_seed(config.seed, "train", "batches"))
    n = graph.num_entities
    history = {"d_loss": [], "g_adv": [], "g_con": []}

    def sample_noise(count: int) -> torch.Tensor:
        return torch.randn(count, config.d_z, generator=noise_gen, dtype=dtype)

    for _epoch in range(config.epochs):
        order = batch_rng.permutation(n)
        d_losses, g_advs, g_cons = [], [], []
        for start in range(0, n, config.batch_size):
            fake_ids = torch.from_numpy(order[start:start + config.batch_size].copy())
            real_ids = torch.from_numpy(
                batch_rng.choice(complete, size=len(fake_ids), replace=True))

            # Discriminator step; structural embeddings detached so this
            # update never touches the encoder.
            s_all = _structural(state, config).detach()
            with torch.no_grad():
                g_fake = state.generator(s_all[fake_ids], sample_noise(len(fake_ids)))
            d_loss = adversarial_loss(
                state.discriminator,
                (s_all[real_ids], visual[real_ids]),
                (s_all[fake_ids], g_fake),
            )
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()

            # Generator step with fresh noise; encoder gradients flow here.
            s_all = _structural(state, config)
            g_fake = state.generator(s_all[fake_ids], sample_noise(len(fake_ids)))
            adv = adversarial_loss(
                state.discriminator,
                (s_all[real_ids], visual[real_ids]),
                (s_all[fake_ids], g_fake),
            )
            if config.non_saturating:
                logit_fake = state.discriminator.logits(s_all[fake_ids], g_fake)
                g_obj = F.softplus(-logit_fake).mean()
            else:
                g_obj = -adv
            con = torch.zeros((), dtype=dtype)
            if config.alpha > 0:
                con = contrastive_loss(s_all[fake_ids], g_fake, config.tau)
            total = g_obj + config.alpha * con
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            for value, name in ((d_loss, "d_loss"), (adv, "g_adv"), (con, "g_con")):
                if not bool(torch.isfinite(value)):
                    raise NumericalError(
                        f"{name} became non-finite at epoch {_epoch}: {value.item()}")
            d_losses.append(d_loss.item())
            g_advs.append(adv.item())
            g_cons.append(con.item())

        history["d_loss"].append(float(np.mean(d_losses)))
        history["g_adv"].append(float(np.mean(g_advs)))
        history["g_con"].append(float(np.mean(g_cons)))
    return history


def pool_accepted(candidates: torch.Tensor, accepted: torch.Tensor) -> torch.Tensor:
    """Mean of accepted candidate rows; falls back to the plain mean when
    the discriminator rejects everything."""
    if candidates.ndim != 2 or candidates.shape[0] == 0:
        raise ValueError("candidates must be a non-empty (K, d) matrix")
    if accepted.shape[0] != candidates.shape[0]:
        raise ValueError("acceptance flags do not match candidates")
    if bool(accepted.any()):
        return candidates[accepted].mean(0)
    return candidates.mean(0)


def complete_features(graph: KnowledgeGraph, store: ModalityStore,
                      state: _TrainState, config: CompleterConfig) -> tuple:
    """Impute features and return (completed store, per-entity info).

    Strategy ``gen`` regenerates only missing entities and keeps observed
    rows untouched; ``all_gen`` regenerates every entity. For each target
    the generator draws K candidates whose noise comes from a stream keyed
    by (seed, entity id), so results do not depend on target order.
    """
    config.validate()
    if config.seed is None:
        raise ConfigError("completer seed must be resolved before completion")
    if config.strategy == "gen":
        targets = store.missing_ids
    else:
        targets = np.arange(graph.num_entities)

    out = store.copy()
    accepted_counts: dict = {}
    state.generator.eval()
    state.discriminator.eval()
    with torch.no_grad():
        s_all = _structural(state, config)
        dtype = s_all.dtype
        for entity in targets.tolist():
            noise = np.random.default_rng([config.seed, entity]).standard_normal(
                (config.K, config.d_z))
            z = torch.from_numpy(noise).to(dtype)
            s_rep = s_all[entity].unsqueeze(0).expand(config.K, -1)
            cand = state.generator(s_rep, z)
            probs = state.discriminator(s_rep, cand)
            flags = probs >= config.accept_threshold
            out.features[entity] = pool_accepted(cand, flags).numpy()
            out.mask[entity] = True
            accepted_counts[entity] = int(flags.sum())
    state.generator.train()
    state.discriminator.train()
    info = {
        "strategy": config.strategy,
        "K": config.K,
        "accept_threshold": config.accept_threshold,
        "seed": config.seed,
        "accepted": accepted_counts,
    }
    return out, info


def naive_completion(store: ModalityStore, mode: str, seed: int = 0) -> ModalityStore:
    """Baselines: fill missing rows with N(0,1) noise ("random") or ones
    ("one")."""
    out = store.copy()
    missing = out.missing_ids
    if mode == "random":
        rng = np.random.default_rng(seed)
        out.features[missing] = rng.standard_normal(
            (len(missing), out.dim)).astype(np.float32)
    elif mode == "one":
        out.features[missing] = 1.0
    else:
        raise ConfigError(f"unknown naive completion mode {mode!r}")
    out.mask[missing] = True
    return out


def save_completer(path, state: _TrainState, config: CompleterConfig) -> None:
    tensors = {}
    for prefix, module in (("encoder", state.encoder),
                           ("generator", state.generator),
                           ("discriminator", state.discriminator)):
        for name, tensor in module.state_dict().items():
            tensors[f"{prefix}.{name}"] = tensor
    save_checkpoint(path, tensors, metadata={"kind": "completer", "config": config.to_dict()})


def load_completer(path, graph: KnowledgeGraph, d_v: int) -> tuple:
    tensors, metadata = load_checkpoint(path)
    if metadata.get("kind") != "completer":
        raise DataError(f"{path}: not a completer checkpoint")
    config = CompleterConfig(**metadata["config"])
    state = build_completer(graph, d_v, config)
    for prefix, module in (("encoder", state.encoder),
                           ("generator", state.generator),
                           ("discriminator", state.discriminator)):
        sub = {name[len(prefix) + 1:]: tensor for name, tensor in tensors.items()
               if name.startswith(prefix + ".")}
        module.load_state_dict(sub)
    return state, config
