import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import complete_store, random_graph, tiny_graph
from mmkgc.data import ModalityStore
from mmkgc.errors import ConfigError, DataError
from mmkgc.kgc import (KgcConfig, MultiModalKgcModel, load_kgc, margin_loss,
                       sample_negative_batch, sample_negatives, save_kgc,
                       self_adv_weights, train_kgc)
from mmkgc.numerics import derive_seed


def zeroed_model(num_entities=3, num_relations=1, d=2, d_v=2, scorer="ikrl_like",
                 dtype=torch.float32):
    """Model with every table zeroed so tests can hand-set embeddings."""
    visual = np.zeros((num_entities, d_v), dtype=np.float32)
    model = MultiModalKgcModel(num_entities, num_relations, visual, d, scorer,
                               seed=0, dtype=dtype)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    return model


def small_kgc_config(**over):
    base = dict(d=8, margin=4.0, beta=2.0, N=4, batch_size=32, epochs=2,
                learning_rate=1e-3, seed=11)
    base.update(over)
    return KgcConfig(**base)


# --- scorers ---

def test_unknown_scorer_rejected():
    with pytest.raises(ConfigError):
        MultiModalKgcModel(3, 1, np.zeros((3, 2), dtype=np.float32), 2, "transh")


def test_rsme_requires_even_dim():
    with pytest.raises(ConfigError, match="odd"):
        MultiModalKgcModel(3, 1, np.zeros((3, 2), dtype=np.float32), 3, "rsme_gated")


def test_ikrl_hand_example():
    # d=1: h_s=0, r=1, t_s=1, all visual zero -> -(0+1+0+1) = -2.
    model = zeroed_model(d=1, d_v=1)
    with torch.no_grad():
        model.rel_emb[0] = 1.0
        model.struct_emb[1] = 1.0
    assert model.score(0, 0, 1) == pytest.approx(-2.0, abs=1e-6)


def test_tbkgc_hand_example():
    # h_v=t_v=0 and h_s+r=t_s -> score is -(norm of r).
    model = zeroed_model(d=2, scorer="tbkgc_like")
    with torch.no_grad():
        model.rel_emb[0] = torch.tensor([1.0, 2.0])
        model.struct_emb[1] = torch.tensor([1.0, 2.0])
    assert model.score(0, 0, 1) == pytest.approx(-math.sqrt(5.0), abs=1e-6)


def test_rsme_hand_example():
    # Unit all-real embeddings with e_v = e_s make the gate irrelevant and
    # the bilinear form reduce to 1.
    model = zeroed_model(d=2, d_v=2, scorer="rsme_gated", dtype=torch.float64)
    with torch.no_grad():
        model.struct_emb[0] = torch.tensor([1.0, 0.0], dtype=torch.float64)
        model.struct_emb[1] = torch.tensor([1.0, 0.0], dtype=torch.float64)
        model.rel_emb[0] = torch.tensor([1.0, 0.0], dtype=torch.float64)
        model.visual_proj.bias.copy_(torch.tensor([1.0, 0.0], dtype=torch.float64))
        model.gate_emb[0] = torch.tensor([0.3, -2.0], dtype=torch.float64)
    assert model.score(0, 0, 1) == pytest.approx(1.0, abs=1e-12)


def test_ikrl_swap_symmetry():
    # S(h, r, t) = S(t, -r, h) for the summed cross-modal distances.
    rng = np.random.default_rng(4)
    visual = rng.standard_normal((5, 3)).astype(np.float32)
    model = MultiModalKgcModel(5, 2, visual, 4, "ikrl_like", seed=3,
                               dtype=torch.float64)
    with torch.no_grad():
        model.rel_emb[1] = -model.rel_emb[0]
    for h, t in ((0, 1), (2, 4), (3, 0)):
        assert model.score(h, 0, t) == pytest.approx(model.score(t, 1, h), abs=1e-9)


def test_score_candidates_matches_scalar():
    # float64 keeps batched BLAS kernels and the scalar path within 1e-12.
    rng = np.random.default_rng(5)
    visual = rng.standard_normal((6, 3))
    for scorer in ("ikrl_like", "tbkgc_like", "rsme_gated"):
        model = MultiModalKgcModel(6, 2, visual, 4, scorer, seed=9,
                                   dtype=torch.float64)
        with torch.no_grad():
            tails = model.score_candidates(2, 1, "tail")
            heads = model.score_candidates(2, 1, "head")
        for e in range(6):
            assert float(tails[e]) == pytest.approx(model.score(2, 1, e), rel=1e-12)
            assert float(heads[e]) == pytest.approx(model.score(e, 1, 2), rel=1e-12)
    with pytest.raises(ConfigError):
        model.score_candidates(0, 0, "sideways")


# --- loss pieces ---

def test_self_adv_weights_uniform_cases():
    scores = torch.tensor([3.0, -1.0, 0.5])
    w0 = self_adv_weights(scores, 0.0)
    assert torch.equal(w0, torch.full((3,), 1.0 / 3.0))
    we = self_adv_weights(torch.full((4,), 2.5), 7.0)
    assert torch.allclose(we, torch.full((4,), 0.25))


def test_self_adv_weights_example():
    w = self_adv_weights(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), 1.0)
    e = math.e
    expected = torch.tensor([e / (e + 2), 1 / (e + 2), 1 / (e + 2)],
                            dtype=torch.float64)
    assert torch.allclose(w, expected, atol=1e-12)
    assert float(w.sum()) == pytest.approx(1.0, abs=1e-12)


def test_self_adv_weights_beta_negative():
    with pytest.raises(ConfigError):
        self_adv_weights(torch.ones(3), -1.0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8),
       st.floats(0.0, 5.0), st.floats(-20, 20))
@settings(deadline=None, max_examples=60)
def test_self_adv_weights_properties(scores, beta, shift):
    base = torch.tensor(scores, dtype=torch.float64)
    w = self_adv_weights(base, beta)
    assert float(w.sum()) == pytest.approx(1.0, abs=1e-9)
    shifted = self_adv_weights(base + shift, beta)
    assert torch.allclose(w, shifted, atol=1e-9)
    order = torch.argsort(base)
    assert (w[order][1:] >= w[order][:-1] - 1e-12).all()


def test_margin_loss_examples():
    one = torch.ones(1)
    assert float(margin_loss(torch.tensor(10.0), torch.tensor([2.0]), one, 4.0)) == 0.0
    assert float(margin_loss(torch.tensor(1.0), torch.tensor([0.5]), one, 6.0)) == 5.5
    assert float(margin_loss(torch.tensor(3.0), torch.tensor([3.0]), one, 6.0)) == 6.0


def test_margin_loss_batched_and_weighted():
    pos = torch.tensor([1.0, 10.0])
    negs = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
    weights = torch.tensor([[0.5, 0.5], [0.5, 0.5]])
    out = margin_loss(pos, negs, weights, 2.0)
    assert torch.allclose(out, torch.tensor([1.5, 0.0]))
    with pytest.raises(ValueError):
        margin_loss(pos, negs, torch.ones(3, 2) / 2, 2.0)


@given(st.floats(-20, 20), st.lists(st.floats(-20, 20), min_size=1, max_size=6),
       st.floats(0, 10))
@settings(deadline=None, max_examples=50)
def test_margin_loss_nonnegative(pos, negs, margin):
    n = torch.tensor(negs, dtype=torch.float64)
    w = torch.full_like(n, 1.0 / len(negs))
    out = margin_loss(torch.tensor(pos, dtype=torch.float64), n, w, margin)
    assert float(out) >= 0.0


# --- negative sampling ---

def test_sample_negatives_two_entity_graph():
    empty = np.empty((0, 3), dtype=np.int64)
    from mmkgc.data import KnowledgeGraph
    graph = KnowledgeGraph(["a", "b"], ["r"], np.array([[0, 0, 1]]), empty, empty)
    rng = np.random.default_rng(0)
    negs = sample_negatives((0, 0, 1), graph, 50, rng)
    allowed = {(1, 0, 1), (0, 0, 0)}
    assert set(map(tuple, negs.tolist())) <= allowed


def test_sample_negatives_avoid_train_membership():
    graph = tiny_graph()
    rng = np.random.default_rng(1)
    train_set = graph.train_set
    hits = 0
    for triple in graph.train.tolist():
        negs = sample_negatives(tuple(triple), graph, 200, rng)
        hits += sum(tuple(row) in train_set for row in negs.tolist())
    assert hits == 0


def test_sample_negatives_deterministic():
    graph = tiny_graph()
    a = sample_negatives((0, 0, 1), graph, 10, np.random.default_rng(42))
    b = sample_negatives((0, 0, 1), graph, 10, np.random.default_rng(42))
    assert (a == b).all()


def test_sample_negative_batch_shape_and_membership():
    graph = tiny_graph()
    rng = np.random.default_rng(2)
    batch = graph.train[:4]
    negs = sample_negative_batch(batch, graph, 8, rng)
    assert negs.shape == (4, 8, 3)
    train_set = graph.train_set
    for i, (h, r, t) in enumerate(batch.tolist()):
        for e_h, e_r, e_t in negs[i].tolist():
            assert e_r == r
            assert (e_h, e_r, e_t) not in train_set
            # corruption touches one side only
            assert e_h == h or e_t == t


# --- training ---

def test_train_kgc_requires_complete_store(rng):
    graph = tiny_graph()
    store = ModalityStore(rng.standard_normal((6, 3)).astype(np.float32),
                          [True] * 5 + [False])
    with pytest.raises(DataError):
        train_kgc(graph, store, small_kgc_config(), "ikrl_like")


def test_train_kgc_requires_seed(rng):
    graph = tiny_graph()
    with pytest.raises(ConfigError):
        train_kgc(graph, complete_store(rng, 6, 3), small_kgc_config(seed=None),
                  "ikrl_like")


def test_train_kgc_zero_lr_freezes(rng):
    graph = tiny_graph()
    store = complete_store(rng, 6, 3)
    model, _ = train_kgc(graph, store, small_kgc_config(learning_rate=0.0),
                         "ikrl_like")
    fresh = MultiModalKgcModel(6, 2, store.features, 8, "ikrl_like",
                               seed=derive_seed(11, "model"))
    for pa, pb in zip(model.parameters(), fresh.parameters()):
        assert torch.equal(pa, pb)


def test_train_kgc_deterministic(rng):
    graph = tiny_graph()
    store = complete_store(rng, 6, 3)
    _, hist_a = train_kgc(graph, store, small_kgc_config(epochs=3), "tbkgc_like")
    _, hist_b = train_kgc(graph, store, small_kgc_config(epochs=3), "tbkgc_like")
    assert hist_a == hist_b


def test_train_kgc_visual_frozen_by_default(rng):
    graph = tiny_graph()
    store = complete_store(rng, 6, 3)
    model, _ = train_kgc(graph, store, small_kgc_config(epochs=2), "ikrl_like")
    assert (model.visual_raw.numpy() == store.features).all()


def test_train_kgc_visual_trainable_flag(rng):
    graph = tiny_graph()
    store = complete_store(rng, 6, 3)
    config = small_kgc_config(epochs=4, train_visual=True, learning_rate=1e-2)
    model, _ = train_kgc(graph, store, config, "ikrl_like")
    assert isinstance(model.visual_raw, torch.nn.Parameter)
    assert not (model.visual_raw.detach().numpy() == store.features).all()


def test_train_kgc_loss_decreases():
    wins = 0
    for seed in range(5):
        rng = np.random.default_rng(derive_seed(seed, "kgc-toy"))
        graph = random_graph(rng, 30, 2, 100)
        store = complete_store(rng, 30, 4)
        config = KgcConfig(d=8, margin=4.0, beta=2.0, N=4, batch_size=32,
                           epochs=10, learning_rate=1e-2, seed=seed)
        _, history = train_kgc(graph, store, config, "ikrl_like")
        wins += history["loss"][-1] < history["loss"][0]
    assert wins >= 4


def test_kgc_checkpoint_round_trip(tmp_path, rng):
    graph = tiny_graph()
    store = complete_store(rng, 6, 3)
    config = small_kgc_config(epochs=2)
    model, _ = train_kgc(graph, store, config, "rsme_gated")
    path = tmp_path / "kgc.ckpt"
    save_kgc(path, model, config)
    loaded, loaded_config = load_kgc(path)
    assert loaded_config == config
    assert loaded.scorer == "rsme_gated"
    for h, r, t in ((0, 0, 1), (2, 1, 3), (5, 0, 4)):
        assert loaded.score(h, r, t) == model.score(h, r, t)


def test_load_kgc_rejects_other_checkpoints(tmp_path):
    from mmkgc.numerics import save_checkpoint
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"a": torch.ones(1)}, metadata={"kind": "completer"})
    with pytest.raises(DataError):
        load_kgc(path)


def test_kgc_config_validation():
    for bad in (dict(d=0), dict(margin=-1.0), dict(beta=-0.5), dict(N=0),
                dict(batch_size=0), dict(epochs=-1), dict(learning_rate=-1e-3),
                dict(optimizer="sgdm")):
        with pytest.raises(ConfigError):
            small_kgc_config(**bad).validate()
