"""Scoring-network behavior: encodings, attention, losses, gradients."""

import numpy as np
import pytest
import scipy.special

from kgqa.model.network import (Instance, PathAttentionScorer, ModelConfig, PairData,
                                bce_loss, fallback_vector,
                                instance_from_schema_graph, listwise_loss)
from kgqa.paths import build_schema_graph
from kgqa.selfcheck import CHECK_CONFIG, random_instance

from conftest import make_chain_kg

CFG = ModelConfig(d_node=6, gcn_dims=(5, 4), d_rel=6, lstm_hidden=4,
                  d_t=6, t_hidden=7, d_s=8, score_hidden=5)


def fresh(seed=0, config=CFG, **kw):
    rng = np.random.default_rng(seed)
    inst, s, node_init, rel_emb = random_instance(rng, config, **kw)
    net = PathAttentionScorer(config, np.random.default_rng(seed + 1))
    return net, inst, s, node_init, rel_emb


def single_path_instance(config, rel=0, sign=1.0, n_nodes=3):
    path = (np.array([0]), np.array([rel]), np.array([sign]), np.array([1]))
    pair = PairData(q_row=0, a_row=1, paths=[path])
    return Instance(example_id="x", cand_index=0,
                    node_ids=np.arange(n_nodes),
                    und_edges=[(0, 1)], pairs=[pair], label=1)


def test_zero_lstm_weights_give_zero_path_vectors():
    net, inst, s, node_init, rel_emb = fresh(seed=2, allow_zero_paths=False)
    for name, p in net.params().items():
        if name.startswith("path_lstm."):
            p[:] = 0
    trace = net.forward(inst, s, node_init, rel_emb)
    for vecs in trace.pathvecs:
        if vecs is not None and len(vecs):
            assert np.allclose(vecs, 0.0)


def test_single_step_path_duplicates_its_only_position():
    rng = np.random.default_rng(3)
    inst = single_path_instance(CFG)
    net = PathAttentionScorer(CFG, rng)
    s = rng.standard_normal(CFG.d_s)
    node_init = rng.standard_normal((3, CFG.d_node))
    rel_emb = rng.standard_normal((2, CFG.d_rel))
    trace = net.forward(inst, s, node_init, rel_emb)
    v = trace.pathvecs[0][0]
    H2 = 2 * CFG.lstm_hidden
    assert np.allclose(v[:H2], v[H2:])


def test_reversed_step_changes_the_path_vector():
    rng = np.random.default_rng(4)
    net = PathAttentionScorer(CFG, rng)
    s = rng.standard_normal(CFG.d_s)
    node_init = rng.standard_normal((3, CFG.d_node))
    rel_emb = rng.standard_normal((2, CFG.d_rel))
    fwd = net.forward(single_path_instance(CFG, sign=1.0), s, node_init, rel_emb)
    rev = net.forward(single_path_instance(CFG, sign=-1.0), s, node_init, rel_emb)
    assert not np.allclose(fwd.pathvecs[0][0], rev.pathvecs[0][0])
    assert abs(fwd.score - rev.score) > 0


def test_path_attention_off_means_plain_mean():
    cfg = ModelConfig(**{**CFG.to_dict(), "path_attention": False,
                         "gcn_dims": tuple(CFG.gcn_dims)})
    net, inst, s, node_init, rel_emb = fresh(seed=5, config=cfg,
                                             allow_zero_paths=False)
    trace = net.forward(inst, s, node_init, rel_emb)
    for pi, vecs in enumerate(trace.pathvecs):
        if vecs is not None and len(vecs):
            assert np.allclose(trace.R_hat[pi], vecs.mean(axis=0), atol=1e-12)


def test_mean_degeneracy_one_and_two_identical_paths():
    # one path: R equals that path vector; two equal vectors: R equals them
    rng = np.random.default_rng(6)
    net = PathAttentionScorer(CFG, rng)
    net.W1[:] = 0
    s = rng.standard_normal(CFG.d_s)
    node_init = rng.standard_normal((3, CFG.d_node))
    rel_emb = rng.standard_normal((2, CFG.d_rel))
    inst = single_path_instance(CFG)
    trace = net.forward(inst, s, node_init, rel_emb)
    assert np.allclose(trace.R_hat[0], trace.pathvecs[0][0], atol=1e-12)
    path = (np.array([0]), np.array([0]), np.array([1.0]), np.array([1]))
    inst2 = Instance(example_id="x", cand_index=0, node_ids=np.arange(3),
                     und_edges=[(0, 1)],
                     pairs=[PairData(q_row=0, a_row=1, paths=[path, path])])
    trace2 = net.forward(inst2, s, node_init, rel_emb)
    assert np.allclose(trace2.R_hat[0], trace2.pathvecs[0][0], atol=1e-12)


def test_statement_mlp_zero_weights_bias_only():
    rng = np.random.default_rng(7)
    net = PathAttentionScorer(CFG, rng)
    for name, p in net.params().items():
        if name.startswith("t_mlp."):
            p[:] = 0
    bias = net.t_mlp.layers[-1].b
    bias[:] = np.arange(CFG.d_t, dtype=float)
    inst = single_path_instance(CFG)
    s = rng.standard_normal(CFG.d_s)
    trace = net.forward(inst, s, rng.standard_normal((3, CFG.d_node)),
                        rng.standard_normal((2, CFG.d_rel)))
    assert trace.T.shape == (1, CFG.d_t)
    assert np.allclose(trace.T[0], np.arange(CFG.d_t, dtype=float))


def test_zero_score_mlp_gives_half():
    net, inst, s, node_init, rel_emb = fresh(seed=8)
    for name, p in net.params().items():
        if name.startswith("score_mlp."):
            p[:] = 0
    trace = net.forward(inst, s, node_init, rel_emb)
    assert trace.raw == 0.0
    assert trace.score == pytest.approx(0.5, abs=1e-15)


def test_score_strictly_inside_unit_interval():
    for seed in range(6):
        net, inst, s, node_init, rel_emb = fresh(seed=seed)
        trace = net.forward(inst, s, node_init, rel_emb * 50)
        assert 0.0 < trace.score < 1.0


def test_w1_gradient_zero_when_every_pair_has_one_path():
    net, inst, s, node_init, rel_emb = fresh(seed=9, max_paths=1,
                                             allow_zero_paths=False)
    assert all(len(p.paths) == 1 for p in inst.pairs)
    trace = net.forward(inst, s, node_init, rel_emb)
    net.zero_grad()
    net.backward(trace, 1.0)
    assert np.allclose(net.grads()["W1"], 0.0)


def test_doubling_loss_grad_doubles_every_gradient():
    net, inst, s, node_init, rel_emb = fresh(seed=10)
    trace = net.forward(inst, s, node_init, rel_emb)
    net.zero_grad()
    g1_in = net.backward(trace, 1.0)
    g1 = {k: v.copy() for k, v in net.grads().items()}
    net.zero_grad()
    g2_in = net.backward(trace, 2.0)
    g2 = net.grads()
    for k in g1:
        assert np.allclose(2.0 * g1[k], g2[k], atol=1e-12)
    assert np.allclose(2.0 * g1_in.ds, g2_in.ds, atol=1e-12)
    assert np.allclose(2.0 * g1_in.d_node_init, g2_in.d_node_init, atol=1e-12)
    assert np.allclose(2.0 * g1_in.d_rel_emb, g2_in.d_rel_emb, atol=1e-12)


def test_forward_requires_fallback_for_pathless_pair():
    rng = np.random.default_rng(11)
    net = PathAttentionScorer(CFG, rng)
    inst = Instance(example_id="x", cand_index=0, node_ids=np.arange(2),
                    und_edges=[], pairs=[PairData(q_row=0, a_row=1, paths=[])])
    with pytest.raises(ValueError, match="no paths and no fallback"):
        net.forward(inst, rng.standard_normal(CFG.d_s),
                    rng.standard_normal((2, CFG.d_node)),
                    rng.standard_normal((2, CFG.d_rel)))


def test_bce_loss_matches_reference_and_gradient():
    for raw in (-30.0, -2.0, 0.0, 0.7, 25.0):
        for label in (0, 1):
            loss, grad = bce_loss(raw, label)
            want = -scipy.special.log_expit(raw) if label == 1 \
                else -scipy.special.log_expit(-raw)
            assert loss == pytest.approx(want, rel=1e-12, abs=1e-12)
            assert grad == pytest.approx(scipy.special.expit(raw) - label,
                                         rel=1e-12, abs=1e-12)
            eps = 1e-6
            lp, _ = bce_loss(raw + eps, label)
            lm, _ = bce_loss(raw - eps, label)
            assert grad == pytest.approx((lp - lm) / (2 * eps), abs=1e-5)


def test_listwise_loss_matches_reference_and_gradient():
    raws = np.array([0.3, -1.2, 2.0, 0.0])
    label = 2
    loss, grad = listwise_loss(raws, label)
    want = -scipy.special.log_softmax(raws)[label]
    assert loss == pytest.approx(want, rel=1e-12)
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)
    eps = 1e-6
    for i in range(4):
        rp, rm = raws.copy(), raws.copy()
        rp[i] += eps
        rm[i] -= eps
        num = (listwise_loss(rp, label)[0] - listwise_loss(rm, label)[0]) / (2 * eps)
        assert grad[i] == pytest.approx(num, abs=1e-6)


def test_fallback_vector_deterministic_and_keyed():
    a = fallback_vector(16, 0, "ex", 1, 5, 9)
    b = fallback_vector(16, 0, "ex", 1, 5, 9)
    c = fallback_vector(16, 0, "ex", 1, 5, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_instance_from_schema_graph_maps_rows_and_fallbacks():
    kg = make_chain_kg(4)
    sg = build_schema_graph(kg, {0}, {3}, max_edges=3, cap=10)
    inst = instance_from_schema_graph(sg, "ex", 1, d_path=8, seed=0, label=0)
    assert inst.label == 0
    assert list(inst.node_ids) == sorted(sg.nodes)
    local = {g: i for i, g in enumerate(inst.node_ids)}
    pair = inst.pairs[0]
    assert pair.q_row == local[0]
    assert pair.a_row == local[3]
    heads, rels, signs, tails = pair.paths[0]
    assert list(inst.node_ids[heads]) == [0, 1, 2]
    assert list(inst.node_ids[tails]) == [1, 2, 3]
    assert np.all(signs == 1.0)
    assert pair.fallback is None
    # edges cover each path hop exactly once, undirected
    assert sorted(inst.und_edges) == sorted(
        (min(local[a], local[b]), max(local[a], local[b]))
        for a, b in [(0, 1), (1, 2), (2, 3)])


def test_instance_pathless_pair_gets_seeded_fallback():
    kg = make_chain_kg(3)
    sg = build_schema_graph(kg, {0}, {2}, max_edges=3, cap=10)
    sg.paths[(0, 0)] = []
    inst_a = instance_from_schema_graph(sg, "ex", 0, d_path=8, seed=0)
    inst_b = instance_from_schema_graph(sg, "ex", 0, d_path=8, seed=0)
    inst_c = instance_from_schema_graph(sg, "ex", 0, d_path=8, seed=1)
    assert inst_a.pairs[0].fallback is not None
    assert np.array_equal(inst_a.pairs[0].fallback, inst_b.pairs[0].fallback)
    assert not np.array_equal(inst_a.pairs[0].fallback,
                              inst_c.pairs[0].fallback)


def test_model_config_round_trip():
    cfg = ModelConfig(d_node=7, gcn_dims=(5,), d_rel=3, lstm_hidden=2,
                      d_t=4, t_hidden=4, d_s=6, score_hidden=3,
                      path_attention=False)
    back = ModelConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert cfg.d_path == 8
    assert cfg.d_step == 2 * 5 + 3
    assert ModelConfig(gcn_dims=()).d_gcn_out == 100


def test_check_config_gradients_full_tolerance():
    # one fresh instance through the production gradient path
    from kgqa.selfcheck import gradient_suite
    result = gradient_suite(seed=123, n_instances=2)
    assert result.passed, result.detail
