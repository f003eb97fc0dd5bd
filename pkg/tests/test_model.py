import numpy as np
import pytest

import oracles
from esihgnn import numeric as nc
from esihgnn.corpus import Conversation, Corpus, Utterance
from esihgnn.edges import EdgeFeatureTable, KnowledgeVectors, edge_key
from esihgnn.errors import DomainError, UsageError
from esihgnn.graph import RELATION_GROUPS, RELATIONS, RelationType, build_graph
from esihgnn.model import (ESIHGNN, ModelConfig, aggregate_message, attention_scores, fuse,
                           init_layer, inter_turn_update, intra_turn_update)
from esihgnn.training import TrainConfig, build_model


def make_conv(rng, speakers, dim=5, did="c", classes=3):
    return Conversation(did, [Utterance(i, s, rng.normal(size=dim), int(rng.integers(classes)))
                              for i, s in enumerate(speakers)])


def make_model(convs, dim=5, classes=3, speakers=3, knowledge=None, **overrides):
    cfg = dict(hidden=6, layers=2, omega=1, dropout=0.0, trainable_edge_dim=3, seed=5)
    cfg.update(overrides)
    corpus = Corpus(list(convs), speakers, classes, dim)
    return build_model(TrainConfig(**cfg), corpus, knowledge)


def random_knowledge(rng, convs, omega, dim=4):
    kv = KnowledgeVectors(dim=dim)
    for conv in convs:
        for e in build_graph(conv, omega).edges:
            if e.relation.source_kind == "event":
                kv.vectors[edge_key(conv.dialogue_id, e)] = rng.normal(size=dim)
    return kv


def _layer(rng, H=4, relations=RELATIONS, edim=2):
    return init_layer(H, relations, {r: edim for r in relations}, rng, "t")


# -- building blocks ---------------------------------------------------------

def test_single_edge_attention_is_one(float64, rng):
    layer = _layer(rng)
    alpha, V = attention_scores(layer, [RelationType.xWant], nc.constant(rng.normal(size=4)),
                                [rng.normal(size=4)], [rng.normal(size=2)], [(0, 1)])
    assert alpha.data.tolist() == [1.0] and V.shape == (1, 4)
    assert attention_scores(layer, [], nc.zeros(4), [], [], []) == (None, None)


def test_identical_edges_split_evenly(float64, rng):
    layer = _layer(rng)
    h, a = rng.normal(size=4), rng.normal(size=2)
    alpha, _ = attention_scores(layer, [RelationType.oDrive] * 2, nc.constant(rng.normal(size=4)),
                                [h, h], [a, a], [(1, 1), (1, 1)])
    assert np.allclose(alpha.data, [0.5, 0.5], atol=1e-15)


def test_three_edge_attention_matches_direct_formula(float64, rng):
    layer = _layer(rng)
    rels = [RelationType.xWant, RelationType.oDrive, RelationType.xWant]
    tgt = rng.normal(size=4)
    srcs = [rng.normal(size=4) for _ in rels]
    feats = [rng.normal(size=2) for _ in rels]
    pos = [(2, 1), (1, 1), (0, 2)]
    alpha, V = attention_scores(layer, rels, nc.constant(tgt), srcs, feats, pos)
    w = layer.score.data[0]
    scores = []
    for r, s, a, p in zip(rels, srcs, feats, pos):
        Wv, Wa = layer.node[r].data, layer.edge[r].data
        inner = np.array(oracles.matvec(Wv, tgt)) + np.array(oracles.matvec(Wv, s)) \
            + np.array(oracles.matvec(Wa, a)) + np.array(oracles.matvec(layer.pos.data, p))
        scores.append(float(np.dot(w, inner)))
    assert np.allclose(alpha.data, oracles.softmax(scores), atol=1e-14)
    msg = aggregate_message(alpha, V, 4).data
    ref = sum(a * np.array(oracles.matvec(layer.node[r].data, s)) for a, r, s in zip(alpha.data, rels, srcs))
    assert np.allclose(msg, ref, atol=1e-14)


def test_aggregate_edge_cases(float64, rng):
    assert np.array_equal(aggregate_message(None, None, 3).data, np.zeros(3))
    h = rng.normal(size=(1, 3))
    assert np.allclose(aggregate_message(nc.constant([1.0]), nc.constant(h), 3).data, h[0])


def _zero_layer(rng, H=3):
    layer = _layer(rng, H)
    for gname in ("gru_e_inter", "gru_s_inter", "gru_e_intra", "gru_s_intra"):
        for p in getattr(layer, gname).parameters():
            p.data[...] = 0
    return layer


def test_inter_and_intra_zero_parameter_laws(float64, rng):
    layer = _zero_layer(rng)
    h, M = nc.constant(rng.normal(size=3)), nc.constant(rng.normal(size=3))
    for kind in ("event", "state"):
        assert np.allclose(inter_turn_update(layer, kind, h, M).data, 0.5 * M.data)
        assert np.array_equal(inter_turn_update(layer, kind, h, nc.zeros(3)).data, np.zeros(3))
        assert np.allclose(intra_turn_update(layer, kind, M, h).data, 0.5 * h.data)
        assert np.array_equal(intra_turn_update(layer, kind, M, nc.zeros(3)).data, np.zeros(3))


def test_update_role_assignment_matches_oracle(float64, rng):
    layer = _layer(rng, 3)
    h, M, Mo = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    g = layer.gru_e_inter
    got = inter_turn_update(layer, "event", nc.constant(h), nc.constant(M)).data
    assert np.allclose(got, oracles.gru_step(g.W.data, g.U.data, g.b.data, h, M), atol=1e-14)
    swapped = inter_turn_update(layer, "event", nc.constant(h), nc.constant(M), swap=True).data
    assert np.allclose(swapped, oracles.gru_step(g.W.data, g.U.data, g.b.data, M, h), atol=1e-14)
    g = layer.gru_s_intra
    got = intra_turn_update(layer, "state", nc.constant(Mo), nc.constant(h)).data
    assert np.allclose(got, oracles.gru_step(g.W.data, g.U.data, g.b.data, Mo, h), atol=1e-14)


def test_fuse(float64, rng):
    a = nc.constant(rng.normal(size=4))
    assert np.array_equal(fuse(nc.zeros(4), a).data, a.data)
    assert np.array_equal(fuse(a, nc.neg(a)).data, np.zeros(4))


# -- inputs ------------------------------------------------------------------

def test_project_inputs_laws(float64, rng):
    conv = make_conv(rng, ["A", "B", "A"], dim=6)
    model = make_model([conv], dim=6, hidden=6)
    model.event_proj.data[...] = np.eye(6)
    states = model.project_inputs(model.plan([conv]))
    assert np.allclose(states[1][0].data[0], conv.turns[1].feature)
    assert np.array_equal(states[0][1].data, states[2][1].data)
    model.event_proj.data[...] = 0
    model.state_proj.data[...] = 0
    states = model.project_inputs(model.plan([make_conv(rng, ["A", "B"], dim=6)]))
    assert all(not h.data.any() for pair in states for h in pair)


def test_too_many_speakers(rng):
    conv = make_conv(rng, ["A", "B", "C"])
    model = make_model([conv], speakers=2)
    with pytest.raises(DomainError):
        model.forward([conv])


# -- full forward against the straight-line reference ------------------------

CONFIGS = [
    dict(),
    dict(omega=2, layers=3),
    dict(edge_mode="trainable"),
    dict(edge_mode="binary01"),
    dict(intra_esi=False),
    dict(leaky_relu=True),
    dict(swap_inter_gru=True),
    dict(relations=RELATION_GROUPS["state-to-state"] + RELATION_GROUPS["event-to-event"]),
    dict(layers=0),
    dict(omega=3, layers=1, hidden=4),
]


@pytest.mark.parametrize("overrides", CONFIGS)
@pytest.mark.parametrize("use_knowledge", [False, True])
def test_forward_matches_reference(float64, rng, overrides, use_knowledge):
    convs = [make_conv(rng, oracles.random_speakers(rng, 7, 3), did=f"c{k}") for k in range(3)]
    omega = overrides.get("omega", 1)
    kv = random_knowledge(rng, convs, omega) if use_knowledge else None
    model = make_model(convs, knowledge=kv, **overrides)
    result = model.forward(convs, record_attention=True)
    for c, conv in enumerate(convs):
        H, logits, att = oracles.reference_forward(model, conv, kv)
        assert result.H(c).shape == (len(conv), (model.config.layers + 1) * model.config.hidden)
        assert np.allclose(result.H(c), H, atol=1e-10, rtol=0)
        assert np.allclose(result.logits(c), logits, atol=1e-10, rtol=0)
        got = result.attention_by_node(c)
        for l, nodes in att.items():
            assert len(got[l]) == len(nodes)
            for node, weights in nodes.items():
                pairs = {((e.src.turn, e.src.kind), (e.dst.turn, e.dst.kind), e.relation.name, tuple(e.position)): a
                         for e, a in got[l][node]}
                assert pairs.keys() == weights.keys()
                for k, a in weights.items():
                    assert abs(pairs[k] - a) < 1e-12


def test_batched_forward_equals_single(float64, rng):
    convs = [make_conv(rng, oracles.random_speakers(rng, 8, 3), did=f"c{k}") for k in range(4)]
    model = make_model(convs)
    batched = model.forward(convs)
    for c, conv in enumerate(convs):
        alone = model.forward([conv])
        assert np.allclose(batched.H(c), alone.H(0), atol=1e-13)


def test_single_turn_forward(float64, rng):
    conv = make_conv(rng, ["A"])
    model = make_model([conv])
    result = model.forward([conv], record_attention=True)
    assert result.attention_by_node(0) == {1: {}, 2: {}}
    H, _, _ = oracles.reference_forward(model, conv)
    assert np.allclose(result.H(0), H, atol=1e-12)


def test_zero_layers_head(float64, rng):
    conv = make_conv(rng, ["A", "B"])
    model = make_model([conv], layers=0)
    result = model.forward([conv])
    states = model.project_inputs(model.plan([conv]))
    want = np.stack([states[t][0].data[0] + states[t][1].data[0] for t in range(2)])
    assert np.array_equal(result.H(0), want)


def test_event_state_update_order_is_irrelevant(float64, rng):
    conv = make_conv(rng, ["A", "B", "A", "C", "B"])
    model = make_model([conv])
    a = model.forward([conv]).H(0)
    b = model.forward([conv], state_first=True).H(0)
    assert np.array_equal(a, b)


def test_probabilities_normalized(rng):
    conv = make_conv(rng, ["A", "B", "A", "B"])
    probs = make_model([conv]).forward([conv]).probs(0)
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-6)


def test_group_removal_keeps_shared_computation(float64, rng):
    conv = make_conv(rng, ["A"])  # a graph with no edges of any group
    full = make_model([conv])
    for group, rels in RELATION_GROUPS.items():
        kept = tuple(r for r in RELATIONS if r not in rels)
        ablated = make_model([conv], relations=kept)
        shared = {k: v for k, v in full.state_dict().items() if k in ablated.named_parameters()}
        removed = set(full.named_parameters()) - set(ablated.named_parameters())
        assert all(any(f".{r.name}." in k or k == f"edge.{r.name}" for r in rels) for k in removed)
        ablated.load_state_dict(shared)
        assert np.array_equal(full.forward([conv]).H(0), ablated.forward([conv]).H(0))


def test_loss_is_sum_of_per_conversation_means(float64, rng):
    convs = [make_conv(rng, ["A", "B", "A"], did="x"), make_conv(rng, ["A", "B"], did="y")]
    convs[0].turns[1].label = None
    model = make_model(convs)
    result = model.forward(convs, compute_loss=True)
    want = 0.0
    for c, conv in enumerate(convs):
        logits = result.logits(c)
        nll = [-np.log(oracles.softmax(list(logits[i]))[u.label]) for i, u in enumerate(conv.turns)
               if u.label is not None]
        want += np.mean(nll)
    assert abs(result.loss.item() - want) < 1e-12


def test_dropout_needs_rng(rng):
    conv = make_conv(rng, ["A", "B"])
    model = make_model([conv], dropout=0.5)
    with pytest.raises(UsageError):
        model.forward([conv], train=True)
    a = model.forward([conv], train=True, rng=np.random.default_rng(0)).H(0)
    assert not np.array_equal(a, model.forward([conv]).H(0))


def test_parameter_names_and_counts(rng):
    conv = make_conv(rng, ["A", "B"])
    model = make_model([conv], hidden=6, layers=2, trainable_edge_dim=3)
    names = model.named_parameters()
    for l in (1, 2):
        for suffix in ("score", "pos"):
            assert f"layer{l}.{suffix}" in names
        for g in ("gru_e_inter", "gru_s_inter", "gru_e_intra", "gru_s_intra"):
            assert names[f"layer{l}.{g}.W"].shape == (18, 6)
        for r in RELATIONS:
            assert names[f"layer{l}.{r.name}.node"].shape == (6, 6)
            assert names[f"layer{l}.{r.name}.edge"].shape == (6, 3)
    assert names["classifier.W"].shape == (3, 18)
    assert model.num_parameters() - model.num_parameters(include_edges=False) == 8 * 3


def test_save_load_roundtrip(tmp_path, rng):
    convs = [make_conv(rng, ["A", "B", "A"])]
    kv = random_knowledge(rng, convs, 1)
    model = make_model(convs, knowledge=kv)
    model.save(tmp_path / "m.ckpt")
    with pytest.raises(UsageError):
        ESIHGNN.load(tmp_path / "m.ckpt")
    back = ESIHGNN.load(tmp_path / "m.ckpt", kv)
    assert back.edge_modes() == model.edge_modes()
    assert np.array_equal(back.forward(convs).logits(0), model.forward(convs).logits(0))


def test_missing_edge_relations_rejected():
    table = EdgeFeatureTable.configure(RELATION_GROUPS["event-to-event"], "trainable")
    with pytest.raises(UsageError):
        ESIHGNN(ModelConfig(event_dim=2, hidden=2, layers=1), table)
