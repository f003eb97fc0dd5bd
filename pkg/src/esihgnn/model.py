"""HDAGNN layers and the emotion prediction head.

Within one layer nodes are updated in turn order and read their
predecessors' *current-layer* states, so a layer is a recurrence over turns.
The engine batches that recurrence across conversations: wave t holds turn t
of every conversation long enough to have one. Nothing in wave t depends on
later waves, which is also what makes outputs invariant to future turns.
"""

from __future__ import annotations

import dataclasses
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nc
from .edges import EdgeFeatureTable, EdgeMode
from .errors import DomainError, ShapeError, UsageError
from .graph import EVENT, KINDS, RELATIONS, STATE, build_graph, parse_relations
from .numeric import GruParams, Parameter, get_default_dtype, init_gru, init_linear

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    event_dim: int = 1024
    speaker_dim: int = 2
    num_classes: int = 7
    hidden: int = 300
    layers: int = 4
    omega: int = 1
    relations: tuple = RELATIONS
    intra_esi: bool = True
    dropout: float = 0.1
    leaky_relu: bool = False
    swap_inter_gru: bool = False

    def __post_init__(self):
        self.relations = parse_relations(self.relations)
        for name in ("event_dim", "speaker_dim", "num_classes", "hidden", "omega"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if self.layers < 0:
            raise UsageError("layers must be >= 0")
        if not 0 <= self.dropout < 1:
            raise UsageError("dropout must be in [0, 1)")

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["relations"] = [r.name for r in self.relations]
        return doc

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass
class LayerParams:
    score: Parameter  # (1, H)
    pos: Parameter  # (H, 2)
    node: dict  # relation -> (H, H)
    edge: dict  # relation -> (H, dim of that relation's edge feature)
    gru_e_inter: GruParams
    gru_s_inter: GruParams
    gru_e_intra: GruParams
    gru_s_intra: GruParams

    def named_parameters(self, prefix):
        out = [(f"{prefix}.score", self.score), (f"{prefix}.pos", self.pos)]
        for rel in RELATIONS:
            if rel in self.node:
                out.append((f"{prefix}.{rel.name}.node", self.node[rel]))
                out.append((f"{prefix}.{rel.name}.edge", self.edge[rel]))
        for gname in ("gru_e_inter", "gru_s_inter", "gru_e_intra", "gru_s_intra"):
            gru = getattr(self, gname)
            out += [(f"{prefix}.{gname}.W", gru.W), (f"{prefix}.{gname}.U", gru.U), (f"{prefix}.{gname}.b", gru.b)]
        return out


def init_layer(hidden, relations, edge_dims, rng, prefix):
    node = {r: init_linear(hidden, hidden, rng, f"{prefix}.{r.name}.node") for r in relations}
    edge = {r: init_linear(hidden, edge_dims[r], rng, f"{prefix}.{r.name}.edge") for r in relations}
    return LayerParams(
        score=init_linear(1, hidden, rng, f"{prefix}.score"),
        pos=init_linear(hidden, 2, rng, f"{prefix}.pos", bound=1.0 / np.sqrt(hidden)),
        node=node,
        edge=edge,
        gru_e_inter=init_gru(hidden, hidden, rng, f"{prefix}.gru_e_inter"),
        gru_s_inter=init_gru(hidden, hidden, rng, f"{prefix}.gru_s_inter"),
        gru_e_intra=init_gru(hidden, hidden, rng, f"{prefix}.gru_e_intra"),
        gru_s_intra=init_gru(hidden, hidden, rng, f"{prefix}.gru_s_intra"),
    )


# ---------------------------------------------------------------------------
# layer building blocks; all accept row batches


def edge_scores(layer, relation, h_target_prev, h_sources, edge_feature, positions, leaky=False):
    """Unnormalized attention score of each edge of one relation.

    h_target_prev: (E, H) previous-layer state of each edge's target.
    h_sources: (E, H) current-layer state of each edge's source.
    edge_feature: (E, d) or (1, d) shared across the edges.
    positions: (E, 2) absolute/relative source positions.
    Returns (scores (E,), transformed sources W_{r,v} h_j (E, H)).
    """
    W_node = layer.node[relation]
    v_tgt = nc.linear(W_node, None, h_target_prev)
    v_src = nc.linear(W_node, None, h_sources)
    e_term = nc.linear(layer.edge[relation], None, edge_feature)
    p_term = nc.linear(layer.pos, None, positions)
    pre = v_tgt + v_src + e_term + p_term
    scores = nc.reshape(nc.linear(layer.score, None, pre), (pre.shape[0],))
    if leaky:
        scores = nc.leaky_relu(scores)
    return scores, v_src


def attention_scores(layer, relations, h_target_prev, h_sources, edge_features, positions, leaky=False):
    """Attention weights over all incoming edges of one node, normalized jointly across relations.

    relations[k], h_sources[k], edge_features[k] and positions[k] describe
    edge k; h_target_prev is the node's (H,) previous-layer state. Returns
    (alpha (E,), transformed sources (E, H)); both are None without edges.
    """
    if not relations:
        return None, None
    scores, sources = [], []
    for rel, h_src, feat, pos in zip(relations, h_sources, edge_features, positions):
        s, v = edge_scores(
            layer, rel,
            nc.reshape(h_target_prev, (1, -1)),
            nc.reshape(nc.as_tensor(h_src), (1, -1)),
            nc.reshape(nc.as_tensor(feat), (1, -1)),
            nc.constant(np.asarray(pos, dtype=float).reshape(1, 2), dtype=h_target_prev.dtype),
            leaky,
        )
        scores.append(s)
        sources.append(v)
    return nc.softmax(nc.concat(scores)), nc.concat(sources)


def aggregate_message(alpha, transformed_sources, hidden):
    """M = sum_k alpha_k W_{r_k,v} h_k; a node without edges gets the zero vector."""
    if alpha is None:
        return nc.zeros(hidden)
    weighted = nc.mul(nc.reshape(alpha, (alpha.shape[0], 1)), transformed_sources)
    return nc.reshape(nc.segment_sum(weighted, np.zeros(alpha.shape[0], dtype=np.intp), 1), (hidden,))


def inter_turn_update(layer, kind, h_prev, message, swap=False):
    """GRU_{kind,inter} with the previous-layer state as input and the message as hidden state."""
    gru = layer.gru_e_inter if kind == EVENT else layer.gru_s_inter
    return gru(message, h_prev) if swap else gru(h_prev, message)


def intra_turn_update(layer, kind, sibling_message, h_prev):
    """GRU_{kind,intra}: the sibling node's message as input, the node's own previous state as hidden."""
    gru = layer.gru_e_intra if kind == EVENT else layer.gru_s_intra
    return gru(sibling_message, h_prev)


def fuse(h_inter, h_intra):
    return nc.add(h_inter, h_intra)


# ---------------------------------------------------------------------------
# batch planning


@dataclass
class _Group:
    relation: object
    dst_rows: np.ndarray
    src_waves: np.ndarray
    src_rows: np.ndarray
    positions: np.ndarray
    edges: list  # (conversation index, Edge)
    external: np.ndarray = None


@dataclass
class _Wave:
    turn: int
    convs: list
    features: np.ndarray
    onehots: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    groups: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.convs)


@dataclass
class _Plan:
    conversations: list
    graphs: list
    waves: list
    rows: list  # rows[t][c] -> row of conversation c in wave t


class ForwardResult:
    """Per-wave outputs of one forward pass, with per-conversation accessors."""

    def __init__(self, plan, states, H, logits, probs, loss, attention):
        self.plan = plan
        self.states = states  # states[l][t] = (h_e, h_s) tensors
        self.H_waves = H
        self.logit_waves = logits
        self.prob_waves = probs
        self.loss = loss
        self.attention = attention  # attention[l-1][t] = (alpha ndarray, segment ids, edges)

    def _collect(self, waves, c):
        rows = [waves[t].data[self.plan.rows[t][c]] for t in range(len(self.plan.conversations[c]))]
        return np.stack(rows)

    def H(self, c=0):
        return self._collect(self.H_waves, c)

    def logits(self, c=0):
        return self._collect(self.logit_waves, c)

    def probs(self, c=0):
        return self._collect(self.prob_waves, c)

    def predictions(self, c=0):
        return self.logits(c).argmax(axis=1)

    def node_states(self, layer, kind, c=0):
        k = KINDS.index(kind)
        rows = [self.states[layer][t][k].data[self.plan.rows[t][c]]
                for t in range(len(self.plan.conversations[c]))]
        return np.stack(rows)

    def attention_by_node(self, c=0):
        """{layer: {dst NodeRef: [(Edge, weight), ...]}} for conversation c."""
        out = {}
        for l, waves in enumerate(self.attention, start=1):
            per_node = {}
            for alpha, _, edges in waves:
                for a, (conv, e) in zip(alpha, edges):
                    if conv == c:
                        per_node.setdefault(e.dst, []).append((e, float(a)))
            out[l] = per_node
        return out


class ESIHGNN:
    """Event-state interaction heterogeneous graph network."""

    def __init__(self, config, edge_table=None, seed=0):
        self.config = config
        self.dtype = get_default_dtype()
        if edge_table is None:
            edge_table = EdgeFeatureTable.configure(config.relations, "default", None, seed=seed + 1)
        missing = [r.name for r in config.relations if r not in edge_table.modes]
        if missing:
            raise UsageError(f"edge table lacks active relations {missing}")
        self.edge_table = edge_table
        rng = np.random.default_rng(seed)
        H = config.hidden
        self.event_proj = init_linear(H, config.event_dim, rng, "proj.event")
        self.state_proj = init_linear(H, config.speaker_dim, rng, "proj.state")
        edge_dims = {r: edge_table.dim(r) for r in config.relations}
        self.layers = [init_layer(H, config.relations, edge_dims, rng, f"layer{l}")
                       for l in range(1, config.layers + 1)]
        self.classifier_W = init_linear(config.num_classes, (config.layers + 1) * H, rng, "classifier.W")
        self.classifier_b = Parameter(np.zeros(config.num_classes), name="classifier.b", dtype=self.dtype)
        self._graphs = {}
        self._plans = OrderedDict()

    # -- parameters ---------------------------------------------------------

    def named_parameters(self, include_edges=True):
        out = [("proj.event", self.event_proj), ("proj.state", self.state_proj)]
        for l, layer in enumerate(self.layers, start=1):
            out += layer.named_parameters(f"layer{l}")
        out += [("classifier.W", self.classifier_W), ("classifier.b", self.classifier_b)]
        if include_edges:
            out += [(p.name, p) for p in self.edge_table.parameters()]
        return OrderedDict(out)

    def parameters(self, include_edges=True):
        return list(self.named_parameters(include_edges).values())

    def num_parameters(self, include_edges=True):
        return int(sum(p.size for p in self.parameters(include_edges)))

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters().items())

    def load_state_dict(self, arrays):
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        unexpected = set(arrays) - set(params)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def edge_modes(self):
        return {r.name: self.edge_table.modes[r].value for r in self.config.relations}

    # -- planning -----------------------------------------------------------

    def graph_for(self, conv):
        key = (conv.dialogue_id, tuple(conv.speakers))
        g = self._graphs.get(key)
        if g is None:
            g = self._graphs[key] = build_graph(conv, self.config.omega, self.config.relations)
        return g

    def plan(self, conversations):
        key = tuple((id(c), c.dialogue_id, len(c)) for c in conversations)
        cached = self._plans.get(key)
        if cached is not None:
            self._plans.move_to_end(key)
            return cached
        plan = self._build_plan(list(conversations))
        self._plans[key] = plan
        if len(self._plans) > 256:
            self._plans.popitem(last=False)
        return plan

    def _build_plan(self, convs):
        cfg = self.config
        if not convs:
            raise UsageError("forward needs at least one conversation")
        graphs = [self.graph_for(c) for c in convs]
        T = max(len(c) for c in convs)
        rows = [{} for _ in range(T)]
        for t in range(T):
            for c, conv in enumerate(convs):
                if len(conv) > t:
                    rows[t][c] = len(rows[t])
        speaker_idx = []
        for conv in convs:
            idx = conv.speaker_indices()
            if max(idx) >= cfg.speaker_dim:
                raise DomainError(f"dialogue {conv.dialogue_id!r} has {max(idx) + 1} speakers; "
                                  f"the one-hot width is {cfg.speaker_dim}")
            speaker_idx.append(idx)
        waves = []
        for t in range(T):
            members = list(rows[t])
            feats = np.zeros((len(members), cfg.event_dim), dtype=self.dtype)
            onehots = np.zeros((len(members), cfg.speaker_dim), dtype=self.dtype)
            labels = np.full(len(members), -1, dtype=np.intp)
            weights = np.zeros(len(members), dtype=self.dtype)
            groups = {}
            for r, c in enumerate(members):
                conv = convs[c]
                utt = conv.turns[t]
                f = np.asarray(utt.feature)
                if f.shape != (cfg.event_dim,):
                    raise ShapeError(f"dialogue {conv.dialogue_id!r} turn {t}: feature shape {f.shape}, "
                                     f"expected ({cfg.event_dim},)")
                feats[r] = f
                onehots[r, speaker_idx[c][t]] = 1.0
                if utt.label is not None:
                    labels[r] = utt.label
                    weights[r] = 1.0 / sum(1 for u in conv.turns if u.label is not None)
                for kind in KINDS:
                    for e in graphs[c].incoming((t, kind)):
                        g = groups.setdefault(e.relation, ([], [], [], [], []))
                        g[0].append(r)
                        g[1].append(e.src.turn)
                        g[2].append(rows[e.src.turn][c])
                        g[3].append(e.position)
                        g[4].append((c, e))
            wave = _Wave(t, members, feats, onehots, labels, weights)
            for rel in RELATIONS:
                if rel not in groups:
                    continue
                dst, swaves, srows, pos, edges = groups[rel]
                grp = _Group(rel, np.asarray(dst, dtype=np.intp), np.asarray(swaves, dtype=np.intp),
                             np.asarray(srows, dtype=np.intp), np.asarray(pos, dtype=self.dtype), edges)
                if self.edge_table.modes[rel] is EdgeMode.EXTERNAL:
                    grp.external = self.edge_table.external_matrix(
                        [e for _, e in edges], [convs[c].dialogue_id for c, _ in edges], self.dtype)
                wave.groups.append(grp)
            waves.append(wave)
        return _Plan(convs, graphs, waves, rows)

    # -- forward ------------------------------------------------------------

    def _edge_feature(self, grp):
        mode = self.edge_table.modes[grp.relation]
        if mode is EdgeMode.TRAINABLE:
            vec = self.edge_table.trainable[grp.relation]
            return nc.reshape(vec, (1, vec.shape[0]))
        if mode is EdgeMode.BINARY01:
            return nc.constant(np.ones((1, 1)), dtype=self.dtype)
        return nc.constant(grp.external, dtype=self.dtype)

    def _messages(self, layer, wave, he_prev, hs_prev, cur_e, cur_s, record):
        n, H = wave.n, self.config.hidden
        if not wave.groups:
            zero = nc.zeros((n, H), dtype=self.dtype)
            return zero, zero, None
        scores, sources, segments = [], [], []
        for grp in wave.groups:
            rel = grp.relation
            target_prev = he_prev if rel.target_kind == EVENT else hs_prev
            pieces = cur_e if rel.source_kind == EVENT else cur_s
            s, v = edge_scores(
                layer, rel,
                nc.take_rows(target_prev, grp.dst_rows),
                nc.gather_rows(pieces, grp.src_waves, grp.src_rows),
                self._edge_feature(grp),
                nc.constant(grp.positions, dtype=self.dtype),
                self.config.leaky_relu,
            )
            scores.append(s)
            sources.append(v)
            segments.append(grp.dst_rows + (0 if rel.target_kind == EVENT else n))
        seg = np.concatenate(segments)
        alpha = nc.segment_softmax(nc.concat(scores), seg, 2 * n)
        V = nc.concat(sources)
        msg = nc.segment_sum(nc.mul(nc.reshape(alpha, (alpha.shape[0], 1)), V), seg, 2 * n)
        att = None
        if record:
            att = (alpha.data.copy(), seg, [e for grp in wave.groups for e in grp.edges])
        return nc.index(msg, slice(0, n)), nc.index(msg, slice(n, 2 * n)), att

    def _update(self, layer, he_prev, hs_prev, m_e, m_s, state_first=False):
        cfg = self.config

        def event():
            h = inter_turn_update(layer, EVENT, he_prev, m_e, cfg.swap_inter_gru)
            return fuse(h, intra_turn_update(layer, EVENT, m_s, he_prev)) if cfg.intra_esi else h

        def state():
            h = inter_turn_update(layer, STATE, hs_prev, m_s, cfg.swap_inter_gru)
            return fuse(h, intra_turn_update(layer, STATE, m_e, hs_prev)) if cfg.intra_esi else h

        if state_first:
            hs = state()
            return event(), hs
        he = event()
        return he, state()

    def project_inputs(self, plan):
        """Layer-0 states: projected utterance features and projected speaker one-hots."""
        out = []
        for wave in plan.waves:
            he = nc.linear(self.event_proj, None, nc.constant(wave.features, dtype=self.dtype))
            hs = nc.linear(self.state_proj, None, nc.constant(wave.onehots, dtype=self.dtype))
            out.append((he, hs))
        return out

    def forward_layer(self, l, plan, prev, record=False, state_first=False):
        """Run layer l (1-based) over every wave in turn order, given complete layer l-1 states."""
        layer = self.layers[l - 1]
        cur_e, cur_s, atts = [], [], []
        for t, wave in enumerate(plan.waves):
            he_prev, hs_prev = prev[t]
            m_e, m_s, att = self._messages(layer, wave, he_prev, hs_prev, cur_e, cur_s, record)
            he, hs = self._update(layer, he_prev, hs_prev, m_e, m_s, state_first)
            cur_e.append(he)
            cur_s.append(hs)
            atts.append(att if att is not None else (np.zeros(0), np.zeros(0, dtype=np.intp), []))
        return list(zip(cur_e, cur_s)), atts

    def forward(self, conversations, train=False, rng=None, compute_loss=False, record_attention=False,
                state_first=False):
        """Run the network over a batch of conversations.

        With `train`, dropout is applied to every layer's input states and to
        H before the classifier, drawing masks from `rng`. With
        `compute_loss`, `result.loss` holds the sum over conversations of the
        mean cross-entropy over labeled utterances.
        """
        cfg = self.config
        plan = self.plan(conversations)
        drop = cfg.dropout if train else 0.0
        if drop > 0 and rng is None:
            raise UsageError("training-mode forward needs an rng for dropout")
        states = [self.project_inputs(plan)]
        attention = []
        for l in range(1, cfg.layers + 1):
            prev = states[-1]
            if drop > 0:
                prev = [(self._dropout(he, drop, rng), self._dropout(hs, drop, rng)) for he, hs in prev]
            cur, atts = self.forward_layer(l, plan, prev, record_attention, state_first)
            states.append(cur)
            attention.append(atts)
        H_waves, logit_waves, prob_waves = [], [], []
        loss = None
        for t, wave in enumerate(plan.waves):
            H_t = nc.concat([nc.add(states[l][t][0], states[l][t][1]) for l in range(cfg.layers + 1)], axis=1)
            H_waves.append(H_t)
            feats = self._dropout(H_t, drop, rng) if drop > 0 else H_t
            logits = nc.linear(self.classifier_W, self.classifier_b, feats)
            logit_waves.append(logits)
            with nc.no_record():
                prob_waves.append(nc.softmax(logits))
            if compute_loss:
                labeled = np.nonzero(wave.labels >= 0)[0]
                if len(labeled):
                    part = nc.cross_entropy(nc.take_rows(logits, labeled), wave.labels[labeled],
                                            wave.weights[labeled])
                    loss = part if loss is None else nc.add(loss, part)
        return ForwardResult(plan, states, H_waves, logit_waves, prob_waves, loss, attention)

    def _dropout(self, x, rate, rng):
        keep = (rng.random(x.shape) >= rate).astype(self.dtype) / self.dtype(1 - rate)
        return nc.mul(x, nc.constant(keep, dtype=self.dtype))

    def predict(self, conversations):
        with nc.no_record():
            result = self.forward(conversations)
        return [result.predictions(c) for c in range(len(conversations))]

    # -- persistence --------------------------------------------------------

    def checkpoint_meta(self):
        return {
            "model": self.config.to_dict(),
            "edge_modes": self.edge_modes(),
            "edge_dims": {r.name: self.edge_table.dim(r) for r in self.config.relations},
        }

    def save(self, path):
        return nc.save_checkpoint(path, self.state_dict(), self.checkpoint_meta())

    @classmethod
    def load(cls, path, knowledge=None):
        arrays, meta = nc.load_checkpoint(path)
        config = ModelConfig.from_dict(meta["model"])
        modes = {r: EdgeMode(meta["edge_modes"][r.name]) for r in config.relations}
        if any(m is EdgeMode.EXTERNAL for m in modes.values()) and knowledge is None:
            raise UsageError("checkpoint uses external knowledge vectors; supply the knowledge file")
        trainable = {r: Parameter(arrays[f"edge.{r.name}"], name=f"edge.{r.name}")
                     for r, m in modes.items() if m is EdgeMode.TRAINABLE}
        table = EdgeFeatureTable(modes, trainable, knowledge)
        model = cls(config, table)
        model.load_state_dict(arrays)
        return model
