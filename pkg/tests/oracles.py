"""Independent reference implementations used as test oracles.

Nothing here imports the package's graph, model or metric code paths; the
oracles are written from the definitions with plain loops so that agreement
with the vectorized implementation means something.
"""

from __future__ import annotations

import math

import numpy as np

KIND_NAMES = ("event", "state")

# relation name -> (source kind, target kind, same speaker), written out by hand
TRIPLES = {
    "xWant": ("event", "event", True),
    "oWant": ("event", "event", False),
    "xDrive": ("state", "event", True),
    "oDrive": ("state", "event", False),
    "xReact": ("event", "state", True),
    "oReact": ("event", "state", False),
    "xDepend": ("state", "state", True),
    "oDepend": ("state", "state", False),
}
GROUPS = {
    "event-to-event": ("xWant", "oWant"),
    "state-to-event": ("xDrive", "oDrive"),
    "event-to-state": ("xReact", "oReact"),
    "state-to-state": ("xDepend", "oDepend"),
}


# ---------------------------------------------------------------------------
# graph


def enumerate_edges(speakers, omega, relations=None):
    """Brute force over every ordered node pair.

    A pair (j, kind_a) -> (i, kind_b) with j < i is an edge under relation r
    when r's triple matches and turn j is among the omega most recent turns
    of speaker[j] strictly before i. The relative position is the number of
    turns of speaker[j] in [j, i). Returns a set of
    ((j, kind_a), (i, kind_b), relation name, (j, rank)).
    """
    allowed = set(TRIPLES) if relations is None else set(relations)
    n = len(speakers)
    out = set()
    for i in range(n):
        for j in range(n):
            if j >= i:
                continue
            rank = sum(1 for t in range(j, i) if speakers[t] == speakers[j])
            if rank > omega:
                continue
            same = speakers[i] == speakers[j]
            for a in KIND_NAMES:
                for b in KIND_NAMES:
                    for name, triple in TRIPLES.items():
                        if triple == (a, b, same) and name in allowed:
                            out.add(((j, a), (i, b), name, (j, rank)))
    return out


def graph_edge_set(graph):
    return {((e.src.turn, e.src.kind), (e.dst.turn, e.dst.kind), e.relation.name, tuple(e.position))
            for e in graph.edges}


def random_speakers(rng, max_turns=8, max_speakers=3):
    n = int(rng.integers(1, max_turns + 1))
    s = int(rng.integers(1, max_speakers + 1))
    return [f"p{int(rng.integers(s))}" for _ in range(n)]


# ---------------------------------------------------------------------------
# numerics


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def matvec(W, x):
    """Triple-loop style matrix-vector product."""
    rows, cols = len(W), len(W[0])
    out = [0.0] * rows
    for r in range(rows):
        acc = 0.0
        for c in range(cols):
            acc += float(W[r][c]) * float(x[c])
        out[r] = acc
    return out


def gru_step(W, U, b, x, h):
    """Scalar GRU step; W, U, b stacked in update/reset/candidate order."""
    H = len(h)
    W, U, b = np.asarray(W, float), np.asarray(U, float), np.asarray(b, float)
    wx = matvec(W, x)
    uh = matvec(U[: 2 * H], h)
    z = [sigmoid(wx[k] + uh[k] + b[k]) for k in range(H)]
    r = [sigmoid(wx[H + k] + uh[H + k] + b[H + k]) for k in range(H)]
    rh = [r[k] * h[k] for k in range(H)]
    un = matvec(U[2 * H:], rh)
    n = [math.tanh(wx[2 * H + k] + un[k] + b[2 * H + k]) for k in range(H)]
    return np.array([(1 - z[k]) * n[k] + z[k] * h[k] for k in range(H)])


def softmax(v):
    m = max(v)
    ex = [math.exp(x - m) for x in v]
    s = sum(ex)
    return [e / s for e in ex]


# ---------------------------------------------------------------------------
# model


def reference_forward(model, conv, knowledge=None):
    """Straight-line evaluation of the layer equations for one conversation.

    Reads weights by name from `model.state_dict()` and edges from the
    brute-force enumerator. Returns (H (N, (L+1)*hidden), logits (N, K),
    attention {layer: {(turn, kind): {edge: alpha}}}).
    """
    cfg = model.config
    P = {k: np.asarray(v, dtype=np.float64) for k, v in model.state_dict().items()}
    speakers = [u.speaker_id for u in conv.turns]
    order = {}
    spk_idx = [order.setdefault(s, len(order)) for s in speakers]
    rels = [r.name for r in cfg.relations]
    edges = enumerate_edges(speakers, cfg.omega, rels)
    N, L = len(conv.turns), cfg.layers

    def edge_vec(edge):
        (j, a), (i, b), name, _ = edge
        mode = model.edge_table.modes[[r for r in cfg.relations if r.name == name][0]].value
        if mode == "binary01":
            return np.ones(1)
        if mode == "trainable":
            return P[f"edge.{name}"]
        from esihgnn.graph import NodeRef, RelationType
        key = (conv.dialogue_id, NodeRef(j, a), NodeRef(i, b), RelationType[name])
        return np.asarray(knowledge.vectors[key], dtype=np.float64)

    h = {0: {}}
    for i, u in enumerate(conv.turns):
        onehot = np.zeros(cfg.speaker_dim)
        onehot[spk_idx[i]] = 1.0
        h[0][(i, "event")] = P["proj.event"] @ np.asarray(u.feature, dtype=np.float64)
        h[0][(i, "state")] = P["proj.state"] @ onehot
    attention = {}
    for l in range(1, L + 1):
        pre = f"layer{l}"
        h[l] = {}
        attention[l] = {}
        for i in range(N):
            msgs = {}
            for kind in KIND_NAMES:
                incoming = sorted(e for e in edges if e[1] == (i, kind))
                target_prev = h[l - 1][(i, kind)]
                scores, values = [], []
                for e in incoming:
                    src, _, name, pos = e
                    Wv = P[f"{pre}.{name}.node"]
                    Wa = P[f"{pre}.{name}.edge"]
                    inner = (Wv @ target_prev + Wv @ h[l][src] + Wa @ edge_vec(e)
                             + P[f"{pre}.pos"] @ np.array(pos, dtype=np.float64))
                    s = float(P[f"{pre}.score"][0] @ inner)
                    if cfg.leaky_relu and s < 0:
                        s *= 0.2
                    scores.append(s)
                    values.append(Wv @ h[l][src])
                if incoming:
                    alpha = softmax(scores)
                    msgs[kind] = sum(a * v for a, v in zip(alpha, values))
                    attention[l][(i, kind)] = dict(zip(incoming, alpha))
                else:
                    msgs[kind] = np.zeros(cfg.hidden)
            for kind, other in (("event", "state"), ("state", "event")):
                tag = kind[0]
                g_inter = [P[f"{pre}.gru_{tag}_inter.{w}"] for w in "WUb"]
                prev = h[l - 1][(i, kind)]
                if cfg.swap_inter_gru:
                    bar = gru_step(*g_inter, msgs[kind], prev)
                else:
                    bar = gru_step(*g_inter, prev, msgs[kind])
                if cfg.intra_esi:
                    g_intra = [P[f"{pre}.gru_{tag}_intra.{w}"] for w in "WUb"]
                    bar = bar + gru_step(*g_intra, msgs[other], prev)
                h[l][(i, kind)] = bar
    H = np.stack([np.concatenate([h[l][(i, "event")] + h[l][(i, "state")] for l in range(L + 1)])
                  for i in range(N)])
    logits = H @ P["classifier.W"].T + P["classifier.b"]
    return H, logits, attention


# ---------------------------------------------------------------------------
# metrics


def f1_direct(y_true, y_pred, num_classes, kind, excluded=()):
    """F1 from the textbook definitions, counted with explicit loops."""
    included = [c for c in range(num_classes) if c not in set(excluded)]
    pairs = list(zip(y_true, y_pred))

    def f1(tp, fp, fn):
        return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)

    if kind == "weighted_f1":
        total = sum(1 for t, _ in pairs if t in included)
        acc = 0.0
        for c in included:
            tp = sum(1 for t, p in pairs if t == c and p == c)
            fp = sum(1 for t, p in pairs if t != c and p == c)
            fn = sum(1 for t, p in pairs if t == c and p != c)
            support = sum(1 for t, _ in pairs if t == c)
            acc += f1(tp, fp, fn) * support / total
        return acc
    TP = sum(1 for t, p in pairs if p in included and t == p)
    FP = sum(1 for t, p in pairs if p in included and t != p)
    FN = sum(1 for t, p in pairs if t in included and t != p)
    return f1(TP, FP, FN)


def expand_confusion(counts):
    y_true, y_pred = [], []
    for t in range(counts.shape[0]):
        for p in range(counts.shape[1]):
            y_true += [t] * int(counts[t, p])
            y_pred += [p] * int(counts[t, p])
    return y_true, y_pred
