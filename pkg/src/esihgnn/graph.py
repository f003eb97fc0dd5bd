"""Heterogeneous event-state interaction graphs.

Each turn contributes an event node and a state node. Edges only point from
earlier turns to later ones and carry one of eight relation types, fixed by
the source kind, the target kind and whether both turns share a speaker.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import DomainError, ParseError, UsageError

log = logging.getLogger(__name__)

EVENT = "event"
STATE = "state"
KINDS = (EVENT, STATE)


class RelationType(enum.Enum):
    # value: (source kind, target kind, same speaker)
    xWant = (EVENT, EVENT, True)
    oWant = (EVENT, EVENT, False)
    xDrive = (STATE, EVENT, True)
    oDrive = (STATE, EVENT, False)
    xReact = (EVENT, STATE, True)
    oReact = (EVENT, STATE, False)
    xDepend = (STATE, STATE, True)
    oDepend = (STATE, STATE, False)

    @property
    def source_kind(self):
        return self.value[0]

    @property
    def target_kind(self):
        return self.value[1]

    @property
    def same_speaker(self):
        return self.value[2]

    @property
    def index(self):
        return _RELATION_INDEX[self]

    @classmethod
    def parse(cls, name):
        try:
            return cls[name]
        except KeyError:
            raise UsageError(f"unknown relation {name!r}; expected one of {[r.name for r in cls]}") from None


RELATIONS = tuple(RelationType)
_RELATION_INDEX = {r: i for i, r in enumerate(RELATIONS)}
_BY_TRIPLE = {r.value: r for r in RELATIONS}

# coarse groups removed together by the ablation harness
RELATION_GROUPS = {
    "event-to-event": (RelationType.xWant, RelationType.oWant),
    "state-to-event": (RelationType.xDrive, RelationType.oDrive),
    "event-to-state": (RelationType.xReact, RelationType.oReact),
    "state-to-state": (RelationType.xDepend, RelationType.oDepend),
}


def relation_for(source_kind, target_kind, same_speaker):
    return _BY_TRIPLE[(source_kind, target_kind, bool(same_speaker))]


def parse_relations(spec):
    """Turn a list/comma string of relation names (or group names) into a tuple in canonical order."""
    if spec is None:
        return RELATIONS
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    chosen = set()
    for item in spec:
        if isinstance(item, RelationType):
            chosen.add(item)
        elif item in RELATION_GROUPS:
            chosen.update(RELATION_GROUPS[item])
        else:
            chosen.add(RelationType.parse(item))
    return tuple(r for r in RELATIONS if r in chosen)


class NodeRef(NamedTuple):
    turn: int
    kind: str


@dataclass(frozen=True)
class Edge:
    src: NodeRef
    dst: NodeRef
    relation: RelationType
    position: tuple  # (absolute source turn, rank among the source speaker's recent turns)

    def sort_key(self):
        return (self.dst.turn, KINDS.index(self.dst.kind), -self.src.turn, KINDS.index(self.src.kind))


@dataclass
class HeteroGraph:
    dialogue_id: str
    speakers: tuple  # speaker id per turn
    edges: tuple
    omega: int = 1
    relations: tuple = RELATIONS
    _incoming: dict = field(default=None, repr=False, compare=False)

    @property
    def num_turns(self):
        return len(self.speakers)

    @property
    def nodes(self):
        return [NodeRef(i, k) for i in range(self.num_turns) for k in KINDS]

    def incoming(self, node):
        if self._incoming is None:
            table = {}
            for e in self.edges:
                table.setdefault(e.dst, []).append(e)
            self._incoming = table
        return self._incoming.get(NodeRef(*node), [])

    def edge_set(self):
        return {(e.src, e.dst, e.relation, tuple(e.position)) for e in self.edges}

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (
            self.dialogue_id == other.dialogue_id
            and tuple(self.speakers) == tuple(other.speakers)
            and self.edge_set() == other.edge_set()
            and len(self.edges) == len(other.edges)
        )


def _speaker_sequence(conv):
    if hasattr(conv, "turns"):
        return conv.dialogue_id, tuple(u.speaker_id for u in conv.turns)
    dialogue_id, speakers = conv
    return dialogue_id, tuple(speakers)


_warned_single = set()  # dialogue ids already reported, so rebuilds stay quiet


def build_graph(conv, omega=1, relations=None):
    """Build the event-state graph of a conversation.

    `conv` is a Conversation or a `(dialogue_id, speakers)` pair. For every
    target turn, the sources are the most recent `omega` earlier turns of each
    speaker (the target's own speaker for intra relations, every other
    speaker for inter relations). Both nodes of a source turn feed both nodes
    of the target turn.
    """
    if omega < 1:
        raise DomainError(f"window omega must be >= 1, got {omega}")
    dialogue_id, speakers = _speaker_sequence(conv)
    if not speakers:
        raise DomainError(f"conversation {dialogue_id!r} has no turns")
    if len(set(speakers)) == 1 and len(speakers) > 1 and dialogue_id not in _warned_single:
        _warned_single.add(dialogue_id)
        log.warning("conversation %r has a single speaker", dialogue_id)
    active = set(parse_relations(relations))
    edges = []
    history = {}  # speaker -> list of past turns, most recent last
    for i, spk in enumerate(speakers):
        for other, turns in history.items():
            same = other == spk
            for rank, j in enumerate(reversed(turns[-omega:]), start=1):
                for dst_kind in KINDS:
                    for src_kind in KINDS:
                        rel = relation_for(src_kind, dst_kind, same)
                        if rel in active:
                            edges.append(Edge(NodeRef(j, src_kind), NodeRef(i, dst_kind), rel, (j, rank)))
        history.setdefault(spk, []).append(i)
    edges.sort(key=Edge.sort_key)
    return HeteroGraph(dialogue_id, speakers, tuple(edges), omega, tuple(r for r in RELATIONS if r in active))


def position_of(src_turn, dst_node, relation, graph):
    """(absolute, relative) position of a source turn feeding `dst_node`.

    Relative position k means `src_turn` is the k-th most recent turn of its
    speaker before the target turn.
    """
    speakers = graph.speakers if isinstance(graph, HeteroGraph) else tuple(graph)
    dst_turn = dst_node[0]
    src_spk = speakers[src_turn]
    rank = 1 + sum(1 for t in range(src_turn + 1, dst_turn) if speakers[t] == src_spk)
    return (src_turn, rank)


@dataclass
class DagReport:
    ok: bool
    violation: str = ""
    edge: Edge = None

    def __bool__(self):
        return self.ok


def validate_dag(graph):
    """Check time direction and relation-triple consistency of every edge."""
    speakers = graph.speakers
    n = len(speakers)
    for e in graph.edges:
        for node in (e.src, e.dst):
            if not 0 <= node.turn < n or node.kind not in KINDS:
                return DagReport(False, f"edge {_fmt_edge(e)} references a missing node {node}", e)
        if e.src.turn >= e.dst.turn:
            return DagReport(False, f"edge {_fmt_edge(e)} does not point forward in time", e)
        same = speakers[e.src.turn] == speakers[e.dst.turn]
        if (e.src.kind, e.dst.kind, same) != e.relation.value:
            return DagReport(
                False,
                f"edge {_fmt_edge(e)} is inconsistent with {e.relation.name} "
                f"(kinds {e.src.kind}->{e.dst.kind}, same_speaker={same})",
                e,
            )
    return DagReport(True)


def _label(node):
    return f"{node.kind[0]}{node.turn}"


def _fmt_edge(e):
    return f"{_label(e.src)}->{_label(e.dst)} [{e.relation.name}]"


def graph_to_dict(graph):
    return {
        "dialogue_id": graph.dialogue_id,
        "speakers": list(graph.speakers),
        "nodes": [{"turn": n.turn, "kind": n.kind} for n in graph.nodes],
        "edges": [
            {
                "src": {"turn": e.src.turn, "kind": e.src.kind},
                "dst": {"turn": e.dst.turn, "kind": e.dst.kind},
                "relation": e.relation.name,
                "position": list(e.position),
            }
            for e in graph.edges
        ],
    }


def graph_from_dict(doc):
    try:
        nodes = doc["nodes"]
        n = 1 + max((node["turn"] for node in nodes), default=-1)
        speakers = tuple(doc.get("speakers") or [None] * n)
        edges = tuple(
            Edge(
                NodeRef(int(e["src"]["turn"]), e["src"]["kind"]),
                NodeRef(int(e["dst"]["turn"]), e["dst"]["kind"]),
                RelationType[e["relation"]],
                tuple(int(v) for v in e["position"]),
            )
            for e in doc["edges"]
        )
        return HeteroGraph(str(doc["dialogue_id"]), speakers, edges)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed graph document: {exc!r}") from exc


def export_graph(graph, format="json"):
    if format == "json":
        return json.dumps(graph_to_dict(graph), sort_keys=True)
    if format == "dot":
        lines = [f'digraph "{graph.dialogue_id}" {{', "  rankdir=LR;"]
        for node in graph.nodes:
            shape = "box" if node.kind == EVENT else "ellipse"
            lines.append(f'  {_label(node)} [label="{_label(node)}", shape={shape}];')
        for e in graph.edges:
            lines.append(f'  {_label(e.src)} -> {_label(e.dst)} [label="{e.relation.name}"];')
        lines.append("}")
        return "\n".join(lines)
    raise UsageError(f"unknown graph format {format!r}; expected json or dot")


def parse_graph(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"graph JSON: {exc}") from exc
    return graph_from_dict(doc)
