"""Edge representations: external knowledge vectors, shared trainable vectors or a 0/1 indicator.

Knowledge-vector file format (plain text, one record per line)::

    # dim 768
    <dialogue_id> <src_turn> <src_kind> <dst_turn> <dst_kind> <relation> <f_1> ... <f_dim>

The ``# dim N`` header is optional; without it the first record fixes the
dimension. Blank lines and other ``#`` lines are ignored.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingFeatureError, ParseError, UsageError
from .graph import EVENT, KINDS, RELATIONS, NodeRef, RelationType
from .numeric import Parameter, get_default_dtype

log = logging.getLogger(__name__)

DEFAULT_TRAINABLE_DIM = 300
DEFAULT_EXTERNAL_DIM = 768
INIT_RANGE = 0.1


class EdgeMode(enum.Enum):
    EXTERNAL = "external"
    TRAINABLE = "trainable"
    BINARY01 = "binary01"


EDGE_MODE_OVERRIDES = ("default", "trainable", "binary01")


def edge_key(dialogue_id, edge):
    return (str(dialogue_id), NodeRef(*edge.src), NodeRef(*edge.dst), edge.relation)


@dataclass
class KnowledgeVectors:
    dim: int = None
    vectors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, key):
        return key in self.vectors


def load_external(path_or_lines):
    """Parse a knowledge-vector file into a key -> vector index."""
    if isinstance(path_or_lines, (str, bytes)) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        source = str(path_or_lines)
    else:
        lines = list(path_or_lines)
        source = None
    kv = KnowledgeVectors()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "dim":
                try:
                    dim = int(parts[1])
                except ValueError:
                    raise ParseError(f"bad dimension header {line!r}", lineno, source) from None
                if kv.dim is not None and kv.dim != dim:
                    raise ParseError(f"dimension header {dim} conflicts with {kv.dim}", lineno, source)
                kv.dim = dim
            continue
        parts = line.split()
        if len(parts) < 7:
            raise ParseError("record needs 6 key fields and at least one value", lineno, source)
        dialogue_id, src_turn, src_kind, dst_turn, dst_kind, rel_name = parts[:6]
        try:
            key = (
                dialogue_id,
                NodeRef(int(src_turn), _kind(src_kind)),
                NodeRef(int(dst_turn), _kind(dst_kind)),
                RelationType[rel_name],
            )
            values = np.array([float(v) for v in parts[6:]], dtype=np.float64)
        except (ValueError, KeyError) as exc:
            raise ParseError(f"malformed record: {exc}", lineno, source) from None
        if kv.dim is None:
            kv.dim = len(values)
        elif len(values) != kv.dim:
            raise ParseError(f"vector has {len(values)} values, expected {kv.dim}", lineno, source)
        if not np.all(np.isfinite(values)):
            raise ParseError("non-finite value in vector", lineno, source)
        if key in kv.vectors:
            raise ParseError(f"duplicate record for {key}", lineno, source)
        kv.vectors[key] = values
    return kv


def _kind(text):
    if text not in KINDS:
        raise ValueError(f"unknown node kind {text!r}")
    return text


def write_external(path, kv):
    with open(path, "w", encoding="utf-8") as fh:
        if kv.dim is not None:
            fh.write(f"# dim {kv.dim}\n")
        for (did, src, dst, rel), vec in kv.vectors.items():
            vals = " ".join(repr(float(v)) for v in vec)
            fh.write(f"{did} {src.turn} {src.kind} {dst.turn} {dst.kind} {rel.name} {vals}\n")


def init_trainable(relations, dim, seed):
    """One U(-0.1, 0.1) vector per relation, registered as a trainable parameter."""
    if dim < 1:
        raise UsageError(f"trainable edge dimension must be >= 1, got {dim}")
    rng = np.random.default_rng(seed)
    out = {}
    for rel in RELATIONS:
        if rel in relations:
            data = rng.uniform(-INIT_RANGE, INIT_RANGE, size=dim).astype(get_default_dtype())
            out[rel] = Parameter(data, name=f"edge.{rel.name}")
    return out


class EdgeFeatureTable:
    """Resolves the representation of every edge, per the relation's mode."""

    def __init__(self, modes, trainable=None, external=None):
        self.modes = dict(modes)
        self.trainable = dict(trainable or {})
        self.external = external if external is not None else KnowledgeVectors()
        self._one = None
        for rel, mode in self.modes.items():
            if mode is EdgeMode.TRAINABLE and rel not in self.trainable:
                raise UsageError(f"relation {rel.name} is trainable but has no vector")

    @classmethod
    def configure(cls, relations=RELATIONS, override="default", knowledge=None,
                  trainable_dim=DEFAULT_TRAINABLE_DIM, seed=0):
        """Build a table for `relations` under an edge-mode override.

        default:   event-source relations read `knowledge` when given, otherwise
                   fall back to trainable; state-source relations are trainable.
        trainable: every relation trainable.
        binary01:  every edge gets the constant 1-dim feature (1.0).
        """
        if override not in EDGE_MODE_OVERRIDES:
            raise UsageError(f"unknown edge mode {override!r}; expected one of {EDGE_MODE_OVERRIDES}")
        relations = tuple(r for r in RELATIONS if r in set(relations))
        modes = {}
        for rel in relations:
            if override == "binary01":
                modes[rel] = EdgeMode.BINARY01
            elif override == "default" and knowledge is not None and rel.source_kind == EVENT:
                modes[rel] = EdgeMode.EXTERNAL
            else:
                modes[rel] = EdgeMode.TRAINABLE
        if override == "default" and knowledge is None:
            log.info("no knowledge vectors supplied; event-source relations use trainable edge vectors")
        trainable_rels = [r for r, m in modes.items() if m is EdgeMode.TRAINABLE]
        trainable = init_trainable(trainable_rels, trainable_dim, seed)
        return cls(modes, trainable, knowledge)

    def dim(self, relation):
        mode = self.modes[relation]
        if mode is EdgeMode.BINARY01:
            return 1
        if mode is EdgeMode.TRAINABLE:
            return self.trainable[relation].shape[0]
        if self.external.dim is None:
            return DEFAULT_EXTERNAL_DIM
        return self.external.dim

    def parameters(self):
        return [self.trainable[r] for r in RELATIONS if r in self.trainable]

    def lookup(self, edge, dialogue_id):
        """Representation of one edge.

        Trainable relations return the shared Parameter itself; external and
        binary relations return a fresh constant array.
        """
        mode = self.modes.get(edge.relation)
        if mode is None:
            raise UsageError(f"relation {edge.relation.name} is not active in this table")
        if mode is EdgeMode.TRAINABLE:
            return self.trainable[edge.relation]
        if mode is EdgeMode.BINARY01:
            return np.ones(1, dtype=get_default_dtype())
        key = edge_key(dialogue_id, edge)
        try:
            return self.external.vectors[key].astype(get_default_dtype())
        except KeyError:
            raise MissingFeatureError(
                f"no knowledge vector for dialogue {dialogue_id!r} edge "
                f"{edge.src.kind[0]}{edge.src.turn}->{edge.dst.kind[0]}{edge.dst.turn} [{edge.relation.name}]"
            ) from None

    def external_matrix(self, edges, dialogue_ids, dtype):
        """Stack the external vectors of several edges (all of one external relation)."""
        rows = [self.lookup(e, d) for e, d in zip(edges, dialogue_ids)]
        return np.asarray(rows, dtype=dtype)

    def state_dict(self):
        return {p.name: p.data for p in self.parameters()}
