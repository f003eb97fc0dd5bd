"""Conversations, the JSON-lines corpus format, the toy featurizer and the synthetic generator.

Corpus file (JSON lines). The first line is the header::

    {"header": {"speakers_onehot_dim": 2, "num_classes": 3, "event_dim": 16,
                "label_names": [...], "excluded_labels": [], "featurizer_seed": 0,
                "sidecar": "feats.bin"}}

Every other line holds one conversation::

    {"dialogue_id": "d0", "split": "train",
     "utterances": [{"speaker": "A", "label": 1, "text": "...", "feature": [..]}, ...]}

An utterance takes its feature from exactly one of: inline ``feature``,
``feature_ref`` (byte offset into the sidecar), or the toy featurizer applied
to ``text`` when both are absent. The sidecar holds little-endian float32
rows; its manifest ``<sidecar>.manifest.json`` lists
``{"dialogue_id", "turn", "offset", "dim"}`` for every stored row.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ParseError, UsageError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
HEADER_KEYS = {"speakers_onehot_dim", "num_classes", "event_dim", "label_names",
               "excluded_labels", "featurizer_seed", "sidecar"}
CONVERSATION_KEYS = {"dialogue_id", "split", "utterances"}
UTTERANCE_KEYS = {"speaker", "label", "text", "feature", "feature_ref"}


@dataclass
class Utterance:
    turn_index: int
    speaker_id: str
    feature: np.ndarray
    label: int = None
    text: str = None


@dataclass
class Conversation:
    dialogue_id: str
    turns: list
    split: str = "train"

    def __post_init__(self):
        if not self.turns:
            raise DomainError(f"conversation {self.dialogue_id!r} has no turns")
        for i, u in enumerate(self.turns):
            if u.turn_index != i:
                raise DomainError(f"conversation {self.dialogue_id!r}: turn {i} has index {u.turn_index}")

    def __len__(self):
        return len(self.turns)

    @property
    def speakers(self):
        return [u.speaker_id for u in self.turns]

    @property
    def speaker_count(self):
        return len(set(self.speakers))

    def speaker_indices(self):
        """Speakers numbered by order of first appearance."""
        order = {}
        return [order.setdefault(s, len(order)) for s in self.speakers]

    def labels(self):
        return [u.label for u in self.turns]

    def prefix(self, k):
        return Conversation(self.dialogue_id, self.turns[:k], self.split)


@dataclass
class Corpus:
    conversations: list
    speakers_onehot_dim: int
    num_classes: int
    event_dim: int
    label_names: list = None
    excluded_labels: list = field(default_factory=list)
    featurizer_seed: int = 0

    def split(self, name):
        return [c for c in self.conversations if c.split == name]

    def splits(self):
        return {name: self.split(name) for name in SPLITS}

    def header(self):
        doc = {
            "speakers_onehot_dim": self.speakers_onehot_dim,
            "num_classes": self.num_classes,
            "event_dim": self.event_dim,
            "excluded_labels": list(self.excluded_labels),
            "featurizer_seed": self.featurizer_seed,
        }
        if self.label_names is not None:
            doc["label_names"] = list(self.label_names)
        return doc


def toy_featurize(text, dim, seed=0):
    """Hashed bag-of-words embedding, L2-normalized; empty text gives zeros."""
    if dim < 1:
        raise UsageError(f"feature dimension must be >= 1, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    for token in (text or "").lower().split():
        digest = hashlib.blake2b(f"{seed}:{token}".encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        vec[value % dim] += 1.0 if (value >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec.astype(np.float32)


def _check(cond, message, lineno, path):
    if not cond:
        raise ParseError(message, lineno, path)


def _load_sidecar(corpus_path, sidecar):
    base = Path(corpus_path).parent
    bin_path = base / sidecar
    manifest_path = Path(str(bin_path) + ".manifest.json")
    try:
        raw = bin_path.read_bytes()
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read sidecar: {exc}", path=corpus_path) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"sidecar manifest: {exc}", path=manifest_path) from exc
    entries = {}
    for entry in manifest.get("entries", []):
        entries[(str(entry["dialogue_id"]), int(entry["turn"]))] = (int(entry["offset"]), int(entry["dim"]))
    return raw, entries


def ingest(path):
    """Parse a corpus file, validating every invariant; returns a Corpus."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"corpus file not found: {path}") from None
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise UsageError(f"corpus file is empty: {path}")
    header = None
    sidecar = None
    conversations = []
    seen = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno, path) from None
        _check(isinstance(doc, dict), "each line must be a JSON object", lineno, path)
        if header is None:
            _check("header" in doc, "first line must be the corpus header", lineno, path)
            header = doc["header"]
            unknown = set(header) - HEADER_KEYS
            _check(not unknown, f"unknown header keys {sorted(unknown)}", lineno, path)
            for key in ("speakers_onehot_dim", "num_classes", "event_dim"):
                _check(isinstance(header.get(key), int) and header[key] >= 1,
                       f"header field {key!r} must be a positive integer", lineno, path)
            if header.get("sidecar"):
                sidecar = _load_sidecar(path, header["sidecar"])
            continue
        conversations.append(_parse_conversation(doc, header, sidecar, lineno, path, seen))
    if header is None:
        raise UsageError(f"corpus file has no header: {path}")
    corpus = Corpus(
        conversations,
        header["speakers_onehot_dim"],
        header["num_classes"],
        header["event_dim"],
        header.get("label_names"),
        list(header.get("excluded_labels", [])),
        header.get("featurizer_seed", 0),
    )
    for lbl in corpus.excluded_labels:
        if not 0 <= lbl < corpus.num_classes:
            raise ParseError(f"excluded label {lbl} outside 0..{corpus.num_classes - 1}", 1, path)
    return corpus


def _parse_conversation(doc, header, sidecar, lineno, path, seen):
    unknown = set(doc) - CONVERSATION_KEYS
    _check(not unknown, f"unknown conversation keys {sorted(unknown)}", lineno, path)
    _check("dialogue_id" in doc, "conversation lacks dialogue_id", lineno, path)
    did = str(doc["dialogue_id"])
    _check(did not in seen, f"duplicate dialogue_id {did!r}", lineno, path)
    seen.add(did)
    split = doc.get("split", "train")
    _check(split in SPLITS, f"unknown split {split!r}", lineno, path)
    utts = doc.get("utterances")
    _check(isinstance(utts, list) and utts, f"dialogue {did!r} needs a non-empty utterances list", lineno, path)
    dim, K = header["event_dim"], header["num_classes"]
    turns = []
    for i, u in enumerate(utts):
        _check(isinstance(u, dict), f"dialogue {did!r} turn {i}: utterance must be an object", lineno, path)
        unknown = set(u) - UTTERANCE_KEYS
        _check(not unknown, f"dialogue {did!r} turn {i}: unknown keys {sorted(unknown)}", lineno, path)
        _check("speaker" in u, f"dialogue {did!r} turn {i}: missing speaker", lineno, path)
        label = u.get("label")
        if label is not None:
            _check(isinstance(label, int) and 0 <= label < K,
                   f"dialogue {did!r} turn {i}: label {label!r} outside 0..{K - 1}", lineno, path)
        _check(not ("feature" in u and "feature_ref" in u),
               f"dialogue {did!r} turn {i}: both feature and feature_ref given", lineno, path)
        if "feature" in u:
            try:
                feat = np.asarray(u["feature"], dtype=np.float32)
            except (TypeError, ValueError):
                raise ParseError(f"dialogue {did!r} turn {i}: feature must be numbers", lineno, path) from None
            _check(feat.shape == (dim,), f"dialogue {did!r} turn {i}: feature has shape {feat.shape}, "
                   f"expected ({dim},)", lineno, path)
            _check(bool(np.all(np.isfinite(feat))), f"dialogue {did!r} turn {i}: non-finite feature", lineno, path)
        elif "feature_ref" in u:
            feat = _resolve_ref(u["feature_ref"], did, i, dim, sidecar, lineno, path)
        else:
            feat = toy_featurize(u.get("text") or "", dim, header.get("featurizer_seed", 0))
        turns.append(Utterance(i, str(u["speaker"]), feat, label, u.get("text")))
    conv = Conversation(did, turns, split)
    if conv.speaker_count > header["speakers_onehot_dim"]:
        raise ParseError(f"dialogue {did!r} has {conv.speaker_count} speakers but the header declares "
                         f"speakers_onehot_dim={header['speakers_onehot_dim']}", lineno, path)
    return conv


def _resolve_ref(ref, did, turn, dim, sidecar, lineno, path):
    _check(sidecar is not None, f"dialogue {did!r} turn {turn}: feature_ref without a sidecar", lineno, path)
    raw, entries = sidecar
    entry = entries.get((did, turn))
    _check(entry is not None and entry[0] == ref,
           f"dialogue {did!r} turn {turn}: dangling feature_ref {ref!r}", lineno, path)
    offset, edim = entry
    _check(edim == dim, f"dialogue {did!r} turn {turn}: sidecar row has dim {edim}, expected {dim}", lineno, path)
    end = offset + 4 * dim
    _check(0 <= offset and end <= len(raw), f"dialogue {did!r} turn {turn}: feature_ref {ref} past end of sidecar",
           lineno, path)
    return np.frombuffer(raw[offset:end], dtype="<f4").astype(np.float32)


def corpus_to_lines(corpus, sidecar_name=None):
    """Serialize a corpus; with `sidecar_name`, features go to the binary sidecar.

    Returns (lines, sidecar_bytes, manifest) where the last two are None
    without a sidecar.
    """
    header = corpus.header()
    if sidecar_name:
        header["sidecar"] = sidecar_name
    lines = [json.dumps({"header": header}, sort_keys=True)]
    chunks, entries, offset = [], [], 0
    for conv in corpus.conversations:
        utts = []
        for u in conv.turns:
            doc = {"speaker": u.speaker_id}
            if u.label is not None:
                doc["label"] = int(u.label)
            if u.text is not None:
                doc["text"] = u.text
            feat = np.asarray(u.feature, dtype="<f4")
            if sidecar_name:
                chunks.append(feat.tobytes())
                entries.append({"dialogue_id": conv.dialogue_id, "turn": u.turn_index,
                                "offset": offset, "dim": int(feat.size)})
                doc["feature_ref"] = offset
                offset += 4 * feat.size
            else:
                doc["feature"] = [float(v) for v in feat]
            utts.append(doc)
        lines.append(json.dumps({"dialogue_id": conv.dialogue_id, "split": conv.split, "utterances": utts},
                                sort_keys=True))
    if not sidecar_name:
        return lines, None, None
    return lines, b"".join(chunks), {"dtype": "<f4", "entries": entries}


def write_corpus(path, corpus, sidecar=False):
    path = Path(path)
    sidecar_name = path.name + ".bin" if sidecar else None
    lines, blob, manifest = corpus_to_lines(corpus, sidecar_name)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if sidecar:
        (path.parent / sidecar_name).write_bytes(blob)
        (path.parent / (sidecar_name + ".manifest.json")).write_text(
            json.dumps(manifest, sort_keys=True), encoding="utf-8")
    return path


def summarize(conversations):
    """Dialogue/utterance counts, average dialogue length and average speakers per dialogue."""
    n = len(conversations)
    utts = sum(len(c) for c in conversations)
    return {
        "dialogues": n,
        "utterances": utts,
        "avg_length": utts / n if n else 0.0,
        "avg_speakers": sum(c.speaker_count for c in conversations) / n if n else 0.0,
    }


def corpus_summary(corpus):
    out = {name: summarize(convs) for name, convs in corpus.splits().items() if convs}
    out["all"] = summarize(corpus.conversations)
    return out


def format_summary(summary):
    rows = [f"{'split':<6} {'dialogues':>9} {'utterances':>10} {'A.L.':>7} {'A.S.':>5}"]
    for name, s in summary.items():
        rows.append(f"{name:<6} {s['dialogues']:>9d} {s['utterances']:>10d} "
                    f"{s['avg_length']:>7.2f} {s['avg_speakers']:>5.2f}")
    return "\n".join(rows)


def gen_synthetic(n_dialogues, max_turns, n_speakers, n_classes, seed, event_dim=16,
                  val_dialogues=0, test_dialogues=0, noise=0.1):
    """Synthetic corpus whose labels need conversational context.

    Every utterance carries a latent cue c in 0..K-1, planted as a fixed
    random unit direction in its feature vector plus Gaussian noise. Its label
    is (c + c') mod K, where c' is the cue of the most recent earlier turn by
    a *different* speaker; with no such turn the label is c. A context-free
    classifier sees only c, so for K >= 2 it cannot beat chance on turns that
    have an inter-speaker predecessor.

    Speakers change turn with probability 0.75 (uniformly among the other
    speakers). Dialogue lengths are uniform in [ceil(max_turns/2), max_turns].
    """
    for name, value in (("n_dialogues", n_dialogues), ("max_turns", max_turns),
                        ("n_speakers", n_speakers), ("n_classes", n_classes), ("event_dim", event_dim)):
        if value < 1:
            raise UsageError(f"{name} must be >= 1, got {value}")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(event_dim, max(n_classes, 1)))
    if event_dim >= n_classes:
        q, _ = np.linalg.qr(g)
        directions = q[:, :n_classes].T
    else:
        directions = (g / np.linalg.norm(g, axis=0)).T
    names = [f"S{k}" for k in range(n_speakers)]
    conversations = []
    plan = [("train", n_dialogues), ("val", val_dialogues), ("test", test_dialogues)]
    for split, count in plan:
        for d in range(count):
            length = int(rng.integers((max_turns + 1) // 2, max_turns + 1))
            speaker = int(rng.integers(n_speakers))
            turns = []
            cues, spks = [], []
            for i in range(length):
                if i > 0 and n_speakers > 1 and rng.random() < 0.75:
                    speaker = int((speaker + rng.integers(1, n_speakers)) % n_speakers)
                cue = int(rng.integers(n_classes))
                other = next((cues[j] for j in range(i - 1, -1, -1) if spks[j] != speaker), None)
                label = cue if other is None else (cue + other) % n_classes
                feat = directions[cue] + noise * rng.normal(size=event_dim)
                turns.append(Utterance(i, names[speaker], feat.astype(np.float32), label, f"cue{cue}"))
                cues.append(cue)
                spks.append(speaker)
            conversations.append(Conversation(f"{split}-{d:04d}", turns, split))
    return Corpus(conversations, n_speakers, n_classes, event_dim,
                  [f"class{k}" for k in range(n_classes)], [], seed)


def resolve_path(base, value):
    if value is None:
        return None
    p = Path(os.path.expanduser(str(value)))
    return p if p.is_absolute() or base is None else Path(base) / p
