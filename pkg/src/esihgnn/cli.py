"""Command-line entry point: build-graph, train, eval, ablate, gen-synthetic, check-grad.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import numeric as nc
from .corpus import corpus_summary, format_summary, gen_synthetic, ingest, write_corpus
from .edges import EDGE_MODE_OVERRIDES, EdgeFeatureTable, load_external
from .errors import ESIHGNNError, UsageError
from .graph import RELATIONS, build_graph, export_graph, parse_relations
from .metrics import METRIC_KINDS
from .training import ABLATION_ROW_NAMES, TrainConfig, ablate, evaluate, metric_spec, train

log = logging.getLogger("esihgnn")

PATH_KEYS = ("corpus", "knowledge", "checkpoint_out", "report_out")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _add_model_flags(p):
    p.add_argument("--config", help="JSON run config (TrainConfig keys plus corpus/knowledge/"
                   "checkpoint_out/report_out paths)")
    p.add_argument("--corpus", help="corpus JSON-lines file")
    p.add_argument("--knowledge", help="knowledge-vector file for event-source relations")
    p.add_argument("--omega", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--edge-mode", choices=EDGE_MODE_OVERRIDES)
    p.add_argument("--no-intra-esi", action="store_true")
    p.add_argument("--relations", help="comma-separated active relations or group names")
    p.add_argument("--metric", choices=METRIC_KINDS)
    p.add_argument("--exclude-labels", type=_int_list, help="comma-separated class indices")
    p.add_argument("--out", help="output path (default: stdout)")


def build_parser():
    parser = _Parser(prog="esihgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("build-graph", help="emit event-state graphs as JSON lines or DOT")
    p.add_argument("corpus", nargs="?")
    p.add_argument("--corpus", dest="corpus_flag")
    p.add_argument("--dialogue", help="only this dialogue id")
    p.add_argument("--omega", type=int, default=1)
    p.add_argument("--relations")
    p.add_argument("--format", choices=("json", "dot"), default="json")
    p.add_argument("--out")
    p.add_argument("--summary", action="store_true", help="print the corpus summary to stderr")

    p = sub.add_parser("train", help="train a model and write a checkpoint and a run report")
    _add_model_flags(p)
    p.add_argument("--checkpoint", help="checkpoint output path")

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--knowledge")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--metric", choices=METRIC_KINDS, default="weighted_f1")
    p.add_argument("--exclude-labels", type=_int_list)
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_model_flags(p)
    p.add_argument("--seeds", type=_int_list, help="comma-separated seeds shared by every row")
    p.add_argument("--rows", help="comma-separated subset of: " + "; ".join(ABLATION_ROW_NAMES))
    p.add_argument("--format", choices=("json", "text"), default="text")

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus with context-dependent labels")
    p.add_argument("--dialogues", type=int, default=20)
    p.add_argument("--max-turns", type=int, default=10)
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--event-dim", type=int, default=16)
    p.add_argument("--val-dialogues", type=int, default=0)
    p.add_argument("--test-dialogues", type=int, default=0)
    p.add_argument("--sidecar", action="store_true", help="store features in a binary sidecar")
    p.add_argument("--out", required=True)

    p = sub.add_parser("check-grad", help="finite-difference check of every parameter group")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--turns", type=int, default=3)
    p.add_argument("--edge-mode", choices=EDGE_MODE_OVERRIDES, default="default")
    p.add_argument("--max-coords", type=int, default=16, help="coordinates sampled per tensor (0 = all)")
    p.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _emit(text, out):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def load_run_config(args):
    """Merge the JSON config file with command-line overrides."""
    doc, paths, base = {}, {}, None
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        base = path.parent
        for key in PATH_KEYS:
            if key in doc:
                value = doc.pop(key)
                paths[key] = str(Path(value) if Path(value).is_absolute() else base / value)
    overrides = {
        "omega": args.omega, "layers": args.layers, "hidden": args.hidden, "seed": args.seed,
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size, "dropout": args.dropout,
        "edge_mode": args.edge_mode, "metric": args.metric, "exclude_labels": args.exclude_labels,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if args.no_intra_esi:
        doc["intra_esi"] = False
    if args.relations:
        doc["relations"] = [r.name for r in parse_relations(args.relations)]
    config = TrainConfig.from_dict(doc)
    if args.corpus:
        paths["corpus"] = args.corpus
    if args.knowledge:
        paths["knowledge"] = args.knowledge
    if "corpus" not in paths:
        raise UsageError("no corpus given (use --corpus or a 'corpus' key in the config)")
    return config, paths


def _knowledge(path):
    if not path:
        log.warning("no knowledge file given; event-source relations fall back to trainable edge vectors")
        return None
    if not Path(path).is_file():
        raise UsageError(f"knowledge file not found: {path}")
    return load_external(path)


def _ingest_with_summary(path):
    corpus = ingest(path)
    sys.stderr.write(format_summary(corpus_summary(corpus)) + "\n")
    return corpus


def cmd_build_graph(args):
    path = args.corpus or args.corpus_flag
    if not path:
        raise UsageError("build-graph needs a corpus path")
    corpus = ingest(path)
    if args.summary:
        sys.stderr.write(format_summary(corpus_summary(corpus)) + "\n")
    convs = corpus.conversations
    if args.dialogue:
        convs = [c for c in convs if c.dialogue_id == args.dialogue]
        if not convs:
            raise UsageError(f"dialogue {args.dialogue!r} not in corpus")
    relations = parse_relations(args.relations) if args.relations else RELATIONS
    graphs = [build_graph(c, args.omega, relations) for c in convs]
    sep = "\n" if args.format == "json" else "\n\n"
    _emit(sep.join(export_graph(g, args.format) for g in graphs), args.out)
    return 0


def cmd_train(args):
    config, paths = load_run_config(args)
    corpus = _ingest_with_summary(paths["corpus"])
    model, report = train(config, corpus, _knowledge(paths.get("knowledge")))
    ckpt = args.checkpoint or paths.get("checkpoint_out")
    if ckpt:
        model.save(ckpt)
        log.info("checkpoint written to %s", ckpt)
    _emit(report.to_json(), args.out or paths.get("report_out"))
    return 0


def cmd_eval(args):
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    corpus = ingest(args.corpus)
    from .model import ESIHGNN

    model = ESIHGNN.load(args.checkpoint, _knowledge(args.knowledge))
    config = TrainConfig(metric=args.metric, exclude_labels=args.exclude_labels)
    convs = corpus.split(args.split)
    if not convs:
        raise UsageError(f"corpus has no {args.split!r} conversations")
    value = evaluate(model, convs, metric_spec(config, corpus))
    _emit(json.dumps({"split": args.split, "metric": args.metric, "score": value}, sort_keys=True), args.out)
    return 0


def cmd_ablate(args):
    config, paths = load_run_config(args)
    corpus = _ingest_with_summary(paths["corpus"])
    rows = [r.strip() for r in args.rows.split(",")] if args.rows else None
    table = ablate(config, corpus, rows, args.seeds, _knowledge(paths.get("knowledge")))
    text = table.to_json() if args.format == "json" else table.to_text()
    _emit(text, args.out or paths.get("report_out"))
    return 0


def cmd_gen_synthetic(args):
    corpus = gen_synthetic(args.dialogues, args.max_turns, args.speakers, args.classes, args.seed,
                           args.event_dim, args.val_dialogues, args.test_dialogues)
    write_corpus(args.out, corpus, sidecar=args.sidecar)
    sys.stderr.write(format_summary(corpus_summary(corpus)) + "\n")
    return 0


def gradient_check_instance(seed=7, hidden=8, layers=2, turns=3, edge_mode="default"):
    """Seeded toy model plus a scalar loss closure; call under 64-bit precision.

    Speakers alternate A, B, A, ... so every relation appears. With edge_mode
    "default" a small random knowledge file covers the event-source edges and
    the state-source edges get trainable vectors.
    """
    from .corpus import Conversation, Corpus, Utterance
    from .edges import KnowledgeVectors, edge_key
    from .training import build_model

    rng = np.random.default_rng(seed)
    event_dim, classes, edge_dim = 5, 3, 4
    conv = Conversation("grad", [
        Utterance(i, "AB"[i % 2], rng.normal(size=event_dim), int(rng.integers(classes)))
        for i in range(turns)])
    corpus = Corpus([conv], 2, classes, event_dim)
    knowledge = None
    if edge_mode == "default":
        knowledge = KnowledgeVectors(dim=edge_dim)
        for e in build_graph(conv, 1).edges:
            if e.relation.source_kind == "event":
                knowledge.vectors[edge_key(conv.dialogue_id, e)] = rng.normal(size=edge_dim)
    config = TrainConfig(hidden=hidden, layers=layers, omega=1, seed=seed, edge_mode=edge_mode,
                         dropout=0.0, trainable_edge_dim=edge_dim)
    model = build_model(config, corpus, knowledge)

    def loss():
        return model.forward([conv], compute_loss=True).loss

    return model, loss


def cmd_check_grad(args):
    with nc.precision("float64"):
        model, loss = gradient_check_instance(args.seed, args.hidden, args.layers, args.turns, args.edge_mode)
        details = nc.finite_diff_check(loss, model.parameters(), step=1e-5,
                                       max_coords=args.max_coords or None, seed=args.seed, return_details=True)
    groups = {}
    for name, err in details.items():
        group = _group_of(name)
        groups[group] = max(groups.get(group, 0.0), err)
    worst = max(details.values())
    for group, err in sorted(groups.items()):
        print(f"{group:<22} {err:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    if worst >= args.tolerance:
        print("gradient check FAILED", file=sys.stderr)
        return 3
    return 0


def _group_of(name):
    parts = name.split(".")
    if parts[0].startswith("layer"):
        if parts[1].startswith("gru_"):
            return parts[1]
        if parts[1] in ("score", "pos"):
            return {"score": "score W", "pos": "position W_p"}[parts[1]]
        return {"node": "relation W_rv", "edge": "relation W_ra"}[parts[2]]
    if parts[0] == "edge":
        return "edge vectors"
    return ".".join(parts[:2])


COMMANDS = {
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gen-synthetic": cmd_gen_synthetic,
    "check-grad": cmd_check_grad,
}


class _StderrHandler(logging.StreamHandler):
    # looks up sys.stderr per record so repeated in-process calls follow redirection
    @property
    def stream(self):
        return sys.stderr

    @stream.setter
    def stream(self, value):
        pass


def _setup_logging(verbose):
    if not any(isinstance(h, _StderrHandler) for h in log.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
    log.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _setup_logging(args.verbose)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if getattr(args, "config", None) and not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        return COMMANDS[args.command](args)
    except ESIHGNNError as exc:
        print(f"esihgnn: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"esihgnn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
