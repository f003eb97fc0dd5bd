"""Training loop, evaluation, the context-free probe baseline and the ablation harness."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nc
from .edges import EDGE_MODE_OVERRIDES, EdgeFeatureTable
from .errors import NumericalError, UsageError
from .graph import RELATION_GROUPS, RELATIONS, build_graph, parse_relations
from .metrics import MetricSpec, score
from .model import ESIHGNN, ModelConfig
from .optim import AdamW, clip_grad_norm

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 16
    epochs: int = 30
    layers: int = 4
    omega: int = 1
    hidden: int = 300
    seed: int = 0
    relations: tuple = RELATIONS
    edge_mode: str = "default"
    intra_esi: bool = True
    metric: str = "weighted_f1"
    exclude_labels: tuple = None  # None: use the corpus header's exclusions
    patience: int = 0  # epochs without validation gain before stopping; 0 disables
    dropout: float = 0.1
    clip_norm: float = 5.0  # 0 disables clipping
    leaky_relu: bool = False
    swap_inter_gru: bool = False
    trainable_edge_dim: int = 300
    shuffle: bool = True
    eval_batch_size: int = 64
    precision: str = "float32"
    target_train_metric: float = None  # stop once the training metric reaches this value

    def __post_init__(self):
        self.relations = parse_relations(self.relations)
        if self.edge_mode not in EDGE_MODE_OVERRIDES:
            raise UsageError(f"unknown edge mode {self.edge_mode!r}; expected one of {EDGE_MODE_OVERRIDES}")
        if self.precision not in ("float32", "float64"):
            raise UsageError(f"unknown precision {self.precision!r}")
        for name in ("batch_size", "hidden", "omega", "trainable_edge_dim", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be a positive integer")
        for name in ("lr", "weight_decay", "epochs", "layers", "patience", "clip_norm"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")
        if self.exclude_labels is not None:
            self.exclude_labels = tuple(int(x) for x in self.exclude_labels)
        MetricSpec(self.metric)

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["relations"] = [r.name for r in self.relations]
        if self.exclude_labels is not None:
            doc["exclude_labels"] = list(self.exclude_labels)
        return doc

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise UsageError(f"unknown config keys {unknown}")
        return cls(**doc)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def dtype(self):
        if os.environ.get("ESIHGNN_DETERMINISTIC") == "1":
            return "float64"
        return self.precision


@dataclass
class RunReport:
    seed: int
    config: dict
    epochs: list = field(default_factory=list)  # {"epoch", "train_loss", "train_metric", "val_metric"}
    best_epoch: int = 0
    best_val_metric: float = None
    test_metric: float = None
    metric: str = "weighted_f1"
    stopped_early: bool = False  # patience ran out or the training target was met
    wall_time: float = 0.0

    def to_dict(self):
        return dataclasses.asdict(self)

    def deterministic_dict(self):
        """Everything except wall-clock time."""
        doc = self.to_dict()
        doc.pop("wall_time")
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @property
    def final_train_metric(self):
        return self.epochs[-1]["train_metric"] if self.epochs else None


def metric_spec(config, corpus):
    excluded = corpus.excluded_labels if config.exclude_labels is None else config.exclude_labels
    spec = MetricSpec(config.metric, frozenset(excluded))
    spec.validate(corpus.num_classes)
    return spec


def build_model(config, corpus, knowledge=None):
    """Model and edge table for `config`, sized to the corpus header."""
    edge_table = EdgeFeatureTable.configure(
        config.relations, config.edge_mode, knowledge, config.trainable_edge_dim, seed=config.seed + 1)
    model_cfg = ModelConfig(
        event_dim=corpus.event_dim,
        speaker_dim=corpus.speakers_onehot_dim,
        num_classes=corpus.num_classes,
        hidden=config.hidden,
        layers=config.layers,
        omega=config.omega,
        relations=config.relations,
        intra_esi=config.intra_esi,
        dropout=config.dropout,
        leaky_relu=config.leaky_relu,
        swap_inter_gru=config.swap_inter_gru,
    )
    return ESIHGNN(model_cfg, edge_table, seed=config.seed)


def _batches(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def predict_labels(model, conversations, batch_size=64):
    """(y_true, y_pred) over labeled utterances of `conversations`."""
    y_true, y_pred = [], []
    with nc.no_record():
        for batch in _batches(list(conversations), batch_size):
            result = model.forward(batch)
            for c, conv in enumerate(batch):
                pred = result.predictions(c)
                for u, p in zip(conv.turns, pred):
                    if u.label is not None:
                        y_true.append(u.label)
                        y_pred.append(int(p))
    return np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)


def evaluate(model, conversations, spec, batch_size=64):
    y_true, y_pred = predict_labels(model, conversations, batch_size)
    return score(y_true, y_pred, model.config.num_classes, spec)


def train(config, corpus, knowledge=None):
    """Train on corpus.split('train'), select on 'val', report 'test' at the best epoch.

    Returns (model, RunReport); the model holds the best-validation weights.
    """
    with nc.precision(config.dtype()):
        return _train(config, corpus, knowledge)


def _train(config, corpus, knowledge):
    started = time.perf_counter()
    train_convs = corpus.split("train")
    val_convs = corpus.split("val")
    test_convs = corpus.split("test")
    if not train_convs:
        raise UsageError("the corpus has no 'train' conversations")
    if not val_convs:
        raise UsageError("the corpus has no 'val' conversations (needed for model selection)")
    spec = metric_spec(config, corpus)
    model = build_model(config, corpus, knowledge)
    params = model.parameters()
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    order_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1])
    report = RunReport(seed=config.seed, config=config.to_dict(), metric=config.metric)
    best_state = model.state_dict()
    best_val = None
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(len(train_convs)) if config.shuffle else np.arange(len(train_convs))
        total = 0.0
        for step, batch_idx in enumerate(_batches(order, config.batch_size)):
            batch = [train_convs[i] for i in batch_idx]
            opt.zero_grad()
            try:
                with nc.Tape() as tape:
                    result = model.forward(batch, train=True, rng=dropout_rng, compute_loss=True)
                if result.loss is None:
                    continue
                tape.backward(result.loss)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} step {step}: {exc}") from exc
            if config.clip_norm:
                clip_grad_norm(params, config.clip_norm)
            opt.step()
            total += result.loss.item()
        train_loss = total / len(train_convs)
        if not np.isfinite(train_loss):
            raise NumericalError(f"epoch {epoch}: training loss diverged")
        train_metric = evaluate(model, train_convs, spec, config.eval_batch_size)
        val_metric = evaluate(model, val_convs, spec, config.eval_batch_size)
        report.epochs.append({"epoch": epoch, "train_loss": train_loss,
                              "train_metric": train_metric, "val_metric": val_metric})
        log.info("epoch %d loss %.4f train %.4f val %.4f", epoch, train_loss, train_metric, val_metric)
        # strict improvement keeps the earlier epoch on ties
        if best_val is None or val_metric > best_val:
            best_val, report.best_epoch = val_metric, epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                report.stopped_early = True
                break
        if config.target_train_metric is not None and train_metric >= config.target_train_metric:
            report.stopped_early = True
            break
    model.load_state_dict(best_state)
    report.best_val_metric = best_val
    if test_convs:
        report.test_metric = evaluate(model, test_convs, spec, config.eval_batch_size)
    report.wall_time = time.perf_counter() - started
    return model, report


def linear_probe(train_convs, eval_convs, num_classes, spec, steps=300, lr=0.05, seed=0):
    """Context-free baseline: softmax regression on each utterance's own feature."""
    def stack(convs):
        X = [u.feature for c in convs for u in c.turns if u.label is not None]
        y = [u.label for c in convs for u in c.turns if u.label is not None]
        return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.intp)

    with nc.precision("float64"):
        X, y = stack(train_convs)
        rng = np.random.default_rng(seed)
        W = nc.init_linear(num_classes, X.shape[1], rng, "probe.W")
        b = nc.Parameter(np.zeros(num_classes), name="probe.b")
        opt = AdamW([W, b], lr=lr, weight_decay=0.0)
        Xt = nc.constant(X)
        weights = np.full(len(y), 1.0 / len(y))
        for _ in range(steps):
            opt.zero_grad()
            with nc.Tape() as tape:
                loss = nc.cross_entropy(nc.linear(W, b, Xt), y, weights)
            tape.backward(loss)
            opt.step()
        Xe, ye = stack(eval_convs)
        pred = (Xe @ W.data.T + b.data).argmax(axis=1)
    return score(ye, pred, num_classes, spec)


# ---------------------------------------------------------------------------
# ablations


ABLATION_ROWS = (
    ("ESIHGNN", {"omega": 1}),
    ("ESIHGNN (omega=2)", {"omega": 2}),
    ("ESIHGNN (omega=3)", {"omega": 3}),
    ("-{event-to-event}", {"remove": "event-to-event"}),
    ("-{state-to-event}", {"remove": "state-to-event"}),
    ("-{event-to-state}", {"remove": "event-to-state"}),
    ("-{state-to-state}", {"remove": "state-to-state"}),
    ("trainable", {"edge_mode": "trainable"}),
    ("0/1", {"edge_mode": "binary01"}),
    ("-IntraESI", {"intra_esi": False}),
)
ABLATION_ROW_NAMES = tuple(name for name, _ in ABLATION_ROWS)


def row_config(base, overrides):
    changes = {k: v for k, v in overrides.items() if k != "remove"}
    if "remove" in overrides:
        removed = set(RELATION_GROUPS[overrides["remove"]])
        changes["relations"] = tuple(r for r in base.relations if r not in removed)
    return base.replace(**changes)


def count_edges(conversations, omega, relations):
    return sum(len(build_graph(c, omega, relations).edges) for c in conversations)


@dataclass
class AblationRow:
    name: str
    overrides: dict
    metric: str
    mean: float
    std: float
    per_seed: list
    edges: int
    transform_params: int
    edge_params: int
    wall_time: float
    reports: list = field(default_factory=list, repr=False)

    def to_dict(self):
        doc = dataclasses.asdict(self)
        doc["reports"] = [r.to_dict() for r in self.reports]
        return doc


@dataclass
class AblationTable:
    rows: list
    seeds: list

    def to_json(self, include_reports=False):
        rows = []
        for r in self.rows:
            doc = r.to_dict()
            if not include_reports:
                doc.pop("reports")
            rows.append(doc)
        return json.dumps({"seeds": list(self.seeds), "rows": rows}, sort_keys=True, indent=2)

    def to_text(self):
        head = f"{'Method':<20} {'metric':>11} {'mean':>7} {'std':>7} {'edges':>7} {'params':>9} {'edge_par':>8} {'time_s':>7}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.name:<20} {r.metric:>11} {r.mean:>7.4f} {r.std:>7.4f} {r.edges:>7d} "
                         f"{r.transform_params:>9d} {r.edge_params:>8d} {r.wall_time:>7.2f}")
        return "\n".join(lines)


def ablate(base, corpus, grid=None, seeds=None, knowledge=None):
    """Run the ablation rows in order with a shared seed set.

    `grid` selects rows by name (all ten when None). Each row reports the mean
    test metric over seeds (validation metric if the corpus has no test
    split), the total edge count of the corpus graphs, and parameter counts
    with and without the edge vectors.
    """
    rows = ABLATION_ROWS if grid is None else tuple(_lookup_row(name) for name in grid)
    seeds = [base.seed] if seeds is None else list(seeds)
    if not seeds:
        raise UsageError("ablation needs at least one seed")
    out = []
    for name, overrides in rows:
        cfg = row_config(base, overrides)
        started = time.perf_counter()
        reports, values = [], []
        model = None
        for seed in seeds:
            model, report = train(cfg.replace(seed=seed), corpus, knowledge)
            reports.append(report)
            values.append(report.test_metric if report.test_metric is not None else report.best_val_metric)
        out.append(AblationRow(
            name=name,
            overrides=dict(overrides),
            metric=cfg.metric,
            mean=float(np.mean(values)),
            std=float(np.std(values)),
            per_seed=values,
            edges=count_edges(corpus.conversations, cfg.omega, cfg.relations),
            transform_params=model.num_parameters(include_edges=False),
            edge_params=model.num_parameters() - model.num_parameters(include_edges=False),
            wall_time=time.perf_counter() - started,
            reports=reports,
        ))
        log.info("ablation %s: %.4f (%.1fs)", name, out[-1].mean, out[-1].wall_time)
    return AblationTable(out, seeds)


def _lookup_row(name):
    for row in ABLATION_ROWS:
        if row[0] == name:
            return row
    raise UsageError(f"unknown ablation row {name!r}; expected one of {list(ABLATION_ROW_NAMES)}")
