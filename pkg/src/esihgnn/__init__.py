"""Heterogeneous event-state DAG network for utterance-level emotion recognition in dialogue."""

from .corpus import Conversation, Corpus, Utterance, gen_synthetic, ingest, write_corpus
from .edges import EdgeFeatureTable, EdgeMode, KnowledgeVectors, load_external
from .errors import (DataError, DomainError, ESIHGNNError, MissingFeatureError, NumericalError,
                     ParseError, ShapeError, UsageError)
from .graph import RELATIONS, HeteroGraph, RelationType, build_graph, export_graph, validate_dag
from .metrics import MetricSpec, micro_f1, weighted_f1
from .model import ESIHGNN, ModelConfig
from .training import RunReport, TrainConfig, ablate, evaluate, train

__version__ = "0.1.0"
