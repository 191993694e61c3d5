"""Anomaly detection for categorical events via pairwise entity embeddings."""

__version__ = "0.1.0"

from .core import UNK_TOKEN, EventSchema, Vocabulary, build_vocabulary, decode_event, encode_event, encode_events
from .estimator import APEDetector
from .evaluation import EvalReport, average_precision, evaluate, inject_anomalies, roc_auc
from .exceptions import (
    ApeError,
    ChecksumError,
    ModelFormatError,
    ParseError,
    SchemaMismatchError,
    UndefinedMetricError,
    UnknownEntityError,
    VersionMismatchError,
)
from .ingest import Dataset, dataset_stats, filter_new_events, load_dataset, parse_events
from .model import ApeModel, Gradient, init_model, load_model, save_model
from .noise import NoiseModel, build_noise
from .synth import SynthConfig, generate, generate_split
from .trainer import TrainConfig, TrainReport, train, train_step

__all__ = [
    "APEDetector",
    "ApeError",
    "ApeModel",
    "ChecksumError",
    "Dataset",
    "EvalReport",
    "EventSchema",
    "Gradient",
    "ModelFormatError",
    "NoiseModel",
    "ParseError",
    "SchemaMismatchError",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "UNK_TOKEN",
    "UndefinedMetricError",
    "UnknownEntityError",
    "VersionMismatchError",
    "Vocabulary",
    "average_precision",
    "build_noise",
    "build_vocabulary",
    "dataset_stats",
    "decode_event",
    "encode_event",
    "encode_events",
    "evaluate",
    "filter_new_events",
    "generate",
    "generate_split",
    "init_model",
    "inject_anomalies",
    "load_dataset",
    "load_model",
    "parse_events",
    "roc_auc",
    "save_model",
    "train",
    "train_step",
]
