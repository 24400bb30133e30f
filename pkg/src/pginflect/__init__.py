"""Morphological inflection with a character-level pointer-generator
transformer: data handling, augmentation, training, decoding, and
evaluation."""

from .data import (
    EncodedSequence,
    InflectionExample,
    Vocabulary,
    encode_source,
    parse_test_tsv,
    parse_train_tsv,
    write_predictions,
)
from .model import (
    InflectionTransformer,
    ModelConfig,
    build_extended_vocabulary,
    load_model,
    save_model,
)
from .training import Checkpoint, TrainConfig, build_pipeline_data, select_ensemble, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "EncodedSequence",
    "InflectionExample",
    "InflectionTransformer",
    "ModelConfig",
    "TrainConfig",
    "Vocabulary",
    "build_extended_vocabulary",
    "build_pipeline_data",
    "encode_source",
    "load_model",
    "parse_test_tsv",
    "parse_train_tsv",
    "save_model",
    "select_ensemble",
    "train",
    "write_predictions",
]
