"""Attenuating one feature of an embedding set with a structure-preserving
domain-adversarial mapping, plus the measurement tools to check it worked."""
from .errors import (
    DataError,
    DegenerateDataError,
    DomainError,
    NumericError,
    ParseError,
    ShapeError,
    StateError,
    TrainingDivergedError,
    UcanError,
)
from .features import LabeledEmbeddingSet, auc, measure_feature, ratio_score
from .retrieval import PairDictionary, csls_topk, nn_topk, precision_at_k
from .trainer import DomainPair, TrainedMapping, UcanConfig, map_embeddings, train, train_multilabel

__version__ = "0.1.0"
