"""Nested mention tagging with per-type IOBES CRFs decoded outside-in."""

__version__ = "0.1.0"

from .tagging import Mention, Tag, levelize, mentions_from_tags, tags_from_mentions
from .lattice import LatticeScores, path_score
from .decode import DecodedPath, DecodeStats, nested_decode, viterbi_best, viterbi_second_best
from .objective import log_partition, log_partition_except_best, sentence_loss, sentence_loss_grad
from .corpus import Document, generate_synthetic, read_corpus, write_corpus
from .evaluation import score
from .model import ModelParams, TrainConfig, load_model, predict, save_model, train

__all__ = [
    "Mention", "Tag", "levelize", "mentions_from_tags", "tags_from_mentions",
    "LatticeScores", "path_score",
    "DecodedPath", "DecodeStats", "nested_decode", "viterbi_best", "viterbi_second_best",
    "log_partition", "log_partition_except_best", "sentence_loss", "sentence_loss_grad",
    "Document", "generate_synthetic", "read_corpus", "write_corpus",
    "score",
    "ModelParams", "TrainConfig", "load_model", "predict", "save_model", "train",
]
