"""Iterative feedback-guided inpainting and proofreading of symbolic piano
music: REMI tokenization, three small transformers trained from scratch on a
hand-rolled autodiff engine, the iterative refine loop, an evaluation
harness, and an HTTP proofreading service.
"""

from .corpus import gamma, generate_toy_corpus, sample_fragment, random_subset_mask, split_by_hash
from .engine import EngineConfig, refinpaint, sample_fill, schedule_masked_count
from .midi import NoteEvent, Score, parse_smf, write_smf
from .models import (
    EvaluatorModel,
    FeedbackModel,
    InpaintingModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from .remi import Token, TokenSeq, Vocab, VOCAB, decode, encode, transpose
from .training import TrainConfig, train_evaluator, train_feedback, train_inpainter

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "EvaluatorModel",
    "FeedbackModel",
    "InpaintingModel",
    "ModelConfig",
    "NoteEvent",
    "Score",
    "Token",
    "TokenSeq",
    "TrainConfig",
    "VOCAB",
    "Vocab",
    "decode",
    "encode",
    "gamma",
    "generate_toy_corpus",
    "load_checkpoint",
    "parse_smf",
    "random_subset_mask",
    "refinpaint",
    "sample_fill",
    "sample_fragment",
    "save_checkpoint",
    "schedule_masked_count",
    "split_by_hash",
    "train_evaluator",
    "train_feedback",
    "train_inpainter",
    "transpose",
    "write_smf",
]
