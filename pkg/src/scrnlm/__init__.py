"""Recurrent language models with a slowly changing context layer.

Plain-numpy implementations of a simple recurrent network, the
context-layer variants (fixed and per-unit learned decay), and an LSTM
baseline, trained by truncated backpropagation through time with SGD
and evaluated by perplexity.
"""

from .cells import (ARCH_LSTM, ARCH_SCRN, ARCH_SCRN_ADAPTIVE, ARCH_SRN,
                    ARCHITECTURES, CellState, StepTape, block_input_matrix,
                    block_matrix)
from .checkpoint import (CheckpointError, CheckpointFormatError,
                         CheckpointTruncatedError, CheckpointVersionError,
                         VocabHashMismatchError, load_checkpoint,
                         save_checkpoint, verify_vocab_hash)
from .corpus import (ClassLayout, StreamSet, Vocabulary, build_frequency_classes,
                     build_vocab, decode, encode, load_vocab, make_streams,
                     save_vocab)
from .evaluator import EvalReport, evaluate_ids, perplexity
from .gradcheck import GradReport, check_all, compare_gradients, numeric_gradient
from .models import LanguageModel, create_model
from .trainer import (EpochStats, ScheduleState, TrainConfig, TrainDivergence,
                      make_schedule, renormalize_gradients, schedule_step,
                      train_epoch)

__version__ = "0.1.0"

__all__ = [
    "ARCH_LSTM", "ARCH_SCRN", "ARCH_SCRN_ADAPTIVE", "ARCH_SRN", "ARCHITECTURES",
    "CellState", "StepTape", "block_input_matrix", "block_matrix",
    "CheckpointError", "CheckpointFormatError", "CheckpointTruncatedError",
    "CheckpointVersionError", "VocabHashMismatchError", "load_checkpoint",
    "save_checkpoint", "verify_vocab_hash",
    "ClassLayout", "StreamSet", "Vocabulary", "build_frequency_classes",
    "build_vocab", "decode", "encode", "load_vocab", "make_streams", "save_vocab",
    "EvalReport", "evaluate_ids", "perplexity",
    "GradReport", "check_all", "compare_gradients", "numeric_gradient",
    "LanguageModel", "create_model",
    "EpochStats", "ScheduleState", "TrainConfig", "TrainDivergence",
    "make_schedule", "renormalize_gradients", "schedule_step", "train_epoch",
    "__version__",
]
