"""Held-out-word LSTM language model: training, checkpoints, context extraction."""
from .checkpoint import (BadMagicError, CheckpointError, ChecksumError, DigestMismatchError,
                         TruncatedCheckpointError, VersionMismatchError, load_checkpoint,
                         save_checkpoint)
from .kernels import BACKEND
from .model import (PARAM_NAMES, ContextVector, HeldOut, HeldOutTargetError, LstmParams,
                    ModelConfig, TrainingError, clip_global_norm, contexts_for, eligible_positions,
                    extract_context, extract_contexts, forward_heldout, init_params, loss_and_grads,
                    perplexity, train, zero_output)
