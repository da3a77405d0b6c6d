"""Dense kernels, the GCN backbone, optimizer, and gradient checking."""

from .gcn import (
    EMBED_DIM,
    HIDDEN_DIM,
    BatchNorm,
    ForwardCache,
    GcnModel,
    backward_batch,
    forward,
    forward_batch,
    init_model,
    load_model,
    masked_cross_entropy,
    masked_log_softmax,
    masked_softmax,
    mse,
    named_parameters,
    normalize_adjacency,
    save_model,
    seen_mask,
)
from .optim import AdamState, adam_step, init_adam
from .gradcheck import GradCheckLoss, finite_diff_check

__all__ = [
    "EMBED_DIM",
    "HIDDEN_DIM",
    "AdamState",
    "BatchNorm",
    "ForwardCache",
    "GcnModel",
    "GradCheckLoss",
    "adam_step",
    "backward_batch",
    "finite_diff_check",
    "forward",
    "forward_batch",
    "init_adam",
    "init_model",
    "load_model",
    "masked_cross_entropy",
    "masked_log_softmax",
    "masked_softmax",
    "mse",
    "named_parameters",
    "normalize_adjacency",
    "save_model",
    "seen_mask",
]
