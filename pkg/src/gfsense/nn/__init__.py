"""Network primitives: forward reference ops, autodiff tape, AdamW, checkpoints."""

from . import autodiff
from .autodiff import GradTape, Var, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .functional import (
    LayerNormParams,
    LstmCellParams,
    bilstm_forward,
    gated_fuse,
    init_lstm_params,
    layer_norm,
    lstm_cell_step,
    softmax_cross_entropy,
)
from .optim import AdamW
