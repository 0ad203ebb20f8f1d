"""Minimal dense-tensor reverse-mode autodiff engine.

Exactly the primitives the repo's models need: strided/padded conv2d, relu,
sigmoid, linear, nearest x2 upsampling, elementwise add/sub, global average
pooling, temporal channel shifting, and the fused loss heads.  Training runs
in float32; gradient checking switches modules to float64.
"""

from confseg.tensornet.tensor import (
    Conv2d,
    Linear,
    Module,
    Tensor,
    add,
    conv2d,
    global_avg_pool,
    linear,
    mse_loss,
    nearest_upsample2,
    relu,
    reshape,
    sigmoid,
    softmax_ce_loss,
    sub,
    temporal_shift,
    weighted_bce_loss,
)
from confseg.tensornet.optim import (
    Adam,
    CosineSchedule,
    CosineWarmRestarts,
    lr_at,
)
from confseg.tensornet.checkpoint import load_checkpoint, save_checkpoint
from confseg.tensornet.gradcheck import GradCheckResult, gradient_check

__all__ = [
    "Adam",
    "Conv2d",
    "CosineSchedule",
    "CosineWarmRestarts",
    "GradCheckResult",
    "Linear",
    "Module",
    "Tensor",
    "add",
    "conv2d",
    "global_avg_pool",
    "gradient_check",
    "linear",
    "load_checkpoint",
    "lr_at",
    "mse_loss",
    "nearest_upsample2",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "softmax_ce_loss",
    "sub",
    "temporal_shift",
    "weighted_bce_loss",
]
