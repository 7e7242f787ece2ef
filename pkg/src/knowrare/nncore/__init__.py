"""Dense float64 numerics: layers, losses, Adam, gradient checking, checkpoints."""
from .container import load_tensors, save_tensors
from .gradcheck import grad_check
from .layers import (
    affine_backward,
    affine_forward,
    init_affine,
    init_lstm,
    init_mlp,
    leaky_relu,
    log_softmax,
    logistic,
    lstm_backward,
    lstm_forward,
    lstm_step,
    lstm_step_backward,
    lstm_step_forward,
    mlp_backward,
    mlp_forward,
    softmax,
    softmax_backward,
)
from .losses import bce_multilabel, cross_entropy, mse
from .optim import AdamState, LrSchedule, adam_step


def subparams(params, prefix):
    """View of ``params`` entries under ``prefix.`` with the prefix stripped (arrays shared)."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def prefixed(grads, prefix):
    return {f"{prefix}.{k}": v for k, v in grads.items()}
