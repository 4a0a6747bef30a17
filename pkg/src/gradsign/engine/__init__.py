"""Minimal dense-network engine: deterministic forwards, per-sample losses,
and exact per-sample reverse-mode gradients, backed by a compiled core with
a pure-numpy fallback."""

from .backend import available_cores, core_name, set_core, use_core
from .losses import LOSS_KINDS, per_sample_losses, softmax
from .network import Batch, LayerSpec, NetworkSpec
from .ops import (
    finite_diff_gradient,
    forward,
    forward_with_cache,
    hessian_vector_product,
    init_params,
    mean_loss_and_gradient,
    per_sample_gradients,
    relu_activation_patterns,
    seeded_gradient,
)
from .program import Program, ProgramBuilder, as_program

__all__ = [
    "available_cores",
    "core_name",
    "set_core",
    "use_core",
    "LOSS_KINDS",
    "per_sample_losses",
    "softmax",
    "Batch",
    "LayerSpec",
    "NetworkSpec",
    "finite_diff_gradient",
    "forward",
    "forward_with_cache",
    "hessian_vector_product",
    "init_params",
    "mean_loss_and_gradient",
    "per_sample_gradients",
    "relu_activation_patterns",
    "seeded_gradient",
    "Program",
    "ProgramBuilder",
    "as_program",
]
