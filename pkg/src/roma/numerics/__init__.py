"""Float64 tensors with tape-based reverse-mode differentiation."""
from roma.numerics.gradcheck import GradCheckReport, ReplayPlan, analytic_grads, finite_difference_check, replay
from roma.numerics.ops import (
    add, add_row, as_tensor, concat, exp, gelu, layer_norm, linear, matmul, mean_all, mse, mul,
    mul_row, outer_rows, primitive, reshape, rowmix, scale, sigmoid, silu, slice_axis, softmax_rows, softplus,
    square, sub, sum_all, transpose,
)
from roma.numerics.tensor import DTYPE, ParamRegistry, Tape, Tensor, allocations, backward, no_tape

__all__ = [
    "DTYPE", "GradCheckReport", "ParamRegistry", "ReplayPlan", "replay", "Tape", "Tensor", "add", "add_row", "allocations",
    "analytic_grads", "as_tensor", "backward", "concat", "exp", "finite_difference_check", "gelu",
    "layer_norm", "linear", "matmul", "mean_all", "mse", "mul", "mul_row", "no_tape", "outer_rows", "primitive",
    "reshape", "rowmix", "scale", "sigmoid", "silu", "slice_axis", "softmax_rows", "softplus",
    "square", "sub", "sum_all", "transpose",
]
