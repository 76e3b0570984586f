"""Reverse-mode differentiation engine, optimiser and gradient oracle."""

from .gradcheck import GradCheckReport, NonDeterministicLoss, finite_diff_check, relative_error
from .optim import AdamState, adam_step
from .params import ParameterStore, uniform_fan_in
from .tensor import (
    Segments,
    ShapeError,
    Tensor,
    add,
    add_row,
    add_scalar,
    backward,
    bce_with_logits_terms,
    concat,
    constant,
    cross_entropy_with_logits,
    exp,
    gated_bce_means,
    gather_rows,
    layer_norm,
    mask_mul,
    matmul,
    mean,
    mul,
    mul_row,
    relu,
    reshape,
    row_dot,
    scale,
    scale_rows,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax,
    softmax_ce_terms,
    softmax_rows,
    softplus,
    stack_scalars,
    sub,
    sum_all,
    tensor,
    transpose,
    variance,
    variance_of_scalars,
)
