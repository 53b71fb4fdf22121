from numkernel.tensor import Tape, Tensor, check_finite, default_dtype, precision, set_precision
from numkernel.ops import (
    BatchNormState, add, batchnorm, bce_with_logits, concat, dropout, gather, l2_normalize_rows,
    linear, matmul, mean_all, mul, relu, rowdot, scale, segment_mean, segment_sum, sigmoid,
    softmax_cross_entropy, sub, sum_all, value,
)
from numkernel.optim import ParamStore, adam_step, normal, ones, xavier_uniform, zeros
from numkernel.gradcheck import grad_check
