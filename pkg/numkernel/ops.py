# ops.py
"""
The primitive set. Each function computes its forward value with numpy and
records a vector-Jacobian product on the active tape.

Index arguments (gather rows, segment ids) are plain integer arrays, never
Tensors, and carry no gradient.
"""
import numpy as np

from numkernel.tensor import Tensor, as_tensor, check_finite, default_dtype, record
from utils.errors import InvalidArgumentError

BCE_CLAMP = 30.0


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise InvalidArgumentError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _index(idx, limit: int, op: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= limit):
        raise InvalidArgumentError(f"{op}: index out of range [0, {limit})")
    return idx


# ---- linear algebra ----
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    A, B = a.data, b.data
    return record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    A, B = a.data, b.data
    return record(A * B, (a, b),
                  lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(x.data * c, (x,), lambda g: (g * c,), "scale")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise InvalidArgumentError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# ---- indexing and segments ----
def gather(table: Tensor, idx) -> Tensor:
    """Row lookup `table[idx]` (embedding tables, center rows, edge endpoints)."""
    idx = _index(idx, table.shape[0], "gather")
    shape = table.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return record(table.data[idx], (table,), vjp, "gather")


def segment_sum(x: Tensor, seg, num_segments: int) -> Tensor:
    seg = _index(seg, num_segments, "segment_sum")
    if len(seg) != x.shape[0]:
        raise InvalidArgumentError(f"segment_sum: {len(seg)} ids for {x.shape[0]} rows")
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, seg, x.data)
    return record(out, (x,), lambda g: (g[seg],), "segment_sum")


def segment_mean(x: Tensor, seg, num_segments: int) -> Tensor:
    """Per-segment mean; empty segments yield zero rows."""
    seg = _index(seg, num_segments, "segment_mean")
    if len(seg) != x.shape[0]:
        raise InvalidArgumentError(f"segment_mean: {len(seg)} ids for {x.shape[0]} rows")
    counts = np.maximum(np.bincount(seg, minlength=num_segments), 1).astype(x.dtype)
    shape = (-1,) + (1,) * (x.data.ndim - 1)
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, seg, x.data)
    out /= counts.reshape(shape)
    return record(out, (x,), lambda g: ((g / counts.reshape(shape))[seg],), "segment_mean")


# ---- nonlinearities ----
def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return record(np.where(on, x.data, 0).astype(x.dtype), (x,), lambda g: (g * on,), "relu")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return record(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def dropout(x: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.dtype)
    return record(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data ** 2).sum(axis=1, keepdims=True))
    safe = np.maximum(norm, eps)
    y = x.data / safe
    small = norm < eps

    def vjp(g):
        proj = g - y * (g * y).sum(axis=1, keepdims=True)
        return (np.where(small, g, proj) / safe,)

    return record(y, (x,), vjp, "l2_normalize_rows")


# ---- normalisation ----
class BatchNormState:
    """Running statistics of one batchnorm layer."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(dim, dtype=default_dtype())
        self.running_var = np.ones(dim, dtype=default_dtype())
        self.momentum = momentum
        self.eps = eps

    def arrays(self) -> dict:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
              train: bool, update_stats: bool = True) -> Tensor:
    """Training mode normalises with statistics pooled over all rows of the
    batch and folds them into the running statistics; eval mode is the affine
    map defined by the running statistics."""
    X, G, eps = x.data, gamma.data, state.eps
    if train:
        n = X.shape[0]
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (X - mu) * inv
        if update_stats:
            m = state.momentum
            unbiased = var * n / (n - 1) if n > 1 else var
            state.running_mean[...] = (1 - m) * state.running_mean + m * mu
            state.running_var[...] = (1 - m) * state.running_var + m * unbiased

        def vjp(g):
            dxhat = g * G
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (X - state.running_mean) * inv

        def vjp(g):
            return g * G * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = (xhat * G + beta.data).astype(X.dtype)
    return record(out, (x, gamma, beta), vjp, "batchnorm")


# ---- losses and reductions ----
def bce_with_logits(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy over unmasked entries.

    Logits are clamped to [-30, 30]; masked entries contribute zero loss and
    an exactly zero gradient.
    """
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise InvalidArgumentError(f"bce: targets {y.shape} do not match logits {logits.shape}")
    w = np.ones_like(y) if mask is None else np.asarray(mask, dtype=logits.dtype)
    count = float(w.sum())
    if count == 0:
        raise InvalidArgumentError("bce: no unmasked targets")
    z = np.clip(logits.data, -BCE_CLAMP, BCE_CLAMP)
    in_range = (np.abs(logits.data) <= BCE_CLAMP).astype(logits.dtype)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray((per * w).sum() / count, dtype=logits.dtype)

    def vjp(g):
        return (g * (_sigmoid(z) - y) * w * in_range / count,)

    return record(value, (logits,), vjp, "bce_with_logits")


def softmax_cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean categorical cross-entropy; `target` holds one class index per row."""
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if len(target) != n:
        raise InvalidArgumentError(f"cross-entropy: {len(target)} targets for {n} rows")
    if n == 0:
        raise InvalidArgumentError("cross-entropy: no targets")
    _index(target, c, "softmax_cross_entropy")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    value = np.asarray(-log_p[np.arange(n), target].mean(), dtype=logits.dtype)

    def vjp(g):
        grad = np.exp(log_p)
        grad[np.arange(n), target] -= 1.0
        return (g * grad / n,)

    return record(value, (logits,), vjp, "softmax_cross_entropy")


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"rowdot: shapes {a.shape} and {b.shape} differ")
    A, B = a.data, b.data
    return record((A * B).sum(axis=1), (a, b),
                  lambda g: (g[:, None] * B, g[:, None] * A), "rowdot")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(x: Tensor) -> Tensor:
    shape, size = x.shape, max(x.data.size, 1)
    return record(np.asarray(x.data.mean() if x.data.size else 0.0, dtype=x.dtype), (x,),
                  lambda g: (np.broadcast_to(g / size, shape).copy(),), "mean")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def value(x: Tensor) -> float:
    return float(check_finite(np.asarray(x.data), "value"))
