# tensor.py
"""
Dense tensors and the recording tape for reverse-mode gradients.

Primitive applications are recorded on the innermost active Tape of the
current thread, so independent tapes can run concurrently on different
threads. Without an active tape, primitives just compute values.
"""
import threading
from contextlib import contextmanager

import numpy as np

from utils.errors import DivergenceError, InvalidArgumentError

_PRECISIONS = {"single": np.float32, "double": np.float64}
_state = {"dtype": np.float32}
_local = threading.local()


def default_dtype():
    return _state["dtype"]


def set_precision(name: str):
    if name not in _PRECISIONS:
        raise InvalidArgumentError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _state["dtype"] = _PRECISIONS[name]


@contextmanager
def precision(name: str):
    """Temporarily switch the dtype used for new tensors (process wide)."""
    previous = _state["dtype"]
    set_precision(name)
    try:
        yield
    finally:
        _state["dtype"] = previous


def check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(data).all():
        raise DivergenceError(f"non-finite value produced by {op}")
    return data


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "op")

    def __init__(self, data, requires_grad: bool = False, name: str = None, op: str = "leaf"):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) and op != "leaf":
            self.data = data
        else:
            self.data = np.array(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"


def _stack():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def current_tape():
    tapes = _stack()
    return tapes[-1] if tapes else None


class Tape:
    """Records (output, parents, vjp) triples; `gradient` replays them backwards."""

    def __init__(self):
        self.records = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def record(self, out: Tensor, parents: tuple, vjp):
        self.records.append((out, parents, vjp))

    def gradient(self, loss: Tensor, wrt) -> dict:
        """Gradients of scalar `loss` w.r.t. a {name: Tensor} mapping (or a list)."""
        if loss.data.size != 1:
            raise InvalidArgumentError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        # records were appended as values were produced, so reversed order is
        # a reverse topological order
        for out, parents, vjp in reversed(self.records):
            g = grads.get(id(out))
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        items = wrt.items() if isinstance(wrt, dict) else enumerate(wrt)
        return {k: grads.get(id(t), np.zeros_like(t.data)) for k, t in items}


def record(out_data: np.ndarray, parents: tuple, vjp, op: str) -> Tensor:
    check_finite(out_data, op)
    out = Tensor(out_data, op=op)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
