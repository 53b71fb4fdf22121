# optim.py
import logging
import threading

import numpy as np

from numkernel.tensor import Tensor, default_dtype
from utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


# ---- initialisers ----
def xavier_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def normal(shape, rng: np.random.Generator, std: float = 0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(default_dtype())


def zeros(shape, rng=None) -> np.ndarray:
    return np.zeros(shape, dtype=default_dtype())


def ones(shape, rng=None) -> np.ndarray:
    return np.ones(shape, dtype=default_dtype())


class ParamStore:
    """Named trainable tensors plus per-parameter Adam moments."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0
        self.lock = threading.Lock()

    def create(self, name: str, shape, init, rng=None) -> Tensor:
        if name in self.params:
            raise InvalidArgumentError(f"duplicate parameter {name!r}")
        t = Tensor(init(tuple(shape), rng), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add(self, tensor: Tensor):
        if tensor.name in self.params and self.params[tensor.name] is not tensor:
            raise InvalidArgumentError(f"duplicate parameter {tensor.name!r}")
        tensor.requires_grad = True
        self.params[tensor.name] = tensor

    def merge(self, *others: "ParamStore") -> "ParamStore":
        """A new store sharing the tensors of self and `others` (fresh Adam state)."""
        out = ParamStore()
        for store in (self,) + others:
            for t in store.params.values():
                out.add(t)
        return out

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def restore(self, arrays: dict):
        for k, arr in arrays.items():
            self.params[k].data[...] = arr


def adam_step(store: ParamStore, grads: dict, lr: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place."""
    missing = set(store.params) - set(grads)
    if missing:
        raise InvalidArgumentError(f"adam: no gradient for {sorted(missing)[:3]}")
    with store.lock:
        for name, p in store.params.items():
            if grads[name].shape != p.shape:
                raise InvalidArgumentError(
                    f"adam: gradient shape {grads[name].shape} != parameter {name} {p.shape}")
        store.step += 1
        t = store.step
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in store.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            m = store.m.get(name, 0.0) * beta1 + (1 - beta1) * g
            v = store.v.get(name, 0.0) * beta2 + (1 - beta2) * g * g
            store.m[name], store.v[name] = m, v
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
