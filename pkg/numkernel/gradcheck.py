# gradcheck.py
import logging

import numpy as np

from numkernel.optim import ParamStore
from numkernel.tensor import Tape

logger = logging.getLogger(__name__)

SAMPLE_ABOVE = 200     # parameters larger than this are sampled
SAMPLE_FRACTION = 0.05
SAMPLE_MIN = 10


def _coordinates(size: int, rng: np.random.Generator) -> np.ndarray:
    if size <= SAMPLE_ABOVE:
        return np.arange(size)
    k = max(SAMPLE_MIN, int(np.ceil(SAMPLE_FRACTION * size)))
    return np.sort(rng.choice(size, size=k, replace=False))


def grad_check(loss_fn, params, eps: float = 1e-4, seed: int = 0) -> float:
    """Worst relative error |a - n| / max(1, |a|, |n|) between tape gradients
    and central differences. `loss_fn()` must rebuild the loss from the
    current parameter values each call; run under `precision("double")`."""
    tensors = params.params if isinstance(params, ParamStore) else dict(params)
    with Tape() as tape:
        loss = loss_fn()
        analytic = tape.gradient(loss, tensors)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in _coordinates(flat.size, rng):
            saved = flat[i]
            flat[i] = saved + eps
            up = float(loss_fn().data)
            flat[i] = saved - eps
            down = float(loss_fn().data)
            flat[i] = saved
            numeric = (up - down) / (2 * eps)
            a = float(grad[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
                logger.debug("[GRADCHECK] %s[%d] analytic=%.3e numeric=%.3e", name, i, a, numeric)
    return worst
