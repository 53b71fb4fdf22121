# supervised.py
import logging
from typing import Optional

import numpy as np

from gnn import Encoder, LinearHead
from numkernel import Tensor, bce_with_logits
from pretrain.base import PretrainObjective
from utils.errors import ConfigurationError, EmptyInputError, InvalidArgumentError

logger = logging.getLogger(__name__)


class SupervisedHead(LinearHead):
    """One logit per task on top of h_G."""

    def __init__(self, in_dim: int, num_tasks: int, rng: np.random.Generator, prefix: str = "supervised_head"):
        super().__init__(in_dim, num_tasks, rng, prefix=prefix)


def label_matrix(graphs, num_tasks: Optional[int] = None) -> np.ndarray:
    rows = []
    for g in graphs:
        if g.labels is None:
            raise InvalidArgumentError(f"graph {g.name or ''} carries no labels")
        rows.append(g.labels)
    widths = {len(r) for r in rows}
    if len(widths) != 1 or (num_tasks is not None and widths != {num_tasks}):
        raise InvalidArgumentError(f"label widths {sorted(widths)} do not match task count {num_tasks}")
    return np.stack(rows)


def graph_logits(encoder: Encoder, head: SupervisedHead, graphs, train: bool = False,
                 rng: Optional[np.random.Generator] = None, dropout_rate: Optional[float] = None,
                 freeze_batchnorm: bool = False) -> Tensor:
    batch = encoder.batch(graphs)
    h = encoder.forward(batch, train=train, rng=rng, dropout_rate=dropout_rate, freeze_batchnorm=freeze_batchnorm)
    return head(encoder.graph_embeddings(batch, h))


def supervised_loss(encoder: Encoder, head: SupervisedHead, graphs, train: bool = False,
                    rng: Optional[np.random.Generator] = None, dropout_rate: Optional[float] = None,
                    freeze_batchnorm: bool = False) -> Tensor:
    """Masked binary cross-entropy: label -1 adds neither loss nor gradient; the
    sum is divided by the number of observed labels."""
    labels = label_matrix(graphs, head.num_tasks)
    observed = labels != -1
    if not observed.any():
        raise EmptyInputError("batch has no observed labels")
    logits = graph_logits(encoder, head, graphs, train, rng, dropout_rate, freeze_batchnorm)
    return bce_with_logits(logits, labels == 1, mask=observed)


def supervised_accuracy(encoder: Encoder, head: SupervisedHead, graphs) -> float:
    labels = label_matrix(graphs, head.num_tasks)
    observed = labels != -1
    if not observed.any():
        raise EmptyInputError("batch has no observed labels")
    hits = (graph_logits(encoder, head, graphs).data > 0) == (labels == 1)
    return float(hits[observed].mean())


class SupervisedMultiTask(PretrainObjective):
    name = "supervised"
    needs_labels = True

    def __init__(self, encoder: Encoder, settings: dict, rng: np.random.Generator):
        super().__init__(encoder, settings, rng)
        num_tasks = int(settings.get("num_tasks", 0))
        if num_tasks < 1:
            raise ConfigurationError("supervised pre-training needs a labelled dataset")
        self.head = SupervisedHead(encoder.config.output_dim, num_tasks, rng)
        self.aux_stores = [self.head.store]

    def check_graphs(self, graphs):
        label_matrix(graphs, self.head.num_tasks)

    def batch_loss(self, graphs, rng, train=True, dropout_rate=None):
        return supervised_loss(self.encoder, self.head, graphs, train, rng, dropout_rate)

    def batch_metric(self, graphs, rng):
        return supervised_accuracy(self.encoder, self.head, graphs)
