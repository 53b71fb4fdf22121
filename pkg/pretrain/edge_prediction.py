# edge_prediction.py
import logging
from typing import Optional

import numpy as np

from gnn import Encoder
from graph_core import AttributedGraph
from numkernel import Tensor, bce_with_logits, gather, rowdot
from pretrain.base import PretrainObjective
from utils.errors import EmptyInputError

logger = logging.getLogger(__name__)


def is_complete(g: AttributedGraph) -> bool:
    return g.num_edges == g.num_nodes * (g.num_nodes - 1) // 2


def sample_negative_edges(g: AttributedGraph, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` uniformly drawn non-edges (u < v) by rejection; falls back to the
    explicit complement when rejections pile up on dense graphs."""
    n = g.num_nodes
    if count <= 0 or n < 2 or is_complete(g):
        return np.zeros((0, 2), dtype=np.int64)
    existing = set(map(tuple, g.edges.tolist()))
    out, attempts = [], 0
    while len(out) < count and attempts < 20 * count + 100:
        u, v = rng.integers(0, n, size=2).tolist()
        attempts += 1
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair not in existing:
            out.append(pair)
    if len(out) < count:
        complement = [(u, v) for u in range(n) for v in range(u + 1, n) if (u, v) not in existing]
        picks = rng.choice(len(complement), size=count - len(out))
        out.extend(complement[i] for i in picks.tolist())
    return np.asarray(out, dtype=np.int64)


def edge_logits(encoder: Encoder, graphs, rng: np.random.Generator, train: bool = False,
                dropout_rate: Optional[float] = None) -> tuple:
    usable = [g for g in graphs if g.num_edges and not is_complete(g)]
    if len(usable) < len(graphs):
        logger.debug("[EDGEPRED] skipped %d edgeless or complete graphs", len(graphs) - len(usable))
    if not usable:
        raise EmptyInputError("no graph in the batch has both edges and non-edges")
    batch = encoder.batch(usable)
    pos = [g.edges + off for g, off in zip(usable, batch.offsets)]
    neg = [sample_negative_edges(g, g.num_edges, rng) + off for g, off in zip(usable, batch.offsets)]
    pairs = np.concatenate(pos + neg)
    labels = np.concatenate([np.ones(sum(len(p) for p in pos)), np.zeros(sum(len(q) for q in neg))])
    h = encoder.forward(batch, train=train, rng=rng, dropout_rate=dropout_rate)
    return rowdot(gather(h, pairs[:, 0]), gather(h, pairs[:, 1])), labels


def edgepred_loss(encoder: Encoder, graphs, rng: np.random.Generator, train: bool = False,
                  dropout_rate: Optional[float] = None) -> Tensor:
    logits, labels = edge_logits(encoder, graphs, rng, train, dropout_rate)
    return bce_with_logits(logits, labels)


def edgepred_accuracy(encoder: Encoder, graphs, rng: np.random.Generator) -> float:
    logits, labels = edge_logits(encoder, graphs, rng)
    return float(((logits.data > 0).astype(int) == labels).mean())


class EdgePrediction(PretrainObjective):
    name = "edgepred"

    def batch_loss(self, graphs, rng, train=True, dropout_rate=None):
        return edgepred_loss(self.encoder, graphs, rng, train, dropout_rate)

    def batch_metric(self, graphs, rng):
        return edgepred_accuracy(self.encoder, graphs, rng)
