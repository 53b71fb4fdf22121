# context_prediction.py
"""
Context Prediction: a main encoder embeds the K-hop neighborhood of a center
node, a separate shallower encoder embeds the context ring r1 <= d <= r2
around it, and a binary classifier on the dot product of the center
embedding and the averaged anchor embedding tells true pairs from pairs
whose context was taken from another graph.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from gnn import Encoder
from graph_core import AttributedGraph, context_ring, induced_graph, khop_neighborhood
from numkernel import Tensor, bce_with_logits, gather, rowdot, segment_mean
from pretrain.base import PretrainObjective
from pretrain.config import ContextConfig
from utils.errors import ConfigurationError, EmptyInputError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContextPair:
    neighborhood: AttributedGraph     # center is local id 0
    context: AttributedGraph
    anchors: tuple                    # local ids in `context`
    label: int
    source: int                       # batch index of the neighborhood's graph
    context_source: int               # donors follow the batch


@dataclass(frozen=True)
class _View:
    source: int
    center: int
    neighborhood: AttributedGraph
    context: AttributedGraph
    anchors: tuple


def _centers(g: AttributedGraph, source: int, rng: np.random.Generator, cfg: ContextConfig) -> list:
    views = []
    if g.num_nodes == 0:
        return views
    for v in rng.permutation(g.num_nodes).tolist():
        ring = context_ring(g, v, cfg.r1, cfg.r2, cfg.K)
        if not ring.anchors:
            continue
        nb = khop_neighborhood(g, v, cfg.K)
        views.append(_View(source, v, induced_graph(g, nb, center=0), induced_graph(g, ring), ring.anchors))
        if len(views) == cfg.centers_per_graph:
            break
    return views


def build_context_pairs(graphs: Sequence[AttributedGraph], rng: np.random.Generator, cfg: ContextConfig,
                        groups: Optional[Sequence] = None, donors: Sequence[AttributedGraph] = ()) -> list:
    """Positive pair per sampled center followed by `negative_ratio` negatives
    that reuse the neighborhood with the context of a center from another graph
    (from another group when `groups` is given). `donors` only lend negative
    contexts; they are indexed after `graphs` in `source` and `groups`."""
    graphs, donors = list(graphs), list(donors)
    if cfg.negative_ratio and len(graphs) == 1 and not donors:
        raise ConfigurationError("negative context pairs need at least two graphs per batch")

    views = []
    for i, g in enumerate(graphs + donors):
        found = _centers(g, i, rng, cfg)
        if not found and i < len(graphs):
            logger.debug("[CONTEXT] graph %d has no center with a non-empty ring; skipped", i)
        views.extend(found)

    pairs, starved = [], 0
    for view in views:
        if view.source >= len(graphs):
            continue
        pairs.append(ContextPair(view.neighborhood, view.context, view.anchors, 1, view.source, view.source))
        if not cfg.negative_ratio:
            continue
        candidates = [o for o in views if o.source != view.source
                      and (groups is None or groups[o.source] != groups[view.source])]
        if not candidates:
            starved += 1
            continue
        picks = rng.choice(len(candidates), size=cfg.negative_ratio, replace=len(candidates) < cfg.negative_ratio)
        for j in picks.tolist():
            other = candidates[j]
            pairs.append(ContextPair(view.neighborhood, other.context, other.anchors, 0, view.source, other.source))
    if starved:
        logger.warning("[CONTEXT] %d positives kept without negatives (fewer than two usable graphs)", starved)
    return pairs


def _unique(items) -> tuple:
    order, index, lookup = [], [], {}
    for item in items:
        key = id(item)
        if key not in lookup:
            lookup[key] = len(order)
            order.append(item)
        index.append(lookup[key])
    return order, np.asarray(index, dtype=np.int64)


def pair_logits(main: Encoder, context_encoder: Encoder, pairs, train: bool = False,
                rng: Optional[np.random.Generator] = None, dropout_rate: Optional[float] = None) -> Tensor:
    if not pairs:
        raise EmptyInputError("no context pairs to score")
    neighborhoods, nb_index = _unique(p.neighborhood for p in pairs)
    contexts, ctx_index = _unique(p.context for p in pairs)
    anchors = {id(p.context): p.anchors for p in pairs}

    nb_batch = main.batch(neighborhoods)
    h = main.forward(nb_batch, train=train, rng=rng, dropout_rate=dropout_rate)
    centers = gather(h, nb_batch.offsets[nb_index])

    ctx_batch = context_encoder.batch(contexts)
    hc = context_encoder.forward(ctx_batch, train=train, rng=rng, dropout_rate=dropout_rate)
    rows = np.concatenate([ctx_batch.offsets[i] + np.asarray(anchors[id(c)], dtype=np.int64)
                           for i, c in enumerate(contexts)])
    seg = np.concatenate([np.full(len(anchors[id(c)]), i) for i, c in enumerate(contexts)])
    summary = segment_mean(gather(hc, rows), seg, len(contexts))
    return rowdot(centers, gather(summary, ctx_index))


def context_loss(main: Encoder, context_encoder: Encoder, pairs, train: bool = False,
                 rng: Optional[np.random.Generator] = None, dropout_rate: Optional[float] = None) -> Tensor:
    logits = pair_logits(main, context_encoder, pairs, train, rng, dropout_rate)
    return bce_with_logits(logits, np.array([p.label for p in pairs]))


def context_pair_accuracy(main: Encoder, context_encoder: Encoder, pairs) -> float:
    logits = pair_logits(main, context_encoder, pairs).data
    labels = np.array([p.label for p in pairs])
    return float(((logits > 0).astype(int) == labels).mean())


class ContextPrediction(PretrainObjective):
    name = "context"

    def __init__(self, encoder: Encoder, settings: ContextConfig, rng: np.random.Generator):
        super().__init__(encoder, settings, rng)
        if encoder.config.layers != settings.K:
            raise ConfigurationError(
                f"context.K={settings.K} must equal the main encoder depth encoder.layers={encoder.config.layers}")
        ctx_config = encoder.config.model_copy(update={"layers": settings.context_layers, "readout": "mean"})
        self.context_encoder = Encoder(ctx_config, rng, prefix="context")
        self.aux_stores = [self.context_encoder.store]
        # last multi-graph batch per mode; lends negatives to a one-graph batch
        self._previous = {"loss": [], "metric": []}

    def _groups(self, graphs):
        if self.settings.negatives != "cross-label":
            return None
        if any(g.labels is None or not len(g.labels) for g in graphs):
            raise ConfigurationError("cross-label negatives need a label on every graph")
        return [int(g.labels[0]) for g in graphs]

    def _pairs(self, graphs, rng, mode: str) -> list:
        graphs = list(graphs)
        settings, donors = self.settings, []
        if settings.negative_ratio and len(graphs) == 1:
            donors = self._previous[mode]
            if donors:
                logger.info("[CONTEXT] one-graph batch draws negatives from the previous %d-graph batch", len(donors))
            else:
                logger.warning("[CONTEXT] one-graph batch with no earlier batch; positives only")
                settings = settings.model_copy(update={"negative_ratio": 0})
        elif len(graphs) > 1:
            self._previous[mode] = graphs
        return build_context_pairs(graphs, rng, settings, groups=self._groups(graphs + donors), donors=donors)

    def batch_loss(self, graphs, rng, train=True, dropout_rate=None):
        pairs = self._pairs(graphs, rng, "loss")
        return context_loss(self.encoder, self.context_encoder, pairs, train, rng, dropout_rate)

    def batch_metric(self, graphs, rng):
        pairs = self._pairs(graphs, rng, "metric")
        return context_pair_accuracy(self.encoder, self.context_encoder, pairs)
