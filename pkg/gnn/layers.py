# layers.py
"""
Message-passing layers. Every layer function takes node rows `h`, the batch
(message src/dst including virtual self-loops), the per-message edge
features of this layer and its LayerParams, and returns the rows after the
layer core, batchnorm and the outer ReLU (skipped when `last`).
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gnn.batch import GraphBatch
from numkernel import (
    BatchNormState, Tensor, add, batchnorm, concat, gather, l2_normalize_rows, linear, mul,
    relu, segment_mean, segment_sum,
)
from utils.errors import InvalidArgumentError


@dataclass
class LayerParams:
    w1: Tensor
    b1: Tensor
    w2: Optional[Tensor] = None          # second MLP layer (GIN)
    b2: Optional[Tensor] = None
    gamma: Tensor = None
    beta: Tensor = None
    bn: BatchNormState = field(default=None)


def _finish(z: Tensor, p: LayerParams, last: bool, train: bool) -> Tensor:
    z = batchnorm(z, p.gamma, p.beta, p.bn, train=train)
    return z if last else relu(z)


def _messages(h: Tensor, batch: GraphBatch, edge_feats: Tensor) -> Tensor:
    return add(gather(h, batch.src), edge_feats)


def gin_layer(h: Tensor, batch: GraphBatch, edge_feats: Tensor, p: LayerParams,
              last: bool = False, train: bool = False) -> Tensor:
    """Sum of h_u + e_uv over N(v) and the self-loop, then a two-layer MLP."""
    agg = segment_sum(_messages(h, batch, edge_feats), batch.dst, batch.num_nodes)
    z = linear(relu(linear(agg, p.w1, p.b1)), p.w2, p.b2)
    return _finish(z, p, last, train)


def gin_layer_bio(h: Tensor, batch: GraphBatch, edge_feats: Tensor, p: LayerParams,
                  last: bool = False, train: bool = False) -> Tensor:
    """As gin_layer, with node sums and edge sums concatenated into the MLP."""
    node_sum = segment_sum(gather(h, batch.src), batch.dst, batch.num_nodes)
    edge_sum = segment_sum(edge_feats, batch.dst, batch.num_nodes)
    z = linear(relu(linear(concat([node_sum, edge_sum], axis=1), p.w1, p.b1)), p.w2, p.b2)
    return _finish(z, p, last, train)


def gcn_layer(h: Tensor, batch: GraphBatch, edge_feats: Tensor, p: LayerParams,
              last: bool = False, train: bool = False) -> Tensor:
    """Symmetric-normalised sum of h_u + e_uv over N(v) and v itself, then linear.
    Degrees count the self-loop."""
    deg = np.bincount(batch.dst, minlength=batch.num_nodes).astype(h.dtype)
    norm = (1.0 / np.sqrt(deg[batch.src] * deg[batch.dst]))[:, None].astype(h.dtype)
    agg = segment_sum(mul(_messages(h, batch, edge_feats), norm), batch.dst, batch.num_nodes)
    return _finish(linear(agg, p.w1, p.b1), p, last, train)


def sage_layer(h: Tensor, batch: GraphBatch, edge_feats: Tensor, p: LayerParams,
               last: bool = False, train: bool = False) -> Tensor:
    """Mean of h_u + e_uv over N(v) (self-loop excluded), concatenated with h_v,
    linear, then rows L2-normalised. Isolated nodes aggregate to zero."""
    real = ~batch.self_loop
    msgs = _messages(h, batch, edge_feats)
    if real.any():
        idx = np.flatnonzero(real)
        neigh = segment_mean(gather(msgs, idx), batch.dst[idx], batch.num_nodes)
    else:
        neigh = Tensor(np.zeros(h.shape, dtype=h.dtype), op="zeros")
    z = _finish(linear(concat([neigh, h], axis=1), p.w1, p.b1), p, last, train)
    return l2_normalize_rows(z)


LAYERS = {"gin": gin_layer, "gin-bio": gin_layer_bio, "gcn": gcn_layer, "graphsage": sage_layer}


def layer_fn(architecture: str, domain: str):
    key = "gin-bio" if architecture == "gin" and domain == "protein" else architecture
    if key not in LAYERS:
        raise InvalidArgumentError(f"unknown architecture {architecture!r}")
    return LAYERS[key]


def readout(h: Tensor, batch: GraphBatch, mode: str = "mean") -> Tensor:
    """Per-graph mean of node rows; `mean-concat-center` appends the center row."""
    pooled = segment_mean(h, batch.node_graph, batch.num_graphs)
    if mode == "mean":
        return pooled
    if mode == "mean-concat-center":
        if batch.centers is None:
            raise InvalidArgumentError("mean-concat-center readout needs a center on every graph")
        return concat([pooled, gather(h, batch.centers)], axis=1)
    raise InvalidArgumentError(f"unknown readout {mode!r}")
