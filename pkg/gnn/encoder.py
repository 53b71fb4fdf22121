# encoder.py
import logging
from typing import Optional

import numpy as np

from gnn.batch import PROTEIN_EDGE_DIM, GraphBatch
from gnn.config import EncoderConfig
from gnn.layers import LayerParams, layer_fn, readout
from numkernel import (
    BatchNormState, ParamStore, Tensor, add, dropout, gather, linear, matmul, normal, ones,
    xavier_uniform, zeros,
)
from utils.errors import InvalidArgumentError, ShapeMismatchError

logger = logging.getLogger(__name__)


class Encoder:
    """K-layer message-passing encoder for one domain vocabulary.

    Parameter names are prefixed (`encoder.`, `context.`) so that several
    encoders can share one optimizer store and checkpoints stay explicit
    about what they contain.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder"):
        self.config = config
        self.prefix = prefix
        self.vocab = config.vocab
        self.store = ParamStore()
        self.layer = layer_fn(config.architecture, config.domain)
        d, K = config.width, config.layers

        self.node_tables = [self._param(f"node_emb.{s}", (size, d), normal, rng)
                            for s, size in enumerate(self.vocab.node_sizes)]
        if config.domain == "molecule":
            self.edge_tables = [[self._param(f"edge_emb.{k}.{s}", (size, d), normal, rng)
                                 for s, size in enumerate(self.vocab.edge_sizes)] for k in range(K)]
        else:
            # one W, b shared by every layer
            self.edge_w = self._param("edge_lin.W", (PROTEIN_EDGE_DIM, d), xavier_uniform, rng)
            self.edge_b = self._param("edge_lin.b", (d,), zeros, rng)

        self.layers = [self._layer_params(k, rng) for k in range(K)]

    def _param(self, name, shape, init, rng) -> Tensor:
        return self.store.create(f"{self.prefix}.{name}", shape, init, rng)

    def _layer_params(self, k: int, rng) -> LayerParams:
        cfg, d = self.config, self.config.width
        name = f"layer.{k}"
        if cfg.architecture == "gin":
            fan_in = 2 * d if cfg.domain == "protein" else d
            p = LayerParams(
                w1=self._param(f"{name}.mlp1.W", (fan_in, cfg.mlp_hidden), xavier_uniform, rng),
                b1=self._param(f"{name}.mlp1.b", (cfg.mlp_hidden,), zeros, rng),
                w2=self._param(f"{name}.mlp2.W", (cfg.mlp_hidden, d), xavier_uniform, rng),
                b2=self._param(f"{name}.mlp2.b", (d,), zeros, rng),
            )
        else:
            fan_in = 2 * d if cfg.architecture == "graphsage" else d
            p = LayerParams(
                w1=self._param(f"{name}.W", (fan_in, d), xavier_uniform, rng),
                b1=self._param(f"{name}.b", (d,), zeros, rng),
            )
        p.gamma = self._param(f"bn.{k}.gamma", (d,), ones, rng)
        p.beta = self._param(f"bn.{k}.beta", (d,), zeros, rng)
        p.bn = BatchNormState(d)
        return p

    # ---- forward ----
    def batch(self, graphs) -> GraphBatch:
        return GraphBatch.from_graphs(graphs, self.vocab)

    def embed_inputs(self, batch: GraphBatch):
        """h^(0) as the sum of slot embeddings, plus a callable giving the
        per-message edge features of layer k."""
        h = gather(self.node_tables[0], batch.node_attrs[:, 0])
        for s in range(1, len(self.node_tables)):
            h = add(h, gather(self.node_tables[s], batch.node_attrs[:, s]))

        if self.config.domain == "molecule":
            def edge_feats(k):
                tables = self.edge_tables[k]
                e = gather(tables[0], batch.edge_attrs[:, 0])
                for s in range(1, len(tables)):
                    e = add(e, gather(tables[s], batch.edge_attrs[:, s]))
                return e
        else:
            vectors = Tensor(batch.protein_edge_vectors())
            shared = linear(vectors, self.edge_w, self.edge_b)

            def edge_feats(k):
                return shared
        return h, edge_feats

    def forward(self, batch: GraphBatch, train: bool = False, rng: Optional[np.random.Generator] = None,
                dropout_rate: Optional[float] = None, freeze_batchnorm: bool = False) -> Tensor:
        """Node embeddings h^(K), one row per batch node."""
        rate = self.config.dropout if dropout_rate is None else dropout_rate
        if train and rate > 0 and rng is None:
            raise InvalidArgumentError("dropout in training mode needs an rng")
        h, edge_feats = self.embed_inputs(batch)
        K = len(self.layers)
        for k, p in enumerate(self.layers):
            h = self.layer(h, batch, edge_feats(k), p, last=(k == K - 1),
                           train=train and not freeze_batchnorm)
            h = dropout(h, rate, rng, train)
        return h

    def graph_embeddings(self, batch: GraphBatch, h: Tensor) -> Tensor:
        return readout(h, batch, self.config.readout)

    def encode_graphs(self, graphs) -> np.ndarray:
        """Eval-mode h_G for a list of graphs (no tape, no statistic updates)."""
        batch = self.batch(graphs)
        return self.graph_embeddings(batch, self.forward(batch)).data

    # ---- state ----
    def buffers(self) -> dict:
        out = {}
        for k, p in enumerate(self.layers):
            for key, arr in p.bn.arrays().items():
                out[f"{self.prefix}.bn.{k}.{key}"] = arr
        return out

    def state_arrays(self) -> dict:
        """Parameters and batchnorm buffers, in creation order."""
        out = {name: t.data for name, t in self.store.items()}
        out.update(self.buffers())
        return out

    def load_state(self, arrays: dict, prefix: Optional[str] = None):
        """Copy arrays in; names are matched after swapping `prefix` for ours."""
        prefix = prefix or self.prefix
        target = self.state_arrays()
        incoming = {self.prefix + name[len(prefix):] if name.startswith(prefix + ".") else name: arr
                    for name, arr in arrays.items()}
        missing = sorted(set(target) - set(incoming))
        if missing:
            raise ShapeMismatchError(f"checkpoint lacks {len(missing)} encoder arrays, e.g. {missing[0]}")
        for name, dst in target.items():
            src = np.asarray(incoming[name])
            if src.shape != dst.shape:
                raise ShapeMismatchError(f"{name}: checkpoint shape {src.shape} != model shape {dst.shape}")
            dst[...] = src

    def num_parameters(self) -> int:
        return self.store.num_parameters()


class LinearHead:
    """Linear map from embeddings to `out_dim` logits."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, prefix: str = "head"):
        self.store = ParamStore()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.w = self.store.create(f"{prefix}.W", (in_dim, out_dim), xavier_uniform, rng)
        self.b = self.store.create(f"{prefix}.b", (out_dim,), zeros, rng)

    @property
    def num_tasks(self) -> int:
        return self.out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)
