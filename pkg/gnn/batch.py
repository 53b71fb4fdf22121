# batch.py
"""Collation of attributed graphs into one disjoint-union batch."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from graph_core import AttributedGraph, Vocab
from utils.errors import InvalidArgumentError

# 7 relation bits + self-loop bit + mask bit
PROTEIN_EDGE_DIM = 9


@dataclass(frozen=True)
class GraphBatch:
    vocab: Vocab
    num_graphs: int
    num_nodes: int
    node_attrs: np.ndarray        # (N, node slots)
    node_graph: np.ndarray        # (N,) segment id of every node
    offsets: np.ndarray           # (G,) first global node id per graph
    src: np.ndarray               # (E,) message source, both directions + self-loops
    dst: np.ndarray               # (E,) message target
    edge_attrs: np.ndarray        # (E, edge slots)
    self_loop: np.ndarray         # (E,) bool
    centers: Optional[np.ndarray] # (G,) global center ids, None if any graph lacks one

    @classmethod
    def from_graphs(cls, graphs, vocab: Vocab) -> "GraphBatch":
        graphs = list(graphs)
        if not graphs:
            raise InvalidArgumentError("cannot batch an empty graph list")
        for g in graphs:
            if g.vocab != vocab:
                raise InvalidArgumentError(f"vocab mismatch: graph uses {g.vocab.name!r}, encoder expects {vocab.name!r}")

        sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        n = int(sizes.sum())
        loop_attrs = np.array([vocab.edge_self_loop(s) for s in range(len(vocab.edge_sizes))], dtype=np.int64)

        src, dst, attrs = [], [], []
        for g, off in zip(graphs, offsets):
            if g.num_edges:
                u, v = g.edges[:, 0] + off, g.edges[:, 1] + off
                src += [u, v]
                dst += [v, u]
                attrs += [g.edge_attrs, g.edge_attrs]
        num_real = int(sum(len(s) for s in src))
        nodes = np.arange(n, dtype=np.int64)
        src.append(nodes)
        dst.append(nodes)
        attrs.append(np.tile(loop_attrs, (n, 1)))

        self_loop = np.zeros(num_real + n, dtype=bool)
        self_loop[num_real:] = True
        centers = None
        if all(g.center is not None for g in graphs):
            centers = np.array([g.center for g in graphs], dtype=np.int64) + offsets

        return cls(
            vocab=vocab,
            num_graphs=len(graphs),
            num_nodes=n,
            node_attrs=np.concatenate([g.node_attrs for g in graphs]),
            node_graph=np.repeat(np.arange(len(graphs)), sizes),
            offsets=offsets,
            src=np.concatenate(src).astype(np.int64),
            dst=np.concatenate(dst).astype(np.int64),
            edge_attrs=np.concatenate(attrs).astype(np.int64),
            self_loop=self_loop,
            centers=centers,
        )

    @property
    def num_messages(self) -> int:
        return len(self.src)

    def protein_edge_vectors(self) -> np.ndarray:
        """(E, 9) binary vectors c_e: relation bits, self-loop bit, mask bit."""
        vocab = self.vocab
        out = np.zeros((self.num_messages, PROTEIN_EDGE_DIM))
        out[:, :7] = self.edge_attrs == 1
        out[:, 7] = self.self_loop
        out[:, 8] = (self.edge_attrs == vocab.edge_mask(0)).all(axis=1)
        return out
