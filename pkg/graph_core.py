# graph_core.py
"""
Attributed graph data model and the subgraph extraction routines used by
pre-training: K-hop neighborhoods, context rings with anchors, sampled
ego-networks and node relabelling.

Graphs are immutable once built. Undirected edges are stored once with
u < v; self-loops exist only virtually, inside message passing.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from utils.errors import InvalidArgumentError
from utils.validators import validate_graph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Vocab:
    """Per-slot category counts. The last category of every slot is the mask
    indicator; for edge slots the one before it is the self-loop indicator."""
    name: str
    node_sizes: tuple
    edge_sizes: tuple

    def node_mask(self, slot: int) -> int:
        return self.node_sizes[slot] - 1

    def node_real(self, slot: int) -> int:
        return self.node_sizes[slot] - 1

    def edge_mask(self, slot: int) -> int:
        return self.edge_sizes[slot] - 1

    def edge_self_loop(self, slot: int) -> int:
        return self.edge_sizes[slot] - 2

    def edge_real(self, slot: int) -> int:
        return self.edge_sizes[slot] - 2

    def to_dict(self) -> dict:
        return {"name": self.name, "node_sizes": list(self.node_sizes), "edge_sizes": list(self.edge_sizes)}


# Protein ego-networks: uniform node input, 7 binary relation slots per edge
# (neighbourhood, fusion, co-occurrence, co-expression, experiment, database, text).
PROTEIN_RELATIONS = ("neighbourhood", "fusion", "cooccurrence", "coexpression",
                     "experiment", "database", "textmining")
PROTEIN_VOCAB = Vocab("protein", node_sizes=(2,), edge_sizes=(4,) * len(PROTEIN_RELATIONS))


def _as_int_matrix(rows, width: int) -> np.ndarray:
    arr = np.array(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, width), dtype=np.int64)
    return arr.reshape(-1, width)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    num_nodes: int
    node_attrs: np.ndarray          # (n, node slots)
    edges: np.ndarray               # (m, 2), u < v
    edge_attrs: np.ndarray          # (m, edge slots)
    vocab: Vocab
    center: Optional[int] = None
    labels: Optional[np.ndarray] = None
    species: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        node_attrs = _as_int_matrix(self.node_attrs, len(self.vocab.node_sizes))
        edges = _as_int_matrix(self.edges, 2)
        if len(edges):
            edges = np.stack([edges.min(axis=1), edges.max(axis=1)], axis=1)
        edge_attrs = _as_int_matrix(self.edge_attrs, len(self.vocab.edge_sizes))
        labels = None if self.labels is None else np.asarray(self.labels, dtype=np.int64).reshape(-1)

        verdict = validate_graph(int(self.num_nodes), node_attrs, edges, edge_attrs,
                                 self.vocab, self.center, labels)
        if not verdict["ok"]:
            raise InvalidArgumentError(f"invalid graph {self.name or ''}: {verdict['problems']}")

        for arr in (node_attrs, edges, edge_attrs, labels):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "node_attrs", node_attrs)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_attrs", edge_attrs)
        object.__setattr__(self, "labels", labels)
        if self.center is not None:
            object.__setattr__(self, "center", int(self.center))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self):
        """CSR adjacency: (indptr, neighbor ids, edge ids); neighbors ascending."""
        n, m = self.num_nodes, self.num_edges
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]]) if m else np.zeros(0, np.int64)
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]]) if m else np.zeros(0, np.int64)
        eid = np.concatenate([np.arange(m), np.arange(m)]) if m else np.zeros(0, np.int64)
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order], eid[order]

    def neighbors(self, v: int):
        indptr, nbrs, eids = self.adjacency
        return nbrs[indptr[v]:indptr[v + 1]], eids[indptr[v]:indptr[v + 1]]

    def degree(self) -> np.ndarray:
        indptr = self.adjacency[0]
        return np.diff(indptr)

    def replace(self, **changes) -> "AttributedGraph":
        fields_ = dict(num_nodes=self.num_nodes, node_attrs=self.node_attrs, edges=self.edges,
                       edge_attrs=self.edge_attrs, vocab=self.vocab, center=self.center,
                       labels=self.labels, species=self.species, name=self.name)
        fields_.update(changes)
        return AttributedGraph(**fields_)

    def edge_set(self) -> dict:
        return {(int(u), int(v)): tuple(a.tolist()) for (u, v), a in zip(self.edges, self.edge_attrs)}

    def structurally_equal(self, other: "AttributedGraph") -> bool:
        """Same ids, attributes and edge set (edge order is irrelevant)."""
        return (self.num_nodes == other.num_nodes
                and self.vocab == other.vocab
                and np.array_equal(self.node_attrs, other.node_attrs)
                and self.edge_set() == other.edge_set()
                and self.center == other.center)


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple                    # parent ids, ordered and duplicate-free
    edges: tuple                    # ((local u, local v), ...) induced
    edge_ids: tuple                 # parent edge id per induced edge
    anchors: tuple = field(default=())   # local ids of context anchor nodes

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def _check_node(g: AttributedGraph, v: int):
    if not (0 <= int(v) < g.num_nodes):
        raise InvalidArgumentError(f"node {v} out of range for graph with {g.num_nodes} nodes")


def bfs_distances(g: AttributedGraph, v: int, limit: Optional[int] = None) -> dict:
    """Hop distance from v to every node reachable within `limit` hops."""
    _check_node(g, v)
    dist = {int(v): 0}
    queue = deque([int(v)])
    while queue:
        u = queue.popleft()
        d = dist[u]
        if limit is not None and d >= limit:
            continue
        for w in g.neighbors(u)[0].tolist():
            if w not in dist:
                dist[w] = d + 1
                queue.append(w)
    return dist


def _induce(g: AttributedGraph, nodes: list, anchors=()) -> Subgraph:
    local = {p: i for i, p in enumerate(nodes)}
    edges, edge_ids = [], []
    for p in nodes:
        nbrs, eids = g.neighbors(p)
        for w, e in zip(nbrs.tolist(), eids.tolist()):
            if w in local and p < w:
                edges.append((local[p], local[w]))
                edge_ids.append(e)
    return Subgraph(tuple(nodes), tuple(edges), tuple(edge_ids), tuple(anchors))


def _ordered(dist: dict, keep) -> list:
    return sorted((u for u, d in dist.items() if keep(d)), key=lambda u: (dist[u], u))


def khop_neighborhood(g: AttributedGraph, v: int, K: int) -> Subgraph:
    """All nodes within K hops of v plus induced edges; v is always local id 0."""
    if K < 0:
        raise InvalidArgumentError(f"hop count must be >= 0, got {K}")
    dist = bfs_distances(g, v, K)
    return _induce(g, _ordered(dist, lambda d: True))


def context_ring(g: AttributedGraph, v: int, r1: int, r2: int, K: int) -> Subgraph:
    """Nodes with r1 <= d(v, .) <= r2; anchors are ring nodes also within K hops."""
    if r1 < 0 or r1 >= r2:
        raise InvalidArgumentError(f"context ring needs 0 <= r1 < r2, got r1={r1} r2={r2}")
    if r1 >= K:
        raise InvalidArgumentError(f"context ring needs r1 < K, got r1={r1} K={K}")
    dist = bfs_distances(g, v, r2)
    nodes = _ordered(dist, lambda d: d >= r1)
    anchors = [i for i, u in enumerate(nodes) if dist[u] <= K]
    return _induce(g, nodes, anchors)


def induced_graph(g: AttributedGraph, sub: Subgraph, center: Optional[int] = None) -> AttributedGraph:
    nodes = np.asarray(sub.nodes, dtype=np.int64)
    edge_ids = np.asarray(sub.edge_ids, dtype=np.int64)
    return AttributedGraph(
        num_nodes=len(nodes),
        node_attrs=g.node_attrs[nodes] if len(nodes) else np.zeros((0, len(g.vocab.node_sizes))),
        edges=np.asarray(sub.edges, dtype=np.int64).reshape(-1, 2),
        edge_attrs=g.edge_attrs[edge_ids] if len(edge_ids) else np.zeros((0, len(g.vocab.edge_sizes))),
        vocab=g.vocab,
        center=center,
        species=g.species,
        name=g.name,
    )


def ego_sample(g: AttributedGraph, v: int, rng: np.random.Generator,
               depth: int = 2, max_expand: int = 10) -> AttributedGraph:
    """Breadth-first ego-network: each dequeued node expands at most `max_expand`
    uniformly sampled unselected neighbors, down to `depth` hops. The result is
    induced on the selected nodes with the center at local id 0."""
    _check_node(g, v)
    if depth < 1 or max_expand < 1:
        raise InvalidArgumentError(f"ego sampling needs depth >= 1 and max_expand >= 1, got {depth}, {max_expand}")
    selected = [int(v)]
    level = {int(v): 0}
    queue = deque([int(v)])
    while queue:
        u = queue.popleft()
        if level[u] >= depth:
            continue
        fresh = [w for w in g.neighbors(u)[0].tolist() if w not in level]
        if len(fresh) > max_expand:
            picked = rng.choice(len(fresh), size=max_expand, replace=False)
            fresh = [fresh[i] for i in sorted(picked.tolist())]
        for w in fresh:
            level[w] = level[u] + 1
            selected.append(w)
            queue.append(w)
    logger.debug("[EGO] center=%d depth=%d selected=%d", v, depth, len(selected))
    return induced_graph(g, _induce(g, selected), center=0)


def permute_graph(g: AttributedGraph, perm) -> AttributedGraph:
    """Relabel node i as perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (g.num_nodes,) or not np.array_equal(np.sort(perm), np.arange(g.num_nodes)):
        raise InvalidArgumentError("permutation must be a bijection on node ids")
    node_attrs = np.empty_like(g.node_attrs)
    node_attrs[perm] = g.node_attrs
    return g.replace(
        node_attrs=node_attrs,
        edges=perm[g.edges] if g.num_edges else g.edges,
        center=None if g.center is None else int(perm[g.center]),
    )
