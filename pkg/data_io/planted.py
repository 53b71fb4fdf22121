# planted.py
"""
Synthetic benchmarks with planted regularities, small enough to train on a
laptop:

  context-classes  two graph classes that differ in structure only: carbon
                   chains vs. branched carbon trees, single bonds
                   throughout; label = class
  masked-rule      trees with max degree 3 whose atom type is a function of
                   node degree, so a masked atom is recoverable from structure
  transfer         a backbone carrying one ring motif; motifs fall into two
                   families by ring-size parity. Pre-training labels mark motif
                   presence for all eight motifs; the downstream task
                   (family of the motif) trains on the four N rings and is
                   tested on the four O rings
  ppi-ego          multi-species synthetic interaction networks sampled into
                   depth-2 ego-networks with relation-presence labels
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from chem_parse import BOND_SINGLE, DIR_NONE, MOLECULE_VOCAB
from data_io.formats import graph_fingerprint
from data_io.splits import SplitAssignment
from graph_core import PROTEIN_RELATIONS, PROTEIN_VOCAB, AttributedGraph, ego_sample
from utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

KINDS = ("context-classes", "masked-rule", "transfer", "ppi-ego")
MIN_SIZE = 64

CARBON, NITROGEN, OXYGEN = 5, 6, 7          # slot-0 indices (atomic number - 1)
DEGREE_RULE = {1: CARBON, 2: NITROGEN, 3: OXYGEN}

MOTIF_SIZES = (3, 4, 5, 6)
MOTIF_ATOMS = (NITROGEN, OXYGEN)
MOTIF_FAMILY = (0, 1, 0, 1, 0, 1, 0, 1)     # even ring size
TRAIN_MOTIFS = (0, 1, 2, 3)
TEST_MOTIFS = (4, 5, 6, 7)

SPECIES = ("human", "mouse", "fly", "yeast", "worm", "zebrafish", "arabidopsis", "ecoli")


@dataclass
class PlantedBenchmark:
    kind: str
    graphs: list
    task_names: list
    seed: int
    split: Optional[SplitAssignment] = None
    motifs: Optional[list] = None
    pretrain_graphs: Optional[list] = None
    pretrain_task_names: list = field(default_factory=list)


def _random_tree(n: int, max_degree: int, rng: np.random.Generator) -> list:
    degree = [0] * n
    edges = []
    for v in range(1, n):
        open_ = [u for u in range(v) if degree[u] < max_degree]
        u = open_[int(rng.integers(len(open_)))]
        edges.append((u, v))
        degree[u] += 1
        degree[v] += 1
    return edges


def _molecule(n, atoms, edges, bonds, labels=None, name=None) -> AttributedGraph:
    return AttributedGraph(
        num_nodes=n,
        node_attrs=[[a, 0] for a in atoms],
        edges=edges,
        edge_attrs=[[b, DIR_NONE] for b in bonds],
        vocab=MOLECULE_VOCAB,
        labels=labels,
        name=name,
    )


def planted_rule(g: AttributedGraph) -> np.ndarray:
    """Slot-0 category the masked-rule benchmark assigns to every node."""
    return np.array([DEGREE_RULE[int(d)] for d in g.degree()], dtype=np.int64)


# ---- generators ----
def _context_classes(size, rng):
    graphs = []
    for i in range(size):
        cls = i % 2
        n = int(rng.integers(12, 21))
        edges = _random_tree(n, 2 if cls == 0 else 3, rng)
        graphs.append(_molecule(n, [CARBON] * n, edges, [BOND_SINGLE] * len(edges), labels=[cls], name=f"class={cls}"))
    return PlantedBenchmark("context-classes", graphs, ["class"], 0)


def _masked_rule(size, rng):
    graphs = []
    for i in range(size):
        n = int(rng.integers(10, 21))
        edges = _random_tree(n, 3, rng)
        g = _molecule(n, [CARBON] * n, edges, [BOND_SINGLE] * len(edges), name=f"rule_{i}")
        graphs.append(g.replace(node_attrs=[[a, 0] for a in planted_rule(g).tolist()]))
    return PlantedBenchmark("masked-rule", graphs, [], 0)


def _with_motif(motif: int, rng, labels, name) -> AttributedGraph:
    ring, atom = MOTIF_SIZES[motif % 4], MOTIF_ATOMS[motif // 4]
    b = int(rng.integers(5, 10))
    edges = _random_tree(b, 3, rng)
    edges += [(b + k, b + (k + 1) % ring) for k in range(ring)]
    edges.append((int(rng.integers(b)), b))
    atoms = [CARBON] * b + [atom] * ring
    return _molecule(b + ring, atoms, edges, [BOND_SINGLE] * len(edges), labels=labels, name=name)


def _transfer(size, rng):
    downstream, motifs = [], []
    for i in range(size):
        pool = TRAIN_MOTIFS if i % 2 == 0 else TEST_MOTIFS
        m = pool[int(rng.integers(len(pool)))]
        motifs.append(m)
        downstream.append(_with_motif(m, rng, [MOTIF_FAMILY[m]], f"motif={m}"))

    train = [i for i, m in enumerate(motifs) if m in TRAIN_MOTIFS]
    held = rng.permutation([i for i, m in enumerate(motifs) if m in TEST_MOTIFS]).tolist()
    half = len(held) // 2
    split = SplitAssignment(train=train, valid=sorted(held[:half]), test=sorted(held[half:]),
                            fracs={"train": len(train) / size, "valid": half / size,
                                   "test": (len(held) - half) / size},
                            rule="motif")

    test_prints = {graph_fingerprint(downstream[i]) for i in split.test}
    pretrain = []
    while len(pretrain) < size:
        m = int(rng.integers(len(MOTIF_FAMILY)))
        labels = [int(k == m) for k in range(len(MOTIF_FAMILY))]
        labels = [-1 if rng.random() < 0.1 else y for y in labels]
        g = _with_motif(m, rng, labels, f"pretrain_motif={m}")
        if graph_fingerprint(g) not in test_prints:
            pretrain.append(g)

    names = [f"motif_{k}" for k in range(len(MOTIF_FAMILY))]
    return PlantedBenchmark("transfer", downstream, ["family"], 0, split=split, motifs=motifs,
                            pretrain_graphs=pretrain, pretrain_task_names=names)


def _interaction_network(n: int, rng) -> AttributedGraph:
    edges = set()
    for v in range(1, n):
        for u in rng.choice(v, size=min(v, int(rng.integers(1, 4))), replace=False).tolist():
            edges.add((u, v))
    edges = sorted(edges)
    relations = []
    for _ in edges:
        bits = (rng.random(len(PROTEIN_RELATIONS)) < 0.3).astype(int)
        if not bits.any():
            bits[int(rng.integers(len(bits)))] = 1
        relations.append(bits.tolist())
    return AttributedGraph(num_nodes=n, node_attrs=[[0]] * n, edges=edges, edge_attrs=relations, vocab=PROTEIN_VOCAB)


def _ppi_ego(size, rng):
    per_species = math.ceil(size / len(SPECIES))
    graphs = []
    for s in SPECIES:
        net = _interaction_network(max(2 * per_species, 20), rng)
        for v in rng.choice(net.num_nodes, size=per_species, replace=False).tolist():
            ego = ego_sample(net, v, rng, depth=2, max_expand=10)
            nbrs, eids = ego.neighbors(0)
            present = (ego.edge_attrs[eids] == 1).any(axis=0).astype(int) if len(eids) else np.zeros(7, int)
            labels = [-1 if rng.random() < 0.05 else int(b) for b in present]
            graphs.append(ego.replace(labels=labels, species=s, name=f"{s}:{v}"))
            if len(graphs) == size:
                break
    return PlantedBenchmark("ppi-ego", graphs, [f"has_{r}" for r in PROTEIN_RELATIONS], 0)


GENERATORS = {
    "context-classes": _context_classes,
    "masked-rule": _masked_rule,
    "transfer": _transfer,
    "ppi-ego": _ppi_ego,
}


def generate_planted_benchmark(kind: str, size: int, seed: int = 0) -> PlantedBenchmark:
    if kind not in GENERATORS:
        raise InvalidArgumentError(f"unknown benchmark {kind!r}; expected one of {KINDS}")
    if size < MIN_SIZE:
        raise InvalidArgumentError(f"planted benchmarks need size >= {MIN_SIZE}, got {size}")
    bench = GENERATORS[kind](size, np.random.default_rng(seed))
    bench.seed = seed
    logger.info("[GEN] %s size=%d seed=%d", kind, len(bench.graphs), seed)
    return bench
