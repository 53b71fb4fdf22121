# attribute_masking.py
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from gnn import Encoder, LinearHead
from graph_core import AttributedGraph
from numkernel import Tensor, add, bce_with_logits, gather, softmax_cross_entropy
from pretrain.base import PretrainObjective
from pretrain.config import MaskConfig
from utils.errors import EmptyInputError, InvalidArgumentError

logger = logging.getLogger(__name__)

PROTEIN_BITS = 7


@dataclass(frozen=True)
class MaskTarget:
    position: int        # node id, or edge row for edge targets
    category: object     # int category, or a tuple of relation bits (protein edges)


def mask_count(n: int, rate: float) -> int:
    """max(1, round(rate * n)) with halves rounded up."""
    return min(n, max(1, int(np.floor(rate * n + 0.5))))


def _bitwise(g: AttributedGraph, cfg: MaskConfig) -> bool:
    return cfg.target == "edges" and g.vocab.name == "protein"


def head_width(vocab, cfg: MaskConfig) -> int:
    if cfg.target == "nodes":
        if cfg.slot >= len(vocab.node_sizes):
            raise InvalidArgumentError(f"mask.slot={cfg.slot} but nodes have {len(vocab.node_sizes)} slots")
        return vocab.node_real(cfg.slot)
    if vocab.name == "protein":
        return PROTEIN_BITS
    if cfg.slot >= len(vocab.edge_sizes):
        raise InvalidArgumentError(f"mask.slot={cfg.slot} but edges have {len(vocab.edge_sizes)} slots")
    return vocab.edge_real(cfg.slot)


def apply_mask(g: AttributedGraph, cfg: MaskConfig, rng: np.random.Generator):
    """Replace every slot of the chosen nodes (or edges) with the mask category;
    targets keep the original category of the predicted slot."""
    vocab = g.vocab
    if cfg.target == "nodes":
        attrs, mask_row = g.node_attrs.copy(), [vocab.node_mask(s) for s in range(len(vocab.node_sizes))]
    else:
        attrs, mask_row = g.edge_attrs.copy(), [vocab.edge_mask(s) for s in range(len(vocab.edge_sizes))]
    total = len(attrs)
    if total == 0:
        raise EmptyInputError(f"graph {g.name or ''} has no maskable {cfg.target}")
    head_width(vocab, cfg)

    positions = np.sort(rng.choice(total, size=mask_count(total, cfg.rate), replace=False))
    if _bitwise(g, cfg):
        targets = [MaskTarget(int(p), tuple(int(b) for b in attrs[p])) for p in positions]
    else:
        targets = [MaskTarget(int(p), int(attrs[p, cfg.slot])) for p in positions]
    attrs[positions] = mask_row
    masked = g.replace(node_attrs=attrs) if cfg.target == "nodes" else g.replace(edge_attrs=attrs)
    return masked, targets


def _mask_logits(encoder: Encoder, head: LinearHead, masked_graphs, targets, cfg: MaskConfig,
                 train: bool, rng, dropout_rate) -> tuple:
    if not any(targets):
        raise EmptyInputError("no masked targets")
    batch = encoder.batch(masked_graphs)
    h = encoder.forward(batch, train=train, rng=rng, dropout_rate=dropout_rate)
    if cfg.target == "nodes":
        rows = np.concatenate([[batch.offsets[i] + t.position for t in ts] for i, ts in enumerate(targets)])
        emb = gather(h, rows.astype(np.int64))
    else:
        ends = np.concatenate([np.asarray([masked_graphs[i].edges[t.position] for t in ts], dtype=np.int64).reshape(-1, 2)
                               + batch.offsets[i] for i, ts in enumerate(targets)])
        emb = add(gather(h, ends[:, 0]), gather(h, ends[:, 1]))
    truth = np.asarray([t.category for ts in targets for t in ts])
    return head(emb), truth


def masking_loss(encoder: Encoder, head: LinearHead, masked_graphs, targets, cfg: MaskConfig,
                 train: bool = False, rng: Optional[np.random.Generator] = None,
                 dropout_rate: Optional[float] = None) -> Tensor:
    """Cross-entropy over the predicted slot's real categories, or per-bit
    binary cross-entropy for protein relation vectors; mean over targets."""
    logits, truth = _mask_logits(encoder, head, masked_graphs, targets, cfg, train, rng, dropout_rate)
    if truth.ndim == 2:
        return bce_with_logits(logits, truth)
    return softmax_cross_entropy(logits, truth)


def masking_accuracy(encoder: Encoder, head: LinearHead, masked_graphs, targets, cfg: MaskConfig) -> float:
    logits, truth = _mask_logits(encoder, head, masked_graphs, targets, cfg, False, None, None)
    if truth.ndim == 2:
        return float(((logits.data > 0).astype(int) == truth).mean())
    return float((logits.data.argmax(axis=1) == truth).mean())


class AttributeMasking(PretrainObjective):
    name = "mask"

    def __init__(self, encoder: Encoder, settings: MaskConfig, rng: np.random.Generator):
        super().__init__(encoder, settings, rng)
        self.head = LinearHead(encoder.config.width, head_width(encoder.vocab, settings), rng, prefix="mask_head")
        self.aux_stores = [self.head.store]

    def _mask_batch(self, graphs, rng):
        masked, targets = [], []
        for g in graphs:
            try:
                m, t = apply_mask(g, self.settings, rng)
            except EmptyInputError:
                continue
            masked.append(m)
            targets.append(t)
        return masked, targets

    def batch_loss(self, graphs, rng, train=True, dropout_rate=None):
        masked, targets = self._mask_batch(graphs, rng)
        return masking_loss(self.encoder, self.head, masked, targets, self.settings, train, rng, dropout_rate)

    def batch_metric(self, graphs, rng):
        masked, targets = self._mask_batch(graphs, rng)
        return masking_accuracy(self.encoder, self.head, masked, targets, self.settings)
