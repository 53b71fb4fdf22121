# base.py
import logging
from typing import Optional

import numpy as np

from gnn import Encoder
from numkernel import ParamStore, Tensor

logger = logging.getLogger(__name__)


class PretrainObjective:
    """Shared plumbing for the pre-training objectives.

    Subclasses own any auxiliary modules (context encoder, prediction heads)
    and implement `batch_loss` and `batch_metric`. Only `encoder` survives
    pre-training; everything else is discarded with the objective.
    """

    name = "base"
    needs_labels = False

    def __init__(self, encoder: Encoder, settings: dict, rng: np.random.Generator):
        self.encoder = encoder
        self.settings = settings
        self.rng = rng
        self.aux_stores = []
        logger.info("[PRETRAIN] objective=%s architecture=%s layers=%d width=%d",
                    self.name, encoder.config.architecture, encoder.config.layers, encoder.config.width)

    def parameters(self) -> ParamStore:
        """Encoder parameters plus every auxiliary module's, one optimizer store."""
        return self.encoder.store.merge(*self.aux_stores)

    def batch_loss(self, graphs, rng: np.random.Generator, train: bool = True,
                   dropout_rate: Optional[float] = None) -> Tensor:
        raise NotImplementedError

    def batch_metric(self, graphs, rng: np.random.Generator) -> float:
        """Eval-mode accuracy of the objective's own prediction task."""
        raise NotImplementedError

    def check_graphs(self, graphs):
        """Raise if the dataset cannot feed this objective; default accepts anything."""
        return None

    @property
    def retained(self) -> Encoder:
        return self.encoder
