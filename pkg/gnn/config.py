# config.py
from typing import Literal, Optional

from pydantic import BaseModel, Field, model_validator

from chem_parse import MOLECULE_VOCAB
from graph_core import PROTEIN_VOCAB, Vocab

VOCABS = {"molecule": MOLECULE_VOCAB, "protein": PROTEIN_VOCAB}


class EncoderConfig(BaseModel):
    architecture: Literal["gin", "gcn", "graphsage"] = "gin"
    layers: int = Field(5, ge=1)
    width: int = Field(300, ge=1)
    mlp_hidden: Optional[int] = Field(None, ge=1)   # GIN only; None -> 2 * width
    dropout: float = Field(0.0, ge=0.0, lt=1.0)
    readout: Literal["mean", "mean-concat-center"] = "mean"
    domain: Literal["molecule", "protein"] = "molecule"

    @model_validator(mode="after")
    def _fill_hidden(self):
        if self.mlp_hidden is None:
            self.mlp_hidden = 2 * self.width
        return self

    @property
    def vocab(self) -> Vocab:
        return VOCABS[self.domain]

    @property
    def output_dim(self) -> int:
        return self.width * (2 if self.readout == "mean-concat-center" else 1)
