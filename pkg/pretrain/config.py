# config.py
from typing import Literal

from pydantic import BaseModel, Field, model_validator


class ContextConfig(BaseModel):
    K: int = Field(5, ge=1)                 # main encoder depth, neighborhood radius
    r1: int = Field(4, ge=0)
    r2: int = Field(7, ge=1)
    context_layers: int = Field(3, ge=1)
    negative_ratio: int = Field(1, ge=0)
    centers_per_graph: int = Field(1, ge=1)
    # source of negative contexts, for the loss and the accuracy metric alike
    negatives: Literal["in-batch", "cross-label"] = "in-batch"

    @model_validator(mode="after")
    def _radii(self):
        if self.r1 >= self.r2:
            raise ValueError(f"context ring needs r1 < r2, got r1={self.r1} r2={self.r2}")
        if self.r1 >= self.K:
            raise ValueError(f"anchors need r1 < K, got r1={self.r1} K={self.K}")
        return self


class MaskConfig(BaseModel):
    rate: float = Field(0.15, gt=0.0, lt=1.0)
    target: Literal["nodes", "edges"] = "nodes"
    slot: int = Field(0, ge=0)
