# splits.py
import json
import logging
import math
from collections import defaultdict
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from chem_parse import canonical_key, murcko_scaffold
from data_io.formats import atomic_write
from utils.errors import DataError, EmptyInputError, InvalidArgumentError, LeakageError

logger = logging.getLogger(__name__)

PARTS = ("train", "valid", "test", "prior")


class DataConfig(BaseModel):
    rule: Literal["scaffold", "species", "random"] = "scaffold"
    train_frac: float = Field(0.8, ge=0.0, le=1.0)
    valid_frac: float = Field(0.1, ge=0.0, le=1.0)
    test_frac: float = Field(0.1, ge=0.0, le=1.0)
    target_species: str = "human"
    species_train_frac: float = Field(0.85, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.train_frac + self.valid_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {total}")
        return self

    @property
    def fracs(self) -> tuple:
        return self.train_frac, self.valid_frac, self.test_frac


class SplitAssignment(BaseModel):
    train: list
    valid: list
    test: list
    prior: Optional[list] = None
    fracs: dict = {}
    rule: str
    seed: Optional[int] = None

    @model_validator(mode="after")
    def _disjoint(self):
        seen = set()
        for name in PARTS:
            part = getattr(self, name) or []
            if len(set(part)) != len(part) or seen & set(part):
                raise ValueError(f"split part {name!r} overlaps another part or repeats an index")
            seen |= set(part)
        return self

    def indices(self) -> set:
        return {i for name in PARTS for i in (getattr(self, name) or [])}

    def sizes(self) -> dict:
        return {name: len(getattr(self, name)) for name in PARTS if getattr(self, name) is not None}

    def check_covers(self, n: int):
        if self.indices() - set(range(n)):
            raise DataError(f"split references indices outside a dataset of {n} graphs")

    def save(self, path: str):
        atomic_write(path, (json.dumps(self.model_dump(), indent=2, sort_keys=True) + "\n").encode())

    @classmethod
    def load(cls, path: str) -> "SplitAssignment":
        try:
            with open(path) as f:
                payload = json.load(f)
        except FileNotFoundError:
            raise DataError(f"split file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise DataError(f"malformed split file {path}: {e}") from None
        if not isinstance(payload, dict):
            raise DataError(f"malformed split file {path}: expected a JSON object")
        try:
            return cls(**payload)
        except ValidationError as e:
            if "overlaps" in str(e):
                raise LeakageError(f"invalid split file {path}: {e}") from None
            raise DataError(f"malformed split file {path}: {e}") from None


def _check_fracs(fracs):
    if len(fracs) != 3 or min(fracs) < 0 or abs(sum(fracs) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"fractions must be three non-negative numbers summing to 1, got {fracs}")


def _cutoff(frac: float, n: int) -> int:
    # round first so 0.9 * 10 = 9.000000000000002 does not ceil to 10
    return math.ceil(round(frac * n, 9))


def greedy_group_split(keys, fracs=(0.8, 0.1, 0.1), rule: str = "scaffold") -> SplitAssignment:
    """Groups by descending size (ties by ascending key) fill train up to
    ceil(f_train * N), then valid up to ceil((f_train + f_valid) * N); the rest
    goes to test."""
    _check_fracs(fracs)
    keys = list(keys)
    if not keys:
        raise EmptyInputError("cannot split an empty dataset")
    groups = defaultdict(list)
    for i, k in enumerate(keys):
        groups[k].append(i)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))

    n = len(keys)
    train_cut = _cutoff(fracs[0], n)
    valid_cut = _cutoff(fracs[0] + fracs[1], n)
    train, valid, test = [], [], []
    for _, members in ordered:
        if len(train) + len(members) <= train_cut:
            train += members
        elif len(train) + len(valid) + len(members) <= valid_cut:
            valid += members
        else:
            test += members

    if not valid or not test:
        logger.warning("[SPLIT] degenerate %s split: train=%d valid=%d test=%d (%d groups)",
                       rule, len(train), len(valid), len(test), len(groups))
    return SplitAssignment(train=sorted(train), valid=sorted(valid), test=sorted(test),
                           fracs=dict(zip(("train", "valid", "test"), fracs)), rule=rule)


def scaffold_keys(molecules) -> list:
    return [canonical_key(murcko_scaffold(m)) for m in molecules]


def scaffold_split(molecules, fracs=(0.8, 0.1, 0.1)) -> SplitAssignment:
    """Deterministic, seed-free split that keeps each Murcko scaffold in one part."""
    split = greedy_group_split(scaffold_keys(molecules), fracs, rule="scaffold")
    logger.info("[SPLIT] scaffold %s", split.sizes())
    return split


def random_split(n: int, fracs=(0.8, 0.1, 0.1), seed: int = 0) -> SplitAssignment:
    _check_fracs(fracs)
    if n <= 0:
        raise EmptyInputError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(n).tolist()
    a = int(math.floor(fracs[0] * n + 0.5))
    b = a + int(math.floor(fracs[1] * n + 0.5))
    b = min(b, n)
    return SplitAssignment(train=sorted(order[:a]), valid=sorted(order[a:b]), test=sorted(order[b:]),
                           fracs=dict(zip(("train", "valid", "test"), fracs)), rule="random", seed=seed)


def species_split(graphs, target_species: str = "human", train_frac: float = 0.85,
                  seed: int = 0) -> SplitAssignment:
    """Target species: seeded 50/50 into test and prior. All other species are
    pooled, shuffled and cut into train (round(train_frac * n_pooled)) and valid."""
    species = [g.species for g in graphs]
    if len({s for s in species if s is not None}) < 2:
        raise DataError("species split needs at least two species")
    target = [i for i, s in enumerate(species) if s == target_species]
    if not target:
        raise DataError(f"target species {target_species!r} not present")
    others = [i for i, s in enumerate(species) if s != target_species]

    rng = np.random.default_rng(seed)
    target = rng.permutation(target).tolist()
    others = rng.permutation(others).tolist()
    half = len(target) // 2
    cut = int(math.floor(train_frac * len(others) + 0.5))
    split = SplitAssignment(
        train=sorted(others[:cut]), valid=sorted(others[cut:]), test=sorted(target[:half]),
        prior=sorted(target[half:]), rule="species", seed=seed,
        fracs={"target_test": 0.5, "train": train_frac, "valid": round(1 - train_frac, 9)},
    )
    n = len(graphs)
    logger.info("[SPLIT] species target=%s effective ratios %s", target_species,
                {k: round(v / n, 4) for k, v in split.sizes().items()})
    return split
