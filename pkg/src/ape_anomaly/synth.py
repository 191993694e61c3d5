"""Synthetic categorical events with planted group structure.

Every type's entities are split into ``groups`` equal blocks. With
probability ``rho`` an event picks one group and draws each relevant
attribute uniformly from that group's block; otherwise (and always for
irrelevant types) attributes are uniform over the whole type.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import EventSchema
from .ingest import Dataset


@dataclass
class SynthConfig:
    m: int = 5
    arities: int | tuple[int, ...] = 50
    groups: int = 5
    rho: float = 0.9
    irrelevant_pairs: tuple[tuple[int, int], ...] = ()
    n_events: int = 20000
    seed: int = 7
    type_names: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        if isinstance(self.arities, (int, np.integer)):
            self.arities = (int(self.arities),) * self.m
        self.arities = tuple(int(a) for a in self.arities)
        self.irrelevant_pairs = tuple(tuple(sorted(map(int, p))) for p in self.irrelevant_pairs)
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if len(self.arities) != self.m:
            raise ValueError(f"got {len(self.arities)} arities for m={self.m}")
        if self.groups < 1 or any(a % self.groups for a in self.arities):
            raise ValueError(f"groups={self.groups} must divide every arity {self.arities}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.n_events < 0:
            raise ValueError("n_events must be >= 0")
        for i, j in self.irrelevant_pairs:
            if i == j or not (0 <= i < self.m and 0 <= j < self.m):
                raise ValueError(f"invalid irrelevant pair {(i, j)} for m={self.m}")
        if self.type_names is None:
            self.type_names = tuple(f"t{i}" for i in range(self.m))
        self.type_names = tuple(self.type_names)

    @property
    def schema(self) -> EventSchema:
        return EventSchema(self.type_names)

    @property
    def irrelevant_types(self) -> frozenset[int]:
        return frozenset(t for p in self.irrelevant_pairs for t in p)

    @property
    def relevant_pairs(self) -> list[tuple[int, int]]:
        bad = self.irrelevant_types
        return [(i, j) for i in range(self.m) for j in range(i + 1, self.m) if i not in bad and j not in bad]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["irrelevant_pairs"] = [list(p) for p in self.irrelevant_pairs]
        return d

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        obj = json.loads(text)
        if "arities" in obj and isinstance(obj["arities"], list):
            obj["arities"] = tuple(obj["arities"])
        return cls(**obj)


def entity_name(type_name: str, index: int) -> str:
    return f"{type_name}:{index}"


def generate_indices(cfg: SynthConfig, n: int | None = None, seed: int | None = None) -> np.ndarray:
    """Planted events as ``(n, m)`` integer entity ids (not vocabulary indices)."""
    n = cfg.n_events if n is None else n
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    intra = rng.random(n) < cfg.rho
    group = rng.integers(0, cfg.groups, size=n)
    out = np.empty((n, cfg.m), dtype=np.int64)
    skip = cfg.irrelevant_types
    for t, arity in enumerate(cfg.arities):
        block = arity // cfg.groups
        uniform = rng.integers(0, arity, size=n)
        within = group * block + rng.integers(0, block, size=n)
        out[:, t] = uniform if t in skip else np.where(intra, within, uniform)
    return out


def to_rows(cfg: SynthConfig, ids: np.ndarray) -> list[tuple[str, ...]]:
    names = [[entity_name(t, i) for i in range(a)] for t, a in zip(cfg.type_names, cfg.arities)]
    cols = [[names[t][i] for i in ids[:, t]] for t in range(cfg.m)]
    return list(zip(*cols))


def parse_id(value: str) -> int:
    return int(value.rsplit(":", 1)[1])


def generate(cfg: SynthConfig) -> Dataset:
    rows = to_rows(cfg, generate_indices(cfg))
    return Dataset.from_rows(rows, cfg.schema, source=f"synth(seed={cfg.seed})")


def generate_split(cfg: SynthConfig, n_test: int) -> tuple[Dataset, Dataset]:
    """Train and test sets from one stream; test entities unseen in train map to UNK."""
    ids = generate_indices(cfg, cfg.n_events + n_test)
    rows = to_rows(cfg, ids)
    train = Dataset.from_rows(rows[: cfg.n_events], cfg.schema, source=f"synth(seed={cfg.seed})[train]")
    test = Dataset.from_rows(
        rows[cfg.n_events:], cfg.schema, train.vocab, allow_unk=True, source=f"synth(seed={cfg.seed})[test]"
    )
    return train, test


def planted_log_density(cfg: SynthConfig, ids: np.ndarray) -> np.ndarray:
    """Exact log-probability of events (given as entity ids) under the generator."""
    ids = np.atleast_2d(ids)
    skip = cfg.irrelevant_types
    log_uniform = -sum(np.log(a) for a in cfg.arities)
    block = np.array([a // cfg.groups for a in cfg.arities])
    grp = ids // block
    relevant = [t for t in range(cfg.m) if t not in skip]
    # log P(event | group g) for the intra-group branch, summed over g
    per_group = []
    for g in range(cfg.groups):
        inside = np.all(grp[:, relevant] == g, axis=1)
        lp = -sum(np.log(block[t]) for t in relevant) - sum(np.log(cfg.arities[t]) for t in skip)
        per_group.append(np.where(inside, lp - np.log(cfg.groups), -np.inf))
    with np.errstate(divide="ignore"):
        terms = [np.full(len(ids), np.log1p(-cfg.rho) + log_uniform) if cfg.rho < 1 else np.full(len(ids), -np.inf)]
        if cfg.rho > 0:
            terms += [np.log(cfg.rho) + pg for pg in per_group]
    return logsumexp(np.stack(terms), axis=0)
