"""Unigram noise distributions for contrastive training.

Two samplers are provided. The factorized one draws every attribute
independently; the context-dependent one copies an observed event and
redraws the entity of a single type.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Vocabulary


class AliasTable:
    """Vose's alias method: O(n) build, O(1) per draw."""

    def __init__(self, weights):
        p = np.asarray(weights, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or (p < 0).any() or p.sum() <= 0:
            raise ValueError("alias table needs a non-empty vector of non-negative weights")
        n = p.size
        scaled = p * (n / p.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias

    def __len__(self):
        return self.prob.size

    def sample(self, rng: np.random.Generator, size=None):
        col = rng.integers(0, self.prob.size, size=size)
        coin = rng.random(size=size)
        return np.where(coin < self.prob[col], col, self.alias[col])


@dataclass
class NoiseModel:
    """Smoothed per-type unigram probabilities.

    ``probs[i]`` has ``arity_i + 1`` entries, the last one for UNK. Samplers
    never return UNK; they draw from the known entities renormalized.
    """

    probs: list[np.ndarray]
    alpha: float

    def __post_init__(self):
        self.log_probs = [np.log(p) for p in self.probs]
        self.tables = [AliasTable(p[:-1]) for p in self.probs]

    @property
    def m(self) -> int:
        return len(self.probs)

    def draw(self, type_i: int, rng: np.random.Generator, size=None):
        return self.tables[type_i].sample(rng, size)


def build_noise(vocab: Vocabulary, alpha: float = 1.0) -> NoiseModel:
    """Add-``alpha`` smoothed unigram, with UNK counted as an unseen entity."""
    if not alpha > 0:
        raise ValueError(f"smoothing constant must be > 0, got {alpha}")
    if any(a == 0 for a in vocab.arities):
        raise ValueError("every type needs at least one entity to build a noise model")
    probs = []
    for counts in vocab.counts:
        smoothed = np.append(counts.astype(np.float64), 0.0) + alpha
        probs.append(smoothed / (vocab.n_events + alpha * len(smoothed)))
    return NoiseModel(probs, float(alpha))


def sample_context_independent(nm: NoiseModel, rng: np.random.Generator, size=None) -> np.ndarray:
    if size is None:
        return np.array([nm.draw(i, rng) for i in range(nm.m)], dtype=np.int64)
    shape = (size,) if np.isscalar(size) else tuple(size)
    return np.stack([nm.draw(i, rng, shape) for i in range(nm.m)], axis=-1).astype(np.int64)


def sample_context_dependent(nm: NoiseModel, context, type_i: int, rng: np.random.Generator):
    """Copy ``context`` and redraw position ``type_i``; returns ``(event, new_entity)``.

    Redrawing the original entity is allowed.
    """
    event = np.array(context, dtype=np.int64)
    if not 0 <= type_i < nm.m:
        raise IndexError(f"type index {type_i} out of range for {nm.m} types")
    new = int(nm.draw(type_i, rng))
    event[type_i] = new
    return event, new


def log_kpn_negative(nm: NoiseModel, replaced_type, new_entity):
    """Noise log-density of a replaced event, up to the dropped constant."""
    if np.ndim(replaced_type) == 0:
        return float(nm.log_probs[int(replaced_type)][int(new_entity)])
    replaced_type = np.asarray(replaced_type)
    new_entity = np.asarray(new_entity)
    out = np.empty(np.broadcast(replaced_type, new_entity).shape)
    for i in range(nm.m):
        mask = replaced_type == i
        out[mask] = nm.log_probs[i][np.broadcast_to(new_entity, out.shape)[mask]]
    return out


def _per_type_log_probs(nm: NoiseModel, events) -> np.ndarray:
    ev = np.asarray(events, dtype=np.int64)
    return np.stack([nm.log_probs[i][ev[..., i]] for i in range(nm.m)], axis=-1)


def log_kpn_observed(nm: NoiseModel, events):
    """Mean over types of ``log p_i(a_i)`` for observed events."""
    out = _per_type_log_probs(nm, events).mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def log_factorized(nm: NoiseModel, events):
    """Exact log-density of the factorized unigram noise."""
    out = _per_type_log_probs(nm, events).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out
