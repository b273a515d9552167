"""Seeded randomness and the fixed-cardinality subset sampler.

The sampler draws a uniform vector over the candidate set and keeps the
indices of the k smallest entries, so every draw returns exactly k distinct
elements (a uniform random k-subset, not per-element Bernoulli trials).
"""

import math
from dataclasses import dataclass

import numpy as np

_GOLDEN64 = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


def make_rng(seed):
    """Return a deterministic generator (PCG64); same seed, same stream."""
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def trial_seed(base_seed, trial_id):
    """Derive the seed for one trial by golden-ratio folding of the index."""
    return (int(base_seed) ^ ((trial_id + 1) * _GOLDEN64 & _MASK64)) & _MASK64


def round_half_up(x):
    """Round a nonnegative count, halves up: 2.5 -> 3."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class DropConfig:
    """Drop probabilities and the base seed for a pruning experiment."""

    xi1: float = 0.9
    xi2: float = 0.08
    base_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.xi1 <= 1.0):
            raise ValueError(f"xi1 must be in [0, 1], got {self.xi1}")
        if not (0.0 <= self.xi2 <= 1.0):
            raise ValueError(f"xi2 must be in [0, 1], got {self.xi2}")
        if self.xi2 >= self.xi1:
            # xi2 < xi1 is what makes each pruning step shrink the model.
            raise ValueError(f"xi2 must be < xi1, got xi1={self.xi1}, xi2={self.xi2}")


def sample_fixed(rng, members, k):
    """Uniform random k-subset of `members`, returned as a sorted array.

    Draws one uniform value per member and keeps the k smallest, so the
    cardinality is exactly k on every draw. The rng is consumed only when
    0 < k < len(members).
    """
    members = np.asarray(members, dtype=np.int64)
    n = members.size
    if k < 0 or k > n:
        raise ValueError(f"cannot draw {k} elements from a set of {n}")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k == n:
        return np.sort(members)
    u = rng.random(n)
    keep = np.argpartition(u, k)[:k]
    return np.sort(members[keep])


def sample_subset(rng, members, p):
    """The subset sampler B(M, p): exactly round_half_up(p * |M|) elements."""
    if not (0.0 <= p <= 1.0):
        raise ValueError(f"p must be in [0, 1], got {p}")
    members = np.asarray(members, dtype=np.int64)
    return sample_fixed(rng, members, round_half_up(p * members.size))


def drop_back_count(xi2, s_size, k_size):
    """Number of pruned weights to revive: xi2 * |S|, clamped to |K|."""
    if s_size < 0 or k_size < 0:
        raise ValueError("set sizes must be nonnegative")
    return min(round_half_up(xi2 * s_size), k_size)
