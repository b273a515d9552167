"""Sparsity ramp and magnitude-threshold candidate selection."""

from dataclasses import dataclass

import numpy as np

from dropprune.sampling import round_half_up

LSC = "lsc"
GSC = "gsc"


@dataclass(frozen=True)
class ScheduleConfig:
    """Gradual pruning schedule parameters.

    constraint_mode: "lsc" imposes the target sparsity on every layer,
    "gsc" on the whole weight vector.
    """

    final_sparsity: float
    num_prune_steps: int
    retrain_batches_per_step: int
    constraint_mode: str = GSC
    finetune_epochs: int = 0

    def __post_init__(self):
        if not (0.0 < self.final_sparsity < 1.0):
            raise ValueError(f"final_sparsity must be in (0, 1), got {self.final_sparsity}")
        if self.num_prune_steps < 1:
            raise ValueError("num_prune_steps must be >= 1")
        if self.retrain_batches_per_step < 1:
            raise ValueError("retrain_batches_per_step must be >= 1")
        if self.constraint_mode not in (LSC, GSC):
            raise ValueError(f"constraint_mode must be 'lsc' or 'gsc', got {self.constraint_mode!r}")
        if self.finetune_epochs < 0:
            raise ValueError("finetune_epochs must be >= 0")


def target_sparsity_at(cfg, t):
    """Cumulative target sparsity after prune step t, on a cubic ramp.

    s_t = s * (1 - (1 - t/n)^3): zero at t=0, the final target at t=n,
    monotone nondecreasing in between.
    """
    n = cfg.num_prune_steps
    if not (0 <= t <= n):
        raise ValueError(f"step index {t} outside [0, {n}]")
    return cfg.final_sparsity * (1.0 - (1.0 - t / n) ** 3)


def target_support(total, sparsity):
    """Live-weight count that realizes `sparsity` over `total` weights."""
    return total - round_half_up(sparsity * total)


def select_prune_candidates(magnitudes, live, needed):
    """Pick the `needed` smallest-magnitude live weights.

    Returns (lam, indices): lam is the needed-th smallest live magnitude,
    so S = {i : |theta_i| <= lam, live} has cardinality `needed` once ties
    are broken toward the lower flat index. indices come back sorted.
    """
    live_idx = np.flatnonzero(live)
    if needed > live_idx.size:
        raise ValueError(f"requested {needed} candidates, only {live_idx.size} live weights")
    if needed < 0:
        raise ValueError("needed must be nonnegative")
    if needed == 0:
        return 0.0, np.empty(0, dtype=np.int64)
    mags = np.asarray(magnitudes)[live_idx]
    order = np.argsort(mags, kind="stable")[:needed]
    lam = float(mags[order[needed - 1]])
    return lam, np.sort(live_idx[order])
