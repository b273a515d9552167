"""dropprune: stochastic gradual weight pruning with drop away and drop back.

The package bundles a self-contained dense-network training core, the
stochastic prune-retrain engine, and two small optimization labs (L0
hard-thresholding on quadratics, and minimal weighted vertex cover with a
memory mechanism) that share the same stochastic machinery.
"""

from dropprune.nn import DenseLayer, Network, TrainConfig, ShapeError
from dropprune.masking import Mask, MaskedModel, save_checkpoint, load_checkpoint
from dropprune.schedule import ScheduleConfig, target_sparsity_at, select_prune_candidates
from dropprune.sampling import DropConfig, make_rng, sample_subset, drop_back_count
from dropprune.engine import (
    PruneVariant,
    TrialReport,
    ExperimentSummary,
    TrialDiverged,
    prune_step,
    run_trial,
    run_experiment,
    train_baseline,
)
from dropprune.ist import QuadraticProblem, ISTConfig, hard_threshold, ist_iterate, evaluate_objective
from dropprune.mwvc import WeightedGraph, MwvcConfig, cover_objective, solve_greedy, solve_memory, solve_exact
from dropprune.data import Dataset, load_idx, synth_blobs

__version__ = "0.1.0"
