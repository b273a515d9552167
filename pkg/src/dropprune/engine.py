"""The gradual prune-retrain loop with stochastic drop away / drop back,
plus baseline training and the multi-trial experiment protocol.

Each prune step, per constraint scope (whole network or one layer):

  1. pick the smallest-magnitude live weights S (candidate count inflated by
     the variant's net removal rate so achieved sparsity tracks the ramp),
  2. snapshot the pruned set K before any update,
  3. drop away a p_away-fraction subset of S,
  4. drop back a subset of K sized xi2*|S| (clamped to |K|),
  5. apply both mask updates, then retrain with masked SGD.

Support sizes therefore obey, exactly and per scope,

  support_after = support_before - round(p_away*|S|) + min(round(xi2*|S|), |K|)

with round meaning round-half-up. After the last scheduled step a
deterministic clamp prunes the smallest surviving weights (no drop back)
until the scope hits its target support exactly.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from dropprune.masking import MaskedModel
from dropprune.nn import TrainConfig
from dropprune.sampling import (
    DropConfig,
    drop_back_count,
    make_rng,
    round_half_up,
    sample_fixed,
    sample_subset,
    trial_seed,
)
from dropprune.schedule import (
    GSC,
    LSC,
    ScheduleConfig,
    select_prune_candidates,
    target_sparsity_at,
    target_support,
)

VARIANT_NAMES = ("tp", "dap", "dp")


class TrialDiverged(RuntimeError):
    """Raised when retraining produces a non-finite loss; aborts the trial."""


@dataclass(frozen=True)
class PruneVariant:
    """Pruning flavor: traditional (tp), drop-away only (dap), or full
    drop pruning (dp)."""

    name: str

    def __post_init__(self):
        if self.name not in VARIANT_NAMES:
            raise ValueError(f"variant must be one of {VARIANT_NAMES}, got {self.name!r}")

    def probabilities(self, drop):
        """(p_away, xi2_effective) for this variant under a DropConfig."""
        if self.name == "tp":
            return 1.0, 0.0
        if self.name == "dap":
            return drop.xi1, 0.0
        return drop.xi1, drop.xi2

    def net_rate(self, drop):
        p_away, xi2 = self.probabilities(drop)
        return p_away - xi2


@dataclass
class ScopeRecord:
    """Bookkeeping for one sampling scope within one prune step."""

    scope: str
    support_before: int
    s_size: int
    k_size: int
    away_count: int
    back_count: int
    support_after: int


@dataclass
class StepRecord:
    step: int
    phase: str  # "prune" | "clamp"
    scheduled_sparsity: float
    achieved_sparsity: float
    train_loss: float
    test_error: float
    scopes: list


@dataclass
class TrialReport:
    """Full trajectory of one stochastic trial."""

    trial_id: int
    variant: str
    constraint: str
    target_sparsity: float
    seed: int
    steps: list = field(default_factory=list)
    finetune_errors: list = field(default_factory=list)
    finetune_losses: list = field(default_factory=list)
    final_test_error: float = math.nan
    best_finetune_test_error: float = math.nan
    final_sparsity: float = math.nan
    compression_ratio: float = math.nan
    compression_ratio_all_params: float = math.nan
    model: object = None  # the pruned MaskedModel; dropped when crossing processes


@dataclass(frozen=True)
class ExperimentSummary:
    sparsity: float
    variant: str
    best: float
    mean: float
    std: float
    num_trials: int
    num_aborted: int = 0


def lr_at_epoch(lr0, epoch):
    """Baseline learning-rate policy: halve the rate every 6 epochs."""
    return lr0 * 0.5 ** (epoch // 6)


class _BatchCursor:
    """Endless minibatch stream with a per-epoch reshuffle from one rng."""

    def __init__(self, dataset, batch_size, rng):
        self.inputs = dataset.inputs
        self.labels = dataset.labels
        self.batch_size = batch_size
        self.rng = rng
        self._order = rng.permutation(self.inputs.shape[0])
        self._pos = 0

    def next_batch(self):
        n = self._order.size
        if self._pos >= n:
            self._order = self.rng.permutation(n)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return self.inputs[idx], self.labels[idx]


def _retrain(model, cursor, batches, lr):
    """Masked SGD for a fixed number of minibatches; returns the mean loss."""
    total = 0.0
    for _ in range(batches):
        xb, yb = cursor.next_batch()
        grads, loss = model.masked_backward(xb, yb)
        if not math.isfinite(loss):
            raise TrialDiverged(f"non-finite training loss {loss}")
        model.masked_sgd_step(grads, lr)
        total += loss
    return total / batches


def _scopes(model, mode):
    """(label, scope slice) pairs the sampling runs over."""
    if mode == GSC:
        return [("global", slice(0, model.mask.size))]
    return [(f"layer{k}", model.mask.layer_slice(k)) for k in range(model.mask.num_layers)]


def _plan_candidates(p_away, xi2, needed, allowed, k_size, live_avail):
    """Candidate count |S| whose deterministic net removal approximates
    `needed` without ever exceeding `allowed` (the floor guard keeps the
    final target reachable by pruning alone)."""
    if needed <= 0 or allowed <= 0 or live_avail == 0:
        return 0
    rate = max(p_away - xi2, 1e-12)
    s_req = min(math.ceil(min(needed, allowed) / rate), live_avail)
    while s_req > 0:
        net = round_half_up(p_away * s_req) - min(round_half_up(xi2 * s_req), k_size)
        if net <= allowed:
            break
        s_req -= 1
    return s_req


def _drop_in_scope(model, rng, p_away, xi2, needed, allowed, label, scope):
    """Steps 1-5 for one scope; returns the ScopeRecord."""
    bits = model.mask.bits[scope]
    base = scope.start
    support_before = int(np.count_nonzero(bits))
    k_idx = np.flatnonzero(~bits) + base
    s_req = _plan_candidates(p_away, xi2, needed, allowed, k_idx.size, support_before)

    mags = np.concatenate(
        [np.abs(l.weights).ravel() for l in model.net.layers]
    )[scope]
    _, s_idx = select_prune_candidates(mags, bits, s_req)
    s_idx = s_idx + base

    away = sample_subset(rng, s_idx, p_away)
    back = sample_fixed(rng, k_idx, drop_back_count(xi2, s_idx.size, k_idx.size))
    model.apply_mask_updates(away, back)
    return ScopeRecord(
        scope=label,
        support_before=support_before,
        s_size=int(s_idx.size),
        k_size=int(k_idx.size),
        away_count=int(away.size),
        back_count=int(back.size),
        support_after=support_before - int(away.size) + int(back.size),
    )


def prune_step(model, sched_cfg, drop_cfg, rng, variant, t, cursor=None,
               retrain_lr=None, test_data=None):
    """One drop-prune-retrain step at schedule index t (1-based).

    cursor/retrain_lr may be omitted to skip retraining (mask updates only),
    which the property suites use to exercise many steps cheaply.
    """
    p_away, xi2 = variant.probabilities(drop_cfg)
    sched = target_sparsity_at(sched_cfg, t)
    scopes = _scopes(model, sched_cfg.constraint_mode)
    records = []
    for label, scope in scopes:
        total = scope.stop - scope.start
        support_now = int(np.count_nonzero(model.mask.bits[scope]))
        needed = support_now - target_support(total, sched)
        allowed = support_now - target_support(total, sched_cfg.final_sparsity)
        records.append(
            _drop_in_scope(model, rng, p_away, xi2, needed, allowed, label, scope)
        )
    train_loss = math.nan
    if cursor is not None:
        train_loss = _retrain(model, cursor, sched_cfg.retrain_batches_per_step, retrain_lr)
    test_error = math.nan
    if test_data is not None:
        test_error = model.effective_network().evaluate(test_data).test_error
    return StepRecord(
        step=t,
        phase="prune",
        scheduled_sparsity=sched,
        achieved_sparsity=model.sparsity(),
        train_loss=train_loss,
        test_error=test_error,
        scopes=records,
    )


def clamp_to_target(model, sched_cfg):
    """Deterministically prune smallest live weights until every scope sits
    exactly at the target support (no drop back)."""
    records = []
    for label, scope in _scopes(model, sched_cfg.constraint_mode):
        total = scope.stop - scope.start
        bits = model.mask.bits[scope]
        support_now = int(np.count_nonzero(bits))
        needed = support_now - target_support(total, sched_cfg.final_sparsity)
        if needed < 0:
            raise RuntimeError(
                f"{label}: support {support_now} fell below the final target; "
                "overshoot guard failed"
            )
        mags = np.concatenate(
            [np.abs(l.weights).ravel() for l in model.net.layers]
        )[scope]
        _, s_idx = select_prune_candidates(mags, bits, needed)
        s_idx = s_idx + scope.start
        k_size = total - support_now
        model.apply_mask_updates(s_idx, np.empty(0, dtype=np.int64))
        records.append(
            ScopeRecord(
                scope=label,
                support_before=support_now,
                s_size=int(needed),
                k_size=k_size,
                away_count=int(needed),
                back_count=0,
                support_after=support_now - int(needed),
            )
        )
    return records


def run_trial(baseline, train_data, test_data, sched_cfg, drop_cfg, train_cfg,
              variant, trial_id, seed=None, eval_each_step=True):
    """Run one full pruning trial from a trained baseline.

    Loops prune_step over the schedule, clamps to the exact target, then
    fine-tunes with the mask frozen. Aborts (TrialDiverged) on non-finite
    loss. The per-trial seed defaults to trial_seed(base_seed, trial_id);
    SGD shuffling and the drop sampler get independent child streams.
    """
    if isinstance(variant, str):
        variant = PruneVariant(variant)
    if seed is None:
        seed = trial_seed(drop_cfg.base_seed, trial_id)
    ss = np.random.SeedSequence(seed)
    sgd_stream, drop_stream = ss.spawn(2)
    sgd_rng = np.random.Generator(np.random.PCG64(sgd_stream))
    drop_rng = np.random.Generator(np.random.PCG64(drop_stream))

    model = MaskedModel(baseline.copy())
    report = TrialReport(
        trial_id=trial_id,
        variant=variant.name,
        constraint=sched_cfg.constraint_mode,
        target_sparsity=sched_cfg.final_sparsity,
        seed=seed,
    )
    retrain_lr = lr_at_epoch(train_cfg.lr, train_cfg.epochs - 1)
    cursor = _BatchCursor(train_data, train_cfg.batch_size, sgd_rng)

    for t in range(1, sched_cfg.num_prune_steps + 1):
        rec = prune_step(
            model, sched_cfg, drop_cfg, drop_rng, variant, t,
            cursor=cursor, retrain_lr=retrain_lr,
            test_data=test_data if eval_each_step else None,
        )
        report.steps.append(rec)

    clamp_records = clamp_to_target(model, sched_cfg)
    clamp_eval = model.effective_network().evaluate(test_data)
    report.steps.append(
        StepRecord(
            step=sched_cfg.num_prune_steps + 1,
            phase="clamp",
            scheduled_sparsity=sched_cfg.final_sparsity,
            achieved_sparsity=model.sparsity(),
            train_loss=math.nan,
            test_error=clamp_eval.test_error,
            scopes=clamp_records,
        )
    )

    batches_per_epoch = math.ceil(train_data.size / train_cfg.batch_size)
    final_error = clamp_eval.test_error
    for _ in range(sched_cfg.finetune_epochs):
        epoch_loss = _retrain(model, cursor, batches_per_epoch, retrain_lr)
        ev = model.effective_network().evaluate(test_data)
        report.finetune_losses.append(epoch_loss)
        report.finetune_errors.append(ev.test_error)
        final_error = ev.test_error

    for label, scope in _scopes(model, sched_cfg.constraint_mode):
        scope_total = scope.stop - scope.start
        scope_live = int(np.count_nonzero(model.mask.bits[scope]))
        expected = target_support(scope_total, sched_cfg.final_sparsity)
        if scope_live != expected:
            raise RuntimeError(f"{label}: final support {scope_live} != target {expected}")
    total = model.mask.size
    live = model.live_weight_count()
    report.final_test_error = final_error
    report.best_finetune_test_error = min(report.finetune_errors, default=final_error)
    report.final_sparsity = model.sparsity()
    biases = model.net.param_count - total
    report.compression_ratio = total / live
    report.compression_ratio_all_params = (total + biases) / (live + biases)
    report.model = model
    return report


_WORKER_CTX = {}


def _init_worker(baseline, train_data, test_data, sched_cfg, drop_cfg,
                 train_cfg, variant_name):
    # Shared per-process state so the datasets cross the process boundary once.
    _WORKER_CTX.update(
        baseline=baseline, train_data=train_data, test_data=test_data,
        sched_cfg=sched_cfg, drop_cfg=drop_cfg, train_cfg=train_cfg,
        variant=PruneVariant(variant_name),
    )


def _trial_worker(task):
    trial_id, seed, keep_model = task
    c = _WORKER_CTX
    try:
        rep = run_trial(c["baseline"], c["train_data"], c["test_data"],
                        c["sched_cfg"], c["drop_cfg"], c["train_cfg"],
                        c["variant"], trial_id, seed=seed)
        if not keep_model:
            rep.model = None
        return rep
    except TrialDiverged as exc:
        return (trial_id, str(exc))


def summarize(reports, sparsity, variant, num_aborted=0):
    """Best/mean/std (population std) of final test errors across trials."""
    finals = np.array([r.final_test_error for r in reports], dtype=np.float64)
    if finals.size == 0:
        raise ValueError("no completed trials to summarize")
    return ExperimentSummary(
        sparsity=sparsity,
        variant=variant if isinstance(variant, str) else variant.name,
        best=float(finals.min()),
        mean=float(finals.mean()),
        std=float(finals.std()),
        num_trials=int(finals.size),
        num_aborted=num_aborted,
    )


def run_experiment(baseline, train_data, test_data, sched_cfg, drop_cfg,
                   train_cfg, variant, num_trials, jobs=1, trial_seeds=None):
    """Independent seeded trials aggregated into an ExperimentSummary.

    Returns (summary, completed_reports, aborted) where aborted is a list of
    (trial_id, diagnostic) for trials that hit a non-finite loss; these are
    excluded from the aggregates.
    """
    if num_trials < 1:
        raise ValueError("num_trials must be >= 1")
    if isinstance(variant, str):
        variant = PruneVariant(variant)
    if trial_seeds is None:
        trial_seeds = [trial_seed(drop_cfg.base_seed, i) for i in range(num_trials)]
    elif len(trial_seeds) != num_trials:
        raise ValueError("trial_seeds must have one entry per trial")

    ctx = (baseline, train_data, test_data, sched_cfg, drop_cfg, train_cfg,
           variant.name)
    tasks = [(i, trial_seeds[i], jobs <= 1) for i in range(num_trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=ctx) as pool:
            results = list(pool.map(_trial_worker, tasks))
    else:
        _init_worker(*ctx)
        results = [_trial_worker(t) for t in tasks]

    reports, aborted = [], []
    for res in results:
        if isinstance(res, TrialReport):
            reports.append(res)
        else:
            aborted.append(res)
    summary = summarize(reports, sched_cfg.final_sparsity, variant,
                        num_aborted=len(aborted))
    return summary, reports, aborted


def train_baseline(net, train_data, test_data, cfg):
    """Plain dense SGD with per-epoch shuffling and the stepped lr policy.

    Returns a history list of (epoch, lr, mean_train_loss, test_error).
    """
    rng = make_rng(cfg.seed)
    cursor = _BatchCursor(train_data, cfg.batch_size, rng)
    batches_per_epoch = math.ceil(train_data.size / cfg.batch_size)
    history = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg.lr, epoch)
        total = 0.0
        for _ in range(batches_per_epoch):
            xb, yb = cursor.next_batch()
            grads, loss = net.backward(xb, yb)
            if not math.isfinite(loss):
                raise TrialDiverged(f"non-finite baseline loss {loss} at epoch {epoch}")
            net.sgd_step(grads, lr)
            total += loss
        ev = net.evaluate(test_data)
        history.append((epoch, lr, total / batches_per_epoch, ev.test_error))
    return history
