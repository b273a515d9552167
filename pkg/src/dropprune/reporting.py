"""CSV emission for trials and experiment summaries.

Column sets are fixed. Floats are written with repr (shortest round-trip),
NaN as an empty cell, so re-running with the same config and seed produces
byte-identical files.
"""

import csv
import math
import os

from dropprune.engine import ExperimentSummary, summarize

TRIAL_COLUMNS = [
    "trial_id", "variant", "constraint", "target_sparsity", "phase", "step",
    "scheduled_sparsity", "achieved_sparsity", "train_loss", "test_error",
    "s_size", "k_size", "away_count", "back_count", "support_size",
    "compression_ratio", "compression_ratio_all_params",
    "best_finetune_test_error",
]

SUMMARY_COLUMNS = [
    "sparsity", "variant", "best", "mean", "std", "num_trials", "num_aborted",
]


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def trial_rows(report):
    """Flatten a TrialReport into the fixed CSV schema."""
    meta = [report.trial_id, report.variant, report.constraint,
            report.target_sparsity]
    rows = []
    for rec in report.steps:
        agg = lambda attr: sum(getattr(s, attr) for s in rec.scopes)
        rows.append(meta + [
            rec.phase, rec.step, rec.scheduled_sparsity, rec.achieved_sparsity,
            rec.train_loss, rec.test_error, agg("s_size"), agg("k_size"),
            agg("away_count"), agg("back_count"), agg("support_after"),
            None, None, None,
        ])
    for epoch, (loss, err) in enumerate(
        zip(report.finetune_losses, report.finetune_errors), start=1
    ):
        rows.append(meta + [
            "finetune", epoch, None, report.final_sparsity, loss, err,
            None, None, None, None, None, None, None, None,
        ])
    rows.append(meta + [
        "final", None, None, report.final_sparsity, None,
        report.final_test_error, None, None, None, None, None,
        report.compression_ratio, report.compression_ratio_all_params,
        report.best_finetune_test_error,
    ])
    return rows


def write_trial_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_COLUMNS)
        for row in trial_rows(report):
            writer.writerow([_cell(x) for x in row])


def trial_csv_name(variant, sparsity, trial_id):
    return f"trial_{variant}_s{sparsity:g}_{trial_id:03d}.csv"


def write_summary_csv(summaries, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([_cell(x) for x in [
                s.sparsity, s.variant, s.best, s.mean, s.std,
                s.num_trials, s.num_aborted,
            ]])


def read_trial_finals(paths):
    """Final rows of stored per-trial CSVs: (variant, target_sparsity, test_error)."""
    finals = []
    for path in paths:
        with open(path, "r", newline="") as fh:
            for row in csv.DictReader(fh):
                if row["phase"] == "final":
                    finals.append((
                        row["variant"],
                        float(row["target_sparsity"]),
                        float(row["test_error"]),
                    ))
    return finals


def recompute_summaries(paths):
    """Rebuild summary rows from stored per-trial CSVs (the recompute oracle)."""

    class _Final:
        def __init__(self, err):
            self.final_test_error = err

    groups = {}
    for variant, sparsity, err in read_trial_finals(paths):
        groups.setdefault((sparsity, variant), []).append(_Final(err))
    return [
        summarize(reps, sparsity, variant)
        for (sparsity, variant), reps in sorted(groups.items())
    ]


def find_trial_csvs(directory):
    return sorted(
        os.path.join(directory, name)
        for name in os.listdir(directory)
        if name.startswith("trial_") and name.endswith(".csv")
    )
