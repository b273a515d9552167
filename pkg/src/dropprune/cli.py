"""Command-line front end: train, prune, ist, mwvc, report.

Run configuration comes from an optional key=value config file plus flag
overrides (flags win). Unknown config keys are rejected. Exit codes:
0 success, 1 usage or config error, 2 runtime failure.
"""

import argparse
import os
import sys
from types import SimpleNamespace

import numpy as np

from dropprune import data as data_io
from dropprune.engine import PruneVariant, run_experiment, train_baseline
from dropprune.nn import Network, TrainConfig
from dropprune.ist import (
    ISTConfig,
    default_step_size,
    evaluate_objective,
    generate_instance,
    ist_iterate,
    support_f1,
)
from dropprune.masking import MaskedModel, load_checkpoint, save_checkpoint
from dropprune.mwvc import MwvcConfig, load_graph, solve_exact, solve_greedy, solve_memory
from dropprune.reporting import (
    find_trial_csvs,
    recompute_summaries,
    trial_csv_name,
    write_summary_csv,
    write_trial_csv,
)
from dropprune.sampling import DropConfig
from dropprune.schedule import ScheduleConfig


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _parse_intlist(text):
    return [int(tok) for tok in str(text).split(",") if tok != ""]


def _parse_floatlist(text):
    return [float(tok) for tok in str(text).split(",") if tok != ""]


_CASTS = {
    "str": str,
    "int": int,
    "float": float,
    "bool": lambda v: str(v).lower() in ("1", "true", "yes"),
    "intlist": _parse_intlist,
    "floatlist": _parse_floatlist,
}

_COMMON = {
    "dataset": ("str", "mnist"),
    "data_dir": ("str", ""),
    "hidden_dims": ("intlist", "300,100"),
    "lr": ("float", "0.1"),
    "batch_size": ("int", "100"),
    "epochs": ("int", "18"),
    "seed": ("int", "0"),
    "out": ("str", "runs"),
    "checkpoint": ("str", ""),
    "blob_classes": ("int", "3"),
    "blob_per_class": ("int", "500"),
    "blob_dim": ("int", "10"),
    "blob_spread": ("float", "1.0"),
}

_SCHEMAS = {
    "train": dict(_COMMON, fetch=("bool", "false")),
    "prune": dict(
        _COMMON,
        sparsity=("floatlist", "0.9"),
        prune_steps=("int", "20"),
        retrain_batches=("int", "300"),
        constraint=("str", "gsc"),
        finetune_epochs=("int", "9"),
        xi1=("float", "0.9"),
        xi2=("float", "0.08"),
        variant=("str", "dp"),
        trials=("int", "10"),
        jobs=("int", "1"),
    ),
    "ist": {
        "ist_m": ("int", "40"),
        "ist_n": ("int", "12"),
        "ist_k": ("int", "3"),
        "ist_noise": ("float", "0.01"),
        "ist_lambda": ("float", "0.05"),
        "ist_step": ("float", "0"),
        "ist_iters": ("int", "300"),
        "mode": ("str", "deterministic"),
        "xi1": ("float", "0.9"),
        "xi2": ("float", "0.08"),
        "seed": ("int", "0"),
        "out": ("str", "runs"),
    },
    "mwvc": {
        "graph": ("str", ""),
        "mu": ("float", "0.3"),
        "memory_depth": ("int", "4"),
        "rounds": ("int", "200"),
        "rho": ("float", "0"),
        "restarts": ("int", "1"),
        "seed": ("int", "0"),
    },
    "report": {"out": ("str", "runs")},
}


def _read_config_file(path):
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            pairs[key.strip()] = value.strip()
    return pairs


def _load_config(command, args):
    schema = _SCHEMAS[command]
    raw = {key: default for key, (_, default) in schema.items()}
    if getattr(args, "config", None):
        for key, value in _read_config_file(args.config).items():
            if key not in schema:
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            raw[key] = value
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag
    cfg = {}
    for key, (kind, _) in schema.items():
        try:
            cfg[key] = _CASTS[kind](raw[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
    return SimpleNamespace(**cfg)


def _load_datasets(cfg):
    if cfg.dataset == "mnist":
        directory = data_io.data_dir(cfg.data_dir or None)
        return (data_io.load_mnist(directory, "train"),
                data_io.load_mnist(directory, "test"))
    if cfg.dataset == "blobs":
        full = data_io.synth_blobs(cfg.seed, cfg.blob_classes, cfg.blob_per_class,
                                   cfg.blob_dim, cfg.blob_spread)
        cut = max(1, int(0.8 * full.size))
        train = data_io.Dataset(full.inputs[:cut], full.labels[:cut], "train")
        test = data_io.Dataset(full.inputs[cut:], full.labels[cut:], "test")
        return train, test
    raise ConfigError(f"unknown dataset {cfg.dataset!r}")


def _checkpoint_path(cfg):
    return cfg.checkpoint or os.path.join(cfg.out, "baseline.ckpt")


def cmd_train(cfg):
    if cfg.dataset == "mnist" and cfg.fetch:
        directory = data_io.data_dir(cfg.data_dir or None)
        print(f"fetching MNIST into {directory} ...")
        data_io.download_mnist(directory)
    train, test = _load_datasets(cfg)
    classes = int(train.labels.max()) + 1
    net = Network.mlp([train.dim] + cfg.hidden_dims + [classes], seed=cfg.seed)
    tc = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                     seed=cfg.seed)
    history = train_baseline(net, train, test, tc)
    for epoch, lr, loss, err in history:
        print(f"epoch {epoch:3d}  lr {lr:.4g}  train_loss {loss:.4f}  test_error {err:.4%}")
    os.makedirs(cfg.out, exist_ok=True)
    path = _checkpoint_path(cfg)
    save_checkpoint(MaskedModel(net), path)
    print(f"baseline test error: {history[-1][3]:.4%}")
    print(f"checkpoint written to {path}")
    return 0


def cmd_prune(cfg):
    train, test = _load_datasets(cfg)
    path = _checkpoint_path(cfg)
    model = load_checkpoint(path)
    baseline = model.net
    if baseline.layers[0].fan_in != train.dim:
        raise RuntimeError(
            f"checkpoint expects inputs of width {baseline.layers[0].fan_in}, "
            f"dataset has {train.dim}"
        )
    if int(train.labels.max()) >= baseline.layers[-1].fan_out:
        raise RuntimeError("checkpoint output width too small for dataset labels")
    variant = PruneVariant(cfg.variant)
    drop = DropConfig(xi1=cfg.xi1, xi2=cfg.xi2, base_seed=cfg.seed)
    tc = TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, epochs=cfg.epochs,
                     seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    summaries = []
    for sparsity in cfg.sparsity:
        sched = ScheduleConfig(
            final_sparsity=sparsity,
            num_prune_steps=cfg.prune_steps,
            retrain_batches_per_step=cfg.retrain_batches,
            constraint_mode=cfg.constraint,
            finetune_epochs=cfg.finetune_epochs,
        )
        summary, reports, aborted = run_experiment(
            baseline, train, test, sched, drop, tc, variant,
            num_trials=cfg.trials, jobs=cfg.jobs,
        )
        for rep in reports:
            write_trial_csv(
                rep, os.path.join(cfg.out, trial_csv_name(rep.variant, sparsity, rep.trial_id))
            )
        for trial_id, msg in aborted:
            print(f"warning: trial {trial_id} aborted: {msg}", file=sys.stderr)
        summaries.append(summary)
        print(
            f"sparsity {sparsity:g} variant {summary.variant}: "
            f"best {summary.best:.4%} mean {summary.mean:.4%} "
            f"std {summary.std:.4%} over {summary.num_trials} trials"
        )
    write_summary_csv(summaries, os.path.join(cfg.out, "summary.csv"))
    return 0


def cmd_ist(cfg):
    prob, x_true = generate_instance(cfg.seed, cfg.ist_m, cfg.ist_n, cfg.ist_k,
                                     cfg.ist_noise, cfg.ist_lambda)
    step = cfg.ist_step if cfg.ist_step > 0 else default_step_size(prob.a)
    mode = "stochastic" if cfg.mode.startswith("stoch") else "deterministic"
    ic = ISTConfig(step_size=step, max_iters=cfg.ist_iters, mode=mode,
                   xi1=cfg.xi1, xi2=cfg.xi2, seed=cfg.seed)
    trace = ist_iterate(prob, ic, np.zeros(prob.n))
    os.makedirs(cfg.out, exist_ok=True)
    out_path = os.path.join(cfg.out, f"ist_{mode}_seed{cfg.seed}.csv")
    with open(out_path, "w", newline="") as fh:
        fh.write("iter,objective,nnz,support_f1\n")
        for it, theta in enumerate(trace):
            fh.write(
                f"{it},{evaluate_objective(prob, theta)!r},"
                f"{int(np.count_nonzero(theta))},{support_f1(theta, x_true)!r}\n"
            )
    final = trace[-1]
    resid = float(np.linalg.norm(prob.a @ final - prob.b))
    print(
        f"ist {mode}: final objective {evaluate_objective(prob, final):.6g}, "
        f"nnz {int(np.count_nonzero(final))}, residual {resid:.6g}"
    )
    print(f"trajectory written to {out_path}")
    return 0


def cmd_mwvc(cfg):
    if not cfg.graph:
        raise ConfigError("mwvc requires --graph FILE")
    graph = load_graph(cfg.graph)
    mc = MwvcConfig(mutation_prob=cfg.mu, memory_depth=cfg.memory_depth,
                    max_rounds=cfg.rounds, rho=cfg.rho, seed=cfg.seed)
    greedy_state, greedy_cost = solve_greedy(graph, mc)
    if cfg.mu > 0:
        state, cost = solve_memory(graph, mc, restarts=cfg.restarts)
    else:
        state, cost = greedy_state, greedy_cost
    cover = np.flatnonzero(state.bits).tolist()
    print(f"cover: {cover}")
    print(f"cost: {cost:g} (greedy best response: {greedy_cost:g})")
    if graph.num_vertices <= 24:
        _, opt_cost = solve_exact(graph)
        gap = cost - opt_cost
        print(f"optimum: {opt_cost:g}  gap: {gap:g}")
    return 0


def cmd_report(cfg):
    paths = find_trial_csvs(cfg.out)
    if not paths:
        raise RuntimeError(f"no trial CSVs found under {cfg.out}")
    summaries = recompute_summaries(paths)
    out_path = os.path.join(cfg.out, "summary_recomputed.csv")
    write_summary_csv(summaries, out_path)
    for s in summaries:
        print(
            f"sparsity {s.sparsity:g} variant {s.variant}: best {s.best:.4%} "
            f"mean {s.mean:.4%} std {s.std:.4%} over {s.num_trials} trials"
        )
    print(f"recomputed summary written to {out_path}")
    return 0


def _add_flags(sub, command):
    sub.add_argument("--config", help="key=value config file")
    schema = _SCHEMAS[command]
    for key in schema:
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)


def _build_parser():
    parser = _Parser(prog="dropprune", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, func in [("train", cmd_train), ("prune", cmd_prune),
                          ("ist", cmd_ist), ("mwvc", cmd_mwvc),
                          ("report", cmd_report)]:
        sub = subs.add_parser(command)
        _add_flags(sub, command)
        sub.set_defaults(func=func, command=command)
    return parser


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
        cfg = _load_config(args.command, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures: missing files, diverged trials
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
