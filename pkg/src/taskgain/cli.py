"""Command-line interface.

Subcommands cover the full workflow: ``select`` ranks and picks training
tasks, ``train`` also optimizes the graph and writes a checkpoint,
``evaluate`` scores a checkpoint on the held-out set, ``compare`` sweeps
methods over seeds with summary statistics and bootstrap intervals,
``bench-reuse`` reports forward-call accounting, ``sensitivity`` runs the
stability suites, and ``stats`` summarizes a plain list of numbers.

Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
failures (including sweeps where every run failed).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError
from .experiment import (
    METHODS,
    compare_methods,
    select_once,
    sensitivity_suite,
    train_once,
    _load_pools,
)
from .gain import write_records
from .graph import load_checkpoint, save_checkpoint
from .seeding import derive_rng
from .simulate import ForwardModel, default_profiles
from .stats import bench_reuse, bootstrap_ci, summary_stats

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

_EVAL_TAG = 17  # matches the experiment module's evaluation phase tag


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_tsv(path: Path, columns, rows) -> None:
    lines = ["\t".join(columns)]
    lines.extend("\t".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_selection(out: Path, selected, result) -> None:
    (out / "selected.txt").write_text("\n".join(selected) + "\n")
    if result is not None:
        write_records(result.records, out / "records.tsv")
        _write_tsv(
            out / "audit.tsv",
            ("round", "task_id", "kl", "forward_calls"),
            [(r.round, r.task_id, r.kl, r.forward_calls) for r in result.audit],
        )


def _cmd_select(args) -> int:
    cfg = load_config(args.config, method=args.method, seed=args.seed)
    out = _out_dir(args)
    outcome = select_once(cfg)
    _write_selection(out, outcome.selected, outcome.result)
    print(f"selected {len(outcome.selected)} tasks ({outcome.select_calls} forward calls)")
    for task_id in outcome.selected:
        print(task_id)
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config, method=args.method, seed=args.seed)
    out = _out_dir(args)
    outcome = train_once(cfg)
    _write_selection(out, outcome.selection.selected, outcome.selection.result)
    save_checkpoint(outcome.logits, out / "checkpoint.txt")
    _write_tsv(
        out / "trace.tsv",
        ("step", "task_id", "score", "grad_norm"),
        [(r.step, r.task_id, r.score, r.grad_norm) for r in outcome.trace],
    )
    print(
        f"trained on {len(outcome.selection.selected)} tasks: "
        f"{outcome.selection.select_calls} selection calls, "
        f"{outcome.train_calls} training calls"
    )
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out = _out_dir(args)
    logits = load_checkpoint(args.checkpoint)
    if logits.n_agents != cfg.sim.n_agents:
        raise ConfigError(
            f"checkpoint is for {logits.n_agents} agents, config says {cfg.sim.n_agents}"
        )
    _, eval_pool = _load_pools(cfg, run=0)
    model = ForwardModel(default_profiles(cfg.sim, cfg.reliability), cfg.sim)
    rng = derive_rng(cfg.seed, 0, _EVAL_TAG)
    rows = []
    for task in eval_pool:
        score = float(np.mean([model.score(task, logits, rng) for _ in range(cfg.eval_masks)]))
        rows.append((task.id, score))
    _write_tsv(out / "eval.tsv", ("task_id", "score"), rows)
    overall = float(np.mean([s for _, s in rows]))
    print(f"mean score over {len(rows)} tasks x {cfg.eval_masks} masks: {overall:.6f}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    if not methods:
        raise ConfigError("no methods given")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    cfg = load_config(args.config, seed=args.seed, runs=args.runs)
    out = _out_dir(args)
    sweep = compare_methods(cfg, methods)

    result_rows = []
    summary_rows = []
    for method, results in sweep.items():
        for r in results:
            result_rows.append(
                (
                    r.method,
                    r.run,
                    r.eval_score,
                    r.select_calls,
                    r.train_calls,
                    r.eval_calls,
                    r.fake_edge_prob_start,
                    r.fake_edge_prob_end,
                    r.error or "",
                )
            )
        scores = [r.eval_score for r in results if not r.failed]
        if scores:
            s = summary_stats(scores)
            summary_rows.append((method, s.n, s.mean, s.std, s.q1, s.worst25))
        else:
            summary_rows.append((method, 0, float("nan"), float("nan"), float("nan"), float("nan")))
    _write_tsv(
        out / "results.tsv",
        (
            "method",
            "run",
            "eval_score",
            "select_calls",
            "train_calls",
            "eval_calls",
            "fake_edge_prob_start",
            "fake_edge_prob_end",
            "error",
        ),
        result_rows,
    )
    _write_tsv(
        out / "summary.tsv",
        ("method", "n_ok", "mean", "std", "q1", "worst25"),
        summary_rows,
    )

    baseline_rows = []
    ok_scores = {
        m: [r.eval_score for r in rs if not r.failed] for m, rs in sweep.items()
    }
    reference = methods[0]
    for other in methods[1:]:
        if not ok_scores[reference] or not ok_scores[other]:
            continue
        for metric in ("mean", "worst25"):
            low, high, observed = bootstrap_ci(
                ok_scores[reference], ok_scores[other], metric=metric, seed=cfg.seed
            )
            baseline_rows.append((reference, other, metric, low, high, observed))
    if baseline_rows:
        _write_tsv(
            out / "bootstrap.tsv",
            ("method_a", "method_b", "metric", "ci_low", "ci_high", "observed"),
            baseline_rows,
        )

    for row in summary_rows:
        print("\t".join(_fmt(v) for v in row))
    if all(all(r.failed for r in rs) for rs in sweep.values()):
        print("all runs failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_bench_reuse(args) -> int:
    report = bench_reuse(args.tasks, args.subset, args.ensemble)
    out = _out_dir(args)
    columns = (
        "n_tasks",
        "subset_size",
        "ensemble_size",
        "measured_calls",
        "naive_calls",
        "reduction_factor",
        "enumerated",
    )
    row = (
        report.n_tasks,
        report.subset_size,
        report.ensemble_size,
        report.measured_calls,
        report.naive_calls,
        report.reduction_factor,
        report.enumerated,
    )
    _write_tsv(out / "reuse.tsv", columns, [row])
    print(
        f"measured {report.measured_calls} calls vs naive {report.naive_calls} "
        f"(reduction factor {report.reduction_factor}, "
        f"{'enumerated' if report.enumerated else 'analytic'})"
    )
    return EXIT_OK


def _cmd_sensitivity(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    out = _out_dir(args)
    rows = sensitivity_suite(args.kind, cfg, reps=args.reps)
    _write_tsv(
        out / "sensitivity.tsv",
        ("label", "mean_overlap", "std_overlap"),
        [(r.label, r.mean_overlap, r.std_overlap) for r in rows],
    )
    for r in rows:
        print(f"{r.label}\t{r.mean_overlap:.4f}\t{r.std_overlap:.4f}")
    return EXIT_OK


def _cmd_stats(args) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise ConfigError(f"input file not found: {path}")
    values = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ConfigError(f"not a number in {path}: {line!r}") from None
    if not values:
        raise ConfigError(f"no values in {path}")
    s = summary_stats(values)
    header = ("n", "mean", "std", "q1", "worst25")
    row = (s.n, s.mean, s.std, s.q1, s.worst25)
    print("\t".join(header))
    print("\t".join(_fmt(v) for v in row))
    if args.out is not None:
        out = _out_dir(args)
        _write_tsv(out / "stats.tsv", header, [row])
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taskgain",
        description="Active task selection and graph training toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="taskgain-out", out_required=True):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        if out_required:
            p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("select", help="pick training tasks, write ids and audit log")
    common(p)
    p.add_argument("--method", default=None, help=f"selection method, one of {METHODS}")
    p.set_defaults(fn=_cmd_select)

    p = sub.add_parser("train", help="select tasks, train the graph, write a checkpoint")
    common(p)
    p.add_argument("--method", default=None, help=f"selection method, one of {METHODS}")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the held-out task set")
    common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file to evaluate")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("compare", help="sweep methods over seeds, summarize, bootstrap")
    common(p)
    p.add_argument(
        "--method",
        default="active_eki,random",
        help="comma-separated methods; first is the bootstrap reference",
    )
    p.add_argument("--runs", type=int, default=None, help="runs per method override")
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("bench-reuse", help="forward-call accounting for subset reuse")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--subset", type=int, required=True)
    p.add_argument("--ensemble", type=int, required=True)
    p.add_argument("--out", default="taskgain-out", help="output directory")
    p.set_defaults(fn=_cmd_bench_reuse)

    p = sub.add_parser("sensitivity", help="ranking-stability suites")
    common(p)
    p.add_argument("--kind", choices=("ensemble_size", "eki_steps"), required=True)
    p.add_argument("--reps", type=int, default=9)
    p.set_defaults(fn=_cmd_sensitivity)

    p = sub.add_parser("stats", help="summarize a file of numbers (one per line)")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="optional output directory")
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
