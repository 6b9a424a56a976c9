"""Command-line interface.

Subcommands:
  run         execute a configured experiment, writing metrics and checkpoints
  plan        print the decomposition plan for a model and budget
  memcost     per-block memory-cost table as CSV
  partition   export client shards and the label-distribution scatter
  similarity  per-block CKA/CCA between two checkpoints on a probe set
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .analysis import representation_similarity
from .decomposition import plan_for_graph
from .errors import FedepthError
from .experiment import (
    build_dataset,
    build_experiment,
    build_graph,
    load_config,
    merge_config,
    run_experiment,
)
from .memory import estimate_block_cost, estimate_training_unit_cost
from .nn.checkpoint import load_weights
from .nn.graph import BlockGraph
from .partition import export_shards, label_distribution_rows


def _add_config_args(p):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=None, help="override config seed")


def _load(args):
    cfg = load_config(args.config, args.override)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _cmd_run(args):
    cfg = _load(args)
    if args.rounds is not None:
        cfg["federation"]["rounds"] = args.rounds
    summary = run_experiment(cfg, out_dir=args.out_dir, resume=args.resume)
    acc = summary["final_accuracy"]
    print(f"rounds:         {summary['rounds']}")
    print(f"final accuracy: {acc:.4f}" if acc is not None else "final accuracy: n/a")
    if summary["final_fairness"] is not None:
        print(f"final fairness: {summary['final_fairness']:.4f}")
    if args.out_dir:
        print(f"artifacts in:   {args.out_dir}")
    return 0


def _graph_from_args(args):
    if args.model_spec:
        return BlockGraph.load(args.model_spec)
    cfg = load_config(args.config, args.override or [])
    return build_graph(cfg)


def _cmd_plan(args):
    graph = _graph_from_args(args)
    plan = plan_for_graph(graph, args.budget_mb, args.batch, args.bytes)
    text = plan.describe()
    for i, span in enumerate(plan.group_spans, 1):
        cost = estimate_training_unit_cost(graph, span, args.batch, args.bytes)
        text += f"\n  unit {i} cost: {cost.total_mb:.3f} MB"
    print(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    return 0


def _cmd_memcost(args):
    graph = _graph_from_args(args)
    rows = []
    for j in range(graph.n_blocks):
        cost = estimate_block_cost(graph, j, args.batch, args.bytes)
        unit = estimate_training_unit_cost(graph, (j, j + 1), args.batch, args.bytes)
        rows.append(
            {
                "block": j + 1,
                "params_mb": repr(cost.params_mb),
                "activations_mb": repr(cost.activations_mb),
                "grads_mb": repr(cost.grads_mb),
                "total_mb": repr(cost.total_mb),
                "unit_total_mb": repr(unit.total_mb),
            }
        )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 0


def _cmd_partition(args):
    cfg = _load(args)
    exp = build_experiment(cfg)
    shards = exp["shards"]
    with open(args.out, "w") as f:
        f.write(export_shards(shards))
    if args.scatter:
        with open(args.scatter, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["client", "class", "count"])
            writer.writerows(label_distribution_rows(shards))
    sizes = [s.size for s in shards]
    print(f"{len(shards)} shards, sizes min/mean/max: {min(sizes)}/{np.mean(sizes):.1f}/{max(sizes)}")
    return 0


def _cmd_similarity(args):
    cfg = load_config(args.config, args.override or [])
    graph = build_graph(cfg)
    weights_a = load_weights(args.weights_a, graph)
    weights_b = load_weights(args.weights_b, graph)
    (_, _), (test_x, _) = build_dataset(cfg)
    probe = test_x[: args.probe_samples]
    rows = representation_similarity(graph, weights_a, weights_b, probe)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["block", "cka", "cca"])
        for row in rows:
            writer.writerow(
                [row["block"], repr(row["cka"]), "" if row["cca"] is None else repr(row["cca"])]
            )
    finally:
        if args.out:
            out.close()
    return 0


def make_parser():
    parser = argparse.ArgumentParser(prog="fedepth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a configured experiment")
    _add_config_args(p)
    p.add_argument("--out-dir", default=None, help="artifact directory")
    p.add_argument("--rounds", type=int, default=None, help="override round count")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=_cmd_run)

    for name, fn, help_text in (
        ("plan", _cmd_plan, "print the decomposition plan for a budget"),
        ("memcost", _cmd_memcost, "per-block memory-cost table"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--model-spec", default=None, help="graph spec JSON file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--batch", type=int, default=32)
        p.add_argument("--bytes", type=int, default=4)
        p.add_argument("--out", default=None)
        if name == "plan":
            p.add_argument("--budget-mb", type=float, required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("partition", help="export client shards")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="shards JSON path")
    p.add_argument("--scatter", default=None, help="label-distribution CSV path")
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("similarity", help="compare two checkpoints")
    p.add_argument("--config", required=True, help="config providing the probe dataset")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--weights-a", required=True)
    p.add_argument("--weights-b", required=True)
    p.add_argument("--probe-samples", type=int, default=512)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_similarity)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) in ("plan", "memcost") and not (
        args.config or args.model_spec
    ):
        parser.error("plan/memcost need --config or --model-spec")
    try:
        return args.func(args)
    except FedepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
