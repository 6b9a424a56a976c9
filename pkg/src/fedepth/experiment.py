"""Config-driven experiment assembly and execution.

A run is fully described by a JSON config (seed, dataset, model, partition,
federation, training, memory, method, budgets). All derived randomness
comes from the single seed, so identical configs produce identical
artifacts byte for byte.
"""

from __future__ import annotations

import copy
import csv
import json
import os
import re

import numpy as np

from .decomposition import plan_for_graph, whole_model_plan
from .errors import BudgetError, ConfigError
from .federation import ClientState, FederationConfig, run
from .memory import MemoryBudget, estimate_training_unit_cost
from .models import build_preset
from .nn.checkpoint import load_weights, save_weights
from .nn.graph import BlockGraph, width_scale
from .nn.network import init_weights
from .partition import PartitionSpec, load_dataset, partition
from .trainer import ClientUpdateConfig, MKDConfig

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "dataset": {
        "name": "synthetic-gaussian-mixture",
        "classes": 4,
        "dim": 32,
        "samples": 4000,
        "test_samples": 1000,
        "components": 3,
        "separation": 3.0,
        "noise": 1.0,
    },
    "model": {"preset": "mlp", "options": {}},
    "partition": {"family": "dirichlet-balanced", "lam": 1.0},
    "federation": {
        "clients": 20,
        "rounds": 50,
        "participation": 0.5,
        "drop_tolerant": False,
        "eval_every": 1,
        "cosine": True,
    },
    "training": {
        "local_epochs": 10,
        "batch_size": 32,
        "lr": 0.1,
        "momentum": 0.0,
        "head_strategy": "skip-connection",
        "buffer_activations": False,
    },
    "memory": {"batch_size": 32, "bytes_per_element": 4},
    "method": {"kind": "fedepth", "width": 1.0},
    "budgets": [{"force_groups": 1, "fraction": 1.0, "tag": "full"}],
    "checkpoint_every": 0,
}

_BUDGET_KEYS = {
    "capacity_mb",
    "force_groups",
    "force_skip",
    "mkd_models",
    "count",
    "fraction",
    "tag",
}


def _check_keys(section, given, allowed):
    for key in given:
        if key not in allowed:
            raise ConfigError(f"unknown config key {section}.{key}")


def merge_config(overrides_doc):
    """Defaults overlaid with the given document; unknown keys rejected."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    _check_keys("", overrides_doc, set(cfg))
    for key, value in overrides_doc.items():
        if isinstance(cfg.get(key), dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key} must be a mapping")
            if key not in ("dataset", "model"):
                _check_keys(key, value, set(cfg[key]))
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    if not isinstance(cfg["budgets"], list) or not cfg["budgets"]:
        raise ConfigError("config key budgets must be a nonempty list")
    for i, entry in enumerate(cfg["budgets"]):
        _check_keys(f"budgets[{i}]", entry, _BUDGET_KEYS)
    if cfg["method"].get("kind") not in ("fedepth", "fedavg"):
        raise ConfigError("config key method.kind must be 'fedepth' or 'fedavg'")
    return cfg


def load_config(path, overrides=()):
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    cfg = merge_config(doc)
    return apply_overrides(cfg, overrides)


def apply_overrides(cfg, overrides):
    """Apply dotted key=value overrides; values parse as JSON fragments
    with bare-string fallback."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            m = re.fullmatch(r"(\w+)\[(\d+)\]", part)
            if m:
                node = node[m.group(1)][int(m.group(2))]
                continue
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key {dotted}")
            node = node[part]
        leaf = parts[-1]
        if isinstance(node, dict) and leaf not in node and dotted.split(".")[0] not in (
            "dataset",
            "model",
        ):
            raise ConfigError(f"unknown config key {dotted}")
        node[leaf] = value
    return cfg


def build_graph(cfg):
    model = cfg["model"]
    if "spec_file" in model:
        graph = BlockGraph.load(model["spec_file"])
    else:
        options = dict(model.get("options", {}))
        if model.get("preset", "mlp") == "mlp":
            options.setdefault("classes", cfg["dataset"].get("classes", 4))
            options.setdefault("input_dim", cfg["dataset"].get("dim", 32))
        graph = build_preset(model.get("preset", "mlp"), **options)
    if cfg["method"]["kind"] == "fedavg":
        graph = width_scale(graph, float(cfg["method"].get("width", 1.0)))
    return graph


def build_dataset(cfg):
    ds = dict(cfg["dataset"])
    name = ds.pop("name")
    seed = cfg["seed"]
    if name == "synthetic-gaussian-mixture":
        test_samples = ds.pop("test_samples", 1000)
        try:
            train = load_dataset(name, {**ds, "seed": seed, "split": "train"})
            test = load_dataset(
                name, {**ds, "samples": test_samples, "seed": seed, "split": "test"}
            )
        except TypeError as exc:
            raise ConfigError(f"dataset: {exc}") from exc
        return train, test
    if name == "small-image-set":
        test_path = ds.pop("test_path", None)
        train = load_dataset(name, {"path": ds["path"]})
        test = load_dataset(name, {"path": test_path}) if test_path else train
        return train, test
    raise ConfigError(f"unknown dataset name {name!r}")


def _span_cost(graph, span, batch, bpe):
    return estimate_training_unit_cost(graph, span, batch, bpe).total_mb


def budget_for_group_count(graph, target_groups, batch, bytes_per_element=4):
    """Tightest capacity whose greedy plan has exactly target_groups units
    and no skipped prefix."""
    n = graph.n_blocks
    candidates = sorted(
        {
            _span_cost(graph, (a, b), batch, bytes_per_element)
            for a in range(n)
            for b in range(a + 1, n + 1)
        }
    )
    for cap in candidates:
        try:
            plan = plan_for_graph(graph, cap, batch, bytes_per_element)
        except BudgetError:
            continue
        if plan.skipped_prefix == 0 and plan.group_count == target_groups:
            return cap
    raise ConfigError(
        f"budgets: no capacity yields {target_groups} groups for this model"
    )


def budget_forcing_skip(graph, skip, batch, bytes_per_element=4):
    """Tightest capacity under which exactly `skip` leading blocks are
    unaffordable alone while every later block still fits."""
    singles = [
        _span_cost(graph, (j, j + 1), batch, bytes_per_element)
        for j in range(graph.n_blocks)
    ]
    cap = max(singles[skip:])
    if min(singles[:skip]) <= cap:
        raise ConfigError(
            f"budgets: cannot skip exactly {skip} blocks; a leading block is "
            "no more expensive than a later one"
        )
    plan = plan_for_graph(graph, cap, batch, bytes_per_element)
    if plan.skipped_prefix != skip:
        raise ConfigError(f"budgets: capacity {cap} skips {plan.skipped_prefix}, wanted {skip}")
    return cap


def _resolve_counts(entries, total):
    counts = []
    for i, entry in enumerate(entries):
        if "count" in entry:
            counts.append(int(entry["count"]))
        elif "fraction" in entry:
            counts.append(int(entry["fraction"] * total))
        else:
            counts.append(0)
    remainder = total - sum(counts)
    if remainder < 0:
        raise ConfigError(f"budgets: counts add to {sum(counts)} > {total} clients")
    i = 0
    while remainder > 0:
        counts[i % len(counts)] += 1
        remainder -= 1
        i += 1
    return counts


def resolve_budget_groups(cfg, graph):
    """Per budget entry: (MemoryBudget, count, trainer_kind, mkd_cfg, plan)."""
    k = cfg["federation"]["clients"]
    mem = cfg["memory"]
    batch, bpe = mem["batch_size"], mem["bytes_per_element"]
    if cfg["method"]["kind"] == "fedavg":
        cap = _span_cost(graph, (0, graph.n_blocks), batch, bpe)
        budget = MemoryBudget(cap, scenario="baseline", width_ratio=cfg["method"].get("width"))
        return [(budget, k, "baseline", None, whole_model_plan(graph.n_blocks))]
    groups = []
    counts = _resolve_counts(cfg["budgets"], k)
    for entry, count in zip(cfg["budgets"], counts):
        mkd_cfg = None
        trainer = "fedepth"
        if "mkd_models" in entry:
            m = int(entry["mkd_models"])
            cap = entry.get(
                "capacity_mb", m * _span_cost(graph, (0, graph.n_blocks), batch, bpe)
            )
            trainer = "mkd"
            mkd_cfg = MKDConfig(models=m)
            tag = entry.get("tag", f"mkd{m}")
        elif "capacity_mb" in entry:
            cap = float(entry["capacity_mb"])
            tag = entry.get("tag", f"cap{cap:g}")
        elif "force_groups" in entry:
            cap = budget_for_group_count(graph, int(entry["force_groups"]), batch, bpe)
            tag = entry.get("tag", f"J{entry['force_groups']}")
        elif "force_skip" in entry:
            cap = budget_forcing_skip(graph, int(entry["force_skip"]), batch, bpe)
            tag = entry.get("tag", f"skip{entry['force_skip']}")
        else:
            raise ConfigError(
                "budgets: each entry needs capacity_mb, force_groups, force_skip "
                "or mkd_models"
            )
        budget = MemoryBudget(cap, scenario=tag)
        plan = (
            whole_model_plan(graph.n_blocks)
            if trainer == "mkd"
            else plan_for_graph(graph, budget, batch, bpe)
        )
        groups.append((budget, count, trainer, mkd_cfg, plan))
    return groups


def build_clients(cfg, graph, train_x, train_y):
    spec = PartitionSpec(
        family=cfg["partition"]["family"],
        clients=cfg["federation"]["clients"],
        lam=cfg["partition"].get("lam"),
        labels_per_client=cfg["partition"].get("labels_per_client"),
        seed=cfg["partition"].get("seed", cfg["seed"]),
    )
    shards = partition(train_y, spec)
    groups = resolve_budget_groups(cfg, graph)
    total = sum(s.size for s in shards)
    clients = []
    cursor = 0
    assignment = []
    for budget, count, trainer, mkd_cfg, plan in groups:
        for _ in range(count):
            assignment.append((budget, trainer, mkd_cfg, plan))
    if len(assignment) != len(shards):
        raise ConfigError(
            f"budgets: assignments cover {len(assignment)} clients, have {len(shards)}"
        )
    for shard, (budget, trainer, mkd_cfg, plan) in zip(shards, assignment):
        clients.append(
            ClientState(
                client_id=shard.client_id,
                x=train_x[shard.indices],
                y=train_y[shard.indices],
                p=shard.size / total,
                budget=budget,
                plan=plan,
                trainer=trainer,
                mkd=mkd_cfg,
                tag=budget.scenario,
            )
        )
    return clients, shards


def build_experiment(cfg):
    graph = build_graph(cfg)
    (train_x, train_y), (test_x, test_y) = build_dataset(cfg)
    clients, shards = build_clients(cfg, graph, train_x, train_y)
    fed = cfg["federation"]
    fed_cfg = FederationConfig(
        clients=fed["clients"],
        rounds=fed["rounds"],
        participation=fed["participation"],
        seed=cfg["seed"],
        drop_tolerant=fed["drop_tolerant"],
        eval_every=fed["eval_every"],
        cosine=fed["cosine"],
    )
    tr = cfg["training"]
    trainer_cfg = ClientUpdateConfig(
        local_epochs=tr["local_epochs"],
        batch_size=tr["batch_size"],
        lr=tr["lr"],
        momentum=tr["momentum"],
        head_strategy=tr["head_strategy"],
        buffer_activations=tr["buffer_activations"],
    )
    weights0 = init_weights(graph, np.random.default_rng([cfg["seed"], 29]))
    return {
        "cfg": cfg,
        "graph": graph,
        "weights0": weights0,
        "clients": clients,
        "shards": shards,
        "test": (test_x, test_y),
        "fed_cfg": fed_cfg,
        "trainer_cfg": trainer_cfg,
    }


def _metrics_columns(clients):
    tags = []
    for c in clients:
        if c.tag and c.tag not in tags:
            tags.append(c.tag)
    return ["round", "global_acc", "fairness", "loss_mean", "lr"] + [
        f"acc_{tag}" for tag in tags
    ], tags


def _metrics_row(record, clients, tags, lr):
    row = {"round": record.round, "lr": repr(float(lr))}
    if record.eval is not None:
        row["global_acc"] = repr(record.eval.global_accuracy)
        row["fairness"] = repr(record.eval.fairness)
        per = record.eval.per_client_accuracy
        for tag in tags:
            ids = [c.client_id for c in clients if c.tag == tag]
            row[f"acc_{tag}"] = repr(float(np.mean([per[i] for i in ids])))
    else:
        row["global_acc"] = row["fairness"] = ""
        for tag in tags:
            row[f"acc_{tag}"] = ""
    losses = [m["loss"] for m in record.client_metrics.values()]
    row["loss_mean"] = repr(float(np.mean(losses))) if losses else ""
    return row


def run_experiment(cfg, out_dir=None, resume=False):
    """Build and run the configured experiment; optionally write artifacts.

    Returns a summary with the accuracy curve and final metrics. With
    out_dir set, writes resolved_config.json, metrics.csv, shards.json,
    plan.txt, training_log.jsonl and checkpoints/.
    """
    from .nn.optim import cosine_lr
    from .partition import export_shards, label_distribution_rows

    exp = build_experiment(cfg)
    graph, clients = exp["graph"], exp["clients"]
    fed_cfg, trainer_cfg = exp["fed_cfg"], exp["trainer_cfg"]
    test_x, test_y = exp["test"]
    weights = exp["weights0"]
    start_round = 0
    prior_rows = []

    ck_dir = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        ck_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ck_dir, exist_ok=True)
        if resume:
            start_round, weights, prior_rows = _load_resume_state(ck_dir, out_dir, graph, weights)
        with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
            json.dump(cfg, f, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "shards.json"), "w") as f:
            f.write(export_shards(exp["shards"]))
        with open(os.path.join(out_dir, "label_distribution.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["client", "class", "count"])
            writer.writerows(label_distribution_rows(exp["shards"]))
        with open(os.path.join(out_dir, "plan.txt"), "w") as f:
            seen = set()
            for c in clients:
                key = (c.tag, c.plan.group_spans if c.plan else None)
                if key in seen:
                    continue
                seen.add(key)
                f.write(f"budget group {c.tag!r}: capacity {c.budget.capacity_mb:.3f} MB\n")
                if c.plan is not None:
                    f.write(c.plan.describe() + "\n")

    training_log = [] if out_dir else None
    records, final_weights = run(
        graph,
        weights,
        clients,
        test_x,
        test_y,
        fed_cfg,
        trainer_cfg,
        start_round=start_round,
        training_log=training_log,
        keep_round_weights=True,
    )

    columns, tags = _metrics_columns(clients)
    rows = list(prior_rows)
    for record in records:
        lr = (
            cosine_lr(trainer_cfg.lr, record.round, fed_cfg.rounds)
            if fed_cfg.cosine
            else trainer_cfg.lr
        )
        rows.append(_metrics_row(record, clients, tags, lr))

    if out_dir:
        with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
        mode = "a" if resume and start_round else "w"
        with open(os.path.join(out_dir, "training_log.jsonl"), mode) as f:
            for rec in training_log:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
        every = int(cfg.get("checkpoint_every", 0))
        for record in records:
            if every and (record.round + 1) % every == 0:
                save_weights(
                    os.path.join(ck_dir, f"round_{record.round:04d}.bin"), record.weights
                )
        save_weights(os.path.join(ck_dir, f"round_{records[-1].round:04d}.bin"), final_weights)
        save_weights(os.path.join(ck_dir, "final.bin"), final_weights)

    evals = [r.eval for r in records if r.eval is not None]
    summary = {
        "rounds": fed_cfg.rounds,
        "final_accuracy": evals[-1].global_accuracy if evals else None,
        "final_fairness": evals[-1].fairness if evals else None,
        "accuracy_curve": [(e.round, e.global_accuracy) for e in evals],
        "out_dir": out_dir,
    }
    summary["final_weights"] = final_weights
    summary["records"] = records
    summary["graph"] = graph
    summary["clients"] = clients
    return summary


def _load_resume_state(ck_dir, out_dir, graph, weights0):
    rounds = []
    for name in os.listdir(ck_dir):
        m = re.fullmatch(r"round_(\d+)\.bin", name)
        if m:
            rounds.append(int(m.group(1)))
    if not rounds:
        return 0, weights0, []
    last = max(rounds)
    weights = load_weights(os.path.join(ck_dir, f"round_{last:04d}.bin"), graph)
    prior_rows = []
    metrics_path = os.path.join(out_dir, "metrics.csv")
    if os.path.exists(metrics_path):
        with open(metrics_path, newline="") as f:
            for row in csv.DictReader(f):
                if int(row["round"]) <= last:
                    prior_rows.append(row)
    return last + 1, weights, prior_rows
