"""Server loop: sample, broadcast, locally train in isolation, aggregate.

Every client returns a full-size model, so aggregation is a plain weighted
average with weights renormalized over the sampled set. The cosine
learning-rate schedule is applied at round granularity: all local steps in
round t share lr(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import EvalReport, evaluate_model, fairness_std
from .errors import FedepthError, ShapeError, UsageError
from .nn.optim import cosine_lr
from .trainer import client_update, mkd_update, train_plain


@dataclass(frozen=True)
class FederationConfig:
    clients: int
    rounds: int
    participation: float = 1.0
    seed: int = 0
    drop_tolerant: bool = False
    eval_every: int = 1
    cosine: bool = True

    def __post_init__(self):
        if self.clients < 1 or self.rounds < 1:
            raise UsageError("need at least one client and one round")
        if not 0 < self.participation <= 1:
            raise UsageError("participation must be in (0, 1]")
        if math.ceil(self.participation * self.clients) < 1:
            raise UsageError("participation selects no clients")


@dataclass
class ClientState:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    p: float
    budget: object = None  # MemoryBudget
    plan: object = None  # DecompositionPlan
    trainer: object = "fedepth"  # "fedepth" | "baseline" | "mkd" | callable
    mkd: object = None  # MKDConfig
    tag: str = ""
    mkd_state: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p <= 0:
            raise UsageError("aggregation weight must be positive")


@dataclass
class RoundRecord:
    round: int
    sampled: list
    client_metrics: dict
    weights: object
    eval: EvalReport | None = None
    dropped: list = field(default_factory=list)


def sample_clients(total, participation, rng):
    """Uniform sample without replacement of ceil(participation * total)
    client ids, sorted for deterministic downstream iteration."""
    count = math.ceil(participation * total)
    picked = rng.choice(total, size=count, replace=False)
    return sorted(int(c) for c in picked)


def aggregate(updates, weights):
    """Elementwise convex combination of full-size models with weights
    renormalized over the update set; accumulates in float64."""
    if not updates:
        raise UsageError("nothing to aggregate")
    order = sorted(updates)
    total = sum(float(weights[cid]) for cid in order)
    reference = updates[order[0]]
    ref_items = list(reference.flat_items())
    ref_shapes = {name: arr.shape for name, arr in ref_items}
    acc = {name: np.zeros(arr.shape, dtype=np.float64) for name, arr in ref_items}
    for cid in order:
        coeff = float(weights[cid]) / total
        named = dict(updates[cid].flat_items())
        if named.keys() != ref_shapes.keys():
            raise ShapeError(f"client {cid}: parameter set does not match the others")
        for name, arr in named.items():
            if arr.shape != ref_shapes[name]:
                raise ShapeError(f"client {cid}: parameter {name} does not match the others")
            acc[name] += coeff * arr.astype(np.float64)
    # copy the reference structure (incl. parameter-free layers), fill values
    merged = reference.copy()
    for name, arr in merged.flat_items():
        arr[...] = acc[name].astype(arr.dtype)
    return merged


def _dispatch(graph, client, weights, cfg, seed, log):
    if callable(client.trainer):
        return client.trainer(graph, weights, client.x, client.y, cfg, seed=seed, log=log)
    if client.trainer == "fedepth":
        return client_update(
            graph, weights, client.x, client.y, client.plan, cfg,
            seed=seed, budget=client.budget, log=log,
        )
    if client.trainer == "baseline":
        return train_plain(graph, weights, client.x, client.y, cfg, seed=seed, log=log)
    if client.trainer == "mkd":
        return mkd_update(
            graph, weights, client.x, client.y, cfg, client.mkd,
            seed=seed, budget=client.budget, log=log, state=client.mkd_state,
        )
    raise UsageError(f"unknown trainer kind {client.trainer!r}")


def evaluate_round(graph, weights, clients, test_x, test_y, round_index):
    global_acc = evaluate_model(graph, weights, test_x, test_y)
    per_client = np.array(
        [evaluate_model(graph, weights, c.x, c.y) for c in clients], dtype=np.float64
    )
    fair = fairness_std(per_client) if per_client.size >= 2 else 0.0
    return EvalReport(
        round=round_index,
        global_accuracy=global_acc,
        per_client_accuracy=per_client,
        fairness=fair,
    )


def run(
    graph,
    initial_weights,
    clients,
    test_x,
    test_y,
    cfg,
    trainer_cfg,
    *,
    start_round=0,
    training_log=None,
    keep_round_weights=True,
):
    """Execute rounds start_round..rounds-1 from initial_weights.

    All randomness derives from (cfg.seed, round, client), so a run resumed
    from a checkpoint at round t reproduces the uninterrupted run exactly.
    In drop-tolerant mode a failing client is removed from the round's
    aggregation set; otherwise the failure propagates.
    """
    total_p = sum(c.p for c in clients)
    if abs(total_p - 1.0) > 1e-9:
        raise UsageError(f"aggregation weights sum to {total_p}, expected 1")
    weights = initial_weights
    records = []
    for t in range(start_round, cfg.rounds):
        lr_t = cosine_lr(trainer_cfg.lr, t, cfg.rounds) if cfg.cosine else trainer_cfg.lr
        round_cfg = replace(trainer_cfg, lr=float(lr_t))
        rng = np.random.default_rng([cfg.seed, 5, t])
        sampled = sample_clients(cfg.clients, cfg.participation, rng)
        updates, metrics, dropped = {}, {}, []
        for cid in sampled:
            client = clients[cid]
            log = [] if training_log is not None else None
            try:
                updates[cid] = _dispatch(
                    graph, client, weights, round_cfg, (cfg.seed, 7, t, cid), log
                )
            except FedepthError:
                if not cfg.drop_tolerant:
                    raise
                dropped.append(cid)
                continue
            if log:
                for rec in log:
                    training_log.append({"round": t, "client": cid, **rec})
                metrics[cid] = {
                    "loss": log[-1]["loss"],
                    "peak_mb": max(r["peak_mb"] for r in log),
                }
        if not updates:
            raise UsageError(f"round {t}: every sampled client failed")
        weights = aggregate(updates, {cid: clients[cid].p for cid in updates})
        report = None
        if cfg.eval_every and (t % cfg.eval_every == 0 or t == cfg.rounds - 1):
            report = evaluate_round(graph, weights, clients, test_x, test_y, t)
        records.append(
            RoundRecord(
                round=t,
                sampled=sampled,
                client_metrics=metrics,
                weights=weights if keep_round_weights else None,
                eval=report,
                dropped=dropped,
            )
        )
    return records, weights
