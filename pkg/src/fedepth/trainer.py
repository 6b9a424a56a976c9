"""Client-side training engines.

client_update performs depth-wise sequential learning: the plan's block
groups are trained in order, each jointly with the classifier. Inputs to a
group come from a gradient-free frozen forward through all earlier blocks
(recomputed per batch, or buffered once per group when enabled). Blocks in
the skipped prefix keep their broadcast values untouched; the returned
model is always full size.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ShapeError, SpillError, UsageError
from .memory import estimate_training_unit_cost, fits
from .nn import autograd as ag
from .nn import fastops
from .nn.checkpoint import read_tensor_file, write_tensor_file
from .nn.graph import param_shapes
from .nn.losses import cross_entropy, kl_logits
from .nn.network import block_forward, head_forward, init_weights
from .nn.optim import OptimizerState, sgd_step

HEAD_STRATEGIES = ("skip-connection", "auxiliary-classifier")


@dataclass
class ClientUpdateConfig:
    local_epochs: int = 10
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.0
    head_strategy: str = "skip-connection"
    buffer_activations: bool = False

    def __post_init__(self):
        if self.local_epochs < 1:
            raise UsageError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.head_strategy not in HEAD_STRATEGIES:
            raise UsageError(f"unknown head strategy {self.head_strategy!r}")


@dataclass
class MKDConfig:
    models: int = 2
    weight: float = 1.0
    upload_index: int = 0
    init: str = "spawn"  # "spawn": extra students freshly initialized; "replicate": copies
    modes: tuple | None = None  # per-student "plain" | "depthwise"; None = all plain
    plan: object | None = None  # DecompositionPlan for depthwise students
    persist_students: bool = True  # keep extra students warm across rounds

    def __post_init__(self):
        if self.models < 1:
            raise UsageError("mkd needs at least one model")
        if not 0 <= self.upload_index < self.models:
            raise UsageError("upload_index out of range")
        if self.init not in ("spawn", "replicate"):
            raise UsageError(f"unknown mkd init {self.init!r}")
        if self.modes is not None and len(self.modes) != self.models:
            raise UsageError("modes must list one entry per model")


def _seed_list(seed, *tags):
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed] + list(tags)
    return [int(seed)] + list(tags)


def _rng(seed, *tags):
    return np.random.default_rng(_seed_list(seed, *tags))


def _epoch_split(total_epochs, n_groups):
    """Split the epoch budget as evenly as possible, remainder to later
    groups, so total compute matches whole-model training."""
    base, rem = divmod(total_epochs, n_groups)
    return [base + (1 if j >= n_groups - rem else 0) for j in range(n_groups)]


def _batches(perm, batch_size):
    for i in range(0, len(perm), batch_size):
        yield perm[i : i + batch_size]


def _head_sha(head_params):
    h = hashlib.sha256()
    for key in sorted(head_params):
        h.update(np.ascontiguousarray(head_params[key]).tobytes())
    return h.hexdigest()[:16]


def _wrap_block_params(weights, span, prefix=""):
    """Tensors sharing the underlying arrays, so sgd updates write through."""
    tensors = {}
    block_params = []
    for j in range(*span):
        layers = []
        for l, layer in enumerate(weights.body[j]):
            wrapped = {}
            for key, arr in layer.items():
                t = ag.Tensor(arr, requires_grad=True, name=f"{prefix}body.{j}.{l}.{key}")
                wrapped[key] = t
                tensors[t.name] = t
            layers.append(wrapped)
        block_params.append(layers)
    return block_params, tensors


def _wrap_head_params(head, prefix=""):
    tensors = {}
    wrapped = {}
    for key, arr in head.items():
        t = ag.Tensor(arr, requires_grad=True, name=f"{prefix}head.{key}")
        wrapped[key] = t
        tensors[t.name] = t
    return wrapped, tensors


def _frozen_forward(graph, weights, x, start, stop):
    for j in range(start, stop):
        x = block_forward(graph.blocks[j], weights.body[j], x, fastops)
    return x


def _group_logits(graph, span, block_params, head_params, z, head_strategy):
    t = ag.Tensor(z)
    for j, params in zip(range(*span), block_params):
        t = block_forward(graph.blocks[j], params, t, ag)
    if head_strategy == "skip-connection":
        target = graph.head_input_shape
        if tuple(t.shape[1:]) != tuple(target):
            t = ag.adapt(t, target)
    return head_forward(graph, head_params, t, ag)


def _fresh_head(graph, group_out_shape, rng, dtype):
    feat = (group_out_shape[0],) if len(group_out_shape) == 3 else tuple(group_out_shape)
    shapes = param_shapes(graph.head, feat)
    params = {}
    for key in sorted(shapes):
        if key == "weight":
            fan_in = shapes[key][0]
            params[key] = (rng.standard_normal(shapes[key]) * np.sqrt(1.0 / fan_in)).astype(dtype)
        else:
            params[key] = np.zeros(shapes[key], dtype=dtype)
    return params


def client_update(graph, global_weights, x, y, plan, cfg, *, seed=0, budget=None, log=None):
    """Depth-wise sequential local training; returns a full-size model."""
    if plan.n_blocks != graph.n_blocks:
        raise ShapeError(
            f"plan covers {plan.n_blocks} blocks but the graph has {graph.n_blocks}"
        )
    if len(x) == 0:
        raise UsageError("client shard is empty")
    weights = global_weights.copy()
    dtype = weights.head["weight"].dtype
    rng_batch = _rng(seed, 1)
    rng_head = _rng(seed, 2)
    epochs = _epoch_split(cfg.local_epochs, plan.group_count)
    aux = cfg.head_strategy == "auxiliary-classifier"

    buffer = None
    if cfg.buffer_activations:
        buffer = _frozen_forward(graph, weights, x, 0, plan.group_spans[0][0])

    for gi, span in enumerate(plan.group_spans):
        cost = estimate_training_unit_cost(graph, span, cfg.batch_size)
        if budget is not None and not fits(cost, budget):
            raise BudgetError(
                f"training unit {span} needs {cost.total_mb:.2f} MB, "
                f"budget is {budget.capacity_mb:.2f} MB"
            )
        block_params, trainable = _wrap_block_params(weights, span)
        if aux:
            head_arrays = _fresh_head(graph, graph.block_output_shape(span[1] - 1), rng_head, dtype)
        else:
            head_arrays = weights.head
        head_params, head_tensors = _wrap_head_params(head_arrays)
        trainable.update(head_tensors)
        sha_start = _head_sha(head_arrays)
        opt = OptimizerState(base_lr=cfg.lr, momentum=cfg.momentum)

        for epoch in range(epochs[gi]):
            perm = rng_batch.permutation(len(x))
            batch_losses = []
            for idx in _batches(perm, cfg.batch_size):
                if buffer is not None:
                    z = buffer[idx]
                else:
                    z = _frozen_forward(graph, weights, x[idx], 0, span[0])
                logits = _group_logits(
                    graph, span, block_params, head_params, z, cfg.head_strategy
                )
                loss = cross_entropy(logits, y[idx])
                for t in trainable.values():
                    t.grad = None
                loss.backward()
                sgd_step(opt, trainable)
                batch_losses.append(loss.item())
            if log is not None:
                log.append(
                    {
                        "group": gi + 1,
                        "epoch": epoch + 1,
                        "loss": float(np.mean(batch_losses)),
                        "lr": opt.lr(),
                        "peak_mb": cost.total_mb,
                        "head_sha_start": sha_start,
                        "head_sha_end": _head_sha(head_arrays),
                    }
                )
        if aux and span[1] == graph.n_blocks:
            weights.head = head_arrays
        if buffer is not None:
            buffer = _frozen_forward(graph, weights, buffer, *span)
    return weights


def train_plain(graph, global_weights, x, y, cfg, *, seed=0, log=None):
    """Ordinary whole-model local SGD (the non-depth-wise reference path)."""
    if len(x) == 0:
        raise UsageError("client shard is empty")
    weights = global_weights.copy()
    rng_batch = _rng(seed, 1)
    span = (0, graph.n_blocks)
    block_params, trainable = _wrap_block_params(weights, span)
    head_params, head_tensors = _wrap_head_params(weights.head)
    trainable.update(head_tensors)
    opt = OptimizerState(base_lr=cfg.lr, momentum=cfg.momentum)
    for epoch in range(cfg.local_epochs):
        perm = rng_batch.permutation(len(x))
        batch_losses = []
        for idx in _batches(perm, cfg.batch_size):
            t = ag.Tensor(x[idx])
            for j, params in zip(range(*span), block_params):
                t = block_forward(graph.blocks[j], params, t, ag)
            logits = head_forward(graph, head_params, t, ag)
            loss = cross_entropy(logits, y[idx])
            for tt in trainable.values():
                tt.grad = None
            loss.backward()
            sgd_step(opt, trainable)
            batch_losses.append(loss.item())
        if log is not None:
            log.append(
                {
                    "group": 1,
                    "epoch": epoch + 1,
                    "loss": float(np.mean(batch_losses)),
                    "lr": opt.lr(),
                    "peak_mb": estimate_training_unit_cost(graph, span, cfg.batch_size).total_mb,
                    "head_sha_start": "",
                    "head_sha_end": _head_sha(weights.head),
                }
            )
    return weights


# The width-scaled FedAvg baseline trains the scaled model the ordinary way.
baseline_update = train_plain


def mkd_update(graph, global_weights, x, y, cfg, mkd, *, seed=0, budget=None, log=None, state=None):
    """Mutual knowledge distillation across M co-trained students.

    Minimizes (1/M) sum_m CE_m + (w/(M-1)) sum_{m' != m} KL(h^m' || h^m)
    with one joint step per minibatch; in each KL term the co-student's
    logits h^m' act as a fixed teaching signal for that step (no gradient
    flows through the teacher side), the standard mutual-learning update.
    Returns the designated student, full size. With persist_students and a
    state dict, students other than the uploaded one carry over between
    calls instead of being re-initialized.
    """
    if len(x) == 0:
        raise UsageError("client shard is empty")
    m_count = mkd.models
    if budget is not None:
        whole = estimate_training_unit_cost(graph, (0, graph.n_blocks), cfg.batch_size)
        need = whole.total_mb * m_count
        if need > budget.capacity_mb:
            raise BudgetError(
                f"{m_count} students need {need:.2f} MB, budget is {budget.capacity_mb:.2f} MB"
            )
    students = [global_weights.copy()]
    kept = state.get("students") if (state is not None and mkd.persist_students) else None
    for m in range(1, m_count):
        if kept is not None and len(kept) >= m:
            students.append(kept[m - 1])
        elif mkd.init == "spawn":
            students.append(
                init_weights(graph, _rng(seed, 3, m), dtype=global_weights.head["weight"].dtype)
            )
        else:
            students.append(global_weights.copy())
    modes = mkd.modes or ("plain",) * m_count
    depthwise_idx = [m for m, mode in enumerate(modes) if mode == "depthwise"]
    if depthwise_idx and mkd.plan is None:
        raise UsageError("depthwise mkd students need a decomposition plan")
    phases = mkd.plan.group_spans if depthwise_idx else ((0, graph.n_blocks),)
    epochs = _epoch_split(cfg.local_epochs, len(phases))
    rng_batch = _rng(seed, 1)

    for pi, span in enumerate(phases):
        trainable = {}
        student_setups = []
        for m, weights in enumerate(students):
            s_span = span if m in depthwise_idx else (0, graph.n_blocks)
            block_params, tensors = _wrap_block_params(weights, s_span, prefix=f"m{m}.")
            head_params, head_tensors = _wrap_head_params(weights.head, prefix=f"m{m}.")
            trainable.update(tensors)
            trainable.update(head_tensors)
            student_setups.append((s_span, block_params, head_params))
        opt = OptimizerState(base_lr=cfg.lr, momentum=cfg.momentum)

        for epoch in range(epochs[pi]):
            perm = rng_batch.permutation(len(x))
            batch_losses, batch_kls = [], []
            for idx in _batches(perm, cfg.batch_size):
                xb, yb = x[idx], y[idx]
                logit_list = []
                for m, (s_span, block_params, head_params) in enumerate(student_setups):
                    z = _frozen_forward(graph, students[m], xb, 0, s_span[0])
                    logit_list.append(
                        _group_logits(graph, s_span, block_params, head_params, z, "skip-connection")
                    )
                loss = None
                for lg in logit_list:
                    ce = cross_entropy(lg, yb)
                    loss = ce if loss is None else ag.add(loss, ce)
                loss = ag.mul(loss, 1.0 / m_count)
                kl_value = 0.0
                if m_count > 1:
                    kl_total = None
                    for a in range(m_count):
                        for b in range(m_count):
                            if a == b:
                                continue
                            term = kl_logits(ag.detach(logit_list[a]), logit_list[b])
                            kl_total = term if kl_total is None else ag.add(kl_total, term)
                    kl_value = kl_total.item() / (m_count * (m_count - 1))
                    loss = ag.add(loss, ag.mul(kl_total, mkd.weight / (m_count - 1)))
                for t in trainable.values():
                    t.grad = None
                loss.backward()
                sgd_step(opt, trainable)
                batch_losses.append(loss.item())
                batch_kls.append(kl_value)
            if log is not None:
                log.append(
                    {
                        "group": pi + 1,
                        "epoch": epoch + 1,
                        "loss": float(np.mean(batch_losses)),
                        "mean_kl": float(np.mean(batch_kls)),
                        "lr": opt.lr(),
                        "peak_mb": 0.0,
                        "head_sha_start": "",
                        "head_sha_end": _head_sha(students[0].head),
                    }
                )
    if state is not None and mkd.persist_students:
        state["students"] = students[1:]
    return students[mkd.upload_index]


class SpillStore:
    """File-backed activation spill area with I/O event counters."""

    def __init__(self, root):
        self.root = str(root)
        os.makedirs(self.root, exist_ok=True)
        self.n_writes = 0
        self.n_reads = 0

    def _path(self, key):
        return os.path.join(self.root, f"{key}.bin")

    def write(self, key, arr):
        try:
            write_tensor_file(self._path(key), [(key, arr)])
        except OSError as exc:
            raise SpillError(f"cannot write spill record {key!r}: {exc}") from exc
        self.n_writes += 1

    def read(self, key):
        try:
            records = read_tensor_file(self._path(key))
        except OSError as exc:
            raise SpillError(f"cannot read spill record {key!r}: {exc}") from exc
        self.n_reads += 1
        return records[0][1]


def depthwise_inference(graph, weights, x, spill):
    """Block-at-a-time forward holding only (z_{j-1}, z_j) in memory.

    Every block output is written to the spill store; each becomes the next
    block's input by reading it back, and the final activation feeds the
    head directly. Logits equal the in-memory forward bitwise.
    """
    store = spill if isinstance(spill, SpillStore) else SpillStore(spill)
    z = np.asarray(x)
    if tuple(z.shape[1:]) != tuple(graph.input_shape):
        raise ShapeError(f"input shape {z.shape[1:]} != graph input {graph.input_shape}")
    for j in range(graph.n_blocks):
        if j > 0:
            z = store.read(f"z{j}")
        z = block_forward(graph.blocks[j], weights.body[j], z, fastops)
        store.write(f"z{j + 1}", z)
    return head_forward(graph, weights.head, z, fastops)
