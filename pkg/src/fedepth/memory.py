"""Training-memory estimates per block and per training unit.

Accounting rule (fixed and documented here, validated against reference
cost ratios rather than absolute numbers):

- activations: every materialized layer output is stored once per batch.
  Reshapes (flatten) are views and cost nothing; an identity adapter
  materializes nothing; a residual branch that needs adapting stores the
  adapted copy.
- params: raw parameter bytes.
- grads: one gradient copy per parameter, one momentum copy per parameter,
  plus a single in-flight activation gradient sized like the largest
  stored output in scope.

A training unit (contiguous block group trained jointly with the head)
additionally counts the head, the group-output-to-head adapter when shapes
differ, and the buffered input activation feeding the group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UsageError
from .nn.graph import infer_layer_shape, param_shapes

_MB = 1024.0 * 1024.0


@dataclass(frozen=True)
class MemoryCost:
    params_mb: float
    activations_mb: float
    grads_mb: float

    @property
    def total_mb(self):
        return self.params_mb + self.activations_mb + self.grads_mb

    def __add__(self, other):
        return MemoryCost(
            self.params_mb + other.params_mb,
            self.activations_mb + other.activations_mb,
            self.grads_mb + other.grads_mb,
        )


@dataclass(frozen=True)
class MemoryBudget:
    capacity_mb: float
    scenario: str = ""
    width_ratio: float | None = None

    def __post_init__(self):
        if self.capacity_mb <= 0:
            raise UsageError(f"capacity must be positive, got {self.capacity_mb}")


def _elements(shape):
    return int(math.prod(shape))


def _block_tallies(graph, j):
    """(activation_elements, max_single_output, param_elements) for block j."""
    cur = graph.block_input_shape(j)
    block_in = cur
    act = 0
    max_single = 0
    params = 0
    for spec in graph.blocks[j]:
        for shape in param_shapes(spec, cur).values():
            params += _elements(shape)
        out = infer_layer_shape(spec, cur, block_in)
        if spec.kind == "residual-add" and block_in != out:
            act += _elements(out)  # adapted skip copy
        if spec.kind == "zero-pad-adapter" and cur == out:
            pass  # identity, nothing materialized
        elif spec.kind != "flatten":
            act += _elements(out)
        max_single = max(max_single, _elements(out))
        cur = out
    return act, max_single, params


def _head_tallies(graph):
    head_in = graph.head_input_shape
    act = 0
    max_single = 0
    if len(head_in) == 3:
        pooled = head_in[0]
        act += pooled
        max_single = pooled
        feat = (pooled,)
    else:
        feat = head_in
    act += graph.n_classes
    max_single = max(max_single, graph.n_classes)
    params = sum(_elements(s) for s in param_shapes(graph.head, feat).values())
    return act, max_single, params


def _cost(act_el, max_el, param_el, batch, bytes_per_element):
    params_mb = param_el * bytes_per_element / _MB
    activations_mb = act_el * batch * bytes_per_element / _MB
    grads_mb = (2 * param_el + max_el * batch) * bytes_per_element / _MB
    return MemoryCost(params_mb, activations_mb, grads_mb)


def estimate_block_cost(graph, block_index, batch, bytes_per_element=4):
    """Cost of training block `block_index` (0-based) in isolation, without
    head or input buffering."""
    if not 0 <= block_index < graph.n_blocks:
        raise UsageError(f"block index {block_index} out of range")
    if batch < 1:
        raise UsageError("batch must be >= 1")
    act, max_single, params = _block_tallies(graph, block_index)
    return _cost(act, max_single, params, batch, bytes_per_element)


def head_overhead_cost(graph, start_block, batch, bytes_per_element=4):
    """Head (+ adapter + buffered group input) share of a training-unit cost
    for a group starting at start_block. The in-flight gradient is excluded
    here; the unit estimate accounts for it once over the whole scope."""
    act, max_single, params = _head_tallies(graph)
    buffered = _elements(graph.block_input_shape(start_block))
    act += buffered
    params_mb = params * bytes_per_element / _MB
    activations_mb = act * batch * bytes_per_element / _MB
    grads_mb = 2 * params * bytes_per_element / _MB
    return MemoryCost(params_mb, activations_mb, grads_mb)


def estimate_training_unit_cost(graph, span, batch, bytes_per_element=4):
    """Cost of training blocks [start, stop) jointly with the classifier.

    Counts the group's blocks, the head, the zero-pad adapter from group
    output to head input when shapes differ, the buffered input activation
    feeding the group, and one in-flight activation gradient.
    """
    start, stop = span
    if not 0 <= start < stop <= graph.n_blocks:
        raise UsageError(f"invalid block span {span}")
    act = 0
    max_single = 0
    params = 0
    for j in range(start, stop):
        a, m, p = _block_tallies(graph, j)
        act += a
        max_single = max(max_single, m)
        params += p
    h_act, h_max, h_params = _head_tallies(graph)
    act += h_act
    max_single = max(max_single, h_max)
    params += h_params
    group_out = graph.block_output_shape(stop - 1)
    head_in = graph.head_input_shape
    if group_out != head_in:
        act += _elements(head_in)
        max_single = max(max_single, _elements(head_in))
    act += _elements(graph.block_input_shape(start))  # buffered z feeding the group
    return _cost(act, max_single, params, batch, bytes_per_element)


def fits(cost, budget):
    """Inclusive comparison: a cost exactly at capacity fits."""
    return cost.total_mb <= budget.capacity_mb
