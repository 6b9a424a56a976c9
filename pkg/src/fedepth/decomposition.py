"""Memory-adaptive grouping of finest blocks into sequential training units.

Greedy left-to-right packing: keep extending the current group while its
joint training-unit cost still fits the budget (inclusive), else start a
new group. Leading blocks whose singleton cost exceeds the budget are
skipped entirely (partial training); an unaffordable block after the first
group has started is an error, since only a prefix may be skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import BudgetError, UsageError
from .memory import MemoryBudget, estimate_training_unit_cost

PLAN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DecompositionPlan:
    group_spans: tuple[tuple[int, int], ...]  # half-open [start, stop), 0-based
    skipped_prefix: int = 0

    def __post_init__(self):
        if self.skipped_prefix < 0:
            raise UsageError("skipped_prefix must be >= 0")
        if not self.group_spans:
            raise UsageError("a plan needs at least one group")
        cursor = self.skipped_prefix
        for start, stop in self.group_spans:
            if start != cursor or stop <= start:
                raise UsageError(f"groups must be contiguous and ordered, got {self.group_spans}")
            cursor = stop

    @property
    def group_count(self):
        return len(self.group_spans)

    @property
    def n_blocks(self):
        return self.group_spans[-1][1]

    def groups_one_based(self):
        return [list(range(start + 1, stop + 1)) for start, stop in self.group_spans]

    def covered_blocks(self):
        return list(range(self.skipped_prefix, self.n_blocks))

    def to_json(self):
        return json.dumps(
            {
                "version": PLAN_FORMAT_VERSION,
                "skipped_prefix": self.skipped_prefix,
                "group_spans": [list(span) for span in self.group_spans],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != PLAN_FORMAT_VERSION:
            raise UsageError(f"unsupported plan format version {doc.get('version')!r}")
        return cls(
            group_spans=tuple(tuple(span) for span in doc["group_spans"]),
            skipped_prefix=doc["skipped_prefix"],
        )

    def describe(self):
        lines = [f"groups: {self.group_count}, skipped prefix: {self.skipped_prefix}"]
        for i, blocks in enumerate(self.groups_one_based(), 1):
            lines.append(f"  unit {i}: blocks {blocks}")
        return "\n".join(lines)


def whole_model_plan(n_blocks):
    return DecompositionPlan(group_spans=((0, n_blocks),))


def _capacity(budget):
    return budget.capacity_mb if isinstance(budget, MemoryBudget) else float(budget)


def decompose(block_costs, budget, group_cost=None):
    """Pack blocks into the fewest greedy groups that fit the budget.

    block_costs are singleton training-unit costs in MB; group_cost(start,
    stop) gives the joint cost of a candidate group and defaults to the sum
    of its members' costs.
    """
    costs = [float(c) for c in block_costs]
    if not costs:
        raise UsageError("block_costs must be nonempty")
    cap = _capacity(budget)
    if group_cost is None:
        group_cost = lambda start, stop: sum(costs[start:stop])

    n = len(costs)
    skipped = 0
    while skipped < n and group_cost(skipped, skipped + 1) > cap:
        skipped += 1
    if skipped == n:
        raise BudgetError(f"budget too small: no block fits {cap} MB even alone")

    spans = []
    start, stop = skipped, skipped + 1
    while True:
        if stop < n and group_cost(start, stop + 1) <= cap:
            stop += 1
            continue
        spans.append((start, stop))
        if stop == n:
            break
        start, stop = stop, stop + 1
        if group_cost(start, stop) > cap:
            raise BudgetError(
                f"block {start + 1} does not fit {cap} MB even alone; "
                "only a leading prefix may be skipped"
            )
    return DecompositionPlan(group_spans=tuple(spans), skipped_prefix=skipped)


def plan_for_graph(graph, budget, batch, bytes_per_element=4):
    """Decompose a real graph under the package's own cost estimator."""
    costs = [
        estimate_training_unit_cost(graph, (j, j + 1), batch, bytes_per_element).total_mb
        for j in range(graph.n_blocks)
    ]

    def group_cost(start, stop):
        return estimate_training_unit_cost(graph, (start, stop), batch, bytes_per_element).total_mb

    return decompose(costs, budget, group_cost=group_cost)


def preresnet20_reference_plan():
    """Canonical 6-unit plan for the 9-block residual CNN at the tightest
    width-equivalent budget: four singleton units, then pairs grow."""
    return DecompositionPlan(group_spans=((0, 1), (1, 2), (2, 3), (3, 4), (4, 6), (6, 9)))
