"""Weights, initialization, and forward passes over a BlockGraph.

layer_forward/block_forward take an `ops` namespace: fedepth.nn.fastops for
gradient-free array math, fedepth.nn.autograd for taped Tensors. Both call
the same kernels, so the two paths agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ShapeError
from . import fastops
from .graph import infer_layer_shape, param_shapes


@dataclass
class Activation:
    """A (batch, ...) activation produced after `block` blocks.

    block = 0 is the raw input; block = n_blocks followed by the head means
    logits.
    """

    values: np.ndarray
    block: int = 0
    requires_grad: bool = False

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ModelWeights:
    """Full parameter set: per-block, per-layer param dicts plus the head."""

    body: list = field(default_factory=list)
    head: dict = field(default_factory=dict)

    def copy(self):
        return ModelWeights(
            body=[[{k: v.copy() for k, v in layer.items()} for layer in block] for block in self.body],
            head={k: v.copy() for k, v in self.head.items()},
        )

    def astype(self, dtype):
        return ModelWeights(
            body=[
                [{k: v.astype(dtype) for k, v in layer.items()} for layer in block]
                for block in self.body
            ],
            head={k: v.astype(dtype) for k, v in self.head.items()},
        )

    def flat_items(self):
        """Deterministically ordered (name, array) pairs."""
        for j, block in enumerate(self.body):
            for l, layer in enumerate(block):
                for key in sorted(layer):
                    yield f"body.{j}.{l}.{key}", layer[key]
        for key in sorted(self.head):
            yield f"head.{key}", self.head[key]

    def param_count(self):
        return sum(int(a.size) for _, a in self.flat_items())

    @classmethod
    def from_flat(cls, items, graph=None):
        """Rebuild the nested structure from (name, array) pairs.

        Parameter-free layers leave no trace in the flat form; pass the
        graph to restore their placeholders exactly, otherwise gaps are
        filled up to the highest parameterized layer index.
        """
        body_map, head = {}, {}
        for name, arr in items:
            parts = name.split(".")
            if parts[0] == "head":
                head[parts[1]] = arr
            elif parts[0] == "body":
                j, l, key = int(parts[1]), int(parts[2]), parts[3]
                body_map.setdefault(j, {}).setdefault(l, {})[key] = arr
            else:
                raise ShapeError(f"unknown parameter name {name!r}")
        body = []
        if graph is not None:
            for j, block in enumerate(graph.blocks):
                layers = body_map.get(j, {})
                body.append([layers.get(l, {}) for l in range(len(block))])
        else:
            for j in range(max(body_map, default=-1) + 1):
                layers = body_map.get(j, {})
                top = max(layers, default=-1)
                body.append([layers.get(l, {}) for l in range(top + 1)])
        weights = cls(body=body, head=head)
        if graph is not None:
            weights.check_matches(graph)
        return weights

    def check_matches(self, graph):
        expected = dict(weight_shapes(graph))
        got = dict(self.flat_items())
        if expected.keys() != got.keys():
            missing = expected.keys() - got.keys()
            extra = got.keys() - expected.keys()
            raise ShapeError(f"weights do not match graph (missing={missing}, extra={extra})")
        for name, arr in got.items():
            if tuple(arr.shape) != tuple(expected[name]):
                raise ShapeError(
                    f"parameter {name} has shape {arr.shape}, graph expects {expected[name]}"
                )


def weight_shapes(graph):
    """(name, shape) pairs for every parameter the graph requires."""
    cur = tuple(graph.input_shape)
    out = []
    for j, block in enumerate(graph.blocks):
        block_in = cur
        for l, spec in enumerate(block):
            for key, shape in sorted(param_shapes(spec, cur).items()):
                out.append((f"body.{j}.{l}.{key}", shape))
            cur = infer_layer_shape(spec, cur, block_in)
    head_in = (cur[0],) if len(cur) == 3 else cur
    for key, shape in sorted(param_shapes(graph.head, head_in).items()):
        out.append((f"head.{key}", shape))
    return out


def init_weights(graph, seed_or_rng=0, dtype=np.float32):
    """He-style initialization, deterministic under the seed."""
    rng = np.random.default_rng(seed_or_rng) if not isinstance(seed_or_rng, np.random.Generator) else seed_or_rng
    cur = tuple(graph.input_shape)
    body = []
    for block in graph.blocks:
        block_in = cur
        layers = []
        for spec in block:
            layers.append(_init_layer(spec, cur, rng, dtype))
            cur = infer_layer_shape(spec, cur, block_in)
        body.append(layers)
    head_in = (cur[0],) if len(cur) == 3 else cur
    head = _init_layer(graph.head, head_in, rng, dtype)
    return ModelWeights(body=body, head=head)


def _init_layer(spec, in_shape, rng, dtype):
    shapes = param_shapes(spec, in_shape)
    params = {}
    for key in sorted(shapes):
        shape = shapes[key]
        if key == "weight":
            if spec.kind == "conv2d":
                fan_in = shape[1] * shape[2] * shape[3]
            else:  # dense / classifier-head
                fan_in = shape[0]
            scale = 1.0 if spec.kind == "classifier-head" else 2.0
            params[key] = (rng.standard_normal(shape) * np.sqrt(scale / fan_in)).astype(dtype)
        elif key == "gain":
            params[key] = np.ones(shape, dtype=dtype)
        else:  # bias
            params[key] = np.zeros(shape, dtype=dtype)
    return params


def layer_forward(spec, params, x, block_input, ops):
    kind = spec.kind
    if kind == "dense":
        return ops.dense(x, params["weight"], params["bias"])
    if kind == "conv2d":
        return ops.conv2d(x, params["weight"], params["bias"], spec.stride, spec.padding)
    if kind == "relu":
        return ops.relu(x)
    if kind == "groupnorm":
        return ops.groupnorm(x, params["gain"], params["bias"], spec.groups)
    if kind == "avg-pool":
        kh = x.shape[2] if spec.pool is None else spec.pool
        kw = x.shape[3] if spec.pool is None else spec.pool
        return ops.avg_pool(x, kh, kw)
    if kind == "flatten":
        return ops.flatten(x)
    if kind == "residual-add":
        target = tuple(x.shape[1:])
        skip = block_input
        if tuple(block_input.shape[1:]) != target:
            skip = ops.adapt(block_input, target)
        return ops.add(x, skip)
    if kind == "zero-pad-adapter":
        in_shape = tuple(x.shape[1:])
        target = infer_layer_shape(spec, in_shape)
        return ops.adapt(x, target)
    if kind == "classifier-head":
        if len(x.shape) == 4:
            x = ops.flatten(ops.avg_pool(x, x.shape[2], x.shape[3]))
        return ops.dense(x, params["weight"], params["bias"])
    raise ShapeError(f"unknown layer kind {kind!r}")


def block_forward(block_specs, block_params, x, ops):
    if len(block_params) > len(block_specs):
        raise ShapeError(
            f"{len(block_params)} parameter entries for {len(block_specs)} layers"
        )
    block_input = x
    for i, spec in enumerate(block_specs):
        params = block_params[i] if i < len(block_params) else {}
        x = layer_forward(spec, params, x, block_input, ops)
    return x


def head_forward(graph, head_params, x, ops):
    return layer_forward(graph.head, head_params, x, None, ops)


def forward(graph, weights, x, upto="head", start_block=0, check_finite=True):
    """Run the network from start_block through `upto`.

    upto is a block count (returns the activation after that many blocks) or
    "head" (returns logits). Gradient-free; deterministic for fixed inputs.
    """
    if isinstance(x, Activation):
        start_block = x.block
        x = x.values
    x = np.asarray(x)
    stop = graph.n_blocks if upto == "head" else int(upto)
    if not start_block <= stop <= graph.n_blocks:
        raise ShapeError(f"upto={upto} out of range for {graph.n_blocks} blocks")
    expected = graph.block_input_shape(start_block) if start_block < graph.n_blocks else graph.head_input_shape
    if tuple(x.shape[1:]) != tuple(expected):
        raise ShapeError(
            f"input shape {tuple(x.shape[1:])} does not match block {start_block + 1} "
            f"input {tuple(expected)}"
        )
    for j in range(start_block, stop):
        x = block_forward(graph.blocks[j], weights.body[j], x, fastops)
        if check_finite and not np.isfinite(x).all():
            raise NumericError(f"non-finite activation after block {j + 1}")
    if upto == "head":
        x = head_forward(graph, weights.head, x, fastops)
        if check_finite and not np.isfinite(x).all():
            raise NumericError("non-finite logits after head")
    return Activation(values=x, block=stop)
