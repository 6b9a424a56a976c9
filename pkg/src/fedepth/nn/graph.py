"""Block-structured network description.

A BlockGraph is an ordered list of finest trainable blocks (each a list of
LayerSpec) followed by a classifier head. Shapes are per-sample (no batch
dim) and fully determined by the specs, so graphs can be validated, width
scaled, and costed without instantiating weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace

from ..errors import ShapeError, UsageError

GRAPH_FORMAT_VERSION = 1

LAYER_KINDS = (
    "dense",
    "conv2d",
    "relu",
    "groupnorm",
    "avg-pool",
    "flatten",
    "residual-add",
    "zero-pad-adapter",
    "classifier-head",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    features: int | None = None  # dense output width
    channels: int | None = None  # conv2d output channels / adapter target channels
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    groups: int = 8  # groupnorm
    pool: int | None = None  # avg-pool window; None = global
    height: int | None = None  # adapter spatial target
    width: int | None = None
    classes: int | None = None  # classifier-head output

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UsageError(f"unknown layer kind {self.kind!r}")


# Spec constructors; keeps graph definitions readable.
def dense(features):
    return LayerSpec("dense", features=features)


def conv2d(channels, kernel=3, stride=1, padding=1):
    return LayerSpec("conv2d", channels=channels, kernel=kernel, stride=stride, padding=padding)


def relu():
    return LayerSpec("relu")


def groupnorm(groups=8):
    return LayerSpec("groupnorm", groups=groups)


def avg_pool(pool=None):
    return LayerSpec("avg-pool", pool=pool)


def flatten():
    return LayerSpec("flatten")


def residual_add():
    return LayerSpec("residual-add")


def zero_pad_adapter(channels=None, height=None, width=None, features=None):
    return LayerSpec(
        "zero-pad-adapter", channels=channels, height=height, width=width, features=features
    )


def classifier_head(classes):
    return LayerSpec("classifier-head", classes=classes)


def check_adaptable(source, target):
    """Raise ShapeError unless the zero-pad adapter can map source -> target."""
    if len(source) != len(target):
        raise ShapeError(f"adapter cannot map rank {len(source)} to rank {len(target)}")
    if len(source) == 3:
        c, h, w = source
        tc, th, tw = target
        if tc < c:
            raise ShapeError(f"adapter cannot shrink channels {c} -> {tc}")
        for name, s, t in (("height", h, th), ("width", w, tw)):
            if t > s:
                raise ShapeError(f"adapter cannot grow {name} {s} -> {t}")
            if s % t:
                raise ShapeError(f"adapter {name} {s} not a multiple of {t}")
    elif len(source) == 1:
        if target[0] < source[0]:
            raise ShapeError(f"adapter cannot shrink features {source[0]} -> {target[0]}")
    else:
        raise ShapeError(f"adapter does not support rank-{len(source)} shapes")


def infer_layer_shape(spec, in_shape, block_in_shape=None):
    """Per-sample output shape of one layer given its per-sample input."""
    kind = spec.kind
    if kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects flat input, got {in_shape}")
        return (spec.features,)
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (c,h,w) input, got {in_shape}")
        _, h, w = in_shape
        k, s, p = spec.kernel, spec.stride, spec.padding
        oh = (h + 2 * p - k) // s + 1
        ow = (w + 2 * p - k) // s + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv2d kernel {k} does not fit input {in_shape}")
        return (spec.channels, oh, ow)
    if kind == "relu":
        return in_shape
    if kind == "groupnorm":
        if in_shape[0] % spec.groups:
            raise ShapeError(
                f"groupnorm: {spec.groups} groups do not divide {in_shape[0]} channels"
            )
        return in_shape
    if kind == "avg-pool":
        if len(in_shape) != 3:
            raise ShapeError(f"avg-pool expects (c,h,w) input, got {in_shape}")
        c, h, w = in_shape
        kh = h if spec.pool is None else spec.pool
        kw = w if spec.pool is None else spec.pool
        if h % kh or w % kw:
            raise ShapeError(f"avg-pool window {kh} does not tile {in_shape}")
        return (c, h // kh, w // kw)
    if kind == "flatten":
        return (int(math.prod(in_shape)),)
    if kind == "residual-add":
        if block_in_shape is None:
            raise ShapeError("residual-add outside a block")
        check_adaptable(block_in_shape, in_shape)
        return in_shape
    if kind == "zero-pad-adapter":
        if len(in_shape) == 3:
            target = (
                spec.channels if spec.channels is not None else in_shape[0],
                spec.height if spec.height is not None else in_shape[1],
                spec.width if spec.width is not None else in_shape[2],
            )
        else:
            target = (spec.features if spec.features is not None else in_shape[0],)
        check_adaptable(in_shape, target)
        return target
    if kind == "classifier-head":
        return (spec.classes,)
    raise UsageError(f"unknown layer kind {kind!r}")


def param_shapes(spec, in_shape):
    """Shapes of the layer's trainable parameters, keyed by name."""
    kind = spec.kind
    if kind == "dense":
        return {"weight": (in_shape[0], spec.features), "bias": (spec.features,)}
    if kind == "conv2d":
        return {
            "weight": (spec.channels, in_shape[0], spec.kernel, spec.kernel),
            "bias": (spec.channels,),
        }
    if kind == "groupnorm":
        return {"gain": (in_shape[0],), "bias": (in_shape[0],)}
    if kind == "classifier-head":
        feat = in_shape[0]  # 4D inputs are globally pooled to (c,) first
        return {"weight": (feat, spec.classes), "bias": (spec.classes,)}
    return {}


@dataclass(frozen=True)
class BlockGraph:
    input_shape: tuple[int, ...]
    blocks: tuple[tuple[LayerSpec, ...], ...]
    head: LayerSpec

    def __post_init__(self):
        if not self.blocks:
            raise ShapeError("a graph needs at least one block")
        if self.head.kind != "classifier-head":
            raise ShapeError("graph head must be a classifier-head layer")
        if any(e < 1 for e in self.input_shape):
            raise ShapeError(f"invalid input shape {self.input_shape}")
        self.layer_shapes()  # composition check

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def n_classes(self):
        return self.head.classes

    def layer_shapes(self):
        """Per-block list of per-layer output shapes (per-sample)."""
        shapes = []
        cur = tuple(self.input_shape)
        for block in self.blocks:
            block_in = cur
            outs = []
            for spec in block:
                cur = infer_layer_shape(spec, cur, block_in)
                outs.append(cur)
            shapes.append(outs)
        infer_layer_shape(self.head, cur)
        return shapes

    def block_input_shape(self, j):
        if j == 0:
            return tuple(self.input_shape)
        return self.block_output_shape(j - 1)

    def block_output_shape(self, j):
        return self.layer_shapes()[j][-1]

    @property
    def head_input_shape(self):
        return self.block_output_shape(self.n_blocks - 1)

    def param_count(self):
        total = 0
        cur = tuple(self.input_shape)
        for block in self.blocks:
            block_in = cur
            for spec in block:
                for shape in param_shapes(spec, cur).values():
                    total += int(math.prod(shape))
                cur = infer_layer_shape(spec, cur, block_in)
        head_in = (cur[0],) if len(cur) == 3 else cur
        for shape in param_shapes(self.head, head_in).values():
            total += int(math.prod(shape))
        return total

    def to_json(self):
        def enc(spec):
            d = {k: v for k, v in asdict(spec).items() if v is not None}
            return d

        doc = {
            "version": GRAPH_FORMAT_VERSION,
            "input_shape": list(self.input_shape),
            "blocks": [[enc(s) for s in block] for block in self.blocks],
            "head": enc(self.head),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != GRAPH_FORMAT_VERSION:
            raise UsageError(f"unsupported graph format version {doc.get('version')!r}")

        def dec(d):
            return LayerSpec(**d)

        return cls(
            input_shape=tuple(doc["input_shape"]),
            blocks=tuple(tuple(dec(s) for s in block) for block in doc["blocks"]),
            head=dec(doc["head"]),
        )

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())


def _scaled(count, r):
    # round half up, floor at one unit
    return max(1, math.floor(r * count + 0.5))


def width_scale(graph, r):
    """Shrink every hidden width by ratio r in (0, 1].

    Input dims and the class count are unchanged; groupnorm group counts are
    reduced to gcd(groups, channels) so they keep dividing their input.
    """
    if not 0 < r <= 1:
        raise UsageError(f"width ratio must be in (0, 1], got {r}")
    cur = tuple(graph.input_shape)
    new_blocks = []
    for block in graph.blocks:
        block_in = cur
        new_block = []
        for spec in block:
            if spec.kind == "dense":
                spec = replace(spec, features=_scaled(spec.features, r))
            elif spec.kind == "conv2d":
                spec = replace(spec, channels=_scaled(spec.channels, r))
            elif spec.kind == "groupnorm":
                spec = replace(spec, groups=math.gcd(spec.groups, cur[0]))
            elif spec.kind == "zero-pad-adapter":
                if spec.channels is not None:
                    spec = replace(spec, channels=_scaled(spec.channels, r))
                if spec.features is not None:
                    spec = replace(spec, features=_scaled(spec.features, r))
            new_block.append(spec)
            cur = infer_layer_shape(spec, cur, block_in)
        new_blocks.append(tuple(new_block))
    return BlockGraph(
        input_shape=tuple(graph.input_shape), blocks=tuple(new_blocks), head=graph.head
    )
