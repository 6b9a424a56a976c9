"""Preset graph builders."""

from .errors import UsageError
from .nn.graph import (
    BlockGraph,
    classifier_head,
    conv2d,
    dense,
    groupnorm,
    relu,
    residual_add,
)


def _norm_groups(channels):
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def _preact_block(in_channels, out_channels, stride):
    return (
        groupnorm(_norm_groups(in_channels)),
        relu(),
        conv2d(out_channels, kernel=3, stride=stride, padding=1),
        groupnorm(_norm_groups(out_channels)),
        relu(),
        conv2d(out_channels, kernel=3, stride=1, padding=1),
        residual_add(),
    )


def preresnet20(classes=10, input_shape=(3, 32, 32), widths=(16, 32, 64)):
    """Pre-activation residual CNN: 9 two-conv blocks in 3 stages.

    Stage transitions stride by 2 and widen; their residual branches go
    through the parameter-free zero-pad adapter.
    """
    blocks = []
    in_c = input_shape[0]
    for stage, width in enumerate(widths):
        for b in range(3):
            stride = 2 if stage > 0 and b == 0 else 1
            blocks.append(_preact_block(in_c, width, stride))
            in_c = width
    return BlockGraph(
        input_shape=tuple(input_shape),
        blocks=tuple(blocks),
        head=classifier_head(classes),
    )


def mlp(classes=4, input_dim=32, hidden=24, blocks=4, residual=True):
    """Deep MLP of uniform hidden width; block = dense + relu (+ residual).

    With a uniform width every block's output already matches the head
    input, so mid-network training heads need no shape adapter.
    """
    if blocks < 1:
        raise UsageError("mlp needs at least one block")
    body = []
    for j in range(blocks):
        layers = [dense(hidden), relu()]
        # the first block changes width, so its residual branch would need
        # an adapter that can also shrink; skip the skip there
        if residual and j > 0:
            layers.append(residual_add())
        body.append(tuple(layers))
    return BlockGraph(
        input_shape=(input_dim,),
        blocks=tuple(body),
        head=classifier_head(classes),
    )


PRESETS = {"preresnet20": preresnet20, "mlp": mlp}


def build_preset(name, **options):
    if name not in PRESETS:
        raise UsageError(f"unknown model preset {name!r} (have: {sorted(PRESETS)})")
    return PRESETS[name](**options)
