import numpy as np
import pytest

from fedepth.errors import ShapeError, UsageError
from fedepth.nn import fastops
from fedepth.nn.graph import (
    BlockGraph,
    LayerSpec,
    avg_pool,
    classifier_head,
    conv2d,
    dense,
    flatten,
    groupnorm,
    infer_layer_shape,
    relu,
    residual_add,
    width_scale,
    zero_pad_adapter,
)
from fedepth.nn.network import init_weights, layer_forward

from gradcheck import check_layer


def test_relu_values():
    x = np.array([[-1.0, 0.0, 2.0]])
    out = layer_forward(relu(), {}, x, None, fastops)
    np.testing.assert_array_equal(out, [[0.0, 0.0, 2.0]])


def test_residual_add_with_zero_branch_is_identity(rng):
    x = rng.standard_normal((2, 4, 4, 4))
    # a zero current value plus the block input reproduces the input
    out = layer_forward(residual_add(), {}, np.zeros_like(x), x, fastops)
    np.testing.assert_array_equal(out, x)


def test_one_by_one_conv_against_explicit_loop_oracle():
    # 1x1 conv, 1 in / 1 out channel, weight 2, bias 0, on 2x2 ones
    x = np.ones((1, 1, 2, 2))
    w = np.full((1, 1, 1, 1), 2.0)
    b = np.zeros(1)
    out = fastops.conv2d(x, w, b, stride=1, padding=0)
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 2.0))


def test_conv_against_explicit_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    for stride, pad in ((1, 1), (2, 1), (1, 0)):
        got = fastops.conv2d(x, w, b, stride=stride, padding=pad)
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        oh = (5 + 2 * pad - 3) // stride + 1
        want = np.zeros((2, 4, oh, oh))
        for n in range(2):
            for co in range(4):
                for i in range(oh):
                    for j in range(oh):
                        patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 3]
                        want[n, co, i, j] = np.sum(patch * w[co]) + b[co]
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_adapter_identity_and_channel_pad(rng):
    x = rng.standard_normal((2, 4, 4, 4))
    assert fastops.adapt(x, (4, 4, 4)) is x

    ones = np.ones((1, 4, 3, 3))
    out = fastops.adapt(ones, (8, 3, 3))
    np.testing.assert_array_equal(out[:, :4], ones)
    np.testing.assert_array_equal(out[:, 4:], 0.0)
    # zeros add nothing
    assert out.sum() == ones.sum()


def test_adapter_spatial_subsample(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    out = fastops.adapt(x, (2, 4, 4))
    np.testing.assert_array_equal(out, x[:, :, ::2, ::2])


def test_adapter_rejects_bad_targets(rng):
    x = rng.standard_normal((1, 4, 4, 4))
    with pytest.raises(ShapeError):
        fastops.adapt(x, (2, 4, 4))  # shrinking channels
    with pytest.raises(ShapeError):
        fastops.adapt(x, (4, 8, 8))  # growing space
    with pytest.raises(ShapeError):
        fastops.adapt(x, (4, 3, 3))  # non-divisible downsample


def test_shape_inference_rejects_mismatches():
    with pytest.raises(ShapeError):
        infer_layer_shape(dense(8), (3, 4, 4))
    with pytest.raises(ShapeError):
        infer_layer_shape(conv2d(8), (10,))
    with pytest.raises(ShapeError):
        infer_layer_shape(groupnorm(groups=3), (8, 4, 4))
    with pytest.raises(UsageError):
        LayerSpec("not-a-kind")


def test_graph_json_roundtrip(tiny_resnet, tmp_path):
    path = tmp_path / "graph.json"
    tiny_resnet.save(path)
    loaded = BlockGraph.load(path)
    assert loaded == tiny_resnet


def test_width_scale_identity(tiny_resnet, small_mlp):
    assert width_scale(tiny_resnet, 1.0) == tiny_resnet
    assert width_scale(small_mlp, 1.0) == small_mlp


def test_width_scale_golden_roundings():
    g = BlockGraph(
        input_shape=(8,),
        blocks=(
            (dense(16), relu()),
            (dense(32), relu()),
            (dense(64), relu()),
        ),
        head=classifier_head(10),
    )
    half = width_scale(g, 0.5)
    assert [b[0].features for b in half.blocks] == [8, 16, 32]
    sixth = width_scale(g, 1 / 6)
    # round-half-up: 16/6 -> 3, 32/6 -> 5, 64/6 -> 11
    assert [b[0].features for b in sixth.blocks] == [3, 5, 11]
    assert sixth.head.classes == 10
    assert sixth.input_shape == (8,)


def test_width_scale_param_count_monotone(tiny_resnet):
    counts = [width_scale(tiny_resnet, r).param_count() for r in (0.25, 0.5, 0.75, 1.0)]
    assert counts == sorted(counts)
    with pytest.raises(UsageError):
        width_scale(tiny_resnet, 0.0)
    with pytest.raises(UsageError):
        width_scale(tiny_resnet, 1.5)


def _layer_cases(rng):
    yield dense(6), rng.standard_normal((3, 5)), None
    yield conv2d(4, kernel=3, stride=1, padding=1), rng.standard_normal((2, 3, 5, 5)), None
    yield conv2d(4, kernel=3, stride=2, padding=1), rng.standard_normal((2, 3, 6, 6)), None
    x = rng.standard_normal((3, 4, 4, 4))
    yield relu(), np.where(np.abs(x) < 1e-2, 0.5, x), None
    yield groupnorm(groups=3), rng.standard_normal((2, 6, 3, 3)), None
    yield groupnorm(groups=2), rng.standard_normal((3, 8)), None
    yield avg_pool(2), rng.standard_normal((2, 3, 4, 4)), None
    yield avg_pool(None), rng.standard_normal((2, 3, 4, 4)), None
    yield flatten(), rng.standard_normal((2, 3, 2, 2)), None
    yield residual_add(), rng.standard_normal((2, 8, 2, 2)), rng.standard_normal((2, 4, 4, 4))
    yield residual_add(), rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((2, 4, 3, 3))
    yield zero_pad_adapter(channels=6, height=2, width=2), rng.standard_normal((2, 3, 4, 4)), None
    yield zero_pad_adapter(features=9), rng.standard_normal((2, 5)), None
    yield classifier_head(5), rng.standard_normal((2, 6, 3, 3)), None
    yield classifier_head(5), rng.standard_normal((3, 7)), None


def test_every_layer_kind_gradient_matches_finite_differences(rng):
    from fedepth.nn.graph import param_shapes

    kinds_checked = set()
    for spec, x, block_input in _layer_cases(rng):
        in_shape = tuple(x.shape[1:])
        feat = (in_shape[0],) if spec.kind == "classifier-head" and len(in_shape) == 3 else in_shape
        params = {
            k: rng.standard_normal(s)
            for k, s in param_shapes(spec, feat if spec.kind == "classifier-head" else in_shape).items()
        }
        err = check_layer(spec, x, params, block_input, rng)
        assert err < 1e-6, f"{spec.kind}: gradient error {err}"
        kinds_checked.add(spec.kind)
    assert kinds_checked == {
        "dense",
        "conv2d",
        "relu",
        "groupnorm",
        "avg-pool",
        "flatten",
        "residual-add",
        "zero-pad-adapter",
        "classifier-head",
    }
