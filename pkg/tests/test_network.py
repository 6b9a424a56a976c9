import numpy as np
import pytest

from fedepth.errors import NumericError, ShapeError
from fedepth.nn.checkpoint import load_weights, read_tensor_file, save_weights, write_tensor_file
from fedepth.nn.network import Activation, forward, init_weights, weight_shapes
from fedepth.errors import IntegrityError


def test_forward_composition_is_exact(tiny_resnet, rng):
    w = init_weights(tiny_resnet, 0)
    x = rng.standard_normal((3, 3, 16, 16)).astype(np.float32)
    whole = forward(tiny_resnet, w, x, upto=5)
    for j in (1, 2, 3, 4):
        part = forward(tiny_resnet, w, x, upto=j)
        rest = forward(tiny_resnet, w, part, upto=5)
        assert np.array_equal(rest.values, whole.values)
        assert part.block == j


def test_forward_head_equals_body_then_head(small_mlp, small_mlp_weights, rng):
    x = rng.standard_normal((4, 16)).astype(np.float32)
    z = forward(small_mlp, small_mlp_weights, x, upto=small_mlp.n_blocks)
    logits = forward(small_mlp, small_mlp_weights, z, upto="head")
    direct = forward(small_mlp, small_mlp_weights, x, upto="head")
    assert np.array_equal(logits.values, direct.values)


def test_forward_shape_mismatch_is_structural_error(small_mlp, small_mlp_weights):
    with pytest.raises(ShapeError):
        forward(small_mlp, small_mlp_weights, np.zeros((2, 7)))


def test_forward_nonfinite_reports_block(small_mlp, small_mlp_weights):
    bad = small_mlp_weights.copy()
    bad.body[1][0]["weight"][:] = np.inf
    with pytest.raises(NumericError, match="block 2"):
        forward(small_mlp, bad, np.ones((1, 16), dtype=np.float32))


def test_init_determinism(small_mlp):
    a = init_weights(small_mlp, 42)
    b = init_weights(small_mlp, 42)
    for (na, va), (nb, vb) in zip(a.flat_items(), b.flat_items()):
        assert na == nb
        assert np.array_equal(va, vb)
    c = init_weights(small_mlp, 43)
    assert any(
        not np.array_equal(va, vc) for (_, va), (_, vc) in zip(a.flat_items(), c.flat_items())
    )


def test_weight_shapes_match_init(tiny_resnet):
    w = init_weights(tiny_resnet, 0)
    w.check_matches(tiny_resnet)
    expected = dict(weight_shapes(tiny_resnet))
    for name, arr in w.flat_items():
        assert tuple(arr.shape) == tuple(expected[name])


def test_checkpoint_roundtrip_bitwise(tiny_resnet, tmp_path):
    w = init_weights(tiny_resnet, 3)
    path = tmp_path / "w.bin"
    save_weights(path, w)
    loaded = load_weights(path, tiny_resnet)
    for (na, va), (nb, vb) in zip(w.flat_items(), loaded.flat_items()):
        assert na == nb
        assert va.dtype == vb.dtype
        assert np.array_equal(va, vb)


def test_checkpoint_detects_graph_mismatch(tiny_resnet, small_mlp, tmp_path):
    w = init_weights(small_mlp, 0)
    path = tmp_path / "w.bin"
    save_weights(path, w)
    with pytest.raises(ShapeError):
        load_weights(path, tiny_resnet)


def test_tensor_file_rejects_corruption(tmp_path, rng):
    path = tmp_path / "t.bin"
    write_tensor_file(path, [("a", rng.standard_normal(5).astype(np.float32))])
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])  # truncate payload
    with pytest.raises(IntegrityError):
        read_tensor_file(path)
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(IntegrityError):
        read_tensor_file(path)


def test_activation_defaults(rng):
    act = Activation(values=rng.standard_normal((2, 3)))
    assert act.block == 0
    assert not act.requires_grad
    assert act.shape == (2, 3)
