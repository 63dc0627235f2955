import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from taillight import feature_net as fn

from oracles import conv3x3_relu, dense_relu, max_pool2x2

TINY = fn.NetworkSpec(blocks=((1, 2), (1, 3), (2, 4), (2, 3), (1, 2)), fc=(8, 6, 5),
                      input_size=32)


@pytest.fixture(scope="module")
def vgg():
    return fn.cached_network(0)


@pytest.fixture(scope="module")
def tiny64():
    spec, weights = fn.build_network(3, TINY, dtype=np.float64)
    # nonzero biases so the bias path is exercised too
    rng = np.random.default_rng(0)
    for name, (w, b) in weights.layers.items():
        weights.layers[name] = (w, rng.normal(0, 0.1, b.shape))
    return spec, weights


def brute_forward(spec, weights, image):
    x = image.transpose(2, 0, 1).astype(np.float64)
    for b, (count, _) in enumerate(spec.blocks, start=1):
        for i in range(1, count + 1):
            x = conv3x3_relu(x, *weights.layers[f"conv{b}_{i}"])
        x = max_pool2x2(x)
    fc1 = dense_relu(x.ravel(), *weights.layers["fc1"])
    return fc1, dense_relu(fc1, *weights.layers["fc2"])


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


class TestPlan:
    def test_block_filters(self):
        assert tuple(f for _, f in fn.VGG16.blocks) == (64, 128, 256, 512, 512)
        assert tuple(c for c, _ in fn.VGG16.blocks) == (2, 2, 3, 3, 3)

    def test_fc_widths(self):
        assert fn.VGG16.fc == (4096, 4096, 1000)

    def test_layer_shapes(self):
        shapes = dict((n, w) for n, w, _ in fn.VGG16.layer_shapes())
        assert shapes["conv1_1"] == (64, 3, 3, 3)
        assert shapes["fc1"] == (4096, 512 * 7 * 7)
        assert len(shapes) == 16

    def test_seed_determinism(self):
        a = fn.build_network(5, TINY)[1]
        b = fn.build_network(5, TINY)[1]
        c = fn.build_network(6, TINY)[1]
        for name in a.layers:
            assert a.layers[name][0].tobytes() == b.layers[name][0].tobytes()
        assert a.layers["fc1"][0].tobytes() != c.layers["fc1"][0].tobytes()

    def test_he_scaling(self, vgg):
        w = vgg[1].layers["conv3_1"][0]
        assert w.std() == pytest.approx(np.sqrt(2 / (128 * 9)), rel=0.01)
        assert not vgg[1].layers["fc2"][1].any()


class TestOracleEquivalence:
    def test_tiny_network_matches_brute_force(self, tiny64):
        spec, weights = tiny64
        img = np.random.default_rng(1).random((32, 32, 3))
        fc1, fc2 = fn.forward(spec, weights, img)
        want1, want2 = brute_forward(spec, weights, img)
        assert rel_err(fc1, want1) <= 1e-9
        assert rel_err(fc2, want2) <= 1e-9

    def test_hand_set_kernel_6x6(self):
        x = np.arange(36, dtype=np.float64).reshape(1, 6, 6) - 10.0
        w = np.array([[[[0, 1, 0], [1, -4, 1], [0, 1, 0]]]], dtype=np.float64)
        b = np.array([0.5])
        got = fn.max_pool2x2(fn.conv3x3_relu(x, w, b))
        assert np.array_equal(got, max_pool2x2(conv3x3_relu(x, w, b)))

    @settings(max_examples=20)
    @given(st.integers(0, 2 ** 32), st.integers(1, 4), st.integers(1, 5))
    def test_conv_pool_dense_8x8(self, seed, c, k):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(c, 8, 8))
        w = rng.normal(size=(k, c, 3, 3))
        b = rng.normal(size=k)
        assert rel_err(fn.conv3x3_relu(x, w, b), conv3x3_relu(x, w, b)) <= 1e-9
        assert np.array_equal(fn.max_pool2x2(x), max_pool2x2(x))
        wd = rng.normal(size=(k, c * 64))
        assert rel_err(fn.dense_relu(x.ravel(), wd, b), dense_relu(x.ravel(), wd, b)) <= 1e-9

    @settings(max_examples=20)
    @given(st.integers(0, 2 ** 32), st.integers(1, 11), st.integers(1, 11))
    def test_winograd_any_size(self, seed, h, w):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, h, w))
        k = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = fn.winograd_conv3x3_relu(torch.from_numpy(x.transpose(1, 2, 0).copy()),
                                       torch.from_numpy(fn.winograd_kernel(k)), torch.from_numpy(b))
        assert rel_err(got.numpy().transpose(2, 0, 1), conv3x3_relu(x, k, b)) <= 1e-9

    def test_winograd_float32_close(self, vgg):
        w, b = vgg[1].layers["conv4_2"]
        x = np.random.default_rng(2).random((512, 28, 28)).astype(np.float32)
        direct = fn.conv3x3_relu(x, w, b)
        wino = fn.winograd_conv3x3_relu(torch.from_numpy(x.transpose(1, 2, 0).copy()),
                                        vgg[1].winograd("conv4_2"), torch.from_numpy(b))
        assert rel_err(wino.numpy().transpose(2, 0, 1), direct) <= 1e-4


class TestForward:
    def test_lengths_and_nonnegative(self, vgg):
        img = np.random.default_rng(3).random((224, 224, 3)).astype(np.float32)
        fc1, fc2 = fn.forward(*vgg, img)
        assert fc1.shape == (4096,) and fc2.shape == (4096,)
        assert (fc1 >= 0).all() and (fc2 >= 0).all()
        assert np.isfinite(fc1).all() and fc1.any()

    def test_zero_image_zero_bias(self, vgg):
        fc1, fc2 = fn.forward(*vgg, np.zeros((224, 224, 3), np.float32))
        assert not fc1.any() and not fc2.any()

    def test_block_shapes(self, vgg):
        acts = fn.block_activations(*vgg, np.random.default_rng(4).random((224, 224, 3)))
        for b, act in enumerate(acts, start=1):
            assert act.shape == fn.VGG16.activation_shape(b) == (fn.VGG16.blocks[b - 1][1],
                                                                 224 >> b, 224 >> b)
            assert (act >= 0).all()

    def test_bit_stable_across_batching(self, vgg):
        imgs = np.random.default_rng(5).random((3, 224, 224, 3)).astype(np.float32)
        batched = fn.forward_batch(*vgg, imgs, batch_size=8)
        for i in range(3):
            single = fn.forward(*vgg, imgs[i])
            assert batched[0][i].tobytes() == single[0].tobytes()
            assert batched[1][i].tobytes() == single[1].tobytes()

    def test_non_finite_input(self, vgg):
        img = np.zeros((224, 224, 3), np.float32)
        img[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            fn.forward(*vgg, img)

    def test_wrong_shape(self, vgg):
        with pytest.raises(ValueError):
            fn.forward(*vgg, np.zeros((100, 100, 3), np.float32))

    def test_extract_tap(self):
        with pytest.raises(ValueError):
            fn.extract_features([], tap="fc3")
        assert fn.extract_features([]).shape == (0, 4096)


class TestResize:
    def test_same_size_identity(self):
        img = np.random.default_rng(6).integers(0, 256, (224, 224, 3), dtype=np.uint8)
        assert np.array_equal(fn.resize_to_input(img) * 255.0, img.astype(np.float64))

    def test_constant(self):
        out = fn.resize_to_input(np.full((448, 448, 3), 51, np.uint8))
        assert np.allclose(out, 0.2, atol=1e-15)

    def test_two_by_two_gradient(self):
        img = np.zeros((2, 2, 3), np.uint8)
        img[:, 1] = 255
        out = fn.resize_to_input(img)
        pos = np.clip((np.arange(224) + 0.5) * (2 / 224) - 0.5, 0, 1)
        assert np.allclose(out[:, :, 0], np.tile(pos, (224, 1)), atol=1e-12)
        assert out[0, 0, 0] == 0.0 and out[0, -1, 0] == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            fn.resize_to_input(np.zeros((0, 0, 3), np.uint8))


class TestWeightFile:
    def test_round_trip(self, tmp_path):
        _, w = fn.build_network(1, TINY)
        path = tmp_path / "w.tlwt"
        fn.save_weights(path, w)
        back = fn.load_weights(path, TINY)
        for name, (a, b) in w.layers.items():
            assert np.array_equal(back.layers[name][0], a) and np.array_equal(back.layers[name][1], b)
        assert back.provenance.startswith("loaded-file")

    def test_header_layout(self, tmp_path):
        _, w = fn.build_network(1, TINY)
        path = tmp_path / "w.tlwt"
        fn.save_weights(path, w)
        raw = path.read_bytes()
        assert raw[:4] == b"TLWT"
        assert struct.unpack("<HH", raw[4:8]) == (1, 2 * len(w.layers))
        (nlen,) = struct.unpack("<H", raw[8:10])
        assert raw[10:10 + nlen] == b"conv1_1.weight"
        rank, *dims = struct.unpack("<H4I", raw[10 + nlen:10 + nlen + 18])
        assert rank == 4 and tuple(dims) == (2, 3, 3, 3)

    def _written(self, tmp_path, weights=None):
        _, w = weights or fn.build_network(1, TINY)
        path = tmp_path / "w.tlwt"
        fn.save_weights(path, w)
        return path

    def test_bad_magic(self, tmp_path):
        path = self._written(tmp_path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(fn.WeightFileError):
            fn.load_weights(path, TINY)

    def test_truncated(self, tmp_path):
        path = self._written(tmp_path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(fn.WeightFileError):
            fn.load_weights(path, TINY)

    def test_trailing(self, tmp_path):
        path = self._written(tmp_path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(fn.WeightFileError):
            fn.load_weights(path, TINY)

    def test_shape_mismatch(self, tmp_path):
        path = self._written(tmp_path)
        other = fn.NetworkSpec(blocks=((1, 3), (1, 3), (2, 4), (2, 3), (1, 2)), fc=(8, 6, 5),
                               input_size=32)
        with pytest.raises(fn.WeightFileError):
            fn.load_weights(path, other)

    def test_non_finite(self, tmp_path):
        spec, w = fn.build_network(1, TINY)
        w.layers["fc2"][0][0, 0] = np.inf
        path = self._written(tmp_path, (spec, w))
        with pytest.raises(fn.WeightFileError):
            fn.load_weights(path, TINY)

    def test_resolve(self, tmp_path):
        assert fn.resolve_weights("random:0")[1] is fn.cached_network(0)[1]
        with pytest.raises(FileNotFoundError):
            fn.resolve_weights(str(tmp_path / "missing.tlwt"))
