"""Network builder, training-loop, and inference tests.

The LeNet-5 parameter count is frozen from layer arithmetic:
conv1 (5*5*3+1)*6 = 456, conv2 (5*5*6+1)*16 = 2416, fc1 (400+1... bias
separate) 400*120+120 = 48120, fc2 120*84+84 = 10164, fc3 84*2+2 = 170,
total 61326.
"""

import numpy as np
import pytest

from lesionlab.autodiff import Tensor, grad_check, loss_bce, loss_softmax_ce
from lesionlab.errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    NoInputError,
)
from lesionlab.networks import (
    Checkpoint,
    LABELS,
    NetworkSpec,
    TrainConfig,
    build_lenet5,
    build_unet,
    classify,
    restore_network,
    segment,
    train_classifier,
    train_segmentation,
)

UNET_TINY = NetworkSpec(kind="unet", input_size=(3, 16, 16), depth=2, base_channels=2)
LENET_SPEC = NetworkSpec(kind="lenet5", input_size=(3, 32, 32), class_count=2)


def toy_two_color_crops(n: int, seed: int):
    """Bluish benign vs reddish malignant color blobs."""
    rng = np.random.default_rng(seed)
    crops, labels = [], []
    for i in range(n):
        benign = i % 2 == 0
        base = np.array([0.2, 0.3, 0.8]) if benign else np.array([0.8, 0.25, 0.2])
        crop = np.clip(base[:, None, None]
                       + rng.normal(0, 0.05, (3, 32, 32)), 0, 1)
        crops.append(crop)
        labels.append("benign" if benign else "malignant")
    return crops, labels


class TestBuildUnet:
    def test_encoder_channel_widths(self):
        spec = NetworkSpec(kind="unet", input_size=(3, 64, 64), depth=4,
                           base_channels=8)
        net = build_unet(spec, seed=0)
        params = net.parameters()
        for lv, expected in enumerate([8, 16, 32, 64]):
            assert params[f"enc{lv}.conv1.w"].data.shape[0] == expected
            assert params[f"enc{lv}.conv2.w"].data.shape[0] == expected
        assert params["bottleneck.conv1.w"].data.shape[0] == 128
        assert params["head.w"].data.shape == (1, 8, 1, 1)

    def test_divisibility_contract(self):
        ok = NetworkSpec(kind="unet", input_size=(3, 256, 256), depth=4)
        build_unet(ok, seed=0)
        bad = NetworkSpec(kind="unet", input_size=(3, 100, 100), depth=4)
        with pytest.raises(ConfigError):
            build_unet(bad, seed=0)

    def test_forward_shape_and_range_sweep(self):
        rng = np.random.default_rng(5)
        for depth, base, size in [(1, 2, 16), (2, 3, 16), (3, 2, 32)]:
            spec = NetworkSpec(kind="unet", input_size=(3, size, size),
                               depth=depth, base_channels=base)
            net = build_unet(spec, seed=depth)
            out = net.forward(Tensor(rng.random((3, size, size))))
            assert out.data.shape == (1, size, size)
            assert (out.data > 0).all() and (out.data < 1).all()

    def test_wrong_kind_rejected(self):
        with pytest.raises(ConfigError):
            build_unet(LENET_SPEC)


class TestBuildLenet5:
    def test_parameter_count_closed_form(self):
        net = build_lenet5(LENET_SPEC, seed=0)
        total = sum(t.data.size for t in net.parameters().values())
        assert total == 61326

    def test_softmax_probabilities_normalized(self):
        net = build_lenet5(LENET_SPEC, seed=1)
        _, probs = classify(np.random.default_rng(2).random((3, 32, 32)), net)
        assert abs(sum(probs) - 1.0) < 1e-9

    def test_same_seed_same_initial_parameters(self):
        a = build_lenet5(LENET_SPEC, seed=42).parameter_arrays()
        b = build_lenet5(LENET_SPEC, seed=42).parameter_arrays()
        assert set(a) == set(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_wrong_input_size_rejected(self):
        with pytest.raises(ConfigError):
            build_lenet5(NetworkSpec(kind="lenet5", input_size=(3, 28, 28)))


class TestWholeNetworkGradients:
    # The seeds below are pinned to a configuration verified to keep every
    # relu input and pool-window gap clear of the +-h finite-difference
    # window (central differences are undefined across kinks). The loss is
    # scaled to ~1e-3 so the checker's 1e-8 absolute denominator floor sits
    # at the float64 cancellation-noise level of (f(x+h)-f(x-h)).
    def test_tiny_unet_grad_check(self):
        net = build_unet(UNET_TINY, seed=31)
        rng = np.random.default_rng(100)
        x = rng.random((3, 16, 16))
        target = (rng.random((1, 16, 16)) > 0.5).astype(float)
        params = list(net.parameters().values())
        err = grad_check(
            lambda _: loss_bce(net.forward(Tensor(x)), target) * 1e-3,
            wrt=params, h=1e-5)
        assert err <= 1e-4

    def test_tiny_lenet_style_grad_check(self):
        # reduced classifier of the same layer sequence: conv-pool-conv-pool,
        # then three dense layers into a softmax cross-entropy
        from lesionlab.autodiff import conv2d, dense, maxpool2d, relu

        rng = np.random.default_rng(6)
        x = rng.random((3, 14, 14))
        k1 = Tensor(rng.standard_normal((2, 3, 3, 3)) * 0.3, requires_grad=True)
        b1 = Tensor(np.zeros(2), requires_grad=True)
        k2 = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
        b2 = Tensor(np.zeros(3), requires_grad=True)
        w1 = Tensor(rng.standard_normal((6, 12)) * 0.3, requires_grad=True)
        v1 = Tensor(np.zeros(6), requires_grad=True)
        w2 = Tensor(rng.standard_normal((4, 6)) * 0.3, requires_grad=True)
        v2 = Tensor(np.zeros(4), requires_grad=True)
        w3 = Tensor(rng.standard_normal((2, 4)) * 0.3, requires_grad=True)
        v3 = Tensor(np.zeros(2), requires_grad=True)

        def build(_):
            h = maxpool2d(relu(conv2d(Tensor(x), k1, b1, "valid")))
            h = maxpool2d(relu(conv2d(h, k2, b2, "valid")))
            h = h.reshape(-1)
            h = relu(dense(h, w1, v1))
            h = relu(dense(h, w2, v2))
            return loss_softmax_ce(dense(h, w3, v3), 1) * 1e-3

        err = grad_check(build, wrt=[k1, b1, k2, b2, w1, v1, w2, v2, w3, v3],
                         h=1e-5)
        assert err <= 1e-4


class TestTrainSegmentation:
    def _data(self, n=2, size=16, seed=0):
        rng = np.random.default_rng(seed)
        images = [rng.random((3, size, size)) for _ in range(n)]
        masks = []
        for _ in range(n):
            m = np.zeros((size, size))
            m[4:12, 4:12] = 1.0
            masks.append(m)
        return images, masks

    def test_loss_descends_and_log_complete(self):
        images, masks = self._data()
        net = build_unet(UNET_TINY, seed=1)
        ckpt = train_segmentation(net, images, masks,
                                  TrainConfig(iterations=60, learning_rate=3e-3,
                                              batch_size=2, seed=5))
        assert len(ckpt.training_log) == 60
        assert ckpt.training_log[-1] < ckpt.training_log[0]
        assert ckpt.iteration_count == 60

    def test_bitwise_deterministic_for_seed(self):
        images, masks = self._data(seed=3)
        cfg = TrainConfig(iterations=25, learning_rate=1e-3, batch_size=2, seed=9)
        a = train_segmentation(build_unet(UNET_TINY, seed=2), images, masks, cfg)
        b = train_segmentation(build_unet(UNET_TINY, seed=2), images, masks, cfg)
        assert a.training_log == b.training_log
        for name in a.parameters:
            np.testing.assert_array_equal(a.parameters[name], b.parameters[name])

    def test_empty_dataset_raises(self):
        net = build_unet(UNET_TINY, seed=1)
        with pytest.raises(NoInputError):
            train_segmentation(net, [], [], TrainConfig(iterations=1))

    def test_nan_input_raises_divergence_with_iteration(self):
        images, masks = self._data()
        images[0][0, 0, 0] = np.nan
        net = build_unet(UNET_TINY, seed=1)
        with pytest.raises(DivergenceError) as err:
            train_segmentation(net, images, masks,
                               TrainConfig(iterations=5, batch_size=2, seed=0))
        assert err.value.iteration == 0

    def test_mask_dimension_mismatch_raises(self):
        images, _ = self._data()
        bad_masks = [np.zeros((8, 8)), np.zeros((8, 8))]
        net = build_unet(UNET_TINY, seed=1)
        with pytest.raises(DimensionError):
            train_segmentation(net, images, bad_masks, TrainConfig(iterations=1))


class TestSegment:
    def test_zeroed_head_gives_all_ones_mask(self):
        net = build_unet(UNET_TINY, seed=4)
        params = net.parameter_arrays()
        params["head.w"] = np.zeros_like(params["head.w"])
        params["head.b"] = np.zeros_like(params["head.b"])
        net.set_parameters(params)
        mask = segment(np.random.default_rng(1).random((3, 16, 16)), net, 0.5)
        assert mask.all()        # sigmoid(0) = 0.5 and the rule is >=

    def test_mask_dimensions_match_input(self):
        net = build_unet(UNET_TINY, seed=4)
        mask = segment(np.random.default_rng(2).random((3, 16, 16)), net)
        assert mask.shape == (16, 16)
        assert mask.dtype == bool

    def test_size_mismatch_raises(self):
        net = build_unet(UNET_TINY, seed=4)
        with pytest.raises(DimensionError):
            segment(np.zeros((3, 32, 32)), net)


class TestTrainClassifier:
    def test_loss_log_and_determinism(self):
        crops, labels = toy_two_color_crops(8, seed=11)
        cfg = TrainConfig(iterations=40, learning_rate=1e-3, batch_size=4, seed=3)
        a = train_classifier(build_lenet5(LENET_SPEC, seed=5), crops, labels, cfg)
        b = train_classifier(build_lenet5(LENET_SPEC, seed=5), crops, labels, cfg)
        assert len(a.training_log) == 40
        assert a.training_log == b.training_log
        for name in a.parameters:
            np.testing.assert_array_equal(a.parameters[name], b.parameters[name])

    def test_single_class_warning_logged(self, caplog):
        crops, _ = toy_two_color_crops(4, seed=12)
        with caplog.at_level("WARNING"):
            train_classifier(build_lenet5(LENET_SPEC, seed=5), crops,
                             ["benign"] * 4,
                             TrainConfig(iterations=3, batch_size=2, seed=1))
        assert any("single class" in rec.message for rec in caplog.records)

    def test_empty_dataset_raises(self):
        with pytest.raises(NoInputError):
            train_classifier(build_lenet5(LENET_SPEC, seed=5), [], [],
                             TrainConfig(iterations=1))


class TestClassify:
    def test_probabilities_sum_to_one(self):
        net = build_lenet5(LENET_SPEC, seed=7)
        rng = np.random.default_rng(8)
        for _ in range(5):
            _, probs = classify(rng.random((3, 32, 32)), net)
            assert abs(probs[0] + probs[1] - 1.0) < 1e-9

    def test_equal_logits_tie_breaks_to_benign(self):
        net = build_lenet5(LENET_SPEC, seed=7)
        zeroed = {name: np.zeros_like(arr)
                  for name, arr in net.parameter_arrays().items()}
        net.set_parameters(zeroed)
        label, probs = classify(np.random.default_rng(9).random((3, 32, 32)), net)
        assert probs[0] == probs[1] == pytest.approx(0.5)
        assert label == "benign"
        assert LABELS.index(label) == 0

    def test_crop_size_mismatch_raises(self):
        net = build_lenet5(LENET_SPEC, seed=7)
        with pytest.raises(DimensionError):
            classify(np.zeros((3, 16, 16)), net)


class TestCheckpointRestore:
    def test_restore_reproduces_forward_bit_exactly(self):
        images = [np.random.default_rng(10).random((3, 16, 16))]
        masks = [np.zeros((16, 16))]
        net = build_unet(UNET_TINY, seed=6)
        ckpt = train_segmentation(net, images, masks,
                                  TrainConfig(iterations=5, batch_size=1, seed=2))
        restored = restore_network(ckpt)
        x = Tensor(images[0])
        np.testing.assert_array_equal(net.forward(x).data,
                                      restored.forward(x).data)

    def test_restore_validates_parameter_shapes(self):
        net = build_unet(UNET_TINY, seed=6)
        ckpt = Checkpoint(spec=UNET_TINY, parameters=net.parameter_arrays(),
                          training_log=[], seed=6, iteration_count=0)
        ckpt.parameters["head.w"] = np.zeros((2, 2))
        with pytest.raises(DimensionError):
            restore_network(ckpt)
