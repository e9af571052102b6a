"""U-Net and LeNet-5 builders, training loops, and inference.

Both networks run on the tensor engine in this package. The U-Net encoder
has `depth` levels of two 3x3 same-convs + relu with max pooling between
levels; the decoder mirrors it with nearest-neighbor upsampling, a learnable
3x3 conv, and a skip concatenation from the matching encoder level; a 1x1
conv + sigmoid produces the mask head. LeNet-5 is the classic
conv5(6)-pool-conv5(16)-pool-dense(120)-dense(84)-dense(classes) stack,
adapted to 3-channel 32x32 input with relu activations.

Weights start Glorot-uniform from a seeded generator, biases at zero, so a
(seed, data, config) triple fully determines every checkpoint byte.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Adam,
    Tensor,
    concat_channels,
    conv2d,
    dense,
    loss_bce,
    loss_softmax_ce,
    maxpool2d,
    relu,
    sigmoid,
    softmax,
    upsample2x,
)
from .errors import ConfigError, DimensionError, DivergenceError, NoInputError

logger = logging.getLogger(__name__)

LABELS = ("benign", "malignant")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str                                  # unet | lenet5
    input_size: tuple[int, int, int]           # (channels, height, width)
    depth: int = 4                             # unet encoder levels
    base_channels: int = 8                     # unet first-level channels
    class_count: int = 2                       # lenet5 output classes

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_size": list(self.input_size),
                "depth": self.depth, "base_channels": self.base_channels,
                "class_count": self.class_count}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(kind=d["kind"], input_size=tuple(d["input_size"]),
                   depth=d["depth"], base_channels=d["base_channels"],
                   class_count=d["class_count"])


@dataclass
class Checkpoint:
    spec: NetworkSpec
    parameters: dict[str, np.ndarray]
    training_log: list[float]
    seed: int
    iteration_count: int


@dataclass
class TrainConfig:
    iterations: int
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError("mask_threshold must lie in (0, 1)")


def _glorot(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ConvLayer:
    def __init__(self, rng, c_in: int, c_out: int, ksize: int, padding: str):
        k = ksize * ksize
        self.w = Tensor(_glorot(rng, (c_out, c_in, ksize, ksize),
                                c_in * k, c_out * k), requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, self.padding)


class DenseLayer:
    def __init__(self, rng, n_in: int, n_out: int):
        self.w = Tensor(_glorot(rng, (n_out, n_in), n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.w, self.b)


class _Network:
    """Shared parameter bookkeeping for both architectures."""

    spec: NetworkSpec

    def __init__(self):
        self._layers: dict[str, ConvLayer | DenseLayer] = {}

    def _add(self, name: str, layer):
        self._layers[name] = layer
        return layer

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in self._layers.items():
            out[f"{name}.w"] = layer.w
            out[f"{name}.b"] = layer.b
        return out

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.parameters().items()}

    def set_parameters(self, arrays: dict[str, np.ndarray]):
        params = self.parameters()
        if set(arrays) != set(params):
            missing = set(params) ^ set(arrays)
            raise ConfigError(f"parameter name mismatch: {sorted(missing)}")
        for name, tensor in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise DimensionError(
                    f"parameter {name}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = arr.copy()

    def zero_grad(self):
        for t in self.parameters().values():
            t.zero_grad()


class UNet(_Network):
    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__()
        c_in, h, w = spec.input_size
        factor = 2 ** spec.depth
        if h % factor or w % factor:
            raise ConfigError(
                f"input {h}x{w} not divisible by 2^depth = {factor}")
        self.spec = spec
        rng = np.random.default_rng(seed)
        ch = c_in
        for lv in range(spec.depth):
            out_ch = spec.base_channels * 2 ** lv
            self._add(f"enc{lv}.conv1", ConvLayer(rng, ch, out_ch, 3, "same"))
            self._add(f"enc{lv}.conv2", ConvLayer(rng, out_ch, out_ch, 3, "same"))
            ch = out_ch
        bott = spec.base_channels * 2 ** spec.depth
        self._add("bottleneck.conv1", ConvLayer(rng, ch, bott, 3, "same"))
        self._add("bottleneck.conv2", ConvLayer(rng, bott, bott, 3, "same"))
        ch = bott
        for lv in reversed(range(spec.depth)):
            skip_ch = spec.base_channels * 2 ** lv
            self._add(f"dec{lv}.up", ConvLayer(rng, ch, skip_ch, 3, "same"))
            self._add(f"dec{lv}.conv1", ConvLayer(rng, 2 * skip_ch, skip_ch, 3, "same"))
            self._add(f"dec{lv}.conv2", ConvLayer(rng, skip_ch, skip_ch, 3, "same"))
            ch = skip_ch
        self._add("head", ConvLayer(rng, ch, 1, 1, "same"))

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        for lv in range(self.spec.depth):
            x = relu(self._layers[f"enc{lv}.conv1"](x))
            x = relu(self._layers[f"enc{lv}.conv2"](x))
            skips.append(x)
            x = maxpool2d(x)
        x = relu(self._layers["bottleneck.conv1"](x))
        x = relu(self._layers["bottleneck.conv2"](x))
        for lv in reversed(range(self.spec.depth)):
            x = relu(self._layers[f"dec{lv}.up"](upsample2x(x)))
            x = concat_channels(skips[lv], x)
            x = relu(self._layers[f"dec{lv}.conv1"](x))
            x = relu(self._layers[f"dec{lv}.conv2"](x))
        return sigmoid(self._layers["head"](x))


class LeNet5(_Network):
    def __init__(self, spec: NetworkSpec, seed: int = 0):
        super().__init__()
        if spec.input_size != (3, 32, 32):
            raise ConfigError(
                f"lenet5 requires (3, 32, 32) input, got {spec.input_size}")
        if spec.class_count < 2:
            raise ConfigError("class_count must be >= 2")
        self.spec = spec
        rng = np.random.default_rng(seed)
        self._add("conv1", ConvLayer(rng, 3, 6, 5, "valid"))
        self._add("conv2", ConvLayer(rng, 6, 16, 5, "valid"))
        self._add("fc1", DenseLayer(rng, 16 * 5 * 5, 120))
        self._add("fc2", DenseLayer(rng, 120, 84))
        self._add("fc3", DenseLayer(rng, 84, spec.class_count))

    def forward(self, x: Tensor) -> Tensor:
        """Logits of shape (class_count,) or (B, class_count)."""
        batched = x.data.ndim == 4
        x = maxpool2d(relu(self._layers["conv1"](x)))
        x = maxpool2d(relu(self._layers["conv2"](x)))
        flat = (x.data.shape[0], -1) if batched else (-1,)
        x = x.reshape(*flat)
        x = relu(self._layers["fc1"](x))
        x = relu(self._layers["fc2"](x))
        return self._layers["fc3"](x)


def build_unet(spec: NetworkSpec, seed: int = 0) -> UNet:
    if spec.kind != "unet":
        raise ConfigError(f"spec.kind must be 'unet', got {spec.kind!r}")
    return UNet(spec, seed)


def build_lenet5(spec: NetworkSpec, seed: int = 0) -> LeNet5:
    if spec.kind != "lenet5":
        raise ConfigError(f"spec.kind must be 'lenet5', got {spec.kind!r}")
    return LeNet5(spec, seed)


def restore_network(ckpt: Checkpoint) -> UNet | LeNet5:
    builder = build_unet if ckpt.spec.kind == "unet" else build_lenet5
    net = builder(ckpt.spec, seed=ckpt.seed)
    net.set_parameters(ckpt.parameters)
    return net


class _BatchSampler:
    """Seeded epoch-shuffled minibatch index stream."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self.queue: deque[int] = deque()

    def next(self) -> np.ndarray:
        if len(self.queue) < self.batch_size:
            self.queue.extend(self.rng.permutation(self.n).tolist())
        return np.array([self.queue.popleft() for _ in range(self.batch_size)])


def _run_training(net: _Network, step_loss, cfg: TrainConfig, n: int) -> Checkpoint:
    sampler = _BatchSampler(n, cfg.batch_size, cfg.seed)
    opt = Adam(list(net.parameters().values()), learning_rate=cfg.learning_rate,
               beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    log: list[float] = []
    for it in range(cfg.iterations):
        idx = sampler.next()
        net.zero_grad()
        loss = step_loss(idx)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(it)
        loss.backward()
        opt.step()
        log.append(value)
    return Checkpoint(spec=net.spec, parameters=net.parameter_arrays(),
                      training_log=log, seed=cfg.seed,
                      iteration_count=cfg.iterations)


def train_segmentation(net: UNet, images, masks, cfg: TrainConfig) -> Checkpoint:
    """Adam + binary cross-entropy over shuffled minibatches of image/mask pairs."""
    if len(images) == 0:
        raise NoInputError("no training samples")
    if len(images) != len(masks):
        raise DimensionError(f"{len(images)} images but {len(masks)} masks")
    xs = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    ys = np.stack([np.asarray(m, dtype=np.float64).reshape(1, *np.asarray(m).shape[-2:])
                   for m in masks])
    if xs.shape[2:] != ys.shape[2:]:
        raise DimensionError(
            f"image spatial dims {xs.shape[2:]} != mask dims {ys.shape[2:]}")

    def step_loss(idx):
        pred = net.forward(Tensor(xs[idx]))
        return loss_bce(pred, ys[idx])

    return _run_training(net, step_loss, cfg, len(images))


def train_classifier(net: LeNet5, crops, labels, cfg: TrainConfig) -> Checkpoint:
    """Adam + softmax cross-entropy over shuffled minibatches of labeled crops."""
    if len(crops) == 0:
        raise NoInputError("no training samples")
    label_idx = np.array([LABELS.index(l) if isinstance(l, str) else int(l)
                          for l in labels], dtype=np.int64)
    if len(crops) != len(label_idx):
        raise DimensionError(f"{len(crops)} crops but {len(label_idx)} labels")
    xs = np.stack([np.asarray(c, dtype=np.float64) for c in crops])
    if xs.shape[1:] != net.spec.input_size:
        raise DimensionError(
            f"crop shape {xs.shape[1:]} != network input {net.spec.input_size}")
    if len(np.unique(label_idx)) < 2:
        logger.warning("classifier training set contains a single class")

    def step_loss(idx):
        logits = net.forward(Tensor(xs[idx]))
        return loss_softmax_ce(logits, label_idx[idx])

    return _run_training(net, step_loss, cfg, len(crops))


def segment(image, source: Checkpoint | UNet, mask_threshold: float = 0.5) -> np.ndarray:
    """Binary mask from a trained U-Net: sigmoid output >= mask_threshold."""
    net = restore_network(source) if isinstance(source, Checkpoint) else source
    x = np.asarray(image, dtype=np.float64)
    if x.shape != net.spec.input_size:
        raise DimensionError(
            f"image shape {x.shape} != network input {net.spec.input_size}")
    probs = net.forward(Tensor(x)).data[0]
    return probs >= mask_threshold


def classify(crop, source: Checkpoint | LeNet5) -> tuple[str, tuple[float, float]]:
    """Label plus class probabilities; exact ties resolve to benign."""
    net = restore_network(source) if isinstance(source, Checkpoint) else source
    x = np.asarray(crop, dtype=np.float64)
    if x.shape != net.spec.input_size:
        raise DimensionError(
            f"crop shape {x.shape} != network input {net.spec.input_size}")
    probs = softmax(net.forward(Tensor(x)).data)
    return LABELS[int(probs.argmax())], (float(probs[0]), float(probs[1]))
