"""Dense-tensor forward ops with reverse-mode gradients, losses, and Adam.

Every value is a float64 numpy array wrapped in a Tensor node. Ops build an
implicit DAG through parent links; backward() walks it in reverse topological
order and accumulates gradients into every reachable tensor that requires
them. Graphs are single-use: build, backward, discard.

Convolution is cross-correlation (no kernel flip) with stride 1; `same`
padding preserves spatial dims. All spatial ops accept either (C,H,W) or a
leading batch axis (N,C,H,W).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError

BCE_CLIP = 1e-7


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-accumulate d(self)/d(everything reachable). Scalar only."""
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss")
        for node in reversed(topo_order(self)):
            if node is self:
                node._accumulate(np.ones_like(node.data))
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- elementwise arithmetic (broadcasting supported) --

    def __add__(self, other):
        return _binary(self, _as_tensor(other), np.add,
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __mul__(self, other):
        return _binary(self, _as_tensor(other), np.multiply,
                       lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __sub__(self, other):
        return _binary(self, _as_tensor(other), np.subtract,
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __neg__(self):
        return self * -1.0

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise ContractError("only scalar exponents supported")
        out = _node(self.data ** p, (self,))
        if out.requires_grad:
            a = self.data

            def back(g):
                self._accumulate(g * p * a ** (p - 1))

            out._backward_fn = back
        return out

    def sum(self):
        out = _node(np.asarray(self.data.sum()), (self,))
        if out.requires_grad:
            def back(g):
                self._accumulate(np.full_like(self.data, float(g)))

            out._backward_fn = back
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def reshape(self, *shape):
        old = self.data.shape
        out = _node(self.data.reshape(*shape), (self,))
        if out.requires_grad:
            def back(g):
                self._accumulate(g.reshape(old))

            out._backward_fn = back
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to `shape`, inverting numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a: Tensor, b: Tensor, fwd, grads) -> Tensor:
    out = _node(fwd(a.data, b.data), (a, b))
    if out.requires_grad:
        ad, bd = a.data, b.data

        def back(g):
            ga, gb = grads(g, ad, bd)
            if a.requires_grad:
                a._accumulate(_unbroadcast(ga, ad.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(gb, bd.shape))

        out._backward_fn = back
    return out


def topo_order(root: Tensor) -> list[Tensor]:
    """Topologically ordered node list (every parent before its consumer)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    loss.backward()


# -- shape helpers -----------------------------------------------------------

def _with_batch(x: np.ndarray, spatial_ndim: int) -> tuple[np.ndarray, bool]:
    """Return (batched array, had_batch). spatial_ndim counts non-batch dims."""
    if x.ndim == spatial_ndim:
        return x[None], False
    if x.ndim == spatial_ndim + 1:
        return x, True
    raise DimensionError(f"expected {spatial_ndim}D or {spatial_ndim + 1}D, got {x.ndim}D")


# -- spatial ops -------------------------------------------------------------

def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, padding: str = "valid") -> Tensor:
    """Stride-1 cross-correlation of (N,)C,H,W input with (Co,Ci,kh,kw) kernels."""
    xd, batched = _with_batch(x.data, 3)
    k = kernels.data
    if k.ndim != 4:
        raise DimensionError(f"kernels must be 4D, got {k.ndim}D")
    co, ci, kh, kw = k.shape
    if xd.shape[1] != ci:
        raise DimensionError(f"input has {xd.shape[1]} channels, kernels expect {ci}")
    if bias.data.shape != (co,):
        raise DimensionError(f"bias shape {bias.data.shape} != ({co},)")
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        pads = ((0, 0), (0, 0), (ph, kh - 1 - ph), (pw, kw - 1 - pw))
        xp = np.pad(xd, pads)
    elif padding == "valid":
        ph = pw = 0
        xp = xd
    else:
        raise ContractError(f"padding must be 'same' or 'valid', got {padding!r}")
    n, _, hp, wp = xp.shape
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # cols: (N, Ci, OH, OW, kh, kw)
    res = np.tensordot(k, cols, axes=([1, 2, 3], [1, 4, 5]))  # (Co, N, OH, OW)
    res = res.transpose(1, 0, 2, 3) + bias.data.reshape(1, -1, 1, 1)
    out = _node(res if batched else res[0], (x, kernels, bias))
    if out.requires_grad:
        h_in, w_in = xd.shape[2], xd.shape[3]

        def back(g):
            g4 = g if batched else g[None]
            if bias.requires_grad:
                bias._accumulate(g4.sum(axis=(0, 2, 3)))
            if kernels.requires_grad:
                kernels._accumulate(
                    np.tensordot(g4, cols, axes=([0, 2, 3], [0, 2, 3])))
            if x.requires_grad:
                # input gradient = full correlation of g with flipped kernels
                kt = k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (Ci,Co,kh,kw)
                gp = np.pad(g4, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gcols = np.lib.stride_tricks.sliding_window_view(
                    gp, (kh, kw), axis=(2, 3))                  # (N,Co,Hp,Wp,kh,kw)
                dxp = np.tensordot(kt, gcols, axes=([1, 2, 3], [1, 4, 5]))
                dx = dxp.transpose(1, 0, 2, 3)[:, :, ph:ph + h_in, pw:pw + w_in]
                x._accumulate(dx if batched else dx[0])

        out._backward_fn = back
    return out


def maxpool2d(x: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient routes to the first row-major argmax."""
    xd, batched = _with_batch(x.data, 3)
    n, c, h, w = xd.shape
    if h % window or w % window:
        raise DimensionError(f"spatial dims ({h},{w}) not divisible by window {window}")
    h2, w2 = h // window, w // window
    tiles = (xd.reshape(n, c, h2, window, w2, window)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(n, c, h2, w2, window * window))
    idx = tiles.argmax(axis=-1)
    res = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    out = _node(res if batched else res[0], (x,))
    if out.requires_grad:
        def back(g):
            g4 = g if batched else g[None]
            scatter = np.zeros_like(tiles)
            np.put_along_axis(scatter, idx[..., None], g4[..., None], axis=-1)
            dx = (scatter.reshape(n, c, h2, w2, window, window)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h, w))
            x._accumulate(dx if batched else dx[0])

        out._backward_fn = back
    return out


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling; each input cell fans out to a 2x2 block."""
    xd, batched = _with_batch(x.data, 3)
    n, c, h, w = xd.shape
    res = xd.repeat(2, axis=2).repeat(2, axis=3)
    out = _node(res if batched else res[0], (x,))
    if out.requires_grad:
        def back(g):
            g4 = g if batched else g[None]
            dx = g4.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
            x._accumulate(dx if batched else dx[0])

        out._backward_fn = back
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack b's channels after a's; spatial dims (and batch) must match."""
    ad, a_batched = _with_batch(a.data, 3)
    bd, b_batched = _with_batch(b.data, 3)
    if a_batched != b_batched or ad.shape[0] != bd.shape[0]:
        raise DimensionError("batch mismatch in concat_channels")
    if ad.shape[2:] != bd.shape[2:]:
        raise DimensionError(
            f"spatial mismatch in concat_channels: {ad.shape[2:]} vs {bd.shape[2:]}")
    c1 = ad.shape[1]
    res = np.concatenate([ad, bd], axis=1)
    out = _node(res if a_batched else res[0], (a, b))
    if out.requires_grad:
        def back(g):
            g4 = g if a_batched else g[None]
            if a.requires_grad:
                a._accumulate(g4[:, :c1] if a_batched else g4[0, :c1])
            if b.requires_grad:
                b._accumulate(g4[:, c1:] if a_batched else g4[0, c1:])

        out._backward_fn = back
    return out


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map weights @ x + bias for (N,) or (B,N) input."""
    w, b = weights.data, bias.data
    if w.ndim != 2:
        raise DimensionError(f"weights must be 2D, got {w.ndim}D")
    m, n_in = w.shape
    xd, batched = _with_batch(x.data, 1)
    if xd.shape[1] != n_in:
        raise DimensionError(f"input size {xd.shape[1]} != weights inner dim {n_in}")
    if b.shape != (m,):
        raise DimensionError(f"bias shape {b.shape} != ({m},)")
    res = xd @ w.T + b
    out = _node(res if batched else res[0], (x, weights, bias))
    if out.requires_grad:
        def back(g):
            g2 = g if batched else g[None]
            if weights.requires_grad:
                weights._accumulate(g2.T @ xd)
            if bias.requires_grad:
                bias._accumulate(g2.sum(axis=0))
            if x.requires_grad:
                dx = g2 @ w
                x._accumulate(dx if batched else dx[0])

        out._backward_fn = back
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise relu or sigmoid."""
    if kind == "relu":
        res = np.maximum(x.data, 0.0)
        out = _node(res, (x,))
        if out.requires_grad:
            mask = x.data > 0

            def back(g):
                x._accumulate(g * mask)

            out._backward_fn = back
        return out
    if kind == "sigmoid":
        res = expit(x.data)
        out = _node(res, (x,))
        if out.requires_grad:
            def back(g):
                x._accumulate(g * res * (1.0 - res))

            out._backward_fn = back
        return out
    raise ContractError(f"unknown activation {kind!r}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


# -- losses ------------------------------------------------------------------

def loss_bce(predicted: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [BCE_CLIP, 1-BCE_CLIP]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if predicted.data.shape != t.shape:
        raise DimensionError(
            f"prediction shape {predicted.data.shape} != target shape {t.shape}")
    p = np.clip(predicted.data, BCE_CLIP, 1.0 - BCE_CLIP)
    n = p.size
    val = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    out = _node(np.asarray(val), (predicted,))
    if out.requires_grad:
        inside = (predicted.data > BCE_CLIP) & (predicted.data < 1.0 - BCE_CLIP)

        def back(g):
            dp = (p - t) / (p * (1.0 - p) * n)
            predicted._accumulate(float(g) * dp * inside)

        out._backward_fn = back
    return out


def loss_softmax_ce(logits: Tensor, class_index) -> Tensor:
    """Mean softmax cross-entropy with max-subtraction stabilization.

    Accepts (K,) logits with an int class_index, or (B,K) with B indices.
    """
    ld, batched = _with_batch(logits.data, 1)
    b, k = ld.shape
    idx = np.atleast_1d(np.asarray(class_index, dtype=np.int64))
    if idx.shape != (b,):
        raise DimensionError(f"expected {b} class indices, got shape {idx.shape}")
    if (idx < 0).any() or (idx >= k).any():
        raise IndexError(f"class index out of range [0, {k})")
    z = ld - ld.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    val = (lse - z[np.arange(b), idx]).mean()
    out = _node(np.asarray(val), (logits,))
    if out.requires_grad:
        probs = np.exp(z - lse[:, None])

        def back(g):
            d = probs.copy()
            d[np.arange(b), idx] -= 1.0
            d *= float(g) / b
            logits._accumulate(d if batched else d[0])

        out._backward_fn = back
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis (plain array helper)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- optimizer ---------------------------------------------------------------

class Adam:
    """Adam with bias correction over a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError("betas must lie in [0, 1)")
        if epsilon <= 0.0:
            raise ContractError("epsilon must be positive")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


# -- gradient verification ---------------------------------------------------

def grad_check(build_fn: Callable[[list[Tensor]], Tensor],
               input_shapes: Sequence[tuple[int, ...]] | None = None,
               *, wrt: Sequence[Tensor] | None = None,
               h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    build_fn maps a list of tensors to a scalar loss and must be re-evaluable
    (deterministic in everything but the tensors' current data). Either pass
    input_shapes (random standard-normal tensors are generated) or wrt (an
    explicit list of tensors to differentiate, e.g. network parameters).
    """
    if wrt is None:
        if input_shapes is None:
            raise ContractError("grad_check needs input_shapes or wrt")
        rng = np.random.default_rng(seed)
        wrt = [Tensor(rng.standard_normal(s), requires_grad=True)
               for s in input_shapes]
    else:
        wrt = list(wrt)
    for t in wrt:
        t.zero_grad()
    loss = build_fn(wrt)
    loss.backward()
    analytic = [t.grad.copy() for t in wrt]

    max_err = 0.0
    for t, ana in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            f_plus = float(build_fn(wrt).data)
            flat[j] = orig - h
            f_minus = float(build_fn(wrt).data)
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(ana_flat[j] - numeric) / max(abs(ana_flat[j]), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    return max_err
