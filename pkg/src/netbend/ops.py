"""Forward/backward layer ops used by the metric CNN and the toy generator.

Every layer caches what its backward pass needs during ``forward``; calling
``backward`` first is a bug. Backward passes are hand-derived per op, checked
against central finite differences (see ``gradcheck``). Arrays are float32
for training and inference, float64 for gradient checks; layers follow the
dtype of their parameters/input.

Convolution is cross-correlation (no kernel flip) with the usual
floor-convention output size ``(H + 2*pad - kh)//stride + 1``.
"""
from __future__ import annotations

import numpy as np

from . import _kernels


class ShapeError(ValueError):
    """Input/parameter shapes disagree; the message names the dimension."""


class Param:
    """Trainable array plus its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], False
    if x.ndim == rank + 1:
        return x, True
    raise ShapeError(f"expected rank {rank} or {rank + 1} input, got shape {x.shape}")


class Conv2d:
    """2-D cross-correlation with bias. Input [C,H,W] or [N,C,H,W]."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0):
        weight = np.asarray(weight)
        bias = np.asarray(bias)
        if weight.ndim != 4:
            raise ShapeError(f"conv2d weight must be [C_out,C_in,kh,kw], got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"conv2d bias has {bias.shape} entries, weight declares "
                f"{weight.shape[0]} output channels"
            )
        self.weight = Param(weight)
        self.bias = Param(bias)
        self.stride = int(stride)
        self.padding = int(padding)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.weight.value.shape[2:]
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(
                f"conv2d: {h}x{w} input too small for {kh}x{kw} kernel "
                f"(stride {self.stride}, padding {self.padding})"
            )
        return oh, ow

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, batched = _batched(x, 3)
        co, ci, kh, kw = self.weight.value.shape
        n, c, h, w = xb.shape
        if c != ci:
            raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
        oh, ow = self._out_hw(h, w)
        col = _kernels.im2col(xb, kh, kw, self.stride, self.padding)
        w2 = self.weight.value.reshape(co, ci * kh * kw)
        y = np.matmul(w2, col).reshape(n, co, oh, ow)
        y += self.bias.value[None, :, None, None]
        self._cache = (col, xb.shape, batched)
        return y if batched else y[0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("conv2d backward called before forward")
        col, x_shape, batched = self._cache
        dyb, _ = _batched(dy, 3)
        n, c, h, w = x_shape
        co, ci, kh, kw = self.weight.value.shape
        oh, ow = self._out_hw(h, w)
        if dyb.shape != (n, co, oh, ow):
            raise ShapeError(
                f"conv2d backward: upstream shape {dy.shape} does not match "
                f"output {(n, co, oh, ow)}"
            )
        dyf = dyb.reshape(n, co, oh * ow)
        self.bias.grad += dyf.sum(axis=(0, 2))
        dw = np.matmul(dyf, col.transpose(0, 2, 1)).sum(axis=0)
        self.weight.grad += dw.reshape(co, ci, kh, kw)
        w2 = self.weight.value.reshape(co, ci * kh * kw)
        dcol = np.matmul(w2.T, dyf)
        dx = _kernels.col2im(dcol, c, h, w, kh, kw, self.stride, self.padding)
        return dx if batched else dx[0]


class Linear:
    """Affine map weight @ x + bias. Input [N_in] or [B,N_in]."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight)
        bias = np.asarray(bias)
        if weight.ndim != 2:
            raise ShapeError(f"linear weight must be [N_out,N_in], got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(
                f"linear bias has {bias.shape[0] if bias.ndim else 0} entries, "
                f"weight declares {weight.shape[0]} outputs"
            )
        self.weight = Param(weight)
        self.bias = Param(bias)
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, batched = _batched(x, 1)
        n_out, n_in = self.weight.value.shape
        if xb.shape[1] != n_in:
            raise ShapeError(f"linear: input has {xb.shape[1]} features, weight expects {n_in}")
        y = xb @ self.weight.value.T + self.bias.value
        self._cache = (xb, batched)
        return y if batched else y[0]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("linear backward called before forward")
        xb, batched = self._cache
        dyb, _ = _batched(dy, 1)
        if dyb.shape != (xb.shape[0], self.weight.value.shape[0]):
            raise ShapeError(f"linear backward: upstream shape {dy.shape} unexpected")
        self.weight.grad += dyb.T @ xb
        self.bias.grad += dyb.sum(axis=0)
        dx = dyb @ self.weight.value
        return dx if batched else dx[0]


class LeakyReLU:
    """Elementwise x if x >= 0 else slope * x, slope in [0, 1)."""

    def __init__(self, negative_slope: float = 0.2):
        if not 0.0 <= negative_slope < 1.0:
            raise ValueError(f"negative_slope must be in [0,1), got {negative_slope}")
        self.negative_slope = float(negative_slope)
        self._mask = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x >= 0
        return np.where(self._mask, x, x * np.asarray(self.negative_slope, dtype=x.dtype))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("leaky_relu backward called before forward")
        return np.where(self._mask, dy, dy * np.asarray(self.negative_slope, dtype=dy.dtype))


class Flatten:
    """[C,H,W] -> [C*H*W] (keeps a leading batch axis if present)."""

    def __init__(self):
        self._shape = None

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        if x.ndim == 4:
            return x.reshape(x.shape[0], -1)
        return x.reshape(-1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._shape is None:
            raise RuntimeError("flatten backward called before forward")
        return dy.reshape(self._shape)


class NearestUpsample2x:
    """Nearest-neighbor 2x spatial upsampling."""

    def params(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        h2, w2 = dy.shape[-2], dy.shape[-1]
        shaped = dy.reshape(*dy.shape[:-2], h2 // 2, 2, w2 // 2, 2)
        return shaped.sum(axis=(-3, -1))


class SoftmaxCrossEntropy:
    """Softmax cross-entropy against an integer class index.

    Logits [K] with a scalar target, or [B,K] with targets [B] (loss is the
    batch mean). Softmax is computed with max subtraction; the gradient is
    softmax minus the one-hot target.
    """

    def __init__(self, target=None):
        self.target = target
        self._cache = None

    def params(self) -> list[Param]:
        return []

    def forward(self, logits: np.ndarray, target=None) -> np.ndarray:
        t = self.target if target is None else target
        if t is None:
            raise ValueError("softmax_cross_entropy needs a target class")
        lb, batched = _batched(logits, 1)
        tb = np.atleast_1d(np.asarray(t, dtype=np.int64))
        k = lb.shape[1]
        if np.any(tb < 0) or np.any(tb >= k):
            raise IndexError(f"target class {t} out of range for {k} logits")
        z = lb - lb.max(axis=1, keepdims=True)
        expz = np.exp(z)
        probs = expz / expz.sum(axis=1, keepdims=True)
        rows = np.arange(lb.shape[0])
        losses = -np.log(probs[rows, tb])
        self._cache = (probs, tb, batched)
        return losses.mean() if batched else losses[0]

    def backward(self, dy=1.0) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("softmax_cross_entropy backward called before forward")
        probs, tb, batched = self._cache
        grad = probs.copy()
        grad[np.arange(len(tb)), tb] -= 1.0
        grad *= np.asarray(dy, dtype=grad.dtype) / (len(tb) if batched else 1)
        return grad if batched else grad[0]


class ResidualBlockDown:
    """Halving residual block: leaky(conv3x3 s2 p1) + 1x1 s2 projection."""

    def __init__(self, conv_weight, conv_bias, proj_weight, proj_bias, slope: float = 0.2):
        self.conv = Conv2d(conv_weight, conv_bias, stride=2, padding=1)
        self.act = LeakyReLU(slope)
        self.proj = Conv2d(proj_weight, proj_bias, stride=2, padding=0)

    def params(self) -> list[Param]:
        return self.conv.params() + self.proj.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.act.forward(self.conv.forward(x)) + self.proj.forward(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dx_main = self.conv.backward(self.act.backward(dy))
        dx_proj = self.proj.backward(dy)
        return dx_main + dx_proj


def init_conv(rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int, dtype=np.float32):
    """Gaussian weights with sigma = 1/sqrt(fan_in), zero bias."""
    sigma = 1.0 / np.sqrt(c_in * kh * kw)
    w = rng.normal(0.0, sigma, size=(c_out, c_in, kh, kw)).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return w, b


def init_linear(rng: np.random.Generator, n_out: int, n_in: int, dtype=np.float32):
    sigma = 1.0 / np.sqrt(n_in)
    w = rng.normal(0.0, sigma, size=(n_out, n_in)).astype(dtype)
    b = np.zeros(n_out, dtype=dtype)
    return w, b
