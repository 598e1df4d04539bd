"""
The five layer kinds the cascade networks are built from.

Every layer works on arrays with a leading batch axis (N×C×H×W feature maps or
N×D vectors). `forward` is pure and safe to call from several threads on a
shared layer; `forward_cached` returns the state `backward` needs, and
`backward` accumulates parameter gradients and returns the input gradient.
"""
import math
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from backend.domain.errors import ShapeError
from backend.domain.nn.tensor import Tensor

PRELU_INIT = 0.25
# Output heads start small so a fresh network scores every input near 0.5.
WEIGHT_INIT_STD = 0.01


class Layer:
    kind = "layer"

    def __init__(self, name: str) -> None:
        self.name = name

    def parameters(self) -> Dict[str, Tensor]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(x)
        return out

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        """Per-sample output extents (no batch axis) for per-sample input extents."""
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r})"


def fan_in_std(fan_in: int, slope: float = PRELU_INIT) -> float:
    """Variance-preserving std for weights feeding a PReLU with the given negative slope."""
    return math.sqrt(2.0 / ((1.0 + slope * slope) * fan_in))


def _gaussian(rng: np.random.Generator, shape: Tuple[int, ...], std: Optional[float], dtype) -> np.ndarray:
    if std is None:
        std = fan_in_std(int(np.prod(shape[1:])))
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Layer):
    """Valid cross-correlation with stride 1 and a per-output-channel bias."""

    kind = "conv"

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel: Tuple[int, int],
        rng: np.random.Generator,
        init_std: Optional[float] = None,
        dtype=np.float32,
    ) -> None:
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kernel
        self.weight = Tensor(
            _gaussian(rng, (out_channels, in_channels, self.kh, self.kw), init_std, dtype),
            name=f"{name}.weight",
        )
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), name=f"{name}.bias")

    def parameters(self) -> Dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        c, h, w = shape
        self._check(c, h, w)
        return (self.out_channels, h - self.kh + 1, w - self.kw + 1)

    def _check(self, c: int, h: int, w: int) -> None:
        if c != self.in_channels:
            raise ShapeError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        if h < self.kh or w < self.kw:
            raise ShapeError(f"{self.name}: input {h}×{w} smaller than kernel {self.kh}×{self.kw}")

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected N×C×H×W input, got shape {x.shape}")
        n, c, h, w = x.shape
        self._check(c, h, w)
        oh, ow = h - self.kh + 1, w - self.kw + 1
        windows = sliding_window_view(x, (self.kh, self.kw), axis=(2, 3))  # N,C,oh,ow,kh,kw
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * self.kh * self.kw)
        w_mat = self.weight.values.reshape(self.out_channels, -1)
        out = cols @ w_mat.T + self.bias.values
        out = np.ascontiguousarray(out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2))
        return out, (cols, x.shape)

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        cols, (n, c, h, w) = cache
        oh, ow = grad.shape[2], grad.shape[3]
        g = grad.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.weight.accumulate((g.T @ cols).reshape(self.weight.dims))
        self.bias.accumulate(g.sum(axis=0))
        dcols = (g @ self.weight.values.reshape(self.out_channels, -1)).reshape(
            n, oh, ow, c, self.kh, self.kw
        )
        grad_x = np.zeros((n, c, h, w), dtype=grad.dtype)
        for i in range(self.kh):
            for j in range(self.kw):
                grad_x[:, :, i:i + oh, j:j + ow] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return grad_x


def pooled_extent(size: int, kernel: int, stride: int = 2) -> int:
    """Ceil-mode output extent: ceil((size - kernel) / stride) + 1."""
    if size < kernel:
        raise ShapeError(f"input extent {size} smaller than pooling kernel {kernel}")
    return -(-(size - kernel) // stride) + 1


class MaxPool2d(Layer):
    """
    Ceil-mode max pooling. Trailing partial windows take the max over the
    cells they cover; argmax ties go to the first cell in row-major order.
    """

    kind = "maxpool"

    def __init__(self, name: str, kernel: int, stride: int = 2) -> None:
        super().__init__(name)
        self.k = kernel
        self.stride = stride

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        c, h, w = shape
        return (c, pooled_extent(h, self.k, self.stride), pooled_extent(w, self.k, self.stride))

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected N×C×H×W input, got shape {x.shape}")
        n, c, h, w = x.shape
        oh = pooled_extent(h, self.k, self.stride)
        ow = pooled_extent(w, self.k, self.stride)
        ph = (oh - 1) * self.stride + self.k
        pw = (ow - 1) * self.stride + self.k
        padded = np.pad(
            x, ((0, 0), (0, 0), (0, ph - h), (0, pw - w)), constant_values=-np.inf
        )
        windows = sliding_window_view(padded, (self.k, self.k), axis=(2, 3))
        windows = windows[:, :, ::self.stride, ::self.stride].reshape(n, c, oh, ow, self.k * self.k)
        idx = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(out), (idx, x.shape, (ph, pw))

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        idx, (n, c, h, w), (ph, pw) = cache
        oh, ow = idx.shape[2], idx.shape[3]
        rows = np.arange(oh)[:, None] * self.stride + idx // self.k
        cols = np.arange(ow)[None, :] * self.stride + idx % self.k
        nn_idx = np.arange(n)[:, None, None, None]
        cc_idx = np.arange(c)[None, :, None, None]
        grad_padded = np.zeros((n, c, ph, pw), dtype=grad.dtype)
        np.add.at(grad_padded, (nn_idx, cc_idx, rows, cols), grad)
        return grad_padded[:, :, :h, :w]


class PReLU(Layer):
    """Per-channel parametric ReLU; channels are axis 1."""

    kind = "prelu"

    def __init__(self, name: str, channels: int, init: float = PRELU_INIT, dtype=np.float32) -> None:
        super().__init__(name)
        self.channels = channels
        self.slope = Tensor(np.full(channels, init, dtype=dtype), name=f"{name}.slope")

    def parameters(self) -> Dict[str, Tensor]:
        return {self.slope.name: self.slope}

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if shape[0] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {shape[0]}")
        return shape

    def _slopes(self, x: np.ndarray) -> np.ndarray:
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got shape {x.shape}")
        return self.slope.values.reshape((1, self.channels) + (1,) * (x.ndim - 2))

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        a = self._slopes(x)
        return np.where(x > 0, x, a * x), x

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        x = cache
        a = self._slopes(x)
        negative = x <= 0
        axes = tuple(i for i in range(x.ndim) if i != 1)
        self.slope.accumulate((grad * x * negative).sum(axis=axes))
        return np.where(negative, a * grad, grad)


class FullyConnected(Layer):
    """out = W·x + b over the flattened per-sample input (C, H, W row-major)."""

    kind = "fc"

    def __init__(
        self,
        name: str,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        init_std: Optional[float] = None,
        dtype=np.float32,
    ) -> None:
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            _gaussian(rng, (out_features, in_features), init_std, dtype), name=f"{name}.weight"
        )
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), name=f"{name}.bias")

    def parameters(self) -> Dict[str, Tensor]:
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        if int(np.prod(shape)) != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} inputs, got {shape}")
        return (self.out_features,)

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        n = x.shape[0]
        flat = x.reshape(n, -1)
        if flat.shape[1] != self.in_features:
            raise ShapeError(
                f"{self.name}: expected {self.in_features} inputs per sample, got {flat.shape[1]}"
            )
        return flat @ self.weight.values.T + self.bias.values, (flat, x.shape)

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        flat, shape = cache
        self.weight.accumulate(grad.T @ flat)
        self.bias.accumulate(grad.sum(axis=0))
        return (grad @ self.weight.values).reshape(shape)


class Softmax(Layer):
    """Softmax over the channel axis with max-subtraction."""

    kind = "softmax"

    def __init__(self, name: str, axis: int = 1) -> None:
        super().__init__(name)
        self.axis = axis

    def output_shape(self, shape: Tuple[int, ...]) -> Tuple[int, ...]:
        return shape

    def forward_cached(self, x: np.ndarray) -> Tuple[np.ndarray, Any]:
        if x.ndim <= self.axis or x.shape[self.axis] < 2:
            raise ShapeError(f"{self.name}: softmax needs at least 2 logits, got shape {x.shape}")
        shifted = x - x.max(axis=self.axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=self.axis, keepdims=True)
        return s, s

    def backward(self, grad: np.ndarray, cache: Any) -> np.ndarray:
        s = cache
        return s * (grad - (grad * s).sum(axis=self.axis, keepdims=True))
