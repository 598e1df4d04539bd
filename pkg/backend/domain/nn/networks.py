"""
P-Net, R-Net and O-Net: construction, patch-mode and fully convolutional evaluation.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from backend.domain.errors import ShapeError
from backend.domain.models import Box
from backend.domain.nn.layers import (
    WEIGHT_INIT_STD,
    Conv2d,
    FullyConnected,
    Layer,
    MaxPool2d,
    PReLU,
    Softmax,
)
from backend.domain.nn.tensor import Tensor

INPUT_SIZES = {"pnet": 12, "rnet": 24, "onet": 48}
HEAD_SIZES = {"face": 2, "box": 4, "landmark": 10}

# P-Net receptive field and effective stride in fully convolutional mode.
PNET_CELL = 12
PNET_STRIDE = 2


@dataclass
class NetworkOutput:
    prob: np.ndarray  # (N,) face probability
    box: np.ndarray  # (N, 4)
    landmark: np.ndarray  # (N, 10)


@dataclass
class FcnMaps:
    prob: np.ndarray  # (m, n)
    box: np.ndarray  # (4, m, n)
    landmark: np.ndarray  # (10, m, n)


@dataclass
class Tape:
    trunk: List[Tuple[Layer, Any]]
    heads: Dict[str, List[Tuple[Layer, Any]]]
    face_probs: np.ndarray


def _run(layers: List[Layer], x: np.ndarray) -> np.ndarray:
    for layer in layers:
        x = layer.forward(x)
    return x


def _run_cached(layers: List[Layer], x: np.ndarray) -> Tuple[np.ndarray, List[Tuple[Layer, Any]]]:
    tape = []
    for layer in layers:
        x, cache = layer.forward_cached(x)
        tape.append((layer, cache))
    return x, tape


def _run_backward(tape: List[Tuple[Layer, Any]], grad: np.ndarray) -> np.ndarray:
    for layer, cache in reversed(tape):
        grad = layer.backward(grad, cache)
    return grad


class Network:
    """
    A trunk of layers followed by three heads: face (2 logits + softmax),
    box (4 linear outputs) and landmark (10 linear outputs).
    """

    def __init__(self, kind: str, trunk: List[Layer], heads: Dict[str, List[Layer]]) -> None:
        if kind not in INPUT_SIZES:
            raise ValueError(f"unknown network kind {kind!r}")
        self.kind = kind
        self.trunk = trunk
        self.heads = heads
        self.trained = False

    @property
    def input_size(self) -> int:
        return INPUT_SIZES[self.kind]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.parameters().values())).dtype

    def layers(self) -> List[Layer]:
        out = list(self.trunk)
        for name in HEAD_SIZES:
            out.extend(self.heads[name])
        return out

    def parameters(self) -> Dict[str, Tensor]:
        params: Dict[str, Tensor] = {}
        for layer in self.layers():
            params.update(layer.parameters())
        return params

    def parameter_count(self) -> int:
        return sum(p.values.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def astype(self, dtype) -> "Network":
        """Copy with every parameter cast to `dtype` (64-bit for gradient checks)."""
        clone = build_network(self.kind, seed=0, dtype=dtype)
        mine = self.parameters()
        for name, p in clone.parameters().items():
            p.values = mine[name].values.astype(dtype)
        clone.trained = self.trained
        return clone

    def _check_patch(self, x: np.ndarray) -> None:
        s = self.input_size
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ShapeError(f"{self.kind} expects N×3×{s}×{s} patches, got shape {x.shape}")

    def _heads(self, features: np.ndarray) -> NetworkOutput:
        n = features.shape[0]
        probs = _run(self.heads["face"], features).reshape(n, 2)
        box = _run(self.heads["box"], features).reshape(n, 4)
        landmark = _run(self.heads["landmark"], features).reshape(n, 10)
        return NetworkOutput(prob=probs[:, 1], box=box, landmark=landmark)

    def forward(self, patches: np.ndarray) -> NetworkOutput:
        """Pure batched evaluation on N×3×S×S normalized patches."""
        patches = np.asarray(patches, dtype=self.dtype)
        self._check_patch(patches)
        return self._heads(_run(self.trunk, patches))

    def forward_train(self, patches: np.ndarray) -> Tuple[NetworkOutput, Tape]:
        patches = np.asarray(patches, dtype=self.dtype)
        self._check_patch(patches)
        n = patches.shape[0]
        features, trunk_tape = _run_cached(self.trunk, patches)
        outs, head_tapes = {}, {}
        for name in HEAD_SIZES:
            outs[name], head_tapes[name] = _run_cached(self.heads[name], features)
        probs = outs["face"].reshape(n, 2)
        output = NetworkOutput(
            prob=probs[:, 1], box=outs["box"].reshape(n, 4), landmark=outs["landmark"].reshape(n, 10)
        )
        return output, Tape(trunk=trunk_tape, heads=head_tapes, face_probs=probs)

    def backward(self, tape: Tape, grad_prob: np.ndarray, grad_box: np.ndarray, grad_landmark: np.ndarray) -> None:
        """Accumulate parameter gradients from gradients w.r.t. the three head outputs."""
        n = tape.face_probs.shape[0]
        grad_softmax = np.zeros_like(tape.face_probs)
        grad_softmax[:, 1] = grad_prob
        head_grads = {"face": grad_softmax, "box": grad_box, "landmark": grad_landmark}
        grad_features = None
        for name, grad in head_grads.items():
            last_layer, last_cache = tape.heads[name][-1]
            out_shape = _cached_output_shape(last_layer, last_cache, n, HEAD_SIZES[name])
            g = _run_backward(tape.heads[name], grad.reshape(out_shape).astype(self.dtype))
            grad_features = g if grad_features is None else grad_features + g
        _run_backward(tape.trunk, grad_features)


def _cached_output_shape(layer: Layer, cache: Any, n: int, width: int) -> Tuple[int, ...]:
    # P-Net heads end in 1×1 maps; R-Net/O-Net heads are flat.
    if isinstance(layer, Softmax):
        return cache.shape
    if isinstance(layer, Conv2d):
        return (n, width, 1, 1)
    return (n, width)


def _conv_block(name: str, cin: int, cout: int, k: int, rng, std, dtype) -> List[Layer]:
    return [Conv2d(name, cin, cout, (k, k), rng, std, dtype), PReLU(f"{name}.prelu", cout, dtype=dtype)]


def build_network(kind: str, seed: int = 0, init_std: Optional[float] = None, dtype=np.float32) -> Network:
    """
    Build a freshly initialized P-Net, R-Net or O-Net. By default trunk weights
    are fan-in scaled and head weights have std WEIGHT_INIT_STD; an explicit
    `init_std` applies to every weight.
    """
    rng = np.random.default_rng(seed)
    head_std = WEIGHT_INIT_STD if init_std is None else init_std
    if kind == "pnet":
        trunk = (
            _conv_block("conv1", 3, 10, 3, rng, init_std, dtype)
            + [MaxPool2d("pool1", 2)]
            + _conv_block("conv2", 10, 16, 3, rng, init_std, dtype)
            + _conv_block("conv3", 16, 32, 3, rng, init_std, dtype)
        )
        heads = {
            "face": [Conv2d("face", 32, 2, (1, 1), rng, head_std, dtype), Softmax("face.softmax")],
            "box": [Conv2d("box", 32, 4, (1, 1), rng, head_std, dtype)],
            "landmark": [Conv2d("landmark", 32, 10, (1, 1), rng, head_std, dtype)],
        }
    elif kind == "rnet":
        trunk = (
            _conv_block("conv1", 3, 28, 3, rng, init_std, dtype)
            + [MaxPool2d("pool1", 3)]
            + _conv_block("conv2", 28, 48, 3, rng, init_std, dtype)
            + [MaxPool2d("pool2", 3)]
            + _conv_block("conv3", 48, 64, 2, rng, init_std, dtype)
            + [FullyConnected("fc1", 64 * 3 * 3, 128, rng, init_std, dtype), PReLU("fc1.prelu", 128, dtype=dtype)]
        )
        heads = _fc_heads(128, rng, head_std, dtype)
    elif kind == "onet":
        trunk = (
            _conv_block("conv1", 3, 32, 3, rng, init_std, dtype)
            + [MaxPool2d("pool1", 3)]
            + _conv_block("conv2", 32, 64, 3, rng, init_std, dtype)
            + [MaxPool2d("pool2", 3)]
            + _conv_block("conv3", 64, 64, 3, rng, init_std, dtype)
            + [MaxPool2d("pool3", 2)]
            + _conv_block("conv4", 64, 128, 2, rng, init_std, dtype)
            + [FullyConnected("fc1", 128 * 3 * 3, 256, rng, init_std, dtype), PReLU("fc1.prelu", 256, dtype=dtype)]
        )
        heads = _fc_heads(256, rng, head_std, dtype)
    else:
        raise ValueError(f"unknown network kind {kind!r}")
    return Network(kind, trunk, heads)


def _fc_heads(features: int, rng, std, dtype) -> Dict[str, List[Layer]]:
    return {
        "face": [FullyConnected("face", features, 2, rng, std, dtype), Softmax("face.softmax")],
        "box": [FullyConnected("box", features, 4, rng, std, dtype)],
        "landmark": [FullyConnected("landmark", features, 10, rng, std, dtype)],
    }


def shape_trace(net: Network) -> List[Tuple[str, Tuple[int, ...]]]:
    """Per-layer output extents of the trunk for one native-size input."""
    shape: Tuple[int, ...] = (3, net.input_size, net.input_size)
    trace = [("input", shape)]
    for layer in net.trunk:
        shape = layer.output_shape(shape)
        trace.append((layer.name, shape))
    return trace


def forward_patch(net: Network, patch: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Evaluate one 3×S×S patch: (face probability, box 4-vector, landmark 10-vector)."""
    out = net.forward(np.asarray(patch)[None])
    return float(out.prob[0]), out.box[0], out.landmark[0]


def fcn_extent(size: int) -> int:
    """Number of 12-pixel windows at stride 2 that fit entirely inside `size` pixels."""
    return (size - PNET_CELL) // PNET_STRIDE + 1


def forward_fcn_pnet(net: Network, image: np.ndarray) -> FcnMaps:
    """
    Dense P-Net evaluation over a normalized 3×H×W image. Cell (r, c) scores the
    12×12 window whose top-left corner is (x=2c, y=2r); windows overhanging the
    image are not produced.
    """
    if net.kind != "pnet":
        raise ValueError("fully convolutional mode is only defined for P-Net")
    image = np.asarray(image, dtype=net.dtype)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a 3×H×W image, got shape {image.shape}")
    _, h, w = image.shape
    if h < PNET_CELL or w < PNET_CELL:
        raise ShapeError(f"image {w}×{h} is smaller than the {PNET_CELL}-pixel P-Net window")
    features = _run(net.trunk, image[None])
    m, n = fcn_extent(h), fcn_extent(w)
    prob = _run(net.heads["face"], features)[0, 1, :m, :n]
    box = _run(net.heads["box"], features)[0, :, :m, :n]
    landmark = _run(net.heads["landmark"], features)[0, :, :m, :n]
    return FcnMaps(prob=prob, box=box, landmark=landmark)


def map_cell_to_box(r: int, c: int, scale: float) -> Box:
    return Box(
        x1=PNET_STRIDE * c / scale,
        y1=PNET_STRIDE * r / scale,
        x2=(PNET_STRIDE * c + PNET_CELL) / scale,
        y2=(PNET_STRIDE * r + PNET_CELL) / scale,
    )
