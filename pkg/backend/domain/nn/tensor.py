"""
Dense value-and-gradient container plus the plain SGD update.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np

from backend.domain.errors import NonFiniteGradientError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Tensor:
    values: np.ndarray
    grad: Optional[np.ndarray] = None
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values)
        if self.values.size == 0:
            raise ShapeError(f"tensor {self.name!r} has an empty extent {self.values.shape}")
        if self.grad is not None and self.grad.shape != self.values.shape:
            raise ShapeError(
                f"gradient shape {self.grad.shape} does not match values {self.values.shape}"
            )

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(self.values.shape)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.values.shape:
            raise ShapeError(
                f"gradient for {self.name!r} has shape {grad.shape}, expected {self.values.shape}"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += grad

    def astype(self, dtype: np.dtype) -> "Tensor":
        return Tensor(self.values.astype(dtype), None, self.name)


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """
    In-place w <- w - lr * grad for every parameter, then zero the gradients.
    All gradients are checked before any parameter is touched, so a bad step
    leaves the network unchanged.
    """
    params = list(params)
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
        bad = int(np.count_nonzero(~np.isfinite(p.grad)))
        if bad:
            logger.error("Non-finite gradient in %s: %d entries, max |values|=%g",
                         p.name, bad, float(np.max(np.abs(p.values))))
            raise NonFiniteGradientError(p.name, bad)
    for p in params:
        p.values -= p.values.dtype.type(lr) * p.grad
        p.grad[...] = 0


def scale_gradients(params: Iterable[Tensor], scale: float, max_norm: Optional[float] = None) -> float:
    """
    Multiply every gradient by `scale`, then rescale them jointly so their global
    L2 norm is at most `max_norm`. Returns the norm before clipping (non-finite
    gradients give a non-finite norm and are left untouched).
    """
    params = [p for p in params if p.grad is not None]
    for p in params:
        p.grad *= p.grad.dtype.type(scale)
    norm = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params))
    if max_norm is not None and math.isfinite(norm) and norm > max_norm:
        shrink = max_norm / norm
        for p in params:
            p.grad *= p.grad.dtype.type(shrink)
    return norm
