"""Parameters and SGD with momentum."""

from dataclasses import dataclass

import numpy as np

from .errors import OptimizerStateError, RangeError
from .tensor import Tensor


class Parameter:
    """A trainable tensor plus its momentum buffer."""

    __slots__ = ("value", "momentum_buffer")

    def __init__(self, data, dtype=np.float32):
        self.value = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self.momentum_buffer = np.zeros_like(self.value.data)

    @property
    def data(self):
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def __repr__(self):
        return f"Parameter(shape={self.value.data.shape})"


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise RangeError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise RangeError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise RangeError(f"weight_decay must be >= 0, got {self.weight_decay}")


def sgd_step(params, config, lr=None):
    """One SGD-with-momentum update over ``params``; clears gradients.

    buffer <- momentum * buffer + grad + weight_decay * value
    value  <- value - lr * buffer

    ``lr`` overrides ``config.learning_rate`` (step-decay schedules).
    Raises if any parameter has no gradient: the training-loop contract is
    that gradients are produced by backward and consumed exactly here.
    """
    step_lr = config.learning_rate if lr is None else lr
    for p in params:
        g = p.value.grad
        if g is None:
            raise OptimizerStateError(f"parameter {p.value.shape} has no gradient")
        buf = p.momentum_buffer
        buf *= config.momentum
        buf += g
        if config.weight_decay:
            buf += config.weight_decay * p.value.data
        p.value.data -= step_lr * buf
        p.value.grad = None
