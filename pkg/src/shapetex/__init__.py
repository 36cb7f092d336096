"""Shape-texture debiased training lab.

A small numpy-based stack for studying shape/texture bias in CNNs: a tensor
library with reverse-mode autodiff, an AdaIN stylizer for cue-conflict image
synthesis, a controllable synthetic dataset, a dual-batch-norm residual
network, biased/debiased training loops, and a robustness evaluation suite.
"""

from . import data, model, optim, robustness, stylizer, tensor, trainer
from .errors import ShapeTexError

__version__ = "0.1.0"

__all__ = ["data", "model", "optim", "robustness", "stylizer", "tensor", "trainer", "ShapeTexError"]
