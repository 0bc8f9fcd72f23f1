"""Parameter containers for the operators a smoothing factor can be folded into."""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @property
    def width(self):
        return self.gamma.shape[0]

    def __call__(self, x):
        mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True, dtype=np.float32)
        normed = centered / np.sqrt(var + np.float32(self.eps))
        return (normed * self.gamma + self.beta).astype(np.float32)


@dataclass(frozen=True, eq=False)
class LinearParams:
    """``y = x @ weight + bias`` with ``weight`` stored as ``(C_in, C_out)``."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    @property
    def in_features(self):
        return self.weight.shape[0]

    @property
    def out_features(self):
        return self.weight.shape[1]

    def with_weight(self, weight):
        return replace(self, weight=weight)


@dataclass(frozen=True)
class ResidualAdd:
    """Marker for an input produced by a residual sum: nothing to fold into."""

    width: int
