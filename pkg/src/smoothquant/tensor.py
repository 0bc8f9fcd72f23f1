"""Dense float32 tensor primitives.

Tensors are plain ``numpy.ndarray`` objects with dtype float32 and C (row-major)
order. Random generation uses numpy's PCG64 bit generator
(``numpy.random.default_rng``), whose algorithm and stream are documented and
stable across platforms for a given numpy major version.
"""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from .validation import check_fraction, check_tensor


@dataclass(frozen=True)
class OutlierSpec:
    """Which channels get amplified, and by how much.

    The outlier channel set is drawn once per ``seed`` and applied to every
    token row, mirroring the fixed-channel outliers seen in large transformers.
    """

    outlier_channel_fraction: float = 0.01
    outlier_scale: float = 100.0
    seed: int = 0

    def __post_init__(self):
        check_fraction(self.outlier_channel_fraction, "outlier_channel_fraction")

    def n_outliers(self, c):
        return math.ceil(self.outlier_channel_fraction * c)

    def channels(self, c):
        """Sorted indices of the outlier channels for a width-``c`` tensor."""
        rng = np.random.default_rng([self.seed, 0x0C4A])
        return np.sort(rng.choice(c, size=self.n_outliers(c), replace=False))


def matmul(a, b):
    """``a @ b`` in float32 over the trailing two dims (leading dims broadcast)."""
    a = check_tensor(a, "a", min_ndim=2)
    b = check_tensor(b, "b", min_ndim=2)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    return np.matmul(a, b, dtype=np.float32)


def channel_absmax(x):
    """Max of ``|x|`` over every axis but the last (the channel axis)."""
    x = check_tensor(x, "x", min_ndim=1)
    if x.ndim == 1:
        return np.abs(x)
    return np.abs(x).reshape(-1, x.shape[-1]).max(axis=0)


def gen_outlier_activations(t, c, spec=OutlierSpec(), rng=None):
    """Standard-normal ``(t, c)`` activations with amplified outlier channels.

    ``rng`` defaults to a generator seeded from ``spec.seed`` so that the same
    spec always yields bit-identical tensors. Passing a different generator
    resamples token values while keeping the outlier channels fixed.
    """
    if t < 1 or c < 1:
        raise DimensionError(f"need t >= 1 and c >= 1, got t={t}, c={c}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((t, c), dtype=np.float32)
    idx = spec.channels(c)
    x[:, idx] *= np.float32(spec.outlier_scale)
    return x


def max_relative_error(reference, approx):
    """``max|ref - approx| / max|ref|``; 0 when both are identically zero."""
    reference = np.asarray(reference, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    if reference.shape != approx.shape:
        raise DimensionError(f"shape mismatch {reference.shape} vs {approx.shape}")
    scale = np.abs(reference).max(initial=0.0)
    diff = np.abs(reference - approx).max(initial=0.0)
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return float(diff / scale)


def relative_error(reference, approx):
    """Frobenius-norm relative error ``||ref - approx|| / ||ref||``."""
    reference = np.asarray(reference, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    den = np.linalg.norm(reference)
    num = np.linalg.norm(reference - approx)
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return float(num / den)


def mse(reference, approx):
    return float(np.mean((np.asarray(reference, np.float64) - np.asarray(approx, np.float64)) ** 2))
