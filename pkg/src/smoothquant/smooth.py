"""Per-channel smoothing: move activation outliers into the following weights.

For a linear layer ``Y = X W`` and positive factors ``s`` over the input
channels, ``Y = (X diag(s)^-1) (diag(s) W)``. Choosing
``s_j = max|X_j|**alpha / max|W_j|**(1 - alpha)`` flattens the activation
channels while keeping the product unchanged.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DimensionError, NotFusableError, ParameterError
from .params import LayerNormParams, LinearParams, ResidualAdd
from .validation import check_fraction, check_tensor, check_vector

DEFAULT_ALPHA = 0.5
MIN_FACTOR = 1e-5


@dataclass(eq=False)
class ChannelStats:
    """Calibration maxima for one operator input."""

    act_absmax: np.ndarray
    sample_count: int = 1
    clip_fraction: float = 0.0

    def __post_init__(self):
        self.act_absmax = check_vector(self.act_absmax, "act_absmax", nonnegative=True)

    def merge(self, other):
        if other.act_absmax.shape != self.act_absmax.shape:
            raise DimensionError("cannot merge stats of different widths")
        return ChannelStats(
            np.maximum(self.act_absmax, other.act_absmax),
            self.sample_count + other.sample_count,
            self.clip_fraction,
        )


@dataclass(eq=False)
class SmoothingPlan:
    """Smoothing vectors keyed by attachment-point id."""

    factors: dict = field(default_factory=dict)
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        check_fraction(self.alpha, "alpha")
        for key, s in self.factors.items():
            s = check_vector(s, f"factors[{key!r}]")
            if np.any(s <= 0):
                raise ParameterError(f"smoothing factors for {key!r} must be positive")
            self.factors[key] = s

    def __getitem__(self, key):
        return self.factors[key]

    def __contains__(self, key):
        return key in self.factors

    def keys(self):
        return self.factors.keys()

    @classmethod
    def identity(cls, widths, alpha=DEFAULT_ALPHA):
        return cls({k: np.ones(w, np.float32) for k, w in widths.items()}, alpha)


def weight_row_absmax(*weights):
    """``max|W_j|`` per input channel across consumers sharing one input."""
    rows = [np.abs(check_tensor(w, "weight", ndim=2)).max(axis=1) for w in weights]
    if len({r.shape for r in rows}) != 1:
        raise DimensionError("consumers of one input must share the input width")
    return np.maximum.reduce(rows)


def smoothing_factors(act_max, weight_max, alpha=DEFAULT_ALPHA):
    act_max = check_vector(act_max, "act_max", nonnegative=True)
    weight_max = check_vector(weight_max, "weight_max", length=act_max.shape[0], nonnegative=True)
    alpha = check_fraction(alpha, "alpha")
    a = act_max.astype(np.float64)
    w = weight_max.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        s = a**alpha / w ** (1.0 - alpha)
    bad = ~np.isfinite(s) | (s < MIN_FACTOR)
    s[bad] = 1.0
    return s.astype(np.float32)


def apply_smoothing(x, w, s):
    """Return ``(x / s, s[:, None] * w)``; the product ``x @ w`` is preserved."""
    x = check_tensor(x, "x", min_ndim=2)
    w = check_tensor(w, "w", ndim=2)
    s = check_vector(s, "s", length=x.shape[-1], positive=True)
    if w.shape[0] != s.shape[0]:
        raise DimensionError(f"weight has {w.shape[0]} input rows, s has {s.shape[0]} entries")
    return x / s, w * s[:, None]


def fuse_into_predecessor(pred, s):
    """Fold ``1 / s`` into the parameters producing the smoothed input.

    LayerNorm: ``gamma`` and ``beta`` are divided element-wise. Linear: output
    columns of the weight and the bias are divided. A residual sum has nothing
    to absorb the factor and raises :class:`NotFusableError`; the caller must
    insert an explicit scaling on that branch instead.
    """
    if isinstance(pred, LayerNormParams):
        s = check_vector(s, "s", length=pred.width, positive=True)
        return replace(pred, gamma=pred.gamma / s, beta=pred.beta / s)
    if isinstance(pred, LinearParams):
        s = check_vector(s, "s", length=pred.out_features, positive=True)
        bias = None if pred.bias is None else pred.bias / s
        return LinearParams(pred.weight / s, bias)
    if isinstance(pred, ResidualAdd):
        raise NotFusableError(
            "input comes from a residual add; scale the residual branch explicitly"
        )
    raise NotFusableError(f"cannot fuse smoothing factors into {type(pred).__name__}")


def post_smoothing_balance(act_max, weight_max, alpha=DEFAULT_ALPHA):
    """Channel maxima after smoothing: ``(A*W)**(1-alpha)`` and ``(A*W)**alpha``."""
    act_max = check_vector(act_max, "act_max", nonnegative=True)
    weight_max = check_vector(weight_max, "weight_max", length=act_max.shape[0], nonnegative=True)
    alpha = check_fraction(alpha, "alpha")
    prod = act_max.astype(np.float64) * weight_max.astype(np.float64)
    return prod ** (1.0 - alpha), prod**alpha
