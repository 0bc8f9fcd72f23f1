"""Symmetric uniform quantizers and their simulation helpers.

Codes are ``round(x / step)`` clamped to ``[-qmax, qmax]`` with
``qmax = 2**(bits-1) - 1``; the most negative code is never emitted so that
dequantization stays symmetric around zero. Ties round away from zero.

Scale layout for an ``(..., C)`` tensor:

=============  ==========================  ====================================
granularity    reduced over                ``QuantizedTensor.scales`` shape
=============  ==========================  ====================================
PER_TENSOR     everything                  ``()``
PER_TOKEN      the channel axis            ``x.shape[:-1]``
PER_CHANNEL    every axis but the last     ``(C,)``
GROUP_WISE     groups of ``group_size``    ``(C // group_size,)``
               consecutive channels
=============  ==========================  ====================================

For a weight stored as ``(C_in, C_out)`` the last axis is the output channel,
so PER_CHANNEL and GROUP_WISE weight scales live on the GEMM's outer dimension.
"""

import enum
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import ConfigurationError, DataError, DimensionError, ParameterError
from .validation import check_bits, check_tensor


class Granularity(enum.Enum):
    PER_TENSOR = "per_tensor"
    PER_TOKEN = "per_token"
    PER_CHANNEL = "per_channel"
    GROUP_WISE = "group_wise"


class Timing(enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


DEFAULT_GROUP_SIZE = 128


@dataclass(frozen=True)
class QuantScheme:
    granularity: Granularity = Granularity.PER_TENSOR
    timing: Timing = Timing.DYNAMIC
    bits: int = 8
    group_size: Optional[int] = None

    def __post_init__(self):
        check_bits(self.bits)
        if self.granularity is Granularity.GROUP_WISE:
            if self.group_size is None:
                object.__setattr__(self, "group_size", DEFAULT_GROUP_SIZE)
            if self.group_size < 1:
                raise ParameterError(f"group_size must be >= 1, got {self.group_size}")
        elif self.group_size is not None:
            raise ParameterError("group_size only applies to GROUP_WISE granularity")

    @property
    def qmax(self):
        return 2 ** (self.bits - 1) - 1

    def describe(self):
        name = self.granularity.value.replace("_", "-")
        if self.granularity is Granularity.GROUP_WISE:
            name += f"({self.group_size})"
        return f"{name} {self.timing.value}"


PER_TENSOR_DYNAMIC = QuantScheme(Granularity.PER_TENSOR, Timing.DYNAMIC)
PER_TENSOR_STATIC = QuantScheme(Granularity.PER_TENSOR, Timing.STATIC)
PER_TOKEN_DYNAMIC = QuantScheme(Granularity.PER_TOKEN, Timing.DYNAMIC)
PER_CHANNEL_DYNAMIC = QuantScheme(Granularity.PER_CHANNEL, Timing.DYNAMIC)


@dataclass(frozen=True)
class QuantSetting:
    """A (weight scheme, activation scheme) pair for one linear operator."""

    weight: QuantScheme
    activation: QuantScheme
    name: str = ""
    # channels reaching this magnitude bypass INT8 and run in float
    outlier_threshold: Optional[float] = None

    def __post_init__(self):
        if self.weight.granularity is Granularity.PER_TOKEN:
            raise ParameterError("per-token granularity is only valid for activations")


class SettingLevel(enum.Enum):
    """Efficiency levels O1 to O3, all with per-tensor weights."""

    O1 = "O1"
    O2 = "O2"
    O3 = "O3"

    @property
    def setting(self):
        activation = {
            SettingLevel.O1: PER_TOKEN_DYNAMIC,
            SettingLevel.O2: PER_TENSOR_DYNAMIC,
            SettingLevel.O3: PER_TENSOR_STATIC,
        }[self]
        return QuantSetting(PER_TENSOR_DYNAMIC, activation, name=self.value)


def as_setting(level):
    if isinstance(level, QuantSetting):
        return level
    if isinstance(level, str):
        try:
            level = SettingLevel(level.upper())
        except ValueError:
            raise ParameterError(f"unknown setting level {level!r}") from None
    if isinstance(level, SettingLevel):
        return level.setting
    raise ParameterError(f"cannot interpret {level!r} as a quantization setting")


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    values: np.ndarray
    scales: np.ndarray
    scheme: QuantScheme = field(default=PER_TENSOR_DYNAMIC)

    def __post_init__(self):
        qmax = self.scheme.qmax
        if self.values.size and (self.values.max() > qmax or self.values.min() < -qmax):
            raise DataError(f"codes outside the symmetric range [-{qmax}, {qmax}]")
        if not np.all(self.scales > 0):
            raise DataError("quantization scales must be strictly positive")

    @property
    def shape(self):
        return self.values.shape

    def expanded_scales(self):
        """Scales broadcast to ``values.shape``."""
        return _expand(self.scales, self.values.shape, self.scheme)


def compute_step(absmax, bits=8):
    """Step size ``absmax / (2**(bits-1) - 1)``; zero maxima map to a step of 1.

    Accepts a scalar or an array of maxima; returns the same kind.
    """
    bits = check_bits(bits)
    a = np.asarray(absmax, dtype=np.float64)
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise DataError("absmax must be finite and non-negative")
    step = np.where(a == 0, 1.0, a / (2 ** (bits - 1) - 1))
    if step.ndim == 0:
        return float(step)
    return step.astype(np.float32)


def round_half_away(v):
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def absmax_for(x, scheme):
    """Absolute maxima of ``x`` at the scheme's granularity (scale layout above)."""
    a = np.abs(x)
    g = scheme.granularity
    if g is Granularity.PER_TENSOR:
        return np.asarray(a.max(), dtype=np.float32)
    if g is Granularity.PER_TOKEN:
        return a.max(axis=-1)
    ch = a.reshape(-1, x.shape[-1]).max(axis=0)
    if g is Granularity.PER_CHANNEL:
        return ch
    _check_groups(x.shape[-1], scheme)
    return ch.reshape(-1, scheme.group_size).max(axis=1)


def _check_groups(c, scheme):
    if c % scheme.group_size:
        raise DimensionError(
            f"group_size {scheme.group_size} does not divide channel extent {c}"
        )


def _expected_scale_shape(shape, scheme):
    g = scheme.granularity
    if g is Granularity.PER_TENSOR:
        return ()
    if g is Granularity.PER_TOKEN:
        return tuple(shape[:-1])
    if g is Granularity.PER_CHANNEL:
        return (shape[-1],)
    _check_groups(shape[-1], scheme)
    return (shape[-1] // scheme.group_size,)


def _expand(scales, shape, scheme):
    g = scheme.granularity
    if g is Granularity.PER_TENSOR:
        return np.broadcast_to(scales, shape)
    if g is Granularity.PER_TOKEN:
        return np.broadcast_to(scales[..., None], shape)
    if g is Granularity.GROUP_WISE:
        scales = np.repeat(scales, scheme.group_size)
    return np.broadcast_to(scales, shape)


def quantize(x, scheme=PER_TENSOR_DYNAMIC, static_scales=None):
    """Quantize ``x`` to signed integer codes at the scheme's granularity.

    Dynamic schemes derive the step sizes from ``x``; static schemes require
    ``static_scales`` (step sizes, as produced by calibration) and clamp any
    value that falls outside the calibrated range.
    """
    x = check_tensor(x, "x")
    if scheme.granularity is Granularity.PER_TOKEN and x.ndim < 2:
        raise DimensionError("per-token quantization needs a tensor of rank >= 2")
    expected = _expected_scale_shape(x.shape, scheme)
    if scheme.timing is Timing.STATIC:
        if static_scales is None:
            raise ConfigurationError(
                "static quantization needs calibrated scales; run calibration first"
            )
        scales = np.asarray(static_scales, dtype=np.float32)
        if scales.shape != expected:
            if scales.size == int(np.prod(expected, dtype=np.int64)):
                scales = scales.reshape(expected)
            else:
                raise DimensionError(
                    f"static scales of shape {scales.shape} do not match {expected}"
                )
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise DataError("static scales must be finite and strictly positive")
    else:
        scales = np.asarray(compute_step(absmax_for(x, scheme), scheme.bits), dtype=np.float32)
    qmax = scheme.qmax
    codes = round_half_away(x / _expand(scales, x.shape, scheme))
    codes = np.clip(codes, -qmax, qmax).astype(np.int8)
    return QuantizedTensor(codes, scales, scheme)


def dequantize(q):
    return (q.values.astype(np.float32) * q.expanded_scales()).astype(np.float32)


def fake_quant(x, scheme=PER_TENSOR_DYNAMIC, static_scales=None):
    """Quantize then dequantize: the float tensor an INT8 kernel would see."""
    return dequantize(quantize(x, scheme, static_scales))


def effective_levels(channel_absmax, tensor_absmax, bits=8):
    """Integer levels left to a channel under a tensor-wide step: ``2**bits * m_i / m``."""
    bits = check_bits(bits)
    if tensor_absmax <= 0:
        raise DataError("tensor_absmax must be positive")
    if channel_absmax < 0 or channel_absmax > tensor_absmax:
        raise DataError(
            f"channel absmax {channel_absmax} must lie in [0, tensor absmax {tensor_absmax}]"
        )
    return 2**bits * (channel_absmax / tensor_absmax)


class OutlierChannels(NamedTuple):
    """Channels kept in floating point by :func:`decompose_outliers`."""

    indices: np.ndarray
    values: np.ndarray
    n_channels: int

    def to_dense(self):
        out = np.zeros(self.values.shape[:-1] + (self.n_channels,), dtype=np.float32)
        out[..., self.indices] = self.values
        return out


DEFAULT_OUTLIER_THRESHOLD = 6.0


def decompose_outliers(x, threshold=DEFAULT_OUTLIER_THRESHOLD, scheme=PER_TOKEN_DYNAMIC):
    """Split ``x`` into an int8 part and exact float outlier channels.

    A channel whose absolute maximum reaches ``threshold`` is zeroed in the
    integer part and kept verbatim in the float part, so that
    ``dequantize(q) + outliers.to_dense()`` recomposes ``x`` up to the
    quantization error of the remaining channels.
    """
    x = check_tensor(x, "x", min_ndim=2)
    if not threshold > 0:
        raise ParameterError(f"threshold must be > 0, got {threshold}")
    idx = np.flatnonzero(np.abs(x).reshape(-1, x.shape[-1]).max(axis=0) >= threshold)
    dense = x.copy()
    dense[..., idx] = 0.0
    outliers = OutlierChannels(idx, x[..., idx].copy(), x.shape[-1])
    return quantize(dense, scheme), outliers
