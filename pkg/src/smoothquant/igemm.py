"""Reference INT8 GEMM with INT32 accumulation and outer-dimension rescaling.

An integer kernel can only apply scales after the reduction finishes, i.e.
along the token rows of the activation and the output columns of the weight:
``Y = diag(dx) (Xq Wq) diag(dw)``. Scales over the reduction dimension have no
place to go and are rejected.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    ConfigurationError,
    DimensionError,
    ParameterError,
    UnsupportedGranularityError,
)
from .quant import (
    Granularity,
    QuantizedTensor,
    Timing,
    as_setting,
    quantize,
)
from .validation import check_tensor

MAX_INNER_DIM = 65536


@dataclass(frozen=True, eq=False)
class IntAccumulator:
    values: np.ndarray  # int32, (..., T, C_o)
    inner_dim: int

    @property
    def shape(self):
        return self.values.shape


def int_matmul(a_codes, b_codes):
    """Exact integer product of int8 code arrays, returned as int32.

    Products of int8 codes summed over at most 2**16 terms stay below 2**30,
    so float64 accumulation (53-bit mantissa) is exact and lets BLAS do the work.
    """
    if a_codes.shape[-1] != b_codes.shape[-2]:
        raise DimensionError(f"int8 GEMM inner dims differ: {a_codes.shape} @ {b_codes.shape}")
    k = a_codes.shape[-1]
    if k > MAX_INNER_DIM:
        raise DimensionError(f"inner dimension {k} exceeds {MAX_INNER_DIM}")
    acc = np.matmul(a_codes.astype(np.float64), b_codes.astype(np.float64))
    return acc.astype(np.int32)


def int8_gemm(xq, wq):
    if wq.values.ndim != 2 or xq.values.ndim < 2:
        raise DimensionError("int8_gemm expects xq of rank >= 2 and a 2-D wq")
    return IntAccumulator(int_matmul(xq.values, wq.values), xq.values.shape[-1])


def _row_scales(x_scales, acc):
    """Activation scales as a ``(..., T, 1)`` array, or raise."""
    lead = acc.shape[:-1]
    if isinstance(x_scales, QuantizedTensor):
        g = x_scales.scheme.granularity
        if g in (Granularity.PER_CHANNEL, Granularity.GROUP_WISE):
            raise UnsupportedGranularityError(
                f"{g.value} activation scales run along the inner dimension "
                "and cannot be applied after an integer GEMM"
            )
        x_scales = x_scales.scales
    sc = np.asarray(x_scales, dtype=np.float32)
    if sc.ndim == 0 or sc.size == 1:
        return sc.reshape(())
    if sc.shape == lead or sc.shape == lead + (1,):
        return sc.reshape(lead + (1,))
    if sc.ndim == 1 and sc.shape[0] == acc.inner_dim:
        raise UnsupportedGranularityError(
            f"activation scale vector of length {sc.shape[0]} matches the inner "
            "dimension; only per-tensor or per-token scales are supported"
        )
    raise DimensionError(f"activation scales of shape {sc.shape} do not fit outputs {acc.shape}")


def _col_scales(w_scales, acc):
    """Weight scales as a ``(C_o,)`` array (or scalar), or raise."""
    c_out = acc.shape[-1]
    if isinstance(w_scales, QuantizedTensor):
        g = w_scales.scheme.granularity
        if g is Granularity.PER_TOKEN:
            raise UnsupportedGranularityError(
                "per-row weight scales run along the inner dimension"
            )
        if g is Granularity.GROUP_WISE:
            return np.repeat(w_scales.scales, w_scales.scheme.group_size)
        w_scales = w_scales.scales
    sc = np.asarray(w_scales, dtype=np.float32)
    if sc.ndim == 0 or sc.size == 1:
        return sc.reshape(())
    if sc.shape == (c_out,):
        return sc
    if sc.ndim == 1 and sc.shape[0] == acc.inner_dim:
        raise UnsupportedGranularityError(
            f"weight scale vector of length {sc.shape[0]} matches the inner dimension"
        )
    raise DimensionError(f"weight scales of shape {sc.shape} do not fit {c_out} output columns")


def rescale(acc, x_scales, w_scales, bias=None):
    """Turn an INT32 accumulator into float32 outputs.

    ``x_scales``/``w_scales`` are either the quantized operands themselves
    (their scheme decides legality) or raw arrays: a scalar, a per-token
    array matching the accumulator's leading dims, or a per-output-column
    vector for the weight. Vectors over the inner dimension raise
    :class:`UnsupportedGranularityError`.
    """
    rows = _row_scales(x_scales, acc)
    cols = _col_scales(w_scales, acc)
    y = acc.values.astype(np.float32) * rows * cols
    if bias is not None:
        y = y + np.asarray(bias, dtype=np.float32)
    return y.astype(np.float32)


def quantize_weight(w, scheme):
    if scheme.granularity is Granularity.PER_TOKEN:
        raise ParameterError("per-token granularity is only valid for activations")
    # weights are known offline; their scales always come from the weight itself
    if scheme.timing is Timing.STATIC:
        scheme = type(scheme)(scheme.granularity, Timing.DYNAMIC, scheme.bits, scheme.group_size)
    return quantize(w, scheme)


def quantize_activation(x, scheme, static_scale=None):
    if scheme.granularity in (Granularity.PER_CHANNEL, Granularity.GROUP_WISE):
        raise UnsupportedGranularityError(
            f"{scheme.describe()} activations cannot feed an integer GEMM"
        )
    if scheme.timing is Timing.STATIC and static_scale is None:
        raise ConfigurationError(
            "static activation quantization needs a calibrated scale (run calibration)"
        )
    if scheme.timing is Timing.STATIC and scheme.granularity is Granularity.PER_TOKEN:
        raise ConfigurationError("static per-token scales do not exist for unseen tokens")
    return quantize(x, scheme, static_scale)


def quantized_linear(x, w, level, calib=None, bias=None, wq=None):
    """Quantize activation and weight, multiply in integers, rescale to float.

    ``level`` is a :class:`SettingLevel`, its name (``"O1"``...), or a
    :class:`QuantSetting`. ``calib`` is the static activation step size
    required by static settings. A pre-quantized weight may be passed as
    ``wq`` to skip re-quantizing it on every call.
    """
    setting = as_setting(level)
    x = check_tensor(x, "x", min_ndim=2)
    if wq is None:
        w = check_tensor(w, "w", ndim=2)
        wq = quantize_weight(w, setting.weight)
    if x.shape[-1] != wq.shape[0]:
        raise DimensionError(f"linear input width {x.shape[-1]} != weight rows {wq.shape[0]}")
    xq = quantize_activation(x, setting.activation, calib)
    return rescale(int8_gemm(xq, wq), xq, wq, bias)
