"""Reference quantization settings to compare smoothing against.

Each entry names a (weight, activation) setting; the mixed-precision entry
additionally keeps activation channels above a magnitude threshold in float.
"""

import math
from dataclasses import replace

import numpy as np

from .exceptions import DimensionError
from .igemm import int8_gemm, quantize_weight, rescale
from .quant import (
    DEFAULT_OUTLIER_THRESHOLD,
    PER_TENSOR_DYNAMIC,
    PER_TENSOR_STATIC,
    PER_TOKEN_DYNAMIC,
    Granularity,
    QuantScheme,
    QuantSetting,
    SettingLevel,
    decompose_outliers,
)
from .validation import check_tensor

W8A8 = QuantSetting(PER_TENSOR_DYNAMIC, PER_TENSOR_DYNAMIC, name="W8A8")
ZEROQUANT = QuantSetting(
    QuantScheme(Granularity.GROUP_WISE, group_size=128), PER_TOKEN_DYNAMIC, name="ZeroQuant"
)
LLM_INT8 = QuantSetting(
    QuantScheme(Granularity.PER_CHANNEL),
    PER_TOKEN_DYNAMIC,
    name="LLM.int8()",
    outlier_threshold=DEFAULT_OUTLIER_THRESHOLD,
)
OUTLIER_SUPPRESSION = QuantSetting(PER_TENSOR_DYNAMIC, PER_TENSOR_STATIC, name="OutlierSuppression")

BASELINES = {s.name: s for s in (W8A8, ZEROQUANT, LLM_INT8, OUTLIER_SUPPRESSION)}

# mixed decomposition has no INT8 BMM counterpart; attention products stay in float
FLOAT_BMM_BASELINES = {"LLM.int8()"}


def baseline_ops(name):
    from .graph import QUANT_OPS

    if name in FLOAT_BMM_BASELINES:
        return tuple(op for op in QUANT_OPS if not op.startswith("bmm"))
    return QUANT_OPS


def for_width(setting, width):
    """Shrink a group-wise weight scheme so its groups tile every layer of a model.

    All output extents in the toy model are multiples of ``width``, so a group
    size of ``gcd(group_size, width)`` always divides them. Wide models are
    left untouched.
    """
    w = setting.weight
    if w.granularity is not Granularity.GROUP_WISE or width % w.group_size == 0:
        return setting
    return replace(setting, weight=replace(w, group_size=math.gcd(w.group_size, width)))


def mixed_precision_linear(x, w, threshold=DEFAULT_OUTLIER_THRESHOLD, bias=None):
    """INT8 product over regular channels plus a float product over outlier channels."""
    x = check_tensor(x, "x", min_ndim=2)
    w = check_tensor(w, "w", ndim=2)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"input width {x.shape[-1]} != weight rows {w.shape[0]}")
    xq, outliers = decompose_outliers(x, threshold, PER_TOKEN_DYNAMIC)
    wq = quantize_weight(w, LLM_INT8.weight)
    y = rescale(int8_gemm(xq, wq), xq, wq, bias)
    if outliers.indices.size:
        y = y + np.matmul(outliers.values, w[outliers.indices])
    return y.astype(np.float32)


def smoothquant_settings():
    return {f"SmoothQuant-{lvl.value}": lvl.setting for lvl in SettingLevel}
