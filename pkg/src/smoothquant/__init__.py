"""W8A8 post-training quantization with per-channel activation smoothing."""

from .calib import CalibConfig, CalibResult, build_plan, run_calibration, search_alpha, smooth_model
from .estimators import ActivationSmoother, FakeQuantizer, SmoothQuantModel, W8A8Linear
from .exceptions import (
    ConfigurationError,
    DataError,
    DimensionError,
    FormatError,
    FormatVersionError,
    NotFusableError,
    ParameterError,
    PipelineError,
    SmoothQuantError,
    UnsupportedGranularityError,
)
from .graph import (
    BlockParams,
    ModelGraph,
    PrecisionMap,
    attach_smoothing,
    forward_fp,
    forward_quant,
    make_synthetic_model,
    synthetic_inputs,
)
from .igemm import IntAccumulator, int8_gemm, quantized_linear, rescale
from .quant import (
    Granularity,
    QuantizedTensor,
    QuantScheme,
    QuantSetting,
    SettingLevel,
    Timing,
    compute_step,
    decompose_outliers,
    dequantize,
    effective_levels,
    fake_quant,
    quantize,
)
from .smooth import (
    ChannelStats,
    SmoothingPlan,
    apply_smoothing,
    fuse_into_predecessor,
    post_smoothing_balance,
    smoothing_factors,
    weight_row_absmax,
)
from .tensor import (
    OutlierSpec,
    channel_absmax,
    gen_outlier_activations,
    matmul,
    max_relative_error,
    mse,
    relative_error,
)

__version__ = "0.1.0"
