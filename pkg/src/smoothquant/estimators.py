"""scikit-learn compatible wrappers.

The estimators follow the usual conventions: hyper-parameters are stored
verbatim by ``__init__``, ``fit`` learns attributes with a trailing
underscore and returns ``self``, and ``get_params``/``set_params``/``clone``
work through :class:`sklearn.base.BaseEstimator`.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .calib import DEFAULT_GRID, CalibConfig, clipped_channel_absmax, search_alpha, smooth_model
from .graph import ModelGraph, PrecisionMap, forward_quant
from .igemm import quantize_weight, quantized_linear
from .quant import Granularity, QuantScheme, Timing, absmax_for, as_setting, compute_step, fake_quant
from .smooth import smoothing_factors, weight_row_absmax
from .validation import check_tensor


def _check_X(X, n_features=None, ndim=(2, 3)):
    X = check_tensor(X, "X", ndim=ndim)
    if n_features is not None and X.shape[-1] != n_features:
        raise ValueError(f"X has {X.shape[-1]} features, but the estimator was fitted with {n_features}")
    return X


def _channel_stats(X, clip_fraction):
    batch = X[None] if X.ndim == 2 else X
    return clipped_channel_absmax(batch, clip_fraction).max(axis=0)


class ActivationSmoother(TransformerMixin, BaseEstimator):
    """Divide activations by per-channel smoothing factors.

    ``fit`` collects channel maxima of ``X`` and combines them with the row
    maxima of ``weight`` (``(n_features, n_outputs)``). ``transform`` returns
    ``X / s``; :attr:`smoothed_weight_` holds ``diag(s) @ weight`` so the
    product with the transformed activations is unchanged.
    """

    def __init__(self, weight=None, alpha=0.5, clip_fraction=0.0):
        self.weight = weight
        self.alpha = alpha
        self.clip_fraction = clip_fraction

    def fit(self, X, y=None):
        X = _check_X(X)
        w = check_tensor(self.weight, "weight", ndim=2)
        if w.shape[0] != X.shape[-1]:
            raise ValueError(f"weight has {w.shape[0]} rows, X has {X.shape[-1]} features")
        self.act_absmax_ = _channel_stats(X, self.clip_fraction)
        self.weight_absmax_ = weight_row_absmax(w)
        self.scales_ = smoothing_factors(self.act_absmax_, self.weight_absmax_, self.alpha)
        self.smoothed_weight_ = w * self.scales_[:, None]
        self.n_features_in_ = X.shape[-1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scales_")
        X = _check_X(X, self.n_features_in_)
        return X / self.scales_

    def inverse_transform(self, X):
        check_is_fitted(self, "scales_")
        return _check_X(X, self.n_features_in_) * self.scales_


class FakeQuantizer(TransformerMixin, BaseEstimator):
    """Quantize-dequantize activations to simulate INT-N error in float.

    With ``timing="static"`` the step sizes are calibrated by ``fit``; with
    ``"dynamic"`` they are recomputed from every transformed batch.
    """

    def __init__(self, granularity="per_tensor", timing="dynamic", bits=8, group_size=None):
        self.granularity = granularity
        self.timing = timing
        self.bits = bits
        self.group_size = group_size

    def _scheme(self):
        return QuantScheme(Granularity(self.granularity), Timing(self.timing), self.bits, self.group_size)

    def fit(self, X, y=None):
        scheme = self._scheme()
        X = _check_X(X, ndim=(1, 2, 3))
        self.n_features_in_ = X.shape[-1]
        self.scheme_ = scheme
        self.steps_ = None
        if scheme.timing is Timing.STATIC:
            if scheme.granularity is Granularity.PER_TOKEN:
                raise ValueError("static per-token scales cannot be reused on new tokens")
            self.steps_ = np.asarray(compute_step(absmax_for(X, scheme), scheme.bits), dtype=np.float32)
        return self

    def transform(self, X):
        check_is_fitted(self, "scheme_")
        X = _check_X(X, self.n_features_in_, ndim=(1, 2, 3))
        return fake_quant(X, self.scheme_, self.steps_)


class W8A8Linear(RegressorMixin, BaseEstimator):
    """A linear layer executed with INT8 weights and activations.

    ``alpha=None`` disables smoothing. ``fit`` calibrates smoothing factors
    (if enabled) and, for static levels, the activation step on the smoothed
    inputs; ``predict`` runs quantize -> INT8 GEMM -> rescale.
    """

    def __init__(self, weight=None, bias=None, level="O3", alpha=0.5, clip_fraction=0.0):
        self.weight = weight
        self.bias = bias
        self.level = level
        self.alpha = alpha
        self.clip_fraction = clip_fraction

    def fit(self, X, y=None):
        X = _check_X(X)
        w = check_tensor(self.weight, "weight", ndim=2)
        if w.shape[0] != X.shape[-1]:
            raise ValueError(f"weight has {w.shape[0]} rows, X has {X.shape[-1]} features")
        setting = as_setting(self.level)
        act_max = _channel_stats(X, self.clip_fraction)
        if self.alpha is None:
            self.scales_ = np.ones(X.shape[-1], np.float32)
        else:
            self.scales_ = smoothing_factors(act_max, weight_row_absmax(w), self.alpha)
        self.weight_q_ = quantize_weight(w * self.scales_[:, None], setting.weight)
        self.act_step_ = None
        if setting.activation.timing is Timing.STATIC:
            self.act_step_ = compute_step(float((act_max / self.scales_).max()), setting.activation.bits)
        self.setting_ = setting
        self.n_features_in_ = X.shape[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "weight_q_")
        X = _check_X(X, self.n_features_in_)
        return quantized_linear(X / self.scales_, None, self.setting_, self.act_step_, self.bias, wq=self.weight_q_)

    def score(self, X, y, sample_weight=None):
        """Negative mean squared error of :meth:`predict` against ``y``."""
        y = np.asarray(y, dtype=np.float64)
        return -float(np.mean((self.predict(X) - y) ** 2))


class SmoothQuantModel(BaseEstimator):
    """Smooth and quantize a :class:`ModelGraph` from calibration samples.

    ``fit(samples)`` takes a list of ``(T, C)`` sequences (or one ``(B, T, C)``
    array). ``alpha="auto"`` grid-searches the migration strength on
    ``eval_samples`` (default: the calibration samples themselves).
    """

    def __init__(self, model=None, level="O3", alpha=0.5, grid=DEFAULT_GRID, clip_fraction=0.0, eval_samples=None):
        self.model = model
        self.level = level
        self.alpha = alpha
        self.grid = grid
        self.clip_fraction = clip_fraction
        self.eval_samples = eval_samples

    def fit(self, X, y=None):
        if not isinstance(self.model, ModelGraph):
            raise TypeError("model must be a ModelGraph")
        samples = list(X) if not isinstance(X, np.ndarray) or X.ndim == 3 else [X]
        cfg = CalibConfig(sample_count=len(samples), clip_fraction=self.clip_fraction)
        if self.alpha == "auto":
            evals = samples if self.eval_samples is None else self.eval_samples
            self.alpha_, self.alpha_curve_ = search_alpha(self.model, samples, evals, self.grid, self.level, cfg)
        else:
            self.alpha_, self.alpha_curve_ = float(self.alpha), None
        self.smoothed_model_, self.plan_, self.calib_ = smooth_model(self.model, samples, self.alpha_, cfg)
        self.precision_map_ = PrecisionMap.uniform(self.level)
        self.n_features_in_ = self.model.width
        return self

    def predict(self, X):
        check_is_fitted(self, "smoothed_model_")
        X = _check_X(X, self.n_features_in_)
        return forward_quant(self.smoothed_model_, X, self.precision_map_, calib=self.calib_)
