"""Calibration: activation statistics, static step sizes, and alpha search."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError, DimensionError, ParameterError
from .graph import PrecisionMap, attach_smoothing, forward_fp, forward_quant
from .quant import SettingLevel, compute_step
from .smooth import ChannelStats, SmoothingPlan, smoothing_factors, weight_row_absmax
from .tensor import mse
from .validation import check_fraction, check_tensor

DEFAULT_SAMPLE_COUNT = 512
DEFAULT_GRID = tuple(round(0.1 + 0.05 * i, 2) for i in range(17))
_CHUNK = 64


@dataclass(frozen=True)
class CalibConfig:
    sample_count: int = DEFAULT_SAMPLE_COUNT
    sequence_length: int = 32
    clip_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sample_count < 1:
            raise ParameterError("sample_count must be >= 1")
        if self.sequence_length < 1:
            raise ParameterError("sequence_length must be >= 1")
        check_fraction(self.clip_fraction, "clip_fraction", 0.0, 0.5, high_inclusive=False)


@dataclass(eq=False)
class CalibResult:
    """Per-input channel maxima; static step sizes are derived from them."""

    stats: dict = field(default_factory=dict)
    alpha_used: Optional[float] = None

    def _get(self, name):
        try:
            return self.stats[name]
        except KeyError:
            raise ConfigurationError(f"calibration has no statistics for {name!r}") from None

    def tensor_absmax(self, name):
        return float(self._get(name).act_absmax.max())

    def tensor_step(self, name, bits=8):
        return compute_step(self.tensor_absmax(name), bits)

    def channel_steps(self, name, bits=8):
        return compute_step(self._get(name).act_absmax, bits)

    @property
    def scales(self):
        """Per-tensor 8-bit static steps keyed by operator input."""
        return {name: self.tensor_step(name) for name in self.stats}


def clipped_channel_absmax(x, clip_fraction=0.0):
    """Channel maxima of each sample in ``(B, T, C)`` after dropping its top rows.

    The ``ceil(clip_fraction * T)`` token rows with the largest absolute value
    are excluded before the maxima are taken. Returns ``(B, C)``.
    """
    a = np.abs(x)
    t = a.shape[1]
    n_drop = math.ceil(clip_fraction * t) if clip_fraction > 0 else 0
    if n_drop:
        order = np.argsort(a.max(axis=2), axis=1, kind="stable")
        dropped = order[:, t - n_drop :]
        a = a.copy()
        np.put_along_axis(a, dropped[:, :, None], 0.0, axis=1)
    return a.max(axis=1)


def _stack(samples, width=None):
    arrs = []
    for i, s in enumerate(samples):
        s = check_tensor(s, f"samples[{i}]", ndim=(2, 3))
        arrs.extend(s if s.ndim == 3 else [s])
    if not arrs:
        raise ParameterError("calibration needs at least one sample")
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise DimensionError(f"calibration samples must share one shape, got {sorted(shapes)}")
    if width is not None and arrs[0].shape[-1] != width:
        raise DimensionError(f"sample width {arrs[0].shape[-1]} != model width {width}")
    return np.stack(arrs)


def run_calibration(model, samples, cfg=CalibConfig()):
    """Run ``samples`` through the float model and record input maxima.

    Statistics are element-wise maxima over samples at every quantizable
    operator input; each sample's largest token rows are clipped first when
    ``cfg.clip_fraction`` is positive.
    """
    batch = _stack(samples, model.width)
    maxima = {}

    def observe(name, x):
        m = clipped_channel_absmax(x, cfg.clip_fraction).max(axis=0)
        prev = maxima.get(name)
        maxima[name] = m if prev is None else np.maximum(prev, m)

    for start in range(0, batch.shape[0], _CHUNK):
        forward_fp(model, batch[start : start + _CHUNK], observer=observe)
    n = batch.shape[0]
    stats = {k: ChannelStats(v, n, cfg.clip_fraction) for k, v in maxima.items()}
    return CalibResult(stats)


def build_plan(calib, model, alpha=0.5):
    factors = {}
    for point, (_, consumers) in model.attachment_points().items():
        if point not in calib.stats:
            raise ConfigurationError(f"calibration does not cover attachment point {point!r}")
        wmax = weight_row_absmax(*(c.weight for c in consumers))
        factors[point] = smoothing_factors(calib.stats[point].act_absmax, wmax, alpha)
    calib.alpha_used = alpha
    return SmoothingPlan(factors, alpha)


def smooth_model(model, samples, alpha=0.5, cfg=CalibConfig(), calib=None):
    """Calibrate, build a plan, attach it, and recalibrate on the smoothed model.

    Returns ``(smoothed_model, plan, calib_after_smoothing)``. Static scales
    must come from the smoothed activations, hence the second pass.
    """
    if calib is None:
        calib = run_calibration(model, samples, cfg)
    plan = build_plan(calib, model, alpha)
    smoothed = attach_smoothing(model, plan)
    after = run_calibration(smoothed, samples, cfg)
    after.alpha_used = alpha
    return smoothed, plan, after


def search_alpha(model, calib_samples, eval_samples, grid=DEFAULT_GRID, level=SettingLevel.O3, cfg=CalibConfig()):
    """Grid-search the migration strength by quantized-output MSE.

    Returns ``(best_alpha, curve)`` with ``curve`` a list of ``(alpha, mse)``.
    Ties go to the alpha closest to 0.5.
    """
    grid = [check_fraction(a, "alpha") for a in grid]
    if not grid:
        raise ParameterError("alpha grid is empty")
    pmap = PrecisionMap.uniform(level)
    eval_batch = _stack(eval_samples, model.width)
    reference = forward_fp(model, eval_batch)
    base = run_calibration(model, calib_samples, cfg)
    curve = []
    for alpha in grid:
        smoothed, _, after = smooth_model(model, calib_samples, alpha, cfg, calib=base)
        out = forward_quant(smoothed, eval_batch, pmap, calib=after)
        curve.append((alpha, mse(reference, out)))
    best = min(curve, key=lambda p: (p[1], abs(p[0] - 0.5)))[0]
    return best, curve


def parse_grid(text):
    """``"a:b:step"`` -> inclusive list of alphas."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ParameterError(f"grid must look like a:b:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ParameterError(f"invalid grid {text!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]
