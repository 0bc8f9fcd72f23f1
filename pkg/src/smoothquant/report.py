"""Error tables comparing quantized execution against the float reference."""

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .baselines import BASELINES, baseline_ops, for_width
from .calib import CalibConfig, CalibResult, _stack, run_calibration, smooth_model
from .exceptions import ConfigurationError, ParameterError
from .graph import PrecisionMap, attach_smoothing, forward_fp, forward_quant
from .quant import QuantScheme, QuantSetting, Granularity, PER_TENSOR_DYNAMIC, SettingLevel
from .smooth import SmoothingPlan
from .tensor import max_relative_error, mse, relative_error

LINEAR_OPS = ("qkv", "out_proj", "fc1", "fc2")


@dataclass
class ErrorConfig:
    name: str
    pmap: PrecisionMap
    plan: Optional[SmoothingPlan] = None
    calib: Optional[CalibResult] = None


def _as_config(i, c):
    if isinstance(c, ErrorConfig):
        return c
    pmap, plan, calib = (tuple(c) + (None, None))[:3]
    return ErrorConfig(pmap.name or f"config{i}", pmap, plan, calib)


def output_error_report(model, inputs, configs, calib_samples=None, cfg=CalibConfig()):
    """One row per config: MSE, max and Frobenius relative error vs. float.

    ``configs`` holds :class:`ErrorConfig` objects or ``(pmap, plan[, calib])``
    tuples. Static configs without calibration are calibrated on
    ``calib_samples`` after their plan is attached.
    """
    configs = [_as_config(i, c) for i, c in enumerate(configs)]
    if not configs:
        raise ParameterError("error report needs at least one config")
    batch = _stack(inputs, model.width)
    reference = forward_fp(model, batch)
    rows = []
    for c in configs:
        m = model if c.plan is None else attach_smoothing(model, c.plan)
        calib = c.calib
        if calib is None and c.pmap.needs_calibration():
            if calib_samples is None:
                raise ConfigurationError(f"config {c.name!r} needs calibration samples")
            calib = run_calibration(m, calib_samples, cfg)
        out = forward_quant(m, batch, c.pmap, calib=calib)
        rows.append(
            {
                "name": c.name,
                "mse": mse(reference, out),
                "max_rel_error": max_relative_error(reference, out),
                "rel_error": relative_error(reference, out),
            }
        )
    return rows


def granularity_configs():
    """Activation granularity sweep on the linear layers, per-tensor weights."""
    out = []
    for g in (Granularity.PER_TENSOR, Granularity.PER_TOKEN, Granularity.PER_CHANNEL):
        setting = QuantSetting(PER_TENSOR_DYNAMIC, QuantScheme(g), name=f"act {g.value}")
        out.append(ErrorConfig(setting.name, PrecisionMap.uniform(setting, ops=LINEAR_OPS)))
    return out


def settings_configs(model, calib_samples, alpha=0.5, cfg=CalibConfig()):
    """FP, the baselines, and the three smoothed levels on one model."""
    configs = [ErrorConfig("FP16-like (fp32)", PrecisionMap.full_precision())]
    for name, setting in BASELINES.items():
        configs.append(ErrorConfig(name, PrecisionMap.uniform(for_width(setting, model.width), ops=baseline_ops(name))))
    smoothed, plan, after = smooth_model(model, calib_samples, alpha, cfg)
    for lvl in SettingLevel:
        configs.append(
            ErrorConfig(f"SmoothQuant-{lvl.value}", PrecisionMap.uniform(lvl), plan, after)
        )
    return configs


def format_table(rows, columns=("name", "mse", "rel_error", "max_rel_error"), title=None):
    cells = [[str(c) for c in columns]]
    for r in rows:
        cells.append([_fmt(r[c]) for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [title] if title else []
    for j, row in enumerate(cells):
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths))))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4e}"
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def to_json(report):
    return json.dumps(_plain(report), indent=2, sort_keys=True) + "\n"
