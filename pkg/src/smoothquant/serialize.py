"""Mapping of models, smoothing plans and calibration results to container entries."""

import math

import numpy as np

from .calib import CalibResult
from .exceptions import FormatError
from .graph import BlockParams, ModelGraph
from .params import LayerNormParams, LinearParams
from .smooth import ChannelStats, SmoothingPlan

_LINEARS = ("q_proj", "k_proj", "v_proj", "out_proj", "fc1", "fc2")


def _f64(value):
    """A float64 stored bit-exactly as two int32 words."""
    return np.array([value], dtype="<f8").view("<i4")


def _read_f64(entries, key):
    return float(_need(entries, key).astype("<i4").view("<f8")[0])


def _scalar(value, dtype=np.int32):
    return np.array(value, dtype=dtype)


def _need(entries, key):
    try:
        return entries[key]
    except KeyError:
        raise FormatError(f"missing entry {key!r}") from None


def model_to_entries(model):
    e = {"model.n_blocks": _scalar(len(model.blocks)), "model.causal": _scalar(int(model.causal))}
    for i, b in enumerate(model.blocks):
        p = f"blocks.{i}."
        e[p + "head_count"] = _scalar(b.head_count)
        for ln in ("ln1", "ln2"):
            params = getattr(b, ln)
            e[p + ln + ".gamma"] = params.gamma
            e[p + ln + ".beta"] = params.beta
            e[p + ln + ".eps"] = _f64(params.eps)
        for name in _LINEARS:
            lin = getattr(b, name)
            e[p + name + ".weight"] = lin.weight
            if lin.bias is not None:
                e[p + name + ".bias"] = lin.bias
        for scale in ("attn_in_scale", "ffn_in_scale"):
            if getattr(b, scale) is not None:
                e[p + scale] = getattr(b, scale)
    return e


def model_from_entries(entries):
    n = int(_need(entries, "model.n_blocks"))
    blocks = []
    for i in range(n):
        p = f"blocks.{i}."
        kw = {"head_count": int(_need(entries, p + "head_count"))}
        for ln in ("ln1", "ln2"):
            kw[ln] = LayerNormParams(
                _need(entries, p + ln + ".gamma"),
                _need(entries, p + ln + ".beta"),
                _read_f64(entries, p + ln + ".eps"),
            )
        for name in _LINEARS:
            kw[name] = LinearParams(_need(entries, p + name + ".weight"), entries.get(p + name + ".bias"))
        for scale in ("attn_in_scale", "ffn_in_scale"):
            kw[scale] = entries.get(p + scale)
        blocks.append(BlockParams(**kw))
    return ModelGraph(tuple(blocks), causal=bool(int(_need(entries, "model.causal"))))


def plan_to_entries(plan):
    e = {"plan.alpha": _f64(plan.alpha)}
    for key, s in plan.factors.items():
        e["plan.factors." + key] = s
    return e


def plan_from_entries(entries):
    prefix = "plan.factors."
    factors = {k[len(prefix) :]: v for k, v in entries.items() if k.startswith(prefix)}
    return SmoothingPlan(factors, _read_f64(entries, "plan.alpha"))


def calib_to_entries(calib):
    first = next(iter(calib.stats.values()), None)
    e = {
        "calib.sample_count": _scalar(first.sample_count if first else 0),
        "calib.clip_fraction": _f64(first.clip_fraction if first else 0.0),
        "calib.alpha_used": _f64(math.nan if calib.alpha_used is None else calib.alpha_used),
    }
    for name, st in calib.stats.items():
        e["calib.stats." + name] = st.act_absmax
    for name, step in calib.scales.items():
        e["calib.scale." + name] = np.array(step, dtype=np.float32)
    return e


def calib_from_entries(entries):
    count = int(_need(entries, "calib.sample_count"))
    clip = _read_f64(entries, "calib.clip_fraction")
    alpha = _read_f64(entries, "calib.alpha_used")
    prefix = "calib.stats."
    stats = {
        k[len(prefix) :]: ChannelStats(v, count, clip) for k, v in entries.items() if k.startswith(prefix)
    }
    return CalibResult(stats, None if math.isnan(alpha) else alpha)
