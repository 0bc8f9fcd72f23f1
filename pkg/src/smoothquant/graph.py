"""Toy pre-LayerNorm transformer with INT8 linears and attention BMMs.

Every block is::

    h   = x + out_proj(attention(ln1(x)))
    out = h + fc2(gelu(fc1(ln2(h))))

Compute-heavy operators (``qkv``, ``bmm_qk``, ``bmm_pv``, ``out_proj``,
``fc1``, ``fc2``) may run in INT8; LayerNorm, softmax, GELU and the residual
adds always stay in float32. Smoothing vectors attach to the inputs of the
``qkv`` projections and of ``fc1``, whose LayerNorm predecessors absorb them.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import ConfigurationError, DimensionError, ParameterError
from .igemm import IntAccumulator, int_matmul, quantize_activation, quantize_weight, rescale
from .params import LayerNormParams, LinearParams
from .quant import (
    Granularity,
    QuantScheme,
    Timing,
    as_setting,
    decompose_outliers,
    dequantize,
    fake_quant,
    round_half_away,
)
from .smooth import fuse_into_predecessor
from .validation import check_tensor

QUANT_OPS = ("qkv", "bmm_qk", "bmm_pv", "out_proj", "fc1", "fc2")
FLOAT_OPS = ("ln1", "softmax", "residual1", "ln2", "gelu", "residual2")
ATTACHMENT_OPS = ("qkv", "fc1")
# every operator input that calibration observes, per block
CALIBRATED_INPUTS = ("qkv", "bmm_q", "bmm_k", "bmm_v", "out_proj", "fc1", "fc2")


def gelu(x):
    c = np.float32(math.sqrt(2.0 / math.pi))
    return (0.5 * x * (1.0 + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))).astype(
        np.float32
    )


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=axis, keepdims=True)).astype(np.float32)


@dataclass(frozen=True, eq=False)
class BlockParams:
    ln1: LayerNormParams
    q_proj: LinearParams
    k_proj: LinearParams
    v_proj: LinearParams
    out_proj: LinearParams
    ln2: LayerNormParams
    fc1: LinearParams
    fc2: LinearParams
    head_count: int
    # explicit runtime divisors for unfused smoothing (None: nothing to divide)
    attn_in_scale: Optional[np.ndarray] = None
    ffn_in_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        c = self.ln1.width
        if c % self.head_count:
            raise DimensionError(f"width {c} not divisible by {self.head_count} heads")
        for name in ("q_proj", "k_proj", "v_proj", "out_proj"):
            if getattr(self, name).weight.shape != (c, c):
                raise DimensionError(f"{name} must be {c}x{c}")
        if self.fc1.in_features != c or self.fc2.out_features != c:
            raise DimensionError("FFN widths do not match the block width")
        if self.fc1.out_features != self.fc2.in_features:
            raise DimensionError("fc1 output width must equal fc2 input width")

    @property
    def width(self):
        return self.ln1.width

    def linears(self):
        return {n: getattr(self, n) for n in ("q_proj", "k_proj", "v_proj", "out_proj", "fc1", "fc2")}


@dataclass(frozen=True, eq=False)
class ModelGraph:
    blocks: tuple
    causal: bool = True

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise DimensionError("a model needs at least one block")
        if len({b.width for b in self.blocks}) != 1:
            raise DimensionError("all blocks must share one width")

    @property
    def width(self):
        return self.blocks[0].width

    def attachment_points(self):
        """Attachment-point id -> (LayerNorm predecessor, consumer linears)."""
        points = {}
        for i, b in enumerate(self.blocks):
            points[f"blocks.{i}.qkv"] = (b.ln1, (b.q_proj, b.k_proj, b.v_proj))
            points[f"blocks.{i}.fc1"] = (b.ln2, (b.fc1,))
        return points

    def calibrated_inputs(self):
        return [f"blocks.{i}.{op}" for i in range(len(self.blocks)) for op in CALIBRATED_INPUTS]


@dataclass(eq=False)
class PrecisionMap:
    """Per-operator precision: a :class:`QuantSetting` for INT8, ``None`` for float."""

    tags: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        tags = {op: None for op in QUANT_OPS + FLOAT_OPS}
        for op, tag in self.tags.items():
            if op not in tags:
                raise ConfigurationError(f"unknown operator {op!r} in precision map")
            if op in FLOAT_OPS and tag is not None:
                raise ConfigurationError(f"{op} is an element-wise operator and stays in float")
            tags[op] = None if tag is None else as_setting(tag)
        self.tags = tags

    def __getitem__(self, op):
        return self.tags[op]

    @classmethod
    def full_precision(cls):
        return cls({}, name="FP")

    @classmethod
    def uniform(cls, level, ops=QUANT_OPS, name=None):
        setting = as_setting(level)
        return cls({op: setting for op in ops}, name=name or setting.name)

    def needs_calibration(self):
        return any(
            t is not None and t.activation.timing is Timing.STATIC for t in self.tags.values()
        )


def _split_heads(x, heads):
    b, t, c = x.shape
    return x.reshape(b, t, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)


class _Runner:
    """Executes one forward pass under a precision map."""

    def __init__(self, pmap, calib, observer):
        self.pmap = pmap
        self.calib = calib
        self.observer = observer

    def observe(self, name, x):
        if self.observer is not None:
            self.observer(name, x)

    def static_step(self, name, scheme):
        if scheme.timing is not Timing.STATIC:
            return None
        if self.calib is None:
            raise ConfigurationError(
                f"{scheme.describe()} activations need calibration results; run calibration first"
            )
        if scheme.granularity is Granularity.PER_TENSOR:
            return self.calib.tensor_step(name, scheme.bits)
        if scheme.granularity is Granularity.PER_CHANNEL:
            return self.calib.channel_steps(name, scheme.bits)
        raise ConfigurationError(f"no static calibration for {scheme.describe()} activations")

    def linear(self, name, op, x, layers):
        """Run the linears in ``layers`` on a shared input ``x``."""
        self.observe(name, x)
        setting = self.pmap[op]
        if setting is None:
            return [_float_linear(x, p) for p in layers]
        act = setting.activation
        if setting.outlier_threshold is not None:
            return [_mixed_linear(x, p, setting) for p in layers]
        if act.granularity in (Granularity.PER_CHANNEL, Granularity.GROUP_WISE):
            xs = fake_quant(x, act, self.static_step(name, act))
            return [
                _float_linear(xs, LinearParams(dequantize(quantize_weight(p.weight, setting.weight)), p.bias))
                for p in layers
            ]
        xq = quantize_activation(x, act, self.static_step(name, act))
        out = []
        for p in layers:
            wq = quantize_weight(p.weight, setting.weight)
            acc = IntAccumulator(int_matmul(xq.values, wq.values), xq.shape[-1])
            out.append(rescale(acc, xq, wq, p.bias))
        return out

    def bmm_qk(self, prefix, q, k, heads):
        self.observe(prefix + "bmm_q", q)
        self.observe(prefix + "bmm_k", k)
        setting = self.pmap["bmm_qk"]
        d = q.shape[-1] // heads
        inv = np.float32(1.0 / math.sqrt(d))
        if setting is None:
            return np.matmul(_split_heads(q, heads), _split_heads(k, heads).swapaxes(-1, -2)) * inv
        act = setting.activation
        if act.granularity in (Granularity.PER_CHANNEL, Granularity.GROUP_WISE):
            qs = fake_quant(q, act, self.static_step(prefix + "bmm_q", act))
            ks = fake_quant(k, act, self.static_step(prefix + "bmm_k", act))
            return np.matmul(_split_heads(qs, heads), _split_heads(ks, heads).swapaxes(-1, -2)) * inv
        qq = quantize_activation(q, act, self.static_step(prefix + "bmm_q", act))
        kq = quantize_activation(k, act, self.static_step(prefix + "bmm_k", act))
        acc = int_matmul(_split_heads(qq.values, heads), _split_heads(kq.values, heads).swapaxes(-1, -2))
        rows = _head_scales(qq.scales)
        cols = _head_scales(kq.scales)
        if cols.ndim:
            cols = np.swapaxes(cols, -1, -2)
        return (acc.astype(np.float32) * rows * cols * inv).astype(np.float32)

    def bmm_pv(self, prefix, probs, v, heads):
        self.observe(prefix + "bmm_v", v)
        setting = self.pmap["bmm_pv"]
        if setting is None:
            return _merge_heads(np.matmul(probs, _split_heads(v, heads)))
        act = setting.activation
        # probabilities lie in [0, 1]: fixed step 1/qmax, no calibration needed
        p_step = np.float32(1.0 / act.qmax)
        p_codes = np.clip(round_half_away(probs / p_step), 0, act.qmax)
        if act.granularity in (Granularity.PER_CHANNEL, Granularity.GROUP_WISE):
            vs = fake_quant(v, act, self.static_step(prefix + "bmm_v", act))
            return _merge_heads(np.matmul(p_codes * p_step, _split_heads(vs, heads)))
        # V's token rows are the reduction dim: only a per-tensor step fits
        v_scheme = QuantScheme(Granularity.PER_TENSOR, act.timing, act.bits)
        vq = quantize_activation(v, v_scheme, self.static_step(prefix + "bmm_v", v_scheme))
        acc = int_matmul(p_codes.astype(np.int8), _split_heads(vq.values, heads))
        return _merge_heads((acc.astype(np.float32) * (p_step * vq.scales)).astype(np.float32))


def _head_scales(scales):
    """Per-token scales ``(B, T)`` -> ``(B, 1, T, 1)``; scalars pass through."""
    if scales.ndim == 0:
        return scales
    return scales[:, None, :, None]


def _float_linear(x, p):
    y = np.matmul(x, p.weight)
    if p.bias is not None:
        y = y + p.bias
    return y.astype(np.float32)


def _mixed_linear(x, p, setting):
    """INT8 on regular channels, float on channels above the outlier threshold."""
    xq, outliers = decompose_outliers(x, setting.outlier_threshold, setting.activation)
    wq = quantize_weight(p.weight, setting.weight)
    y = rescale(IntAccumulator(int_matmul(xq.values, wq.values), xq.shape[-1]), xq, wq, p.bias)
    if outliers.indices.size:
        y = y + np.matmul(outliers.values, p.weight[outliers.indices])
    return y.astype(np.float32)


def _as_batch(x, width):
    x = check_tensor(x, "x", ndim=(2, 3))
    if x.shape[-1] != width:
        raise DimensionError(f"input width {x.shape[-1]} != model width {width}")
    return (x[None], True) if x.ndim == 2 else (x, False)


def _run(model, x, runner):
    x, squeeze = _as_batch(x, model.width)
    t = x.shape[1]
    mask = np.triu(np.full((t, t), -np.inf, np.float32), k=1) if model.causal else None
    for i, blk in enumerate(model.blocks):
        prefix = f"blocks.{i}."
        h = blk.ln1(x)
        if blk.attn_in_scale is not None:
            h = h / blk.attn_in_scale
        q, k, v = runner.linear(prefix + "qkv", "qkv", h, (blk.q_proj, blk.k_proj, blk.v_proj))
        scores = runner.bmm_qk(prefix, q, k, blk.head_count)
        if mask is not None:
            scores = scores + mask
        ctx = runner.bmm_pv(prefix, softmax(scores), v, blk.head_count)
        (attn,) = runner.linear(prefix + "out_proj", "out_proj", ctx, (blk.out_proj,))
        x = x + attn
        h = blk.ln2(x)
        if blk.ffn_in_scale is not None:
            h = h / blk.ffn_in_scale
        (a,) = runner.linear(prefix + "fc1", "fc1", h, (blk.fc1,))
        (f,) = runner.linear(prefix + "fc2", "fc2", gelu(a), (blk.fc2,))
        x = x + f
    x = x.astype(np.float32)
    return x[0] if squeeze else x


def forward_fp(model, x, observer=None):
    """Float32 reference forward. ``x`` is ``(B, T, C)`` or ``(T, C)``.

    ``observer(name, tensor)``, if given, sees every quantizable operator input.
    """
    return _run(model, x, _Runner(PrecisionMap.full_precision(), None, observer))


def forward_quant(model, x, pmap, plan=None, calib=None, observer=None):
    """Forward pass with the precision chosen per operator by ``pmap``.

    ``plan`` is attached (fused) before running; pass ``None`` when ``model``
    has already been smoothed. Static settings read their activation steps from
    ``calib``, which must have been collected on the model as executed here,
    i.e. after smoothing.
    """
    if plan is not None:
        model = attach_smoothing(model, plan)
    if pmap.needs_calibration() and calib is None:
        raise ConfigurationError("static quantization (O3) requires calibration results")
    return _run(model, x, _Runner(pmap, calib, observer))


def attach_smoothing(model, plan, fuse=True):
    """Return a new model with ``plan`` applied at every attachment point.

    With ``fuse=True`` the LayerNorm predecessors absorb ``1/s``; otherwise an
    explicit runtime division is recorded on the block, the fallback used when
    the input comes from a residual branch. Consumer weight rows are scaled by
    ``s`` in both cases.
    """
    points = model.attachment_points()
    if set(plan.keys()) != set(points):
        missing = sorted(set(points) - set(plan.keys()))
        extra = sorted(set(plan.keys()) - set(points))
        raise ConfigurationError(
            f"smoothing plan does not match model attachment points "
            f"(missing: {missing}, unknown: {extra})"
        )
    blocks = []
    for i, blk in enumerate(model.blocks):
        s_attn = plan[f"blocks.{i}.qkv"]
        s_ffn = plan[f"blocks.{i}.fc1"]
        if s_attn.shape[0] != blk.width or s_ffn.shape[0] != blk.width:
            raise DimensionError(f"smoothing vectors for block {i} have the wrong width")
        col = lambda s: s[:, None]  # noqa: E731
        changes = dict(
            q_proj=blk.q_proj.with_weight(blk.q_proj.weight * col(s_attn)),
            k_proj=blk.k_proj.with_weight(blk.k_proj.weight * col(s_attn)),
            v_proj=blk.v_proj.with_weight(blk.v_proj.weight * col(s_attn)),
            fc1=blk.fc1.with_weight(blk.fc1.weight * col(s_ffn)),
        )
        if fuse:
            changes["ln1"] = fuse_into_predecessor(blk.ln1, s_attn)
            changes["ln2"] = fuse_into_predecessor(blk.ln2, s_ffn)
        else:
            changes["attn_in_scale"] = s_attn if blk.attn_in_scale is None else blk.attn_in_scale * s_attn
            changes["ffn_in_scale"] = s_ffn if blk.ffn_in_scale is None else blk.ffn_in_scale * s_ffn
        blocks.append(replace(blk, **changes))
    return replace(model, blocks=tuple(blocks))


def make_synthetic_model(
    seed=0,
    n_blocks=2,
    width=128,
    heads=4,
    ffn_mult=4,
    outlier=None,
    weight_std=0.02,
    outlier_row_gain=None,
    outlier_gamma=0.25,
):
    """Deterministic random model; ``outlier`` amplifies LayerNorm gains.

    The same outlier channels are amplified in every LayerNorm of every block,
    so the inputs of the ``qkv`` and ``fc1`` projections carry persistent
    outlier channels, as observed in large language models.
    """
    if n_blocks < 1 or width < 1 or heads < 1 or ffn_mult < 1:
        raise ParameterError("model dimensions must be positive")
    rng = np.random.default_rng([seed, 0x5EED])
    std = weight_std
    if outlier_row_gain is None:
        outlier_row_gain = 1.0 if outlier is None else outlier.outlier_scale ** -0.5
    hidden = ffn_mult * width
    idx = outlier.channels(width) if outlier is not None else np.array([], dtype=int)

    def lin(c_in, c_out, w_std, reads_outliers=False):
        w = rng.normal(0.0, w_std, (c_in, c_out)).astype(np.float32)
        if reads_outliers and idx.size:
            w[idx] *= np.float32(outlier_row_gain)
        b = rng.normal(0.0, 0.02, c_out).astype(np.float32)
        return LinearParams(w, b)

    def ln():
        gamma = (1.0 + rng.normal(0.0, 0.05, width)).astype(np.float32)
        beta = rng.normal(0.0, 0.02, width).astype(np.float32)
        if idx.size:
            gamma[idx] *= np.float32(outlier.outlier_scale * outlier_gamma)
            signs = rng.choice(np.array([-1.0, 1.0], np.float32), idx.size)
            beta[idx] = signs * np.float32(outlier.outlier_scale)
        return LayerNormParams(gamma, beta)

    blocks = []
    for _ in range(n_blocks):
        blocks.append(
            BlockParams(
                ln1=ln(),
                q_proj=lin(width, width, std, True),
                k_proj=lin(width, width, std, True),
                v_proj=lin(width, width, std, True),
                out_proj=lin(width, width, std),
                ln2=ln(),
                fc1=lin(width, hidden, std, True),
                fc2=lin(hidden, width, std),
                head_count=heads,
            )
        )
    return ModelGraph(tuple(blocks))


def synthetic_inputs(seed, count, seq_len, width):
    """Standard-normal token sequences: a list of ``(seq_len, width)`` samples."""
    rng = np.random.default_rng([seed, 0x1A7A])
    return [rng.standard_normal((seq_len, width), dtype=np.float32) for _ in range(count)]
