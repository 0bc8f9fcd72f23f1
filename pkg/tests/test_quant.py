import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothquant.exceptions import ConfigurationError, DataError, DimensionError, ParameterError
from smoothquant.quant import (
    PER_CHANNEL_DYNAMIC,
    PER_TENSOR_DYNAMIC,
    PER_TENSOR_STATIC,
    PER_TOKEN_DYNAMIC,
    Granularity,
    QuantScheme,
    QuantizedTensor,
    SettingLevel,
    Timing,
    compute_step,
    decompose_outliers,
    dequantize,
    effective_levels,
    fake_quant,
    quantize,
)
from smoothquant.tensor import OutlierSpec, gen_outlier_activations, mse

SCHEMES = [
    PER_TENSOR_DYNAMIC,
    PER_TOKEN_DYNAMIC,
    PER_CHANNEL_DYNAMIC,
    QuantScheme(Granularity.GROUP_WISE, group_size=4),
]


def local_steps(q):
    return np.asarray(q.expanded_scales(), np.float64)


def test_compute_step_examples():
    assert compute_step(127.0, 8) == 1.0
    assert compute_step(0.0, 8) == 1.0
    assert compute_step(100.0, 8) == pytest.approx(0.7874015748031497, rel=1e-15)
    assert compute_step(7.0, 4) == 1.0


@pytest.mark.parametrize("bits", [1, 9, 0])
def test_compute_step_rejects_bits(bits):
    with pytest.raises(ParameterError):
        compute_step(1.0, bits)


def test_quantize_per_tensor_example():
    q = quantize(np.array([100.0, 0.5, -0.5]), PER_TENSOR_DYNAMIC)
    np.testing.assert_array_equal(q.values, [127, 1, -1])
    assert float(q.scales) == pytest.approx(100 / 127, rel=1e-7)


def test_quantize_zero_tensor():
    q = quantize(np.zeros((3, 4)), PER_TENSOR_DYNAMIC)
    assert not q.values.any()
    assert float(q.scales) == 1.0


def test_quantize_per_token_example():
    q = quantize(np.array([[1.0, 2.0], [10.0, 20.0]]), PER_TOKEN_DYNAMIC)
    np.testing.assert_allclose(q.scales, [2 / 127, 20 / 127], rtol=1e-7)
    np.testing.assert_array_equal(q.values, [[64, 127], [64, 127]])


def test_rounding_ties_away_from_zero():
    q = quantize(np.array([2.5, -2.5, 0.5, -0.5, 127.0]), PER_TENSOR_STATIC, static_scales=1.0)
    np.testing.assert_array_equal(q.values, [3, -3, 1, -1, 127])


def test_static_requires_scales():
    with pytest.raises(ConfigurationError):
        quantize(np.ones(3), PER_TENSOR_STATIC)
    with pytest.raises(DataError):
        quantize(np.ones(3), PER_TENSOR_STATIC, static_scales=0.0)
    with pytest.raises(DataError):
        quantize(np.ones(3), PER_TENSOR_STATIC, static_scales=-1.0)


def test_static_clamps_out_of_range():
    q = quantize(np.array([1000.0, -1000.0]), PER_TENSOR_STATIC, static_scales=1.0)
    np.testing.assert_array_equal(q.values, [127, -127])


def test_group_size_must_divide():
    with pytest.raises(DimensionError):
        quantize(np.ones((2, 6)), QuantScheme(Granularity.GROUP_WISE, group_size=4))
    with pytest.raises(ParameterError):
        QuantScheme(Granularity.PER_TENSOR, group_size=4)
    assert QuantScheme(Granularity.GROUP_WISE).group_size == 128


def test_group_wise_scales():
    x = np.array([[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 0.0, -8.0]])
    q = quantize(x, QuantScheme(Granularity.GROUP_WISE, group_size=2))
    np.testing.assert_allclose(q.scales, [5 / 127, 8 / 127], rtol=1e-7)


def test_settings_table():
    o1, o2, o3 = (lvl.setting for lvl in SettingLevel)
    for s in (o1, o2, o3):
        assert s.weight.granularity is Granularity.PER_TENSOR
    assert o1.activation == PER_TOKEN_DYNAMIC
    assert o2.activation == PER_TENSOR_DYNAMIC
    assert o3.activation == PER_TENSOR_STATIC


def test_dequantize_unit_scale():
    q = QuantizedTensor(np.array([127], np.int8), np.array(1.0, np.float32))
    np.testing.assert_array_equal(dequantize(q), [127.0])


def test_quantized_tensor_invariants():
    with pytest.raises(DataError):
        QuantizedTensor(np.array([-128], np.int8), np.array(1.0, np.float32))
    with pytest.raises(DataError):
        QuantizedTensor(np.array([1], np.int8), np.array(0.0, np.float32))


@pytest.mark.parametrize("scheme", SCHEMES)
def test_lattice_round_trip_exact(scheme, rng):
    step = 0.125
    codes = rng.integers(-127, 128, size=(6, 8))
    codes[:, :] = np.where(np.abs(codes) == 127, 126, codes)
    codes[0, :] = 127  # every row, column and group reaches the full range
    codes[:, 0] = -127
    x = (codes * step).astype(np.float32)
    np.testing.assert_array_equal(fake_quant(x, scheme), x)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_round_trip_error_bound(scheme):
    rng = np.random.default_rng(0)
    for _ in range(1000 // len(SCHEMES)):
        x = (rng.standard_normal((5, 8)) * rng.uniform(0.01, 100)).astype(np.float32)
        q = quantize(x, scheme)
        err = np.abs(x.astype(np.float64) - dequantize(q))
        assert np.all(err <= local_steps(q) / 2 * (1 + 1e-5) + 1e-30)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 6),
    st.integers(1, 3).map(lambda g: 2 * g),
    st.sampled_from(range(len(SCHEMES))),
    st.integers(2, 8),
    st.floats(1e-3, 1e4),
    st.integers(0, 2**32 - 1),
)
def test_fake_quant_bound_property(t, c, si, bits, magnitude, seed):
    base = SCHEMES[si]
    gs = 2 if base.granularity is Granularity.GROUP_WISE else None
    scheme = QuantScheme(base.granularity, base.timing, bits, gs)
    x = (np.random.default_rng(seed).standard_normal((t, c)) * magnitude).astype(np.float32)
    q = quantize(x, scheme)
    assert q.values.min() >= -(2 ** (bits - 1) - 1)  # symmetric: most negative code unused
    err = np.abs(x.astype(np.float64) - dequantize(q))
    assert np.all(err <= local_steps(q) / 2 * (1 + 1e-5))


def test_never_emits_most_negative_code():
    x = np.array([-1.0, 1.0, -1.0000001])
    assert quantize(x, PER_TENSOR_DYNAMIC).values.min() == -127


def test_per_channel_fake_quant_bound_on_outliers():
    x = gen_outlier_activations(64, 128, OutlierSpec(0.01, 100.0, 1))
    q = quantize(x, PER_CHANNEL_DYNAMIC)
    err = np.abs(x - dequantize(q))
    assert np.all(err <= q.scales / 2 * (1 + 1e-5))


def test_fake_quant_zero_identity():
    for scheme in SCHEMES:
        np.testing.assert_array_equal(fake_quant(np.zeros((2, 8)), scheme), np.zeros((2, 8)))


def test_per_tensor_collapses_small_channels():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (256, 4)).astype(np.float32)
    x[0, 1] = 1.0  # m_i = 1
    x[:, 0] *= 100.0
    x[0, 0] = 100.0  # m = 100, so m_i / m = 0.01
    codes = quantize(x, PER_TENSOR_DYNAMIC).values
    for ch in (1, 2, 3):
        assert len(np.unique(codes[:, ch])) <= 3


def test_effective_levels():
    assert effective_levels(0.01, 1.0, 8) == 2.56
    assert effective_levels(0.01 * 64.0, 64.0, 8) == 2.56
    assert effective_levels(1.0, 100.0, 8) == pytest.approx(2.56, rel=1e-12)
    assert effective_levels(3.0, 3.0, 8) == 256
    assert effective_levels(0.5, 1.0, 8) == 128
    with pytest.raises(DataError):
        effective_levels(2.0, 1.0)
    with pytest.raises(DataError):
        effective_levels(0.0, 0.0)


def test_granularity_ordering_on_outlier_activations():
    for seed in range(5):
        x = gen_outlier_activations(64, 128, OutlierSpec(0.01, 100.0, seed))
        e_tensor = mse(x, fake_quant(x, PER_TENSOR_DYNAMIC))
        assert mse(x, fake_quant(x, PER_CHANNEL_DYNAMIC)) <= 0.1 * e_tensor
        assert mse(x, fake_quant(x, PER_TOKEN_DYNAMIC)) <= 2 * e_tensor


@pytest.mark.parametrize("granularity", [Granularity.PER_TENSOR, Granularity.PER_CHANNEL])
def test_dynamic_equals_static_calibrated_on_same_input(granularity, rng):
    x = rng.standard_normal((16, 8)).astype(np.float32)
    dyn = quantize(x, QuantScheme(granularity, Timing.DYNAMIC))
    sta = quantize(x, QuantScheme(granularity, Timing.STATIC), static_scales=dyn.scales)
    np.testing.assert_array_equal(dyn.values, sta.values)
    np.testing.assert_array_equal(dequantize(dyn), dequantize(sta))


def test_decompose_threshold_above_max(rng):
    x = rng.standard_normal((8, 16)).astype(np.float32)
    q, outliers = decompose_outliers(x, threshold=1e6)
    assert outliers.indices.size == 0
    np.testing.assert_array_equal(dequantize(q), fake_quant(x, PER_TOKEN_DYNAMIC))


def test_decompose_outlier_channels_exact():
    spec = OutlierSpec(0.05, 100.0, 3)
    x = gen_outlier_activations(32, 64, spec)
    q, outliers = decompose_outliers(x, threshold=20.0)
    idx = spec.channels(64)
    np.testing.assert_array_equal(outliers.indices, idx)
    recomposed = dequantize(q) + outliers.to_dense()
    np.testing.assert_array_equal(recomposed[:, idx], x[:, idx])
    normal = np.setdiff1d(np.arange(64), idx)
    err = np.abs(recomposed - x)[:, normal]
    assert np.all(err <= np.asarray(q.scales)[:, None] / 2 * (1 + 1e-5))


def test_decompose_tiny_threshold_moves_everything_to_float():
    x = gen_outlier_activations(16, 32, OutlierSpec(0.1, 100.0, 0))
    q, outliers = decompose_outliers(x, threshold=1e-12)
    assert not q.values.any()
    np.testing.assert_array_equal(dequantize(q) + outliers.to_dense(), x)


def test_decompose_lattice_recomposition_exact():
    x = np.zeros((4, 6), np.float32)
    x[:, :5] = np.arange(-10, 10).reshape(4, 5) * 0.5
    x[:, 0] = 4.5  # every row reaches +-4.5 among regular channels
    x[:, 5] = 50.0
    q, outliers = decompose_outliers(x, threshold=6.0)
    scales = np.asarray(q.scales)
    assert np.all(scales == np.float32(4.5 / 127))
    lattice = (np.round(x[:, :5] / scales[:, None]) * scales[:, None]).astype(np.float32)
    x[:, :5] = lattice
    q, outliers = decompose_outliers(x, threshold=6.0)
    np.testing.assert_array_equal(dequantize(q) + outliers.to_dense(), x)


def test_decompose_rejects_nonpositive_threshold():
    with pytest.raises(ParameterError):
        decompose_outliers(np.ones((2, 2)), threshold=0.0)


def test_baseline_group_size_follows_model_width():
    from smoothquant.baselines import ZEROQUANT, for_width

    assert for_width(ZEROQUANT, 256) is ZEROQUANT
    assert for_width(ZEROQUANT, 32).weight.group_size == 32
    assert for_width(ZEROQUANT, 48).weight.group_size == 16
