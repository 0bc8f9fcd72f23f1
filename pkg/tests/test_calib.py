import numpy as np
import pytest

from smoothquant.calib import (
    DEFAULT_GRID,
    CalibConfig,
    build_plan,
    clipped_channel_absmax,
    parse_grid,
    run_calibration,
    search_alpha,
    smooth_model,
)
from smoothquant.exceptions import ConfigurationError, DimensionError, ParameterError
from smoothquant.graph import forward_fp, make_synthetic_model, synthetic_inputs
from smoothquant.smooth import ChannelStats
from smoothquant.tensor import OutlierSpec, channel_absmax


@pytest.fixture(scope="module")
def small_model():
    return make_synthetic_model(3, width=16, heads=2, outlier=OutlierSpec(0.1, 50.0, 3))


def _observed(model, sample):
    seen = {}
    forward_fp(model, sample, observer=lambda n, x: seen.setdefault(n, channel_absmax(x)))
    return seen


def test_single_sample_stats_equal_channel_absmax(small_model):
    sample = synthetic_inputs(0, 1, 8, 16)[0]
    calib = run_calibration(small_model, [sample])
    seen = _observed(small_model, sample)
    assert set(calib.stats) == set(small_model.calibrated_inputs()) == set(seen)
    for name, expected in seen.items():
        np.testing.assert_array_equal(calib.stats[name].act_absmax, expected)


def test_two_samples_take_elementwise_max(small_model):
    a, b = synthetic_inputs(1, 2, 8, 16)
    both = run_calibration(small_model, [a, b])
    ca, cb = run_calibration(small_model, [a]), run_calibration(small_model, [b])
    for name in both.stats:
        np.testing.assert_array_equal(
            both.stats[name].act_absmax, np.maximum(ca.stats[name].act_absmax, cb.stats[name].act_absmax)
        )
        assert both.stats[name].sample_count == 2


def test_adding_samples_never_decreases_stats(small_model):
    samples = synthetic_inputs(2, 6, 8, 16)
    prev = None
    for n in range(1, 7):
        cur = run_calibration(small_model, samples[:n])
        if prev is not None:
            for name in cur.stats:
                assert np.all(cur.stats[name].act_absmax >= prev.stats[name].act_absmax)
        prev = cur


def test_chunked_matches_single_pass(small_model):
    samples = synthetic_inputs(4, 70, 4, 16)
    full = run_calibration(small_model, samples)
    merged = run_calibration(small_model, samples[:35]).stats
    rest = run_calibration(small_model, samples[35:]).stats
    for name in full.stats:
        np.testing.assert_array_equal(full.stats[name].act_absmax, merged[name].merge(rest[name]).act_absmax)


def test_clipping_drops_spike_row():
    x = np.ones((1, 50, 4), np.float32)
    x[0, 7] = 100.0
    np.testing.assert_array_equal(clipped_channel_absmax(x, 0.0), [[100.0] * 4])
    np.testing.assert_array_equal(clipped_channel_absmax(x, 0.02), [[1.0] * 4])


def test_clipped_static_scale_smaller(small_model):
    sample = synthetic_inputs(5, 1, 50, 16)[0].copy()
    sample[10] *= 200.0
    plain = run_calibration(small_model, [sample])
    clipped = run_calibration(small_model, [sample], CalibConfig(clip_fraction=0.02))
    assert clipped.tensor_step("blocks.0.qkv") < plain.tensor_step("blocks.0.qkv")
    assert clipped.stats["blocks.0.qkv"].clip_fraction == 0.02


def test_calibration_errors(small_model):
    with pytest.raises(ParameterError):
        run_calibration(small_model, [])
    with pytest.raises(DimensionError):
        run_calibration(small_model, [np.ones((4, 8), np.float32)])
    with pytest.raises(ParameterError):
        CalibConfig(clip_fraction=0.5)
    with pytest.raises(ParameterError):
        CalibConfig(sample_count=0)


def test_scales_strictly_positive(small_model):
    calib = run_calibration(small_model, synthetic_inputs(6, 2, 8, 16))
    assert all(s > 0 for s in calib.scales.values())
    with pytest.raises(ConfigurationError):
        calib.tensor_step("blocks.7.qkv")


def test_uniform_stats_give_all_ones_plan():
    model = make_synthetic_model(0, n_blocks=1, width=8, heads=2)
    ones = {}
    for point, (_, consumers) in model.attachment_points().items():
        for c in consumers:
            c.weight[:] = np.where(np.arange(c.out_features) == 0, 1.0, 0.5)
        ones[point] = ChannelStats(np.ones(8, np.float32))
    from smoothquant.calib import CalibResult

    plan = build_plan(CalibResult(ones), model, 0.5)
    for s in plan.factors.values():
        np.testing.assert_array_equal(s, np.ones(8))


def test_outlier_channels_get_factors_above_one(outlier_model, calib_samples):
    calib = run_calibration(outlier_model, calib_samples[:8])
    plan = build_plan(calib, outlier_model, 0.5)
    idx = OutlierSpec(0.01, 100.0, 0).channels(128)
    for s in plan.factors.values():
        assert np.all(s[idx] > 1.0)
    assert calib.alpha_used == 0.5


def test_build_plan_coverage_gap(small_model):
    from smoothquant.calib import CalibResult

    with pytest.raises(ConfigurationError):
        build_plan(CalibResult({}), small_model, 0.5)


def test_recalibration_uses_smoothed_activations(outlier_model, calib_samples):
    before = run_calibration(outlier_model, calib_samples[:8])
    _, _, after = smooth_model(outlier_model, calib_samples[:8], 0.5)
    idx = OutlierSpec(0.01, 100.0, 0).channels(128)
    for point in outlier_model.attachment_points():
        assert np.all(after.stats[point].act_absmax[idx] <= before.stats[point].act_absmax[idx])
        assert after.tensor_step(point) < before.tensor_step(point)


def test_search_alpha_singleton_and_determinism(small_model):
    cal = synthetic_inputs(7, 4, 8, 16)
    ev = synthetic_inputs(8, 2, 8, 16)
    best, curve = search_alpha(small_model, cal, ev, grid=[0.5])
    assert best == 0.5 and len(curve) == 1
    assert search_alpha(small_model, cal, ev, grid=[0.3, 0.7]) == search_alpha(small_model, cal, ev, grid=[0.3, 0.7])
    with pytest.raises(ParameterError):
        search_alpha(small_model, cal, ev, grid=[])
    with pytest.raises(ParameterError):
        search_alpha(small_model, cal, ev, grid=[1.5])


def test_search_alpha_tie_break(small_model, monkeypatch):
    import smoothquant.calib as calib_mod

    monkeypatch.setattr(calib_mod, "mse", lambda a, b: 1.0)
    best, _ = calib_mod.search_alpha(small_model, synthetic_inputs(9, 2, 4, 16), synthetic_inputs(9, 1, 4, 16), grid=[0.1, 0.45, 0.7])
    assert best == 0.45


def test_parse_grid():
    assert parse_grid("0.1:0.9:0.1") == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    assert parse_grid("0.5:0.5:0.1") == [0.5]
    assert len(DEFAULT_GRID) == 17 and DEFAULT_GRID[0] == 0.1 and DEFAULT_GRID[-1] == 0.9
    for bad in ("0.1:0.9", "a:b:c", "0.9:0.1:0.1", "0:1:0"):
        with pytest.raises(ParameterError):
            parse_grid(bad)
