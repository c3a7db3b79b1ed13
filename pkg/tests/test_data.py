import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fedtt.data import (DataError, EmptyInputError, SynthesisConfig, TrafficFrame, TrafficSeries,
                        UndefinedMetricError, make_windows, mae, read_readings_csv, rmse, split_series,
                        stack_windows, synthesize_multi_city, write_readings_csv)


def ramp_series(length, sensors=2, features=3):
    v = np.arange(length * sensors * features, dtype=float).reshape(length, sensors, features)
    return TrafficSeries(v, np.ones((length, sensors), bool))


@pytest.mark.parametrize("length, count", [(15, 1), (17, 3), (40, 26)])
def test_window_count(length, count):
    assert len(make_windows(ramp_series(length), 12, 3)) == count


def test_window_count_with_stride():
    assert len(make_windows(ramp_series(40), 12, 3, stride=4)) == (40 - 15) // 4 + 1


def test_too_short_series_has_no_windows():
    with pytest.raises(EmptyInputError):
        make_windows(ramp_series(14), 12, 3)


def test_windows_are_consecutive_and_rebuild_the_series():
    s = ramp_series(30)
    ws = make_windows(s, 12, 3)
    for w in ws:
        assert np.array_equal(w.inputs, s.values[w.start:w.start + 12])
        assert np.array_equal(w.target, s.values[w.start + 12:w.start + 15])
    rebuilt = np.concatenate([ws[0].inputs] + [w.target[:1] for w in ws] + [ws[-1].target[1:]])
    assert np.array_equal(rebuilt, s.values)


def test_stack_windows_shapes():
    x, y, m = stack_windows(make_windows(ramp_series(20, 4), 12, 3))
    assert x.shape == (6, 12, 4, 3) and y.shape == (6, 3, 4, 3) and m.shape == (6, 3, 4)


def test_metric_hand_values():
    assert mae([1, 2], [2, 4]) == 1.5
    assert rmse([0, 0], [3, 4]) == pytest.approx(np.sqrt(12.5), abs=1e-15)
    assert mae([5.0, 1.0], [5.0, 1.0]) == 0.0


def test_metrics_respect_sensor_availability():
    pred = np.zeros((2, 3))
    truth = np.array([[1.0, 1.0, 1.0], [100.0, 100.0, 100.0]])
    assert mae(pred, truth, np.array([True, False])) == 1.0


def test_metric_with_nothing_available():
    with pytest.raises(UndefinedMetricError):
        mae([1.0], [2.0], [False])


def naive_mae(p, t):
    total = 0.0
    for a, b in zip(p.ravel(), t.ravel()):
        total += abs(a - b)
    return total / p.size


def naive_rmse(p, t):
    total = 0.0
    for a, b in zip(p.ravel(), t.ravel()):
        total += (a - b) ** 2
    return (total / p.size) ** 0.5


def test_metrics_match_loop_oracle(rng):
    p, t = rng.normal(size=50), rng.normal(size=50)
    assert abs(mae(p, t) - naive_mae(p, t)) < 1e-12
    assert abs(rmse(p, t) - naive_rmse(p, t)) < 1e-12


finite = st.floats(-1e6, 1e6)


@given(arrays(float, st.integers(1, 30), elements=finite), st.data())
def test_rmse_dominates_mae(p, data):
    t = data.draw(arrays(float, p.shape, elements=finite))
    assert mae(p, p) == 0 and rmse(p, p) == 0
    assert rmse(p, t) >= mae(p, t) * (1 - 1e-12)


def test_split_fractions_and_remainder():
    train, val, test, rest = split_series(ramp_series(600))
    assert (len(train), len(val), len(test), len(rest)) == (30, 60, 60, 450)
    assert np.array_equal(val.values[0], ramp_series(600).values[30])


def test_frame_and_series_validation():
    with pytest.raises(DataError):
        TrafficFrame(np.zeros((2, 3)), np.ones(3, bool))
    with pytest.raises(DataError):
        TrafficSeries(np.full((2, 2, 3), np.nan), np.ones((2, 2), bool))
    with pytest.raises(EmptyInputError):
        TrafficSeries.from_frames([])


def test_series_is_immutable():
    s = ramp_series(3)
    with pytest.raises(ValueError):
        s.values[0, 0, 0] = 1.0


def test_synthesis_is_deterministic():
    cfg = SynthesisConfig(sensor_counts=[5, 4], length=50, missing_rate=0.1)
    a, b = synthesize_multi_city(cfg, 7), synthesize_multi_city(cfg, 7)
    for x, y in zip(a, b):
        assert np.array_equal(x.series.values, y.series.values)
        assert np.array_equal(x.series.availability, y.series.availability)
    assert not np.array_equal(a[0].series.values, synthesize_multi_city(cfg, 8)[0].series.values)


def test_identity_shifted_cities_differ_only_by_noise():
    noisy = synthesize_multi_city(SynthesisConfig(sensor_counts=[6, 6], length=80), 3)
    assert not np.array_equal(noisy[0].truth, noisy[1].truth)
    clean = synthesize_multi_city(SynthesisConfig(sensor_counts=[6, 6], length=80, noise=0.0), 3)
    assert np.array_equal(clean[0].truth, clean[1].truth)


def test_missing_rate_matches_binomial_expectation():
    c = synthesize_multi_city(SynthesisConfig(sensor_counts=[10], length=100, missing_rate=0.2), 0)[0]
    counts = c.series.availability.sum(axis=1)
    # mean of 100 Binomial(10, 0.8) draws: sd of the mean is about 0.13
    assert abs(counts.mean() - 8.0) <= 1.0
    assert counts.min() >= 1


def test_affine_shift_moves_feature_levels():
    cfg = SynthesisConfig(sensor_counts=[6, 6], length=200, scales=[[1, 1, 1], [2, 1, 1]],
                          offsets=[[0, 0, 0], [0, 10, 0]], noise=0.0)
    a, b = synthesize_multi_city(cfg, 1)
    assert np.allclose(b.truth[..., 0], 2 * a.truth[..., 0])
    assert np.allclose(b.truth[..., 1], a.truth[..., 1] + 10)


def test_bad_synthesis_config():
    with pytest.raises(ValueError):
        SynthesisConfig(sensor_counts=[0])
    with pytest.raises(ValueError):
        SynthesisConfig(missing_rate=1.0)


def test_readings_csv_round_trip(tmp_path):
    c = synthesize_multi_city(SynthesisConfig(sensor_counts=[4], length=20, missing_rate=0.3), 2)[0]
    write_readings_csv(c.series, tmp_path / "r.csv")
    back = read_readings_csv(tmp_path / "r.csv", 4)
    assert np.array_equal(back.values, c.series.values)
    assert np.array_equal(back.availability, c.series.availability)


def test_readings_csv_missing_rows_are_unavailable(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("t,sensor,flow,speed,occ,available\n0,0,1,2,3,1\n1,1,4,5,6,1\n")
    s = read_readings_csv(p, 2)
    assert s.availability.tolist() == [[True, False], [False, True]]


def test_readings_csv_rejects_bad_header(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("time,s,a,b,c,d\n")
    with pytest.raises(DataError, match="header"):
        read_readings_csv(p)
