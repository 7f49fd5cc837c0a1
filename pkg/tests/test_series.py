import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedwater.exceptions import DataError
from fedwater.ingest import Month, TimeSeries
from fedwater.series import (
    EvalReport,
    NormalizationParams,
    denormalize,
    evaluate,
    make_windows,
    mape,
    normalize,
    rmse,
    split_by_date,
)


def test_normalize_examples():
    values, params = normalize([2, 4, 6])
    assert values.tolist() == [0.0, 0.5, 1.0]
    assert params == NormalizationParams(2, 6)
    values, params = normalize([5, 5, 5])
    assert values.tolist() == [0.0, 0.0, 0.0]
    assert params == NormalizationParams(5, 5)
    src = np.array([3.1, 9.7, 4.2])
    np.testing.assert_allclose(denormalize(*normalize(src)), src, rtol=1e-12)


def test_denormalize_examples():
    p = NormalizationParams(2, 6)
    assert denormalize([0.0, 1.0], p).tolist() == [2, 6]
    assert denormalize([0.5], p).tolist() == [4]
    assert denormalize([0.1, 0.9], NormalizationParams(5, 5)).tolist() == [5, 5]


def test_params_validation():
    with pytest.raises(ValueError):
        NormalizationParams(3, 1)


def test_make_windows_examples():
    ds = make_windows([1, 2, 3, 4, 5], 2)
    assert [(x.tolist(), y) for x, y in ds.samples] == [([1, 2], 3), ([2, 3], 4), ([3, 4], 5)]
    assert len(make_windows(np.arange(5.0), 4)) == 1
    with pytest.raises(DataError, match="at least 5"):
        make_windows(np.arange(4.0), 4)


def test_split_examples():
    s = TimeSeries("B", Month(2013, 1), np.arange(96.0))
    train, test = split_by_date(s, Month(2018, 1))
    assert (len(train), len(test)) == (60, 36)
    assert test.start_month == Month(2018, 1)
    assert np.array_equal(np.concatenate([train.values, test.values]), s.values)
    train, _ = split_by_date(s, Month(2013, 2))
    assert len(train) == 1
    for bad in (Month(2013, 1), Month(2021, 1), Month(2012, 6)):
        with pytest.raises(DataError):
            split_by_date(s, bad)


def test_mape_examples():
    assert mape([100, 200], [110, 180]) == pytest.approx(10.0, abs=1e-12)
    assert mape([3, 4], [3, 4]) == 0.0
    report = evaluate([0, 100], [5, 100])
    assert report.mape == 0.0 and report.n_excluded == 1
    with pytest.raises(ValueError):
        mape([0, 0], [1, 1])


def test_rmse_examples():
    assert rmse([100, 200], [110, 180]) == pytest.approx(math.sqrt(250), abs=1e-12)
    assert rmse([1, 2], [1, 2]) == 0.0
    assert rmse([5], [2]) == 3.0
    with pytest.raises(ValueError):
        rmse([1, 2], [1])


def test_eval_report_json_shape():
    d = evaluate([100, 200], [110, 180]).to_dict()
    assert set(d) == {"mape", "rmse", "n_points", "n_excluded"}
    assert EvalReport.from_dict(d) == evaluate([100, 200], [110, 180])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40))
def test_window_count_and_sliding(n_extra, lookback):
    values = np.arange(lookback + n_extra, dtype=float)
    ds = make_windows(values, lookback)
    assert len(ds) == n_extra
    assert ds.inputs.shape == (n_extra, lookback)
    for k in range(len(ds) - 1):
        assert np.array_equal(ds.inputs[k][1:], ds.inputs[k + 1][:-1])
        assert ds.targets[k] == ds.inputs[k + 1][-1]


finite = st.floats(min_value=0, max_value=1e6, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(finite, min_size=1, max_size=50))
def test_normalize_range_and_roundtrip(values):
    out, params = normalize(values)
    assert np.all((out >= 0) & (out <= 1))
    if params.max > params.min:
        np.testing.assert_allclose(denormalize(out, params), values, rtol=1e-12, atol=1e-12 * params.max)


pairs = st.lists(st.tuples(st.floats(1, 1e4), st.floats(0, 1e4)), min_size=1, max_size=30)


@settings(max_examples=100, deadline=None)
@given(pairs, st.randoms(use_true_random=False))
def test_metrics_nonnegative_and_permutation_invariant(data, rnd):
    a = [x for x, _ in data]
    p = [y for _, y in data]
    assert mape(a, p) >= 0 and rmse(a, p) >= 0
    assert mape(a, a) == 0 and rmse(a, a) == 0
    if a != p:
        assert rmse(a, p) > 0 and mape(a, p) > 0
    shuffled = data[:]
    rnd.shuffle(shuffled)
    a2 = [x for x, _ in shuffled]
    p2 = [y for _, y in shuffled]
    assert mape(a2, p2) == mape(a, p)
    assert rmse(a2, p2) == rmse(a, p)
