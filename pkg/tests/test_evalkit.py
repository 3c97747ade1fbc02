import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from changeforge.acd import AnomalyMap, DetectionSet, threshold_map
from changeforge.evalkit import (
    DEFAULT_PERCENTILES,
    CurveSample,
    RobustnessCurve,
    UndefinedRatioError,
    difference_mask,
    export_curve,
    read_curve,
    robust_ratio,
    robustness_curve,
    save_difference_mask,
)
from changeforge.raster import read_pgm

masks = st.integers(1, 8).flatmap(
    lambda h: st.integers(1, 8).flatmap(
        lambda w: st.tuples(arrays(bool, (h, w)), arrays(bool, (h, w)), arrays(bool, (h, w)))))


def _set_ratio(xs, ys):
    """Oracle on Python sets of coordinates."""
    xset = {tuple(p) for p in np.argwhere(xs)}
    yset = {tuple(p) for p in np.argwhere(ys)}
    return len(xset & yset) / len(xset)


def test_identity_ratio():
    x = np.array([[True, False], [True, True]])
    assert robust_ratio(x, x) == 1.0


def test_disjoint_ratio():
    x = np.array([[True, False], [False, False]])
    assert robust_ratio(x, ~x) == 0.0


def test_ratio_example():
    x = np.zeros(10, dtype=bool)
    x[:5] = True
    y = np.zeros(10, dtype=bool)
    y[[0, 3, 7, 8]] = True
    assert robust_ratio(x, y) == 0.4


def test_empty_original_is_undefined():
    with pytest.raises(UndefinedRatioError):
        robust_ratio(np.zeros((2, 2), bool), np.ones((2, 2), bool))


def test_grid_mismatch():
    with pytest.raises(ValueError):
        robust_ratio(np.ones((2, 2), bool), np.ones((2, 3), bool))


def test_accepts_detection_sets():
    x = DetectionSet(np.array([[True, True]]), 0.0, 50.0)
    y = DetectionSet(np.array([[True, False]]), 0.0, 50.0)
    assert robust_ratio(x, y) == 0.5


@settings(max_examples=400)
@given(masks)
def test_ratio_properties(m):
    x, y, extra = m
    if not x.any():
        with pytest.raises(UndefinedRatioError):
            robust_ratio(x, y)
        return
    r = robust_ratio(x, y)
    assert 0.0 <= r <= 1.0
    assert r == _set_ratio(x, y)
    assert robust_ratio(x, x) == 1.0
    assert robust_ratio(x, ~x) == 0.0
    assert robust_ratio(x, y | extra) >= r


def test_curve_identity_is_all_one(rng):
    m = AnomalyMap(rng.normal(size=(20, 20)))
    curve = robustness_curve(m, m)
    assert curve.percentiles == list(DEFAULT_PERCENTILES)
    assert all(r == 1.0 for r in curve.ratios)


def test_curve_uses_own_percentile_and_original_threshold(rng):
    a = AnomalyMap(rng.normal(size=(10, 10)))
    b = AnomalyMap(a.values * 3.0 + 5.0)
    own = robustness_curve(a, b, [50.0, 90.0])
    assert own.ratios == [1.0, 1.0]
    assert own.samples[0].threshold == threshold_map(a, 50).threshold
    absolute = robustness_curve(a, b, [50.0], mode="absolute")
    assert absolute.ratios == [1.0]
    shifted = robustness_curve(a, AnomalyMap(a.values - 100.0), [50.0], mode="absolute")
    assert shifted.ratios == [0.0]


def test_curve_flags_undefined_samples():
    m = AnomalyMap(np.zeros((4, 4)))
    curve = robustness_curve(m, m, [0.0, 50.0])
    assert curve.ratios == [None, None]
    assert not curve.samples[0].defined


def test_curve_rejects_bad_inputs(rng):
    m = AnomalyMap(rng.normal(size=(4, 4)))
    with pytest.raises(ValueError):
        robustness_curve(m, AnomalyMap(np.zeros((4, 5))))
    with pytest.raises(ValueError):
        robustness_curve(m, m, [100.0])
    with pytest.raises(ValueError):
        robustness_curve(m, m, [50.0, 40.0])
    with pytest.raises(ValueError):
        robustness_curve(m, m, mode="median")


def test_curve_invariants():
    with pytest.raises(ValueError):
        RobustnessCurve([CurveSample(5.0, 0.0, 0.5), CurveSample(5.0, 0.0, 0.5)])
    with pytest.raises(ValueError):
        RobustnessCurve([CurveSample(5.0, 0.0, 1.5)])


def test_permutation_null_at_median():
    rng = np.random.default_rng(123)
    n = 200
    values = rng.normal(size=(n, n))
    perm = rng.permutation(values.ravel()).reshape(n, n)
    r = robustness_curve(AnomalyMap(values), AnomalyMap(perm), [50.0]).ratios[0]
    k = n * n // 2
    sigma = math.sqrt(0.25 / k)
    assert abs(r - 0.5) < 3 * sigma


def test_export_rows_and_round_trip(tmp_path, rng):
    a = AnomalyMap(rng.normal(size=(9, 9)))
    b = AnomalyMap(rng.normal(size=(9, 9)))
    curve = robustness_curve(a, b, [10.0, 50.0, 90.0])
    export_curve(curve, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "percentile,threshold,ratio" and len(lines) == 4
    back = read_curve(tmp_path / "c.csv")
    for s, t in zip(curve.samples, back.samples):
        assert abs(s.percentile - t.percentile) < 1e-9
        assert abs(s.threshold - t.threshold) < 1e-9
        assert abs(s.ratio - t.ratio) < 1e-9


def test_export_empty_curve(tmp_path):
    export_curve(RobustnessCurve([]), tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "percentile,threshold,ratio\n"
    assert len(read_curve(tmp_path / "e.csv")) == 0


def test_export_undefined_as_empty_field(tmp_path):
    m = AnomalyMap(np.zeros((3, 3)))
    export_curve(robustness_curve(m, m, [50.0]), tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_text().splitlines()[1] == "50.0,0.0,"
    assert read_curve(tmp_path / "u.csv").ratios == [None]


def test_export_is_byte_reproducible(tmp_path, rng):
    a = AnomalyMap(rng.normal(size=(15, 15)))
    b = AnomalyMap(rng.normal(size=(15, 15)))
    export_curve(robustness_curve(a, b), tmp_path / "1.csv")
    export_curve(robustness_curve(a, b), tmp_path / "2.csv")
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "2.csv").read_bytes()


def test_difference_mask_codes(tmp_path):
    x = np.array([[True, True, False, False]])
    y = np.array([[True, False, True, False]])
    assert difference_mask(x, y).tolist() == [[170, 85, 255, 0]]
    save_difference_mask(x, y, tmp_path / "d.pgm")
    assert read_pgm(tmp_path / "d.pgm").tolist() == [[170, 85, 255, 0]]
