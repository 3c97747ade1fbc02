import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from changeforge.raster import (
    ImagePair,
    MultibandImage,
    NormalizationSpec,
    RasterError,
    TileDataset,
    default_validation_count,
    denormalize,
    fit_normalization,
    index_directory,
    load_image,
    normalize,
    read_pgm,
    save_image,
    write_pgm,
)

from conftest import sorted_percentile

finite_f32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)
image_arrays = arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
                      elements=finite_f32)


def _write_raw(tmp_path, header, floats):
    (tmp_path / "img.json").write_text(json.dumps(header))
    (tmp_path / "img.bsq").write_bytes(struct.pack(f"<{len(floats)}f", *floats))
    return tmp_path / "img.bsq"


def test_load_tiny_handwritten_file(tmp_path):
    path = _write_raw(tmp_path, {"bands": 1, "height": 2, "width": 2, "dtype": "f32le"}, [0, 1, 2, 3])
    img = load_image(path)
    assert img.shape == (1, 2, 2)
    assert img.data.ravel().tolist() == [0.0, 1.0, 2.0, 3.0]


def test_band_sequential_layout(tmp_path):
    data = np.arange(2 * 2 * 3, dtype=np.float32).reshape(2, 2, 3)
    save_image(MultibandImage(data), tmp_path / "a.bsq")
    raw = (tmp_path / "a.bsq").read_bytes()
    assert struct.unpack("<12f", raw) == tuple(float(v) for v in range(12))


def test_payload_size_mismatch(tmp_path):
    path = _write_raw(tmp_path, {"bands": 13, "height": 3, "width": 3}, [0.0] * (12 * 9))
    with pytest.raises(RasterError, match="payload"):
        load_image(path)


def test_non_finite_payload_rejected(tmp_path):
    path = _write_raw(tmp_path, {"bands": 1, "height": 1, "width": 2}, [1.0, float("nan")])
    with pytest.raises(RasterError, match="non-finite"):
        load_image(path)


def test_missing_sidecar(tmp_path):
    (tmp_path / "x.bsq").write_bytes(b"\0" * 4)
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "x.bsq")


def test_bad_dtype_tag(tmp_path):
    path = _write_raw(tmp_path, {"bands": 1, "height": 1, "width": 1, "dtype": "f64be"}, [1.0])
    with pytest.raises(RasterError, match="dtype"):
        load_image(path)


def test_zero_band_image_rejected():
    with pytest.raises(RasterError):
        MultibandImage(np.zeros((0, 3, 3)))


def test_image_is_immutable():
    img = MultibandImage(np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_payload_bytes_for_large_image(tmp_path):
    img = MultibandImage(np.zeros((13, 600, 600), dtype=np.float32))
    save_image(img, tmp_path / "big.bsq")
    assert (tmp_path / "big.bsq").stat().st_size == 13 * 600 * 600 * 4


def test_band_names_round_trip(tmp_path):
    img = MultibandImage(np.ones((2, 2, 2)), ("red", "nir"))
    save_image(img, tmp_path / "n.bsq")
    assert load_image(tmp_path / "n.json").band_names == ("red", "nir")


@given(image_arrays)
def test_save_load_bitwise_round_trip(tmp_path_factory, data):
    path = tmp_path_factory.mktemp("rt") / "img.bsq"
    img = MultibandImage(data)
    save_image(img, path)
    back = load_image(path)
    assert back == img
    assert back.data.tobytes() == data.astype("<f4").tobytes()


def test_pair_shape_check():
    a = MultibandImage(np.zeros((3, 4, 4)))
    with pytest.raises(RasterError):
        ImagePair(a, MultibandImage(np.zeros((3, 4, 5))))


def test_percentile_anchors_on_0_to_100():
    band = np.arange(101, dtype=np.float32).reshape(1, 1, 101)
    spec = fit_normalization(MultibandImage(band), 1, 99)
    assert spec.low == (1.0,) and spec.high == (99.0,)


def test_full_range_anchors_are_min_max(rng):
    data = rng.normal(size=(3, 8, 9))
    spec = fit_normalization(MultibandImage(data), 0, 100)
    f32 = data.astype(np.float32).reshape(3, -1)
    assert spec.low == tuple(f32.min(axis=1).astype(float))
    assert spec.high == tuple(f32.max(axis=1).astype(float))


@given(arrays(np.float32, st.tuples(st.integers(1, 3), st.integers(2, 7), st.integers(2, 7)),
              elements=st.floats(-100, 100, width=32)),
       st.floats(0, 49), st.floats(51, 100))
def test_anchors_match_sorted_oracle(data, p_lo, p_hi):
    img = MultibandImage(data)
    lo = [sorted_percentile(b, p_lo) for b in data.astype(np.float64)]
    hi = [sorted_percentile(b, p_hi) for b in data.astype(np.float64)]
    if any(not a < b for a, b in zip(lo, hi)):
        with pytest.raises(RasterError):
            fit_normalization(img, p_lo, p_hi)
        return
    spec = fit_normalization(img, p_lo, p_hi)
    np.testing.assert_allclose(spec.low, lo, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(spec.high, hi, rtol=1e-12, atol=1e-12)


def test_constant_band_is_degenerate():
    data = np.stack([np.arange(16.0).reshape(4, 4), np.full((4, 4), 2.0)])
    with pytest.raises(RasterError, match="degenerate band"):
        fit_normalization(MultibandImage(data))


def test_pooled_fit_uses_all_images():
    a = MultibandImage(np.zeros((1, 1, 50)))
    b = MultibandImage(np.ones((1, 1, 51)))
    spec = fit_normalization([a, b], 0, 100)
    assert spec.low == (0.0,) and spec.high == (1.0,)


def test_normalization_endpoints_and_midpoint():
    spec = NormalizationSpec((2.0,), (6.0,))
    img = MultibandImage(np.array([[[2.0, 4.0, 6.0]]]))
    assert normalize(img, spec).data.ravel().tolist() == [-1.0, 0.0, 1.0]


def test_clamp_outside_anchors():
    spec = NormalizationSpec((0.0,), (1.0,))
    img = MultibandImage(np.array([[[-5.0, 5.0]]]))
    assert normalize(img, spec).data.ravel().tolist() == [-1.0, 1.0]
    loose = NormalizationSpec((0.0,), (1.0,), clamp=False)
    assert normalize(img, loose).data.ravel().tolist() == [-11.0, 9.0]


def test_low_must_be_below_high():
    with pytest.raises(RasterError):
        NormalizationSpec((1.0,), (1.0,))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=3).flatmap(
    lambda lows: st.tuples(st.just(lows),
                           st.lists(st.floats(0.01, 100), min_size=len(lows), max_size=len(lows)),
                           st.lists(st.floats(0, 1), min_size=len(lows) * 4,
                                    max_size=len(lows) * 4))))
def test_round_trip_inside_anchors(args):
    lows, widths, fracs = args
    hi = [lo + w for lo, w in zip(lows, widths)]
    spec = NormalizationSpec(tuple(lows), tuple(hi))
    vals = np.array([[lo + f * w for f in fracs[i * 4:(i + 1) * 4]]
                     for i, (lo, w) in enumerate(zip(lows, widths))])[:, None, :]
    img = MultibandImage(vals)
    back = denormalize(normalize(img, spec), spec).data.astype(np.float64)
    ref = img.data.astype(np.float64)
    scale = np.maximum(np.abs(ref), np.asarray(widths)[:, None, None])
    assert np.all(np.abs(back - ref) <= 1e-5 * scale)
    again = normalize(denormalize(normalize(img, spec), spec), spec).data
    np.testing.assert_allclose(again, normalize(img, spec).data, atol=1e-5)


def test_normalization_spec_dict_round_trip():
    spec = NormalizationSpec((0.1, 0.2), (1.0, 2.0), clamp=False)
    assert NormalizationSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_validation_count_default():
    assert default_validation_count(5000) == 200
    assert default_validation_count(400) == 40
    assert default_validation_count(9) == 0


def test_index_directory_split(tmp_path):
    for i in range(30):
        save_image(MultibandImage(np.full((2, 3, 3), i, dtype=np.float32)), tmp_path / f"t{i:02d}.bsq")
    ds = index_directory(tmp_path, "X")
    assert ds.validation_count == 3 and ds.bands == 2
    assert ds.train_paths + ds.validation_paths == ds.paths
    assert ds.paths == sorted(ds.paths)
    assert [im.data[0, 0, 0] for im in ds.load_validation()] == [27.0, 28.0, 29.0]
    ds.save(tmp_path / "m.json")
    assert TileDataset.load(tmp_path / "m.json") == ds


def test_index_directory_rejects_mixed_bands(tmp_path):
    save_image(MultibandImage(np.zeros((2, 2, 2))), tmp_path / "a.bsq")
    save_image(MultibandImage(np.zeros((3, 2, 2))), tmp_path / "b.bsq")
    with pytest.raises(RasterError, match="bands"):
        index_directory(tmp_path, "Y")


def test_dataset_invariants():
    with pytest.raises(RasterError):
        TileDataset("X", ["a", "b"], 2)
    with pytest.raises(RasterError):
        TileDataset("Z", [], 0)


def test_pgm_export(tmp_path):
    vals = np.array([[0.0, 1.0], [2.0, 4.0]])
    write_pgm(vals, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "m.pgm"), [[0, 64], [128, 255]])


def test_pgm_payload_starting_with_whitespace_byte(tmp_path):
    vals = np.array([[10.0 / 255, 0.0], [1.0, 0.5]])
    write_pgm(vals, tmp_path / "w.pgm")
    assert read_pgm(tmp_path / "w.pgm")[0, 0] == 10
