import json

import numpy as np
import pytest

from multifractal_segmentation.coarse_spectrum import (
    FMap,
    SpectrumCurve,
    SpectrumPoint,
)
from multifractal_segmentation.config import ConfigError
from multifractal_segmentation.holder import AlphaMap
from multifractal_segmentation.raster_io import RasterBand
from multifractal_segmentation.segment import (
    SegmentationMask,
    ThresholdSpec,
    majority_filter,
    ndwi,
    ndwi_classify,
    suggest_thresholds,
    threshold_classify,
)

LANDSAT = ThresholdSpec(alpha_lo=2.15, alpha_hi=2.55, f_lo=0.0, f_hi=1.38)


def _maps(alpha, f):
    alpha = np.asarray(alpha, dtype=np.float64)
    valid = ~np.isnan(alpha)
    am = AlphaMap(alpha=alpha, r2=np.where(valid, 1.0, np.nan), valid=valid)
    values = np.where(valid, np.asarray(f, dtype=float), np.nan)
    fm = FMap(values=values, valid=valid)
    return am, fm


def _band(values, name="b"):
    return RasterBand(name=name, values=np.asarray(values, dtype=float))


def test_threshold_classify_uses_strict_bounds():
    am, fm = _maps(
        [[2.3, 2.15, 2.55, np.nan]],
        [[1.0, 1.0, 1.0, 1.0]],
    )
    mask = threshold_classify(am, fm, LANDSAT)
    assert mask.water.tolist() == [[True, False, False, False]]
    am, fm = _maps([[2.3, 2.3, 2.3]], [[0.0, 1.38, 1.2]])
    mask = threshold_classify(am, fm, LANDSAT)
    assert mask.water.tolist() == [[False, False, True]]


def test_threshold_classify_rejects_misaligned_maps():
    am, _ = _maps(np.full((2, 2), 2.3), np.ones((2, 2)))
    _, fm = _maps(np.full((2, 3), 2.3), np.ones((2, 3)))
    with pytest.raises(ValueError):
        threshold_classify(am, fm, LANDSAT)


def test_enlarging_thresholds_never_shrinks_water():
    rng = np.random.default_rng(0)
    am, fm = _maps(
        rng.uniform(1.8, 2.8, size=(32, 32)),
        rng.uniform(0.0, 2.0, size=(32, 32)),
    )
    small = threshold_classify(am, fm, LANDSAT).water
    large = threshold_classify(
        am, fm, ThresholdSpec(alpha_lo=2.0, alpha_hi=2.7, f_lo=-1, f_hi=1.9)
    ).water
    assert small.any()
    assert (large | small == large).all()


def test_threshold_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        ThresholdSpec(alpha_lo=2.5, alpha_hi=2.5, f_lo=0.0, f_hi=1.0)
    with pytest.raises(ValueError):
        ThresholdSpec(alpha_lo=2.0, alpha_hi=2.5, f_lo=1.0, f_hi=0.5)
    with pytest.raises(ConfigError):
        ThresholdSpec.from_mapping({"alpha_lo": 2.0, "alpha_hi": 2.5})
    with pytest.raises(ConfigError):
        ThresholdSpec.from_mapping(dict(LANDSAT.to_dict(), f_lo=True))
    path = tmp_path / "thresholds.json"
    path.write_text(json.dumps(LANDSAT.to_dict()))
    assert ThresholdSpec.from_json(path) == LANDSAT
    path.write_text("[2.15, 2.55, 0, 1.38]")
    with pytest.raises(ConfigError):
        ThresholdSpec.from_json(path)


def test_ndwi_values():
    index = ndwi(
        _band([[0.3, 0.2, 0.0, 0.1]], "red"),
        _band([[0.1, 0.2, 0.0, 0.3]], "swir"),
    )
    assert index.name == "ndwi"
    assert index.nodata
    assert index.values[0, :2].tolist() == pytest.approx([0.5, 0.0])
    assert np.isnan(index.values[0, 2])
    assert index.values[0, 3] == pytest.approx(-0.5)


def test_ndwi_stays_in_unit_range():
    rng = np.random.default_rng(1)
    index = ndwi(
        _band(rng.uniform(0, 1, size=(40, 40))),
        _band(rng.uniform(0, 1, size=(40, 40))),
    )
    assert (np.abs(index.values) <= 1.0).all()


def test_ndwi_preconditions():
    with pytest.raises(ValueError):
        ndwi(_band(np.ones((2, 2))), _band(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ndwi(_band([[-0.1]]), _band([[0.2]]))


def test_ndwi_classify_is_inclusive_at_zero():
    band = RasterBand(
        name="ndwi", values=np.array([[0.0, -0.2, np.nan, 0.4]]), nodata=True
    )
    assert ndwi_classify(band).water.tolist() == [[True, False, False, True]]


def test_majority_removes_isolated_pixels():
    water = np.zeros((15, 15), dtype=bool)
    water[7, 7] = True
    assert not majority_filter(SegmentationMask(water=water)).water.any()
    dry = np.ones((15, 15), dtype=bool)
    dry[3, 11] = False
    assert majority_filter(SegmentationMask(water=dry)).water.all()


def test_majority_removes_salt_noise():
    salt = np.random.default_rng(12).uniform(size=(200, 200)) < 0.03
    assert salt.sum() > 1000
    assert not majority_filter(SegmentationMask(water=salt)).water.any()
    lake = np.zeros((200, 200), dtype=bool)
    lake[50:150, 40:160] = True
    filtered = majority_filter(SegmentationMask(water=lake ^ salt)).water
    assert filtered[51:149, 41:159].all()
    outside = np.ones_like(lake)
    outside[49:151, 39:161] = False
    assert not filtered[outside].any()


def test_majority_keeps_uniform_masks_and_half_planes():
    for fill in (False, True):
        uniform = SegmentationMask(water=np.full((12, 12), fill))
        assert np.array_equal(majority_filter(uniform).water, uniform.water)
    half = np.zeros((20, 20), dtype=bool)
    half[:, :10] = True
    filtered = majority_filter(SegmentationMask(water=half))
    assert np.array_equal(filtered.water, half)


def test_majority_matches_brute_force_window_counts():
    rng = np.random.default_rng(7)
    water = rng.uniform(size=(16, 13)) < 0.45
    filtered = majority_filter(SegmentationMask(water=water), kernel=5)
    for row in range(16):
        for column in range(13):
            window = water[
                max(row - 2, 0) : row + 3, max(column - 2, 0) : column + 3
            ]
            wet = int(window.sum())
            expected = (
                water[row, column]
                if 2 * wet == window.size
                else 2 * wet > window.size
            )
            assert filtered.water[row, column] == expected


def test_majority_never_creates_water_from_nothing():
    water = np.zeros((30, 30), dtype=bool)
    water[2:6, 2:6] = True
    filtered = majority_filter(SegmentationMask(water=water))
    assert not filtered.water[12:, 12:].any()


def test_majority_kernel_must_be_odd():
    mask = SegmentationMask(water=np.zeros((5, 5), dtype=bool))
    for kernel in (1, 4, 8):
        with pytest.raises(ValueError):
            majority_filter(mask, kernel=kernel)


def test_mask_is_read_only():
    mask = SegmentationMask(water=np.zeros((2, 3)))
    assert mask.water.dtype == bool
    assert (mask.width, mask.height) == (3, 2)
    with pytest.raises(ValueError):
        mask.water[0, 0] = True
    with pytest.raises(ValueError):
        SegmentationMask(water=np.zeros(4, dtype=bool))


def _spectrum(alphas, fs):
    return SpectrumCurve(
        points=tuple(
            SpectrumPoint(alpha=a, f=f, count=1) for a, f in zip(alphas, fs)
        )
    )


def test_suggested_threshold_starts_at_the_depression():
    curve = _spectrum(
        [1.8, 1.9, 2.0, 2.1, 2.2, 2.3, 2.4],
        [1.5, 1.8, 1.2, 0.95, 1.3, 1.4, 1.0],
    )
    (suggestion,) = suggest_thresholds(curve)
    assert suggestion == ThresholdSpec(
        alpha_lo=2.1, alpha_hi=2.4, f_lo=0.0, f_hi=1.4
    )
    assert suggest_thresholds(curve, tolerance=0.01) == []


def test_suggestions_rank_by_closeness_to_one():
    curve = _spectrum(
        [1.8, 1.9, 2.0, 2.1, 2.2, 2.3, 2.4],
        [1.5, 0.92, 1.6, 1.02, 1.7, 1.8, 1.1],
    )
    suggestions = suggest_thresholds(curve)
    assert [s.alpha_lo for s in suggestions] == [2.1, 1.9]
    assert [s.f_hi for s in suggestions] == [1.8, 1.6]
