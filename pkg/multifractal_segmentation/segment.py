from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage  # type: ignore
from sortedcontainers import SortedDict  # type: ignore

from .coarse_spectrum import FMap, SpectrumCurve
from .config import ConfigError
from .holder import AlphaMap
from .raster_io import PathType, RasterBand

LOG = logging.getLogger(__name__)

NDWI_BAND = "ndwi"
_THRESHOLD_KEYS = ("alpha_lo", "alpha_hi", "f_lo", "f_hi")


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    water: np.ndarray

    def __post_init__(self):
        water = np.array(self.water, dtype=bool)
        if water.ndim != 2:
            raise ValueError(f"a mask must be 2-D, got shape {water.shape}")
        water.setflags(write=False)
        object.__setattr__(self, "water", water)

    @property
    def width(self) -> int:
        return self.water.shape[1]

    @property
    def height(self) -> int:
        return self.water.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.water.shape

    def water_count(self) -> int:
        return int(self.water.sum())


@dataclass(frozen=True)
class ThresholdSpec:
    """Open rectangle in the (alpha, f) plane whose pixels are water."""

    alpha_lo: float
    alpha_hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.alpha_lo < self.alpha_hi:
            raise ValueError(
                f"alpha_lo {self.alpha_lo} must be below"
                f" alpha_hi {self.alpha_hi}"
            )
        if not self.f_lo < self.f_hi:
            raise ValueError(
                f"f_lo {self.f_lo} must be below f_hi {self.f_hi}"
            )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object]) -> ThresholdSpec:
        keys = set(mapping)
        if keys != set(_THRESHOLD_KEYS):
            raise ConfigError(
                f"thresholds need exactly {', '.join(_THRESHOLD_KEYS)};"
                f" got {', '.join(sorted(keys))}"
            )
        values = {}
        for key in _THRESHOLD_KEYS:
            value = mapping[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"threshold {key} must be a number")
            values[key] = float(value)
        return cls(**values)

    @classmethod
    def from_json(cls, path: PathType) -> ThresholdSpec:
        path = Path(path)
        try:
            mapping = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as error:
            raise ConfigError(f"invalid JSON in {path}: {error}")
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path} must hold a JSON object")
        return cls.from_mapping(mapping)

    def to_dict(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in _THRESHOLD_KEYS}


def threshold_classify(
    am: AlphaMap, fm: FMap, t: ThresholdSpec
) -> SegmentationMask:
    if am.alpha.shape != fm.values.shape:
        raise ValueError(
            f"alpha map {am.alpha.shape} and f map {fm.values.shape}"
            " are not aligned"
        )
    with np.errstate(invalid="ignore"):
        water = (
            am.valid
            & fm.valid
            & (t.alpha_lo < am.alpha)
            & (am.alpha < t.alpha_hi)
            & (t.f_lo < fm.values)
            & (fm.values < t.f_hi)
        )
    LOG.info(f"{int(water.sum())} pixels fall inside {t}")
    return SegmentationMask(water=water)


def ndwi(red: RasterBand, swir: RasterBand) -> RasterBand:
    """(red - swir) / (red + swir); NaN where both reflectances are 0."""
    if red.values.shape != swir.values.shape:
        raise ValueError(
            f"band {red.name!r} {red.values.shape} and band {swir.name!r}"
            f" {swir.values.shape} are not aligned"
        )
    if (red.values < 0).any() or (swir.values < 0).any():
        raise ValueError("reflectances must not be negative")
    total = red.values + swir.values
    singular = total == 0
    index = np.where(
        singular,
        np.nan,
        (red.values - swir.values) / np.where(singular, 1.0, total),
    )
    if singular.any():
        LOG.info(f"{int(singular.sum())} pixels have no NDWI")
    return RasterBand(name=NDWI_BAND, values=index, nodata=True)


def ndwi_classify(ndwi_band: RasterBand) -> SegmentationMask:
    with np.errstate(invalid="ignore"):
        water = ndwi_band.values >= 0
    return SegmentationMask(water=water)


def majority_filter(
    mask: SegmentationMask, kernel: int = 7
) -> SegmentationMask:
    """Each pixel takes the majority class of its kernel window.

    Border windows are truncated to the image; when a truncated window holds
    as many water as dry pixels the pixel keeps its class.
    """
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and at least 3: {kernel}")
    weights = np.ones((kernel, kernel), dtype=np.int64)
    water = ndimage.convolve(
        mask.water.astype(np.int64), weights, mode="constant", cval=0
    )
    cells = ndimage.convolve(
        np.ones(mask.shape, dtype=np.int64), weights, mode="constant", cval=0
    )
    filtered = np.where(2 * water == cells, mask.water, 2 * water > cells)
    LOG.debug(
        f"Majority filter {kernel}x{kernel} flipped"
        f" {int((filtered != mask.water).sum())} pixels"
    )
    return SegmentationMask(water=filtered)


def suggest_thresholds(
    curve: SpectrumCurve, tolerance: float = 0.1
) -> list[ThresholdSpec]:
    """Candidate thresholds right of each depression of the spectrum.

    A depression is a local minimum of f within ``tolerance`` of 1; its
    candidate keeps alpha above the depression up to the largest alpha and f
    below the local maximum that follows it. Candidates are ordered by how
    close the depression is to 1.
    """
    alphas, fs = curve.alphas, curve.fs
    candidates = SortedDict()
    for index in range(1, len(curve) - 1):
        if not fs[index] <= fs[index - 1] or not fs[index] <= fs[index + 1]:
            continue
        if abs(fs[index] - 1.0) > tolerance:
            continue
        peak = index + 1
        while peak + 1 < len(curve) and fs[peak + 1] >= fs[peak]:
            peak += 1
        if not fs[peak] > 0 or not alphas[index] < alphas[-1]:
            continue
        candidates[(abs(fs[index] - 1.0), alphas[index])] = ThresholdSpec(
            alpha_lo=float(alphas[index]),
            alpha_hi=float(alphas[-1]),
            f_lo=0.0,
            f_hi=float(fs[peak]),
        )
    LOG.info(f"Found {len(candidates)} threshold candidates")
    return list(candidates.values())
