from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .measure import Measure
from .raster_io import AnalysisWindow, RasterBand, RasterStack

LOG = logging.getLogger(__name__)

ALPHA_BAND = "alpha"
R2_BAND = "r2"


@dataclass(frozen=True)
class WindowLadder:
    """Neighbourhood sizes k, each mapped to a (2k-1)x(2k-1) window."""

    k_values: tuple[int, ...]

    def __post_init__(self):
        k_values = tuple(int(k) for k in self.k_values)
        if len(k_values) < 3:
            raise ValueError(f"a ladder needs at least 3 sizes: {k_values}")
        if k_values[0] < 1 or any(
            later <= earlier for earlier, later in zip(k_values, k_values[1:])
        ):
            raise ValueError(
                f"ladder sizes must be positive and increasing: {k_values}"
            )
        object.__setattr__(self, "k_values", k_values)

    @classmethod
    def optical(cls) -> WindowLadder:
        return cls(k_values=tuple(range(2, 10)))

    @classmethod
    def sar(cls) -> WindowLadder:
        # k=1,2 windows are dominated by speckle
        return cls(k_values=tuple(range(3, 10)))

    @classmethod
    def for_sensor(cls, sensor: str) -> WindowLadder:
        ladders = {"optical": cls.optical, "sar": cls.sar}
        if sensor not in ladders:
            raise ValueError(f"unknown sensor {sensor!r}")
        return ladders[sensor]()

    @property
    def halfwidths(self) -> tuple[int, ...]:
        return tuple(k - 1 for k in self.k_values)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(2 * k - 1 for k in self.k_values)

    @property
    def max_halfwidth(self) -> int:
        return self.halfwidths[-1]


@dataclass(frozen=True, eq=False)
class AlphaMap:
    """Per-pixel Hölder exponents of the analysed core; NaN where invalid."""

    alpha: np.ndarray
    r2: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        shapes = {self.alpha.shape, self.r2.shape, self.valid.shape}
        if len(shapes) != 1 or self.alpha.ndim != 2:
            raise ValueError(f"misaligned alpha map arrays: {shapes}")
        if not np.isfinite(self.alpha[self.valid]).all():
            raise ValueError("valid pixels must carry a finite alpha")

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    def valid_alpha(self) -> np.ndarray:
        return self.alpha[self.valid]

    def to_stack(self) -> RasterStack:
        return RasterStack(
            bands=(
                RasterBand(name=ALPHA_BAND, values=self.alpha, nodata=True),
                RasterBand(name=R2_BAND, values=self.r2, nodata=True),
            )
        )

    @classmethod
    def from_stack(cls, stack: RasterStack) -> AlphaMap:
        alpha = stack.band(ALPHA_BAND).values
        r2 = (
            stack.band(R2_BAND).values
            if R2_BAND in stack.names
            else np.where(np.isnan(alpha), np.nan, 1.0)
        )
        return cls(alpha=alpha, r2=r2, valid=~np.isnan(alpha))


def fit_lines(
    xs: np.ndarray, ys: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    # accumulated point by point so every element sees the same operations
    centred = xs - xs.mean()
    spread_x = float(np.dot(centred, centred))
    mean_y = sum(ys) / len(ys)
    slope = sum(c * (y - mean_y) for c, y in zip(centred, ys)) / spread_x
    residual = sum(
        (y - mean_y - slope * c) ** 2 for c, y in zip(centred, ys)
    )
    spread_y = sum((y - mean_y) ** 2 for y in ys)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(spread_y > 0, 1.0 - residual / spread_y, 1.0)
    return slope, np.clip(r2, 0.0, 1.0)


def ols_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Ordinary least-squares slope and coefficient of determination."""
    x = np.asarray(xs, dtype=np.float64)
    if x.ndim != 1 or len(x) != len(ys):
        raise ValueError("xs and ys must be equally long sequences")
    if len(x) < 3:
        raise ValueError(f"a fit needs at least 3 points, got {len(x)}")
    if np.all(x == x[0]):
        raise ValueError("xs are all equal; the slope is undefined")
    slope, r2 = fit_lines(x, [np.float64(y) for y in ys])
    return float(slope), float(r2)


def alpha_map(
    field: Measure,
    window: AnalysisWindow,
    ladder: WindowLadder,
    *,
    threads: int = 1,
    min_r2: Optional[float] = None,
) -> AlphaMap:
    if ladder.max_halfwidth > window.pad:
        raise ValueError(
            f"ladder windows reach {ladder.max_halfwidth} pixels,"
            f" padding is only {window.pad}"
        )
    region = window.core
    LOG.info(
        f"Estimating alpha on {region.size}x{region.size} pixels"
        f" over window widths {list(ladder.widths)}"
    )
    with ThreadPoolExecutor(max_workers=threads) as pool:
        measures = list(
            pool.map(
                lambda halfwidth: field.window_measures(region, halfwidth),
                ladder.halfwidths,
            )
        )
        # windows are nested, so the smallest one decides emptiness
        valid = field.occupied_windows(region, ladder.halfwidths[0])
        for measure in measures:
            valid &= measure > 0
        log_measures = [np.log(np.where(valid, m, 1.0)) for m in measures]
        xs = np.log(np.array(ladder.widths, dtype=np.float64))
        stripes = np.array_split(np.arange(region.size), max(threads, 1))
        fits = list(
            pool.map(
                lambda rows: fit_lines(
                    xs, [log_measure[rows] for log_measure in log_measures]
                ),
                [stripe for stripe in stripes if len(stripe)],
            )
        )
    slope = np.concatenate([fit[0] for fit in fits])
    r2 = np.concatenate([fit[1] for fit in fits])
    if min_r2 is not None:
        valid &= r2 >= min_r2
    invalid = int(valid.size - valid.sum())
    if invalid:
        LOG.info(f"{invalid} pixels have no valid alpha")
    return AlphaMap(
        alpha=np.where(valid, slope, np.nan),
        r2=np.where(valid, r2, np.nan),
        valid=valid,
    )
