"""Sum measure of a raster band over centred windows and box meshes.

Masses are normalised by the band's total mass, so the measure is a
probability measure; normalisation shifts every log-measure by the same
constant and leaves regression slopes unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .raster_io import RasterBand, Region

LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoxGrid:
    box_width: int
    masses: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.masses.shape

    def occupied(self) -> np.ndarray:
        return self.masses[self.masses > 0]


class Measure(Protocol):
    """What the Hölder and Legendre estimators need from a measure."""

    @property
    def total_mass(self) -> float:
        ...

    def window_measures(self, region: Region, halfwidth: int) -> np.ndarray:
        ...

    def occupied_windows(self, region: Region, halfwidth: int) -> np.ndarray:
        ...

    def box_grid(self, region: Region, box_width: int) -> BoxGrid:
        ...


def _summed_area_table(values: np.ndarray) -> np.ndarray:
    # leading zero row and column so every window is a 4-corner difference
    table = np.zeros(
        (values.shape[0] + 1, values.shape[1] + 1), dtype=values.dtype
    )
    table[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    return table


class MeasureField:
    """The sum measure: a region's mass is the sum of its pixel values."""

    def __init__(self, band: RasterBand):
        values = band.values
        if np.isnan(values).any():
            raise ValueError(f"band {band.name!r} holds nodata pixels")
        if (values < 0).any():
            raise ValueError(
                f"band {band.name!r} holds negative values;"
                " a measure requires nonnegative mass"
            )
        self.source = band
        # sequential row-major sum, independent of any threading downstream
        self._total_mass = float(np.cumsum(values.ravel())[-1])
        if not self._total_mass > 0:
            raise ValueError(f"band {band.name!r} has no mass")
        self._mass_table = _summed_area_table(values)
        self._support_table = _summed_area_table(
            (values > 0).astype(np.int64)
        )
        LOG.debug(
            f"Measure over {band.name!r} {band.width}x{band.height},"
            f" total mass {self._total_mass!r}"
        )

    @property
    def total_mass(self) -> float:
        return self._total_mass

    @property
    def width(self) -> int:
        return self.source.width

    @property
    def height(self) -> int:
        return self.source.height

    def _window_totals(
        self, table: np.ndarray, region: Region, halfwidth: int
    ) -> np.ndarray:
        if halfwidth < 0:
            raise ValueError(f"halfwidth must not be negative: {halfwidth}")
        reach = Region(
            x=region.x - halfwidth,
            y=region.y - halfwidth,
            size=region.size + 2 * halfwidth,
        )
        if not reach.fits(self.width, self.height):
            raise ValueError(
                f"windows of halfwidth {halfwidth} around {region}"
                f" leave the {self.width}x{self.height} raster"
            )
        n = region.size
        top, left = region.y - halfwidth, region.x - halfwidth
        bottom = region.y + halfwidth + 1
        right = region.x + halfwidth + 1
        return (
            table[bottom : bottom + n, right : right + n]
            - table[top : top + n, right : right + n]
            - table[bottom : bottom + n, left : left + n]
            + table[top : top + n, left : left + n]
        )

    def window_measures(self, region: Region, halfwidth: int) -> np.ndarray:
        """Normalised mass of the (2·halfwidth+1)² window at each pixel."""
        sums = self._window_totals(self._mass_table, region, halfwidth)
        return sums / self._total_mass

    def occupied_windows(self, region: Region, halfwidth: int) -> np.ndarray:
        """Whether each window holds at least one pixel with positive mass."""
        counts = self._window_totals(self._support_table, region, halfwidth)
        return counts > 0

    def box_grid(self, region: Region, box_width: int) -> BoxGrid:
        if box_width < 1 or box_width & (box_width - 1):
            raise ValueError(f"box width must be a power of two: {box_width}")
        if region.size % box_width:
            raise ValueError(
                f"region side {region.size} is not divisible"
                f" by box width {box_width}"
            )
        if not region.fits(self.width, self.height):
            raise ValueError(f"{region} leaves the raster")
        boxes = region.size // box_width
        masses = (
            self.source.values[region.slices()]
            .reshape(boxes, box_width, boxes, box_width)
            .sum(axis=(1, 3))
        ) / self._total_mass
        masses.setflags(write=False)
        return BoxGrid(box_width=box_width, masses=masses)


def window_measure(
    field: Measure, cx: int, cy: int, halfwidth: int
) -> float:
    return float(
        field.window_measures(Region(x=cx, y=cy, size=1), halfwidth)[0, 0]
    )


def box_grid(field: Measure, region: Region, box_width: int) -> BoxGrid:
    return field.box_grid(region, box_width)
