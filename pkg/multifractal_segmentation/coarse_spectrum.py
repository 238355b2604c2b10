from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from sortedcontainers import SortedDict  # type: ignore

from .holder import AlphaMap, ols_fit
from .raster_io import RasterBand

LOG = logging.getLogger(__name__)

DEFAULT_CLASSES = 30
MESH_WIDTHS = (4, 8, 16, 32, 64, 128, 256, 512, 1024)
F_BAND = "f_alpha"
# alpha ranges narrower than this collapse into a single class
DEGENERATE_RANGE = 1e-9


class SpectrumKind(enum.Enum):
    COARSE = "coarse"
    LEGENDRE = "legendre"


@dataclass(frozen=True)
class SpectrumPoint:
    alpha: float
    f: float
    count: int


@dataclass(frozen=True)
class SpectrumCurve:
    points: tuple[SpectrumPoint, ...]
    kind: SpectrumKind = SpectrumKind.COARSE
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        points = tuple(self.points)
        alphas = [point.alpha for point in points]
        if any(later <= earlier for earlier, later in zip(alphas, alphas[1:])):
            raise ValueError("spectrum alphas must be strictly increasing")
        if self.kind is SpectrumKind.COARSE and any(
            not 0.0 <= point.f <= 2.0 for point in points
        ):
            raise ValueError("coarse spectrum values must lie in [0, 2]")
        object.__setattr__(self, "points", points)

    @classmethod
    def from_points(
        cls,
        points: Iterable[SpectrumPoint],
        *,
        kind: SpectrumKind = SpectrumKind.COARSE,
        warnings: Sequence[str] = (),
    ) -> SpectrumCurve:
        """Orders points by alpha; a later point replaces an equal alpha."""
        by_alpha = SortedDict((point.alpha, point) for point in points)
        return cls(
            points=tuple(by_alpha.values()),
            kind=kind,
            warnings=tuple(warnings),
        )

    @property
    def alphas(self) -> np.ndarray:
        return np.array([point.alpha for point in self.points])

    @property
    def fs(self) -> np.ndarray:
        return np.array([point.f for point in self.points])

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class ClassPartition:
    """Pixels grouped into equal-width alpha classes (-1 for invalid).

    ``edge_halves`` holds the members of the lower half of the first class
    and of the upper half of the last class.
    """

    alpha_min: float
    alpha_max: float
    class_count: int
    class_of: np.ndarray
    edge_halves: tuple[np.ndarray, np.ndarray]

    @property
    def delta(self) -> float:
        return (self.alpha_max - self.alpha_min) / self.class_count

    @property
    def degenerate(self) -> bool:
        return self.alpha_max - self.alpha_min < DEGENERATE_RANGE

    def midpoint(self, index: int) -> float:
        return self.alpha_min + (index + 0.5) * self.delta

    def populations(self) -> np.ndarray:
        return np.bincount(
            self.class_of[self.class_of >= 0], minlength=self.class_count
        )


@dataclass(frozen=True, eq=False)
class FMap:
    values: np.ndarray
    valid: np.ndarray

    def to_band(self) -> RasterBand:
        return RasterBand(name=F_BAND, values=self.values, nodata=True)

    @classmethod
    def from_band(cls, band: RasterBand) -> FMap:
        return cls(values=band.values, valid=~np.isnan(band.values))


def mesh_ladder(size: int) -> tuple[int, ...]:
    """The mesh widths of the standard ladder that fit in ``size`` pixels."""
    return tuple(width for width in MESH_WIDTHS if width <= size)


def bin_alpha(am: AlphaMap, classes: int = DEFAULT_CLASSES) -> ClassPartition:
    if classes < 1:
        raise ValueError(f"class count must be positive: {classes}")
    valid_alpha = am.valid_alpha()
    if not valid_alpha.size:
        raise ValueError("every pixel is invalid; nothing to classify")
    alpha_min = float(valid_alpha.min())
    alpha_max = float(valid_alpha.max())
    no_members = np.zeros(am.valid.shape, dtype=bool)
    if alpha_max - alpha_min < DEGENERATE_RANGE:
        LOG.info(f"Alpha is constant ({alpha_min!r}); using a single class")
        return ClassPartition(
            alpha_min=alpha_min,
            alpha_max=alpha_max,
            class_count=1,
            class_of=np.where(am.valid, 0, -1),
            edge_halves=(no_members, no_members),
        )
    delta = (alpha_max - alpha_min) / classes
    # a value on an inner boundary belongs to the lower class
    boundaries = alpha_min + delta * np.arange(1, classes)
    class_of = np.full(am.valid.shape, -1, dtype=np.int64)
    class_of[am.valid] = np.searchsorted(boundaries, valid_alpha, side="left")
    first_half = am.valid & (am.alpha <= alpha_min + delta / 2)
    last_half = am.valid & (am.alpha >= alpha_max - delta / 2)
    LOG.debug(
        f"Alpha range [{alpha_min:.6g}, {alpha_max:.6g}]"
        f" in {classes} classes of width {delta:.6g}"
    )
    return ClassPartition(
        alpha_min=alpha_min,
        alpha_max=alpha_max,
        class_count=classes,
        class_of=class_of,
        edge_halves=(first_half, last_half),
    )


def _count_boxes(
    labels: np.ndarray, label_count: int, width: int
) -> np.ndarray:
    rows, columns = labels.shape
    boxes_down = -(-rows // width)
    boxes_across = -(-columns // width)
    box_of = (np.arange(rows) // width)[:, None] * boxes_across + (
        np.arange(columns) // width
    )[None, :]
    member = labels >= 0
    occupied = np.zeros(label_count * boxes_down * boxes_across, dtype=bool)
    occupied[labels[member] * (boxes_down * boxes_across) + box_of[member]] = (
        True
    )
    return occupied.reshape(label_count, -1).sum(axis=1)


def box_counts(
    labels: np.ndarray,
    label_count: int,
    widths: Sequence[int],
    *,
    threads: int = 1,
) -> np.ndarray:
    """Boxes of each mesh width touched by each label, shape (labels, widths).

    Pixels labelled -1 belong to no set.
    """
    with ThreadPoolExecutor(max_workers=threads) as pool:
        columns = list(
            pool.map(
                lambda width: _count_boxes(labels, label_count, width), widths
            )
        )
    return np.stack(columns, axis=1)


def _dimension(
    counts: np.ndarray, widths: Sequence[int]
) -> tuple[Optional[float], int]:
    usable = counts >= 1
    scales = int(usable.sum())
    if scales < 3:
        return None, scales
    xs = -np.log(np.asarray(widths, dtype=np.float64)[usable])
    ys = np.log(counts[usable].astype(np.float64))
    if np.all(xs == xs[0]):
        return None, scales
    slope, _ = ols_fit(xs, ys)
    return slope, scales


def box_counting_dimension(
    members: np.ndarray, widths: Sequence[int]
) -> tuple[Optional[float], int]:
    """Slope of ln N against -ln width over the widths that see the set."""
    members = np.asarray(members, dtype=bool)
    if not members.any():
        raise ValueError("cannot measure the dimension of an empty set")
    counts = box_counts(np.where(members, 0, -1), 1, widths)[0]
    return _dimension(counts, widths)


def _bounded(dimension: float) -> float:
    if not -1e-9 <= dimension <= 2.0 + 1e-9:
        LOG.debug(f"Box dimension {dimension!r} clamped to [0, 2]")
    return min(max(dimension, 0.0), 2.0)


def coarse_spectrum(
    am: AlphaMap,
    part: ClassPartition,
    widths: Sequence[int],
    *,
    threads: int = 1,
) -> SpectrumCurve:
    populations = part.populations()
    counts = box_counts(
        part.class_of, part.class_count, widths, threads=threads
    )
    points = []
    for index in range(part.class_count):
        if not populations[index]:
            continue
        dimension, scales = _dimension(counts[index], widths)
        if dimension is None:
            LOG.debug(f"Class {index + 1} omitted: {scales} usable scales")
            continue
        points.append(
            SpectrumPoint(
                alpha=part.midpoint(index),
                f=_bounded(dimension),
                count=int(populations[index]),
            )
        )
    if not part.degenerate:
        first_half, last_half = part.edge_halves
        edge_labels = np.where(first_half, 0, np.where(last_half, 1, -1))
        edge_counts = box_counts(edge_labels, 2, widths, threads=threads)
        for label, alpha, half in (
            (0, part.alpha_min, first_half),
            (1, part.alpha_max, last_half),
        ):
            if not half.any():
                continue
            dimension, _ = _dimension(edge_counts[label], widths)
            if dimension is not None:
                points.append(
                    SpectrumPoint(
                        alpha=alpha,
                        f=_bounded(dimension),
                        count=int(half.sum()),
                    )
                )
    LOG.info(f"Coarse spectrum has {len(points)} points")
    return SpectrumCurve.from_points(points, kind=SpectrumKind.COARSE)


def f_map(
    am: AlphaMap, curve: SpectrumCurve, *, degree: Optional[int] = None
) -> FMap:
    """Assigns each valid pixel the spectrum value at its alpha.

    Without ``degree`` the curve is interpolated piecewise-linearly and
    clamped at its ends; with it a least-squares polynomial is evaluated.
    """
    if not len(curve):
        raise ValueError("the spectrum has no points")
    alpha = np.where(am.valid, am.alpha, curve.points[0].alpha)
    if degree is None:
        values = np.interp(alpha, curve.alphas, curve.fs)
    else:
        if not 0 <= degree < len(curve):
            raise ValueError(
                f"a degree {degree} polynomial needs more than"
                f" {len(curve)} spectrum points"
            )
        polynomial = np.polynomial.Polynomial.fit(
            curve.alphas, curve.fs, degree
        )
        values = polynomial(alpha)
    return FMap(values=np.where(am.valid, values, np.nan), valid=am.valid)
