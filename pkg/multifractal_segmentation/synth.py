"""Synthetic measures with known spectra, and scenes built from them.

Random draws use numpy's ``default_rng`` (PCG64), seeded explicitly, so a
seed reproduces the same raster on every platform.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coarse_spectrum import SpectrumCurve, SpectrumKind
from .legendre import envelope_points
from .raster_io import RasterBand, RasterStack
from .segment import SegmentationMask

LOG = logging.getLogger(__name__)

CASCADE_BAND = "cascade"
SCENE_BAND = "scene"
REFLECTANCE_BANDS = ("blue", "green", "red", "nir", "swir")
# mean reflectance per band and the half-width of its uniform jitter
_WATER_SIGNATURE = ((0.08, 0.07, 0.05, 0.02, 0.01), 0.01)
_LAND_SIGNATURE = ((0.06, 0.09, 0.10, 0.30, 0.25), 0.03)


@dataclass(frozen=True)
class CascadeSpec:
    """Weights of the 2x2 subdivision in row-major order."""

    weights: tuple[float, float, float, float]
    depth: int
    shuffle_seed: Optional[int] = None

    def __post_init__(self):
        weights = tuple(float(weight) for weight in self.weights)
        if len(weights) != 4:
            raise ValueError(f"a cascade needs 4 weights, got {len(weights)}")
        if not all(math.isfinite(w) and w >= 0 for w in weights):
            raise ValueError(
                f"weights must be finite and nonnegative: {weights}"
            )
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1: {weights}")
        if self.depth < 1:
            raise ValueError(f"depth must be at least 1: {self.depth}")
        object.__setattr__(self, "weights", weights)

    @property
    def side(self) -> int:
        return 2**self.depth

    def positive_weights(self) -> np.ndarray:
        weights = np.array(self.weights)
        return weights[weights > 0]


@dataclass(frozen=True)
class Rectangle:
    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"empty rectangle {self}")

    def fits(self, side: int) -> bool:
        return (
            self.x >= 0
            and self.y >= 0
            and self.x + self.width <= side
            and self.y + self.height <= side
        )

    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.y, self.y + self.height),
            slice(self.x, self.x + self.width),
        )


def cascade(spec: CascadeSpec) -> RasterBand:
    weights = np.array(spec.weights)
    rng = (
        None
        if spec.shuffle_seed is None
        else np.random.default_rng(spec.shuffle_seed)
    )
    masses = np.ones((1, 1))
    for _ in range(spec.depth):
        cells = masses.shape[0]
        if rng is None:
            masses = np.kron(masses, weights.reshape(2, 2))
            continue
        # an independent permutation of the weights for every cell
        split = rng.permuted(np.tile(weights, (cells * cells, 1)), axis=1)
        split = (
            split.reshape(cells, cells, 2, 2)
            .transpose(0, 2, 1, 3)
            .reshape(2 * cells, 2 * cells)
        )
        masses = np.repeat(np.repeat(masses, 2, axis=0), 2, axis=1) * split
    LOG.debug(
        f"Cascade {spec.weights} depth {spec.depth}:"
        f" total mass {masses.sum()!r}"
    )
    return RasterBand(name=CASCADE_BAND, values=masses)


def analytic_tau(spec: CascadeSpec, q: float) -> float:
    """log2 of the q-th moment sum of the weights; zero weights excluded."""
    if not math.isfinite(q):
        raise ValueError(f"q must be finite: {q}")
    if q == 1:
        return 0.0
    return math.log2(math.fsum(spec.positive_weights() ** q))


def analytic_alpha(spec: CascadeSpec, q: float) -> float:
    weights = spec.positive_weights()
    moments = weights**q
    return -math.fsum(moments * np.log(weights)) / (
        math.fsum(moments) * math.log(2)
    )


def analytic_spectrum(
    spec: CascadeSpec, q_grid: Sequence[float]
) -> SpectrumCurve:
    q_values = np.asarray(q_grid, dtype=np.float64)
    alpha = np.array([analytic_alpha(spec, q) for q in q_values])
    tau = np.array([analytic_tau(spec, q) for q in q_values])
    return SpectrumCurve.from_points(
        envelope_points(alpha, q_values * alpha + tau),
        kind=SpectrumKind.LEGENDRE,
    )


def composite_scene(
    side: int,
    water_regions: Sequence[Rectangle],
    water_level: float,
    noise_amp: float,
    land_spec: CascadeSpec,
    seed: int,
) -> tuple[RasterBand, SegmentationMask]:
    """Flat noisy water rectangles over cascade-textured land.

    Land is the cascade cropped to ``side`` and scaled to unit mean mass per
    pixel. Returns the band and the ground-truth water mask.
    """
    if not 1 <= side <= land_spec.side:
        raise ValueError(
            f"scene side {side} must lie in 1..{land_spec.side}"
        )
    if not water_level > 0:
        raise ValueError(f"water level must be positive: {water_level}")
    if not 0 <= noise_amp <= water_level:
        raise ValueError(
            f"noise amplitude {noise_amp} must lie in [0, {water_level}]"
        )
    truth = np.zeros((side, side), dtype=bool)
    for region in water_regions:
        if not region.fits(side):
            raise ValueError(f"{region} leaves the {side}x{side} scene")
        truth[region.slices()] = True
    land = cascade(land_spec).values[:side, :side] * float(
        4**land_spec.depth
    )
    rng = np.random.default_rng(seed)
    noise = (
        rng.uniform(-noise_amp, noise_amp, size=truth.shape)
        if noise_amp > 0
        else np.zeros(truth.shape)
    )
    values = np.where(truth, water_level + noise, land)
    LOG.info(
        f"Scene {side}x{side} with {len(water_regions)} water regions"
        f" ({int(truth.sum())} water pixels)"
    )
    return (
        RasterBand(name=SCENE_BAND, values=values),
        SegmentationMask(water=truth),
    )


def reflectance_scene(truth: SegmentationMask, seed: int) -> RasterStack:
    """Blue to SWIR reflectances with water and land signatures.

    Water reflects more red than SWIR and land the opposite, so NDWI
    separates them at 0.
    """
    rng = np.random.default_rng(seed)
    bands = []
    for index, name in enumerate(REFLECTANCE_BANDS):
        jitter = rng.uniform(-1.0, 1.0, size=truth.shape)
        water = _WATER_SIGNATURE[0][index] + _WATER_SIGNATURE[1] * jitter
        land = _LAND_SIGNATURE[0][index] + _LAND_SIGNATURE[1] * jitter
        values = np.maximum(np.where(truth.water, water, land), 0.0)
        bands.append(RasterBand(name=name, values=values))
    return RasterStack(bands=tuple(bands))
