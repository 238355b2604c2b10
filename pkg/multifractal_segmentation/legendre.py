"""Moment sums over box meshes, the mass exponent and its Legendre transform.

With the mass exponent defined through ``chi_q(r) ~ r ** -tau(q)`` the
transform that keeps the uniform measure at (alpha, f) = (2, 2) is
``alpha(q) = -tau'(q)`` and ``f = q * alpha + tau``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp  # type: ignore

from .coarse_spectrum import SpectrumCurve, SpectrumKind, SpectrumPoint
from .holder import fit_lines, ols_fit
from .measure import Measure
from .raster_io import Region

LOG = logging.getLogger(__name__)

# alphas closer than this describe the same singularity
ALPHA_MERGE = 1e-9
MONOTONE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class PartitionTable:
    """Moment sums ``chi[q, width]``, kept in log form as well."""

    q_grid: np.ndarray
    widths: tuple[int, ...]
    log_chi: np.ndarray

    def __post_init__(self):
        expected = (len(self.q_grid), len(self.widths))
        if self.log_chi.shape != expected:
            raise ValueError(
                f"moment table shape {self.log_chi.shape}, expected {expected}"
            )

    @property
    def chi(self) -> np.ndarray:
        return np.exp(self.log_chi)


@dataclass(frozen=True, eq=False)
class TauCurve:
    q_grid: np.ndarray
    tau: np.ndarray
    r2: np.ndarray
    # q values dropped for lack of usable scales
    omitted: tuple[float, ...] = ()

    def __post_init__(self):
        if not len(self.q_grid) == len(self.tau) == len(self.r2):
            raise ValueError("q, tau and r2 must have equal lengths")
        if np.any(np.diff(self.q_grid) <= 0):
            raise ValueError("the q grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.q_grid)

    def at(self, q: float) -> float:
        matches = np.flatnonzero(self.q_grid == q)
        if not matches.size:
            raise KeyError(q)
        return float(self.tau[matches[0]])


def default_q_grid(
    low: float = -10.0, high: float = 10.0, step: float = 0.25
) -> np.ndarray:
    if not step > 0 or high < low:
        raise ValueError(f"invalid q range {low}..{high} step {step}")
    count = int(round((high - low) / step)) + 1
    return low + step * np.arange(count)


def _log_moments(
    field: Measure, region: Region, q_grid: np.ndarray, width: int
) -> np.ndarray:
    masses = field.box_grid(region, width).occupied()
    if not masses.size:
        raise ValueError(f"{region} holds no mass")
    # each mesh is renormalised by its own total so chi_1 is exactly a sum
    # of probabilities
    log_masses = np.log(masses / masses.sum())
    return logsumexp(q_grid[:, None] * log_masses[None, :], axis=1)


def partition_function(
    field: Measure,
    region: Region,
    q_grid: Sequence[float],
    widths: Sequence[int],
    *,
    threads: int = 1,
) -> PartitionTable:
    q_values = np.asarray(q_grid, dtype=np.float64)
    if not np.isfinite(q_values).all():
        raise ValueError("q values must be finite")
    widths = tuple(int(width) for width in widths)
    if not widths:
        raise ValueError("no mesh widths given")
    LOG.info(
        f"Moment sums for {len(q_values)} q values over meshes {list(widths)}"
    )
    with ThreadPoolExecutor(max_workers=threads) as pool:
        columns = list(
            pool.map(
                lambda width: _log_moments(field, region, q_values, width),
                widths,
            )
        )
    return PartitionTable(
        q_grid=q_values, widths=widths, log_chi=np.stack(columns, axis=1)
    )


def tau(table: PartitionTable) -> TauCurve:
    """Slope of ln chi against -ln r for every q with at least 3 scales."""
    xs = -np.log(np.asarray(table.widths, dtype=np.float64))
    finite = np.isfinite(table.log_chi)
    slopes = np.full(len(table.q_grid), np.nan)
    r2 = np.full(len(table.q_grid), np.nan)
    complete = finite.all(axis=1)
    if complete.any() and len(xs) >= 3 and np.ptp(xs) > 0:
        rows = table.log_chi[complete]
        fitted = fit_lines(xs, [rows[:, j] for j in range(len(xs))])
        slopes[complete], r2[complete] = fitted
    for index in np.flatnonzero(~complete):
        usable = finite[index]
        if usable.sum() >= 3 and np.ptp(xs[usable]) > 0:
            slopes[index], r2[index] = ols_fit(
                xs[usable], table.log_chi[index, usable]
            )
    kept = ~np.isnan(slopes)
    omitted = tuple(float(q) for q in table.q_grid[~kept])
    if omitted:
        LOG.warning(f"Too few scales for q in {list(omitted)}; omitted")
    if not kept.any():
        raise ValueError("no q value has 3 usable mesh widths")
    return TauCurve(
        q_grid=table.q_grid[kept],
        tau=slopes[kept],
        r2=r2[kept],
        omitted=omitted,
    )


def legendre_spectrum(tc: TauCurve) -> SpectrumCurve:
    if len(tc) < 3:
        raise ValueError(
            f"the transform needs 3 consecutive q values, got {len(tc)}"
        )
    q, tau_values = tc.q_grid, tc.tau
    alpha = -(tau_values[2:] - tau_values[:-2]) / (q[2:] - q[:-2])
    inner_q = q[1:-1]
    f = inner_q * alpha + tau_values[1:-1]
    warnings = []
    rises = np.flatnonzero(np.diff(alpha) > MONOTONE_SLACK)
    if rises.size:
        warnings.append(
            f"alpha(q) increases after q={float(inner_q[rises[0]])!r}"
            f" ({rises.size} places)"
        )
    if np.any(np.diff(tau_values) > MONOTONE_SLACK):
        warnings.append("tau(q) is not non-increasing")
    for warning in warnings:
        LOG.warning(f"Legendre spectrum: {warning}")

    points = envelope_points(alpha, f)
    LOG.info(f"Legendre spectrum has {len(points)} points")
    return SpectrumCurve.from_points(
        points, kind=SpectrumKind.LEGENDRE, warnings=warnings
    )


def envelope_points(
    alpha: np.ndarray, f: np.ndarray
) -> list[SpectrumPoint]:
    """(alpha, f) pairs sorted by alpha, nearly equal alphas merged."""
    points: list[SpectrumPoint] = []
    for index in np.argsort(alpha, kind="stable"):
        point = SpectrumPoint(
            alpha=float(alpha[index]), f=float(f[index]), count=0
        )
        if points and point.alpha - points[-1].alpha <= ALPHA_MERGE:
            # coinciding singularities keep the envelope value
            if point.f > points[-1].f:
                points[-1] = SpectrumPoint(
                    alpha=points[-1].alpha, f=point.f, count=0
                )
            continue
        points.append(point)
    return points
