from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence, Union

import numpy as np

if TYPE_CHECKING:
    from .coarse_spectrum import SpectrumCurve, SpectrumKind
    from .legendre import TauCurve
    from .segment import SegmentationMask

LOG = logging.getLogger(__name__)

PathType = Union[str, PathLike[str]]

# numpy dtype for each sidecar "dtype"; payloads are always little-endian
SIDECAR_DTYPES = {"f32": "<f4", "f64": "<f8"}
_SIDECAR_KEYS = {
    "width",
    "height",
    "dtype",
    "byte_order",
    "bands",
    "data",
    "nodata",
}

# separator between PGM header fields: whitespace runs and '#' comments
_PGM_SEPARATOR = rb"(?:\s|#[^\r\n]*[\r\n])+"
_PGM_HEADER = re.compile(
    rb"P5"
    + _PGM_SEPARATOR
    + rb"(\d+)"
    + _PGM_SEPARATOR
    + rb"(\d+)"
    + _PGM_SEPARATOR
    + rb"(\d+)\s"
)
_PGM_DTYPES = {255: np.dtype(np.uint8), 65535: np.dtype(">u2")}


class RasterFormatError(ValueError):
    """A raster, mask or spectrum file does not match its declared layout."""


@dataclass(frozen=True, eq=False)
class RasterBand:
    """One band of intensities, stored as a read-only (height, width) array.

    NaN is only accepted when ``nodata`` is set; it then marks pixels without
    a value (invalid Hölder exponents, singular NDWI pixels).
    """

    name: str
    values: np.ndarray
    nodata: bool = False

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise TypeError(
                f"band name must be a non-empty str: {self.name!r}"
            )
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(
                f"band {self.name!r} must be a non-empty 2-D grid,"
                f" got shape {values.shape}"
            )
        invalid = np.isinf(values) if self.nodata else ~np.isfinite(values)
        if invalid.any():
            raise ValueError(
                f"band {self.name!r} holds {int(invalid.sum())}"
                " non-finite values"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class RasterStack:
    bands: tuple[RasterBand, ...]

    def __post_init__(self):
        bands = tuple(self.bands)
        if not bands:
            raise ValueError("a raster stack needs at least one band")
        shapes = {band.values.shape for band in bands}
        if len(shapes) != 1:
            raise ValueError(f"bands differ in dimensions: {sorted(shapes)}")
        names = [band.name for band in bands]
        if len(set(names)) != len(names):
            raise ValueError(f"band names are not unique: {names}")
        object.__setattr__(self, "bands", bands)

    @property
    def width(self) -> int:
        return self.bands[0].width

    @property
    def height(self) -> int:
        return self.bands[0].height

    @property
    def names(self) -> list[str]:
        return [band.name for band in self.bands]

    def band(self, name: str) -> RasterBand:
        for band in self.bands:
            if band.name == name:
                return band
        raise KeyError(f"no band named {name!r}; available: {self.names}")

    def select(self, names: Sequence[str]) -> RasterStack:
        return RasterStack(bands=tuple(self.band(name) for name in names))

    def __len__(self) -> int:
        return len(self.bands)

    def __iter__(self) -> Iterator[RasterBand]:
        return iter(self.bands)


@dataclass(frozen=True)
class Region:
    """A square of ``size`` pixels whose top-left pixel is (x, y)."""

    x: int
    y: int
    size: int

    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.y, self.y + self.size),
            slice(self.x, self.x + self.size),
        )

    def fits(self, width: int, height: int) -> bool:
        return (
            self.size >= 1
            and self.x >= 0
            and self.y >= 0
            and self.x + self.size <= width
            and self.y + self.size <= height
        )


@dataclass(frozen=True, kw_only=True)
class AnalysisWindow:
    """The analysed core square plus the margin used as padding around it."""

    core_x: int
    core_y: int
    core_size: int
    pad: int

    def __post_init__(self):
        if self.core_size < 1:
            raise ValueError(f"core size must be positive: {self.core_size}")
        if self.pad < 0:
            raise ValueError(f"padding must not be negative: {self.pad}")

    @classmethod
    def centered(
        cls, *, width: int, height: int, core_size: int, pad: int
    ) -> AnalysisWindow:
        window = cls(
            core_x=(width - core_size) // 2,
            core_y=(height - core_size) // 2,
            core_size=core_size,
            pad=pad,
        )
        window.check_fits(width, height)
        return window

    @property
    def core(self) -> Region:
        return Region(x=self.core_x, y=self.core_y, size=self.core_size)

    @property
    def padded(self) -> Region:
        return Region(
            x=self.core_x - self.pad,
            y=self.core_y - self.pad,
            size=self.core_size + 2 * self.pad,
        )

    def check_fits(self, width: int, height: int) -> None:
        if not self.padded.fits(width, height):
            raise ValueError(
                f"window {self} exceeds raster bounds {width}x{height}"
            )

    def localized(self) -> AnalysisWindow:
        """The same window expressed inside its extracted sub-raster."""
        return AnalysisWindow(
            core_x=self.pad,
            core_y=self.pad,
            core_size=self.core_size,
            pad=self.pad,
        )


def calibrate(band: RasterBand, gain: float, offset: float) -> RasterBand:
    if gain == 0:
        raise ValueError("calibration gain must not be 0")
    values = np.maximum(gain * band.values + offset, 0.0)
    return RasterBand(name=band.name, values=values, nodata=band.nodata)


def extract_window(stack: RasterStack, window: AnalysisWindow) -> RasterStack:
    window.check_fits(stack.width, stack.height)
    rows, columns = window.padded.slices()
    return RasterStack(
        bands=tuple(
            RasterBand(
                name=band.name,
                values=band.values[rows, columns],
                nodata=band.nodata,
            )
            for band in stack
        )
    )


def load_raster(path: PathType) -> RasterStack:
    path = Path(path)
    with open(path, mode="rb") as raster_file:
        magic = raster_file.read(2)
    if magic == b"P5":
        LOG.debug(f"Loading PGM raster: {path}")
        return _load_pgm(path)
    if magic.lstrip()[:1] == b"{":
        LOG.debug(f"Loading sidecar raster: {path}")
        return _load_sidecar(path)
    raise RasterFormatError(f"unsupported magic {magic!r} in {path}")


def _load_pgm(path: Path) -> RasterStack:
    data = path.read_bytes()
    header = _PGM_HEADER.match(data)
    if header is None:
        raise RasterFormatError(f"malformed PGM header in {path}")
    width, height, maxval = (int(field) for field in header.groups())
    if width < 1 or height < 1:
        raise RasterFormatError(f"empty PGM raster {width}x{height}: {path}")
    dtype = _PGM_DTYPES.get(maxval)
    if dtype is None:
        raise RasterFormatError(
            f"PGM maxval must be 255 or 65535, got {maxval}: {path}"
        )
    payload = data[header.end() :]
    expected = width * height * dtype.itemsize
    if len(payload) != expected:
        raise RasterFormatError(
            f"PGM payload holds {len(payload)} bytes,"
            f" header declares {expected}: {path}"
        )
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return RasterStack(bands=(RasterBand(name=path.stem, values=values),))


def _read_sidecar(path: Path) -> dict:
    try:
        sidecar = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise RasterFormatError(f"invalid sidecar JSON {path}: {error}")
    if not isinstance(sidecar, dict):
        raise RasterFormatError(f"sidecar must be a JSON object: {path}")
    unknown = set(sidecar) - _SIDECAR_KEYS
    if unknown:
        raise RasterFormatError(f"unknown sidecar keys {sorted(unknown)}")
    for key in ("width", "height"):
        value = sidecar.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise RasterFormatError(f"sidecar {key} must be a positive int")
    bands = sidecar.get("bands")
    if (
        not isinstance(bands, list)
        or not bands
        or not all(isinstance(name, str) for name in bands)
    ):
        raise RasterFormatError("sidecar bands must be a list of names")
    if sidecar.get("dtype", "f32") not in SIDECAR_DTYPES:
        raise RasterFormatError(f"unsupported dtype {sidecar.get('dtype')!r}")
    if sidecar.get("byte_order", "LE") != "LE":
        raise RasterFormatError(
            f"unsupported byte order {sidecar.get('byte_order')!r}"
        )
    if sidecar.get("nodata", "nan") != "nan":
        raise RasterFormatError(f"unsupported nodata {sidecar['nodata']!r}")
    return sidecar


def _load_sidecar(path: Path) -> RasterStack:
    sidecar = _read_sidecar(path)
    width, height = sidecar["width"], sidecar["height"]
    names = sidecar["bands"]
    nodata = "nodata" in sidecar
    dtype = np.dtype(SIDECAR_DTYPES[sidecar.get("dtype", "f32")])
    payload_path = path.parent / sidecar.get("data", path.stem + ".raw")
    payload = payload_path.read_bytes()
    expected = width * height * len(names) * dtype.itemsize
    if len(payload) != expected:
        raise RasterFormatError(
            f"payload {payload_path} holds {len(payload)} bytes,"
            f" sidecar declares {expected}"
        )
    planes = np.frombuffer(payload, dtype=dtype).reshape(
        len(names), height, width
    )
    invalid = np.isinf(planes) if nodata else ~np.isfinite(planes)
    if invalid.any():
        raise RasterFormatError(
            f"payload {payload_path} holds {int(invalid.sum())}"
            " non-finite values"
        )
    return RasterStack(
        bands=tuple(
            RasterBand(name=name, values=plane, nodata=nodata)
            for name, plane in zip(names, planes)
        )
    )


def save_raster(
    stack: RasterStack, path: PathType, *, dtype: str = "f32"
) -> None:
    """Writes ``path`` (JSON sidecar) and its planar payload beside it."""
    if dtype not in SIDECAR_DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    path = Path(path)
    payload_path = path.with_suffix(".raw")
    sidecar: dict[str, object] = {
        "width": stack.width,
        "height": stack.height,
        "dtype": dtype,
        "byte_order": "LE",
        "bands": stack.names,
        "data": payload_path.name,
    }
    if any(band.nodata for band in stack):
        sidecar["nodata"] = "nan"
    planes = np.stack([band.values for band in stack])
    payload_path.write_bytes(
        planes.astype(SIDECAR_DTYPES[dtype], copy=False).tobytes()
    )
    path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    LOG.debug(f"Saved {len(stack)} band raster: {path}")


def save_mask(mask: SegmentationMask, path: PathType) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    payload = np.where(mask.water, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + payload)
    LOG.debug(f"Saved mask ({int(mask.water.sum())} water pixels): {path}")


def load_mask(path: PathType) -> SegmentationMask:
    from .segment import SegmentationMask

    stack = load_raster(path)
    if len(stack) != 1:
        raise RasterFormatError(
            f"a mask must hold exactly one band, {path} holds {len(stack)}"
        )
    return SegmentationMask(water=stack.bands[0].values > 0)


def save_spectrum_csv(curve: SpectrumCurve, path: PathType) -> None:
    with open(path, mode="w", newline="") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(("alpha", "f", "count"))
        for point in curve.points:
            writer.writerow(
                (f"{point.alpha:#.9g}", f"{point.f:#.9g}", point.count)
            )


def load_spectrum_csv(
    path: PathType, kind: SpectrumKind | None = None
) -> SpectrumCurve:
    from .coarse_spectrum import SpectrumCurve, SpectrumKind, SpectrumPoint

    rows = _read_csv(path, ("alpha", "f", "count"))
    points = []
    for line, row in enumerate(rows, start=2):
        try:
            points.append(
                SpectrumPoint(
                    alpha=float(row["alpha"]),
                    f=float(row["f"]),
                    count=int(row["count"]),
                )
            )
        except (TypeError, ValueError) as error:
            raise RasterFormatError(f"malformed row {line} in {path}: {error}")
    return SpectrumCurve(
        points=tuple(points),
        kind=SpectrumKind.COARSE if kind is None else kind,
    )


def save_tau_csv(tau_curve: TauCurve, path: PathType) -> None:
    with open(path, mode="w", newline="") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(("q", "tau", "r2"))
        for q, tau, r2 in zip(tau_curve.q_grid, tau_curve.tau, tau_curve.r2):
            writer.writerow((f"{q:#.9g}", f"{tau:#.9g}", f"{r2:#.9g}"))


def load_tau_csv(path: PathType) -> TauCurve:
    from .legendre import TauCurve

    rows = _read_csv(path, ("q", "tau", "r2"))
    columns: tuple[list[float], list[float], list[float]] = ([], [], [])
    for line, row in enumerate(rows, start=2):
        try:
            values = [float(row[field]) for field in ("q", "tau", "r2")]
        except (TypeError, ValueError) as error:
            raise RasterFormatError(f"malformed row {line} in {path}: {error}")
        for column, value in zip(columns, values):
            column.append(value)
    q_grid, tau, r2 = (np.array(column) for column in columns)
    return TauCurve(q_grid=q_grid, tau=tau, r2=r2)


def _read_csv(path: PathType, fields: tuple[str, ...]) -> list[dict]:
    with open(path, mode="r", newline="") as csv_file:
        reader = csv.DictReader(csv_file)
        if tuple(reader.fieldnames or ()) != fields:
            raise RasterFormatError(
                f"expected CSV header {','.join(fields)} in {path},"
                f" got {reader.fieldnames}"
            )
        try:
            return list(reader)
        except csv.Error as error:
            raise RasterFormatError(f"malformed CSV {path}: {error}")
