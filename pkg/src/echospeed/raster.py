"""Raster grids, affine geotransforms, band normalization and road masks.

Band planes are stored as ``(height, width)`` float64 arrays indexed
``[row, col]``.  Integer pixel indices refer to pixel centres, so the world
position of pixel ``(col, row)`` is ``pixel_to_world(t, col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AffineTransform",
    "RasterGrid",
    "RasterError",
    "RoadMask",
    "load_raster",
    "save_raster",
    "raster_to_json",
    "normalize_band",
    "pixel_to_world",
    "world_to_pixel",
    "pixel_center_world",
    "load_centerlines",
    "rasterize_road_mask",
    "point_segment_distance",
]

# GeoTIFF tag ids
_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_TRANSFORMATION = 34264
_TAG_GEOKEYS = 34735


class RasterError(ValueError):
    """Raised for malformed raster files or invalid raster parameters."""


@dataclass(frozen=True)
class AffineTransform:
    """Pixel ``(col, row)`` to world ``(x, y)`` mapping in GDAL coefficient order.

    ``x = a + b*col + c*row`` and ``y = d + e*col + f*row``.
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def __post_init__(self):
        coeffs = self.coefficients()
        if not all(math.isfinite(v) for v in coeffs):
            raise RasterError("geotransform coefficients must be finite")
        if self.determinant == 0:
            raise RasterError("geotransform is not invertible (b*f - c*e == 0)")

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "AffineTransform":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise RasterError(f"geotransform needs 6 coefficients, got {len(values)}")
        return cls(*values)

    @classmethod
    def north_up(cls, x0: float, y0: float, gsd: float) -> "AffineTransform":
        """Square pixels of size ``gsd`` with the origin at the upper-left corner."""
        return cls(x0, gsd, 0.0, y0, 0.0, -gsd)

    @property
    def determinant(self) -> float:
        return self.b * self.f - self.c * self.e

    @property
    def pixel_size(self) -> tuple[float, float]:
        """Ground size of one pixel along columns and rows, in metres."""
        return math.hypot(self.b, self.e), math.hypot(self.c, self.f)

    @property
    def mean_gsd(self) -> float:
        sx, sy = self.pixel_size
        return 0.5 * (sx + sy)

    def coefficients(self) -> tuple[float, float, float, float, float, float]:
        return (self.a, self.b, self.c, self.d, self.e, self.f)

    def scaled(self, s: float) -> "AffineTransform":
        """Same origin, linear part multiplied by ``s``."""
        return AffineTransform(self.a, s * self.b, s * self.c, self.d, s * self.e, s * self.f)


def pixel_to_world(t: AffineTransform, col, row):
    """Evaluate the affine map.  Accepts scalars or numpy arrays."""
    return t.a + t.b * col + t.c * row, t.d + t.e * col + t.f * row


def world_to_pixel(t: AffineTransform, x, y):
    """Inverse of :func:`pixel_to_world`."""
    det = t.determinant
    dx = x - t.a
    dy = y - t.d
    col = (t.f * dx - t.c * dy) / det
    row = (-t.e * dx + t.b * dy) / det
    return col, row


def pixel_center_world(t: AffineTransform, col, row):
    """World position of a keypoint or pixel index (centre convention)."""
    return pixel_to_world(t, col + 0.5, row + 0.5)


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Multi-band grid.  ``bands`` has shape ``(n_bands, height, width)``."""

    bands: np.ndarray
    geotransform: AffineTransform
    band_labels: tuple[str, ...] = field(default=("blue", "red", "green"))

    def __post_init__(self):
        bands = np.asarray(self.bands, dtype=np.float64)
        if bands.ndim != 3:
            raise RasterError("bands must be a (n_bands, height, width) array")
        if bands.shape[1] <= 0 or bands.shape[2] <= 0:
            raise RasterError("raster width and height must be positive")
        if not np.all(np.isfinite(bands)):
            raise RasterError("band values must be finite")
        labels = tuple(str(label) for label in self.band_labels)
        if len(labels) != bands.shape[0]:
            raise RasterError(
                f"{len(labels)} band labels for {bands.shape[0]} bands"
            )
        if len(set(labels)) != len(labels):
            raise RasterError("band labels must be unique")
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "band_labels", labels)

    @property
    def width(self) -> int:
        return self.bands.shape[2]

    @property
    def height(self) -> int:
        return self.bands.shape[1]

    @property
    def n_bands(self) -> int:
        return self.bands.shape[0]

    def band(self, label: str) -> np.ndarray:
        return self.bands[self.band_labels.index(label)]

    def band_index(self, label: str) -> int:
        """Index of a named band; falls back to blue/red/green positional order."""
        if label in self.band_labels:
            return self.band_labels.index(label)
        order = ("blue", "red", "green")
        if label in order:
            return order.index(label)
        raise KeyError(label)

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.band_labels == other.band_labels
            and self.geotransform == other.geotransform
            and np.array_equal(self.bands, other.bands)
        )


def normalize_band(band) -> np.ndarray:
    """Min-max scale a band to [0, 1].  A constant band maps to zeros."""
    band = np.asarray(band, dtype=np.float64)
    if band.size == 0:
        raise RasterError("cannot normalize an empty band")
    if not np.all(np.isfinite(band)):
        raise RasterError("band contains non-finite values")
    lo = band.min()
    hi = band.max()
    if hi == lo:
        return np.zeros_like(band)
    return (band - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# file formats

def _check_band_count(n: int, path) -> None:
    if n < 3:
        raise RasterError(f"{path}: band count < 3 (found {n})")


def raster_to_json(grid: RasterGrid) -> dict:
    return {
        "width": grid.width,
        "height": grid.height,
        "geotransform": list(grid.geotransform.coefficients()),
        "band_labels": list(grid.band_labels),
        "bands": [band.ravel().tolist() for band in grid.bands],
    }


def raster_from_json(doc: dict, source="<json>") -> RasterGrid:
    try:
        width = int(doc["width"])
        height = int(doc["height"])
        bands = doc["bands"]
        transform = AffineTransform.from_sequence(doc["geotransform"])
    except (KeyError, TypeError) as exc:
        raise RasterError(f"{source}: malformed json-grid ({exc})") from exc
    _check_band_count(len(bands), source)
    labels = doc.get("band_labels") or ["blue", "red", "green"] + [
        f"band{i}" for i in range(3, len(bands))
    ]
    if width <= 0 or height <= 0:
        raise RasterError(f"{source}: width and height must be positive")
    arr = np.empty((len(bands), height, width), dtype=np.float64)
    for i, values in enumerate(bands):
        if len(values) != width * height:
            raise RasterError(
                f"{source}: band {i} has {len(values)} values, expected {width * height}"
            )
        arr[i] = np.asarray(values, dtype=np.float64).reshape(height, width)
    return RasterGrid(arr, transform, tuple(labels))


def _read_geotiff(path: Path) -> RasterGrid:
    import tifffile

    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        tags = page.tags
        data = page.asarray()
        if _TAG_TRANSFORMATION in tags:
            m = tags[_TAG_TRANSFORMATION].value
            transform = AffineTransform(m[3], m[0], m[1], m[7], m[4], m[5])
        elif _TAG_PIXEL_SCALE in tags and _TAG_TIEPOINT in tags:
            sx, sy = tags[_TAG_PIXEL_SCALE].value[:2]
            i, j, _, x, y, _ = tags[_TAG_TIEPOINT].value[:6]
            transform = AffineTransform(x - i * sx, sx, 0.0, y + j * sy, 0.0, -sy)
        else:
            raise RasterError(f"{path}: missing geotransform tags")
        description = page.description or ""
    if data.ndim == 2:
        data = data[np.newaxis]
    elif page.planarconfig != tifffile.PLANARCONFIG.SEPARATE and data.shape[-1] < data.shape[0]:
        data = np.moveaxis(data, -1, 0)
    _check_band_count(data.shape[0], path)
    labels = None
    try:
        meta = json.loads(description)
        labels = meta.get("band_labels")
    except (json.JSONDecodeError, AttributeError):
        pass
    if not labels or len(labels) != data.shape[0]:
        labels = ["blue", "red", "green"] + [f"band{i}" for i in range(3, data.shape[0])]
    return RasterGrid(data.astype(np.float64), transform, tuple(labels))


def _write_geotiff(grid: RasterGrid, path: Path) -> None:
    import tifffile

    t = grid.geotransform
    matrix = (t.b, t.c, 0.0, t.a, t.e, t.f, 0.0, t.d, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    # version 1.1.0, one key: GTRasterTypeGeoKey = RasterPixelIsArea
    geokeys = (1, 1, 0, 1, 1025, 0, 1, 1)
    extratags = [
        (_TAG_TRANSFORMATION, "d", 16, matrix, True),
        (_TAG_GEOKEYS, "H", len(geokeys), geokeys, True),
    ]
    tifffile.imwrite(
        path,
        grid.bands.astype(np.float32),
        planarconfig="separate",
        photometric="minisblack",
        description=json.dumps({"band_labels": list(grid.band_labels)}),
        metadata=None,
        extratags=extratags,
    )


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        if fmt not in ("geotiff", "json-grid"):
            raise RasterError(f"unknown raster format {fmt!r}")
        return fmt
    if path.suffix.lower() in (".tif", ".tiff"):
        return "geotiff"
    return "json-grid"


def load_raster(path, format: str | None = None) -> RasterGrid:
    """Read a raster from a json-grid or GeoTIFF file.

    The format is inferred from the extension when not given.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "geotiff":
        return _read_geotiff(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RasterError(f"{path}: invalid JSON ({exc})") from exc
    return raster_from_json(doc, path)


def save_raster(grid: RasterGrid, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    if fmt == "geotiff":
        _write_geotiff(grid, path)
    else:
        path.write_text(json.dumps(raster_to_json(grid)), encoding="utf-8")


# ---------------------------------------------------------------------------
# road masks

@dataclass(frozen=True, eq=False)
class RoadMask:
    mask: np.ndarray  # (height, width) bool

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "mask": self.mask.ravel().astype(int).tolist(),
        }


def point_segment_distance(px, py, x0, y0, x1, y1):
    """Distance from point(s) to the closed segment ``(x0,y0)-(x1,y1)``.

    Works elementwise on numpy arrays as well as on Python floats, with the
    same arithmetic in both cases.
    """
    dx = x1 - x0
    dy = y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        ex = px - x0
        ey = py - y0
    else:
        s = ((px - x0) * dx + (py - y0) * dy) / seg2
        s = np.clip(s, 0.0, 1.0)
        ex = px - (x0 + s * dx)
        ey = py - (y0 + s * dy)
    return np.sqrt(ex * ex + ey * ey)


def load_centerlines(path) -> list[np.ndarray]:
    """Read LineString / MultiLineString geometries from a GeoJSON file.

    Coordinates must already be in the raster's projected metre CRS.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return _geojson_lines(doc)


def _geojson_lines(doc: dict) -> list[np.ndarray]:
    kind = doc.get("type")
    if kind == "FeatureCollection":
        out = []
        for feature in doc.get("features", []):
            out.extend(_geojson_lines(feature))
        return out
    if kind == "Feature":
        geometry = doc.get("geometry")
        return _geojson_lines(geometry) if geometry else []
    if kind == "LineString":
        return [np.asarray(doc["coordinates"], dtype=np.float64)[:, :2]]
    if kind == "MultiLineString":
        return [np.asarray(c, dtype=np.float64)[:, :2] for c in doc["coordinates"]]
    if kind == "GeometryCollection":
        out = []
        for geom in doc.get("geometries", []):
            out.extend(_geojson_lines(geom))
        return out
    return []


def rasterize_road_mask(
    centerlines: Iterable[Sequence[Sequence[float]]], buffer: float, grid: RasterGrid
) -> RoadMask:
    """Mark pixels whose centre lies within ``buffer`` metres of any centerline."""
    if buffer < 0:
        raise RasterError("buffer must be non-negative")
    rows, cols = np.mgrid[0 : grid.height, 0 : grid.width].astype(np.float64)
    px, py = pixel_center_world(grid.geotransform, cols, rows)
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for line in centerlines:
        pts = np.asarray(line, dtype=np.float64)
        if pts.ndim != 2 or len(pts) == 0:
            continue
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        for (x0, y0), (x1, y1) in zip(pts[:-1, :2], pts[1:, :2]):
            dist = point_segment_distance(px, py, float(x0), float(y0), float(x1), float(y1))
            mask |= dist <= buffer
    return RoadMask(mask)
