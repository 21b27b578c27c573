"""Keypoint correction: snap echo keypoints onto per-band intensity peaks.

Peaks are the h-maxima of each normalized band.  For every keypoint the
nearest peak of *its own* band is looked up in a k-d tree, and the keypoint
moves there when the peak is closer than ``max_shift_distance`` pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage.morphology import reconstruction

from .echoes import BANDS, EchoTrajectory
from .raster import RasterGrid, normalize_band


@dataclass(frozen=True)
class CorrectionConfig:
    h: float = 0.02
    neighborhood: int = 3
    max_shift_distance: float = 2.0
    connectivity: int = 8
    peaks: str = "tops"

    def __post_init__(self):
        if not 0 < self.h < 1:
            raise ValueError(f"h must lie in (0, 1), got {self.h}")
        if self.neighborhood < 3 or self.neighborhood % 2 == 0:
            raise ValueError(f"neighborhood must be odd and >= 3, got {self.neighborhood}")
        if self.max_shift_distance < 0:
            raise ValueError("max_shift_distance must be non-negative")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.peaks not in ("tops", "plateaus"):
            raise ValueError(f"unknown peaks mode {self.peaks!r}")


def footprint(connectivity: int = 8, size: int = 3) -> np.ndarray:
    """Square window for 8-connectivity, cross of the same span for 4."""
    if connectivity == 8:
        return np.ones((size, size), dtype=bool)
    fp = np.zeros((size, size), dtype=bool)
    fp[size // 2, :] = True
    fp[:, size // 2] = True
    return fp


def _plateau_labels(image: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Label connected sets of equal-valued pixels under the footprint adjacency."""
    height, width = image.shape
    n = image.size
    idx = np.arange(n).reshape(height, width)
    rows, cols = [], []
    cy, cx = fp.shape[0] // 2, fp.shape[1] // 2
    for dy, dx in zip(*np.nonzero(fp)):
        dy, dx = dy - cy, dx - cx
        if (dy, dx) <= (0, 0):
            continue  # each undirected offset once
        a = image[max(0, -dy) : height - max(0, dy), max(0, -dx) : width - max(0, dx)]
        b = image[max(0, dy) : height + min(0, dy), max(0, dx) : width + min(0, dx)]
        ia = idx[max(0, -dy) : height - max(0, dy), max(0, -dx) : width - max(0, dx)]
        ib = idx[max(0, dy) : height + min(0, dy), max(0, dx) : width + min(0, dx)]
        same = a == b
        rows.append(ia[same])
        cols.append(ib[same])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
    else:
        r = c = np.empty(0, dtype=np.intp)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels.reshape(height, width)


def regional_maxima(image: np.ndarray, fp: np.ndarray) -> np.ndarray:
    """Plateaus with no higher neighbour and at least one lower neighbour."""
    image = np.asarray(image, dtype=np.float64)
    labels = _plateau_labels(image, fp)
    neighbours = fp.copy()
    neighbours[fp.shape[0] // 2, fp.shape[1] // 2] = False
    hi = ndimage.maximum_filter(image, footprint=neighbours, mode="constant", cval=-np.inf)
    lo = ndimage.minimum_filter(image, footprint=neighbours, mode="constant", cval=np.inf)
    n = labels.max() + 1
    has_higher = np.bincount(labels.ravel(), weights=(hi > image).ravel(), minlength=n) > 0
    has_lower = np.bincount(labels.ravel(), weights=(lo < image).ravel(), minlength=n) > 0
    is_max = has_lower & ~has_higher
    return is_max[labels]


def h_maxima_mask(
    band, h: float, connectivity: int = 8, neighborhood: int = 3, peaks: str = "tops"
) -> np.ndarray:
    """Binary image of the h-maxima of a normalized band.

    The band is reconstructed by dilation from ``band - h``.  With
    ``peaks="tops"`` the result holds the regional-maximum plateaus of the band
    itself whose height above the reconstruction is at least ``h`` (the
    scikit-image ``h_maxima`` semantics).  ``peaks="plateaus"`` returns the
    regional maxima of the reconstruction instead, which also includes the
    shoulder pixels lying within ``h`` of each top.
    """
    if not 0 < h < 1:
        raise ValueError(f"h must lie in (0, 1), got {h}")
    band = np.asarray(band, dtype=np.float64)
    fp = footprint(connectivity, neighborhood)
    seed = band - h
    rec = reconstruction(seed, band, method="dilation", footprint=fp)
    if peaks == "plateaus":
        return regional_maxima(rec, fp)
    if peaks != "tops":
        raise ValueError(f"unknown peaks mode {peaks!r}")
    # rec == seed means no higher maximum is reachable without a drop of h
    return regional_maxima(band, fp) & (rec <= seed)


def detect_h_maxima(
    band, h: float = 0.02, connectivity: int = 8, neighborhood: int = 3, peaks: str = "tops"
) -> np.ndarray:
    """Peak pixel coordinates as an ``(n, 2)`` int array of ``(col, row)``.

    Rows come out sorted by ``(row, col)``.
    """
    mask = h_maxima_mask(band, h, connectivity, neighborhood, peaks)
    rows, cols = np.nonzero(mask)
    return np.column_stack([cols, rows]).astype(np.intp)


class BandPeaks:
    """k-d tree over one band's peak pixels."""

    def __init__(self, coords: np.ndarray):
        self.coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        self.tree = cKDTree(self.coords) if len(self.coords) else None

    def __len__(self):
        return len(self.coords)

    def nearest(self, col: float, row: float) -> tuple[float, float, float] | None:
        """Nearest peak as ``(col, row, distance)``; ``None`` when there are no peaks.

        Equidistant peaks resolve to the smallest ``(row, col)``.
        """
        if self.tree is None:
            return None
        d0, _ = self.tree.query((col, row))
        # gather every peak that might tie with the reported nearest one
        candidates = self.tree.query_ball_point((col, row), d0 * (1 + 1e-9) + 1e-12)
        best = None
        for i in candidates:
            pc, pr = self.coords[i]
            d = math.hypot(pc - col, pr - row)
            key = (d, pr, pc)
            if best is None or key < best:
                best = key
        d, pr, pc = best
        return float(pc), float(pr), d


@dataclass(frozen=True)
class PeakIndex:
    bands: dict

    def __getitem__(self, band: str) -> BandPeaks:
        return self.bands[band]

    def nearest(self, band: str, col: float, row: float):
        return self.bands[band].nearest(col, row)


def build_peak_index(grid: RasterGrid, cfg: CorrectionConfig = CorrectionConfig()) -> PeakIndex:
    """Detect h-maxima in the blue, red and green bands and index them."""
    if grid.n_bands < 3:
        raise ValueError("peak index needs at least 3 bands")
    out = {}
    for label in BANDS:
        band = normalize_band(grid.bands[grid.band_index(label)])
        coords = detect_h_maxima(band, cfg.h, cfg.connectivity, cfg.neighborhood, cfg.peaks)
        out[label] = BandPeaks(coords)
    return PeakIndex(out)


def correct_keypoints(
    echoes: Iterable[EchoTrajectory], index: PeakIndex, cfg: CorrectionConfig = CorrectionConfig()
) -> list[EchoTrajectory]:
    corrected = []
    for echo in echoes:
        points = []
        for kp in echo.keypoints:
            hit = index.nearest(kp.band, kp.col, kp.row)
            if hit is not None and hit[2] < cfg.max_shift_distance:
                points.append(hit[:2])
            else:
                points.append((kp.col, kp.row))
        corrected.append(echo.with_points(points))
    return corrected


def correct_echoes(
    grid: RasterGrid, echoes: Sequence[EchoTrajectory], cfg: CorrectionConfig = CorrectionConfig()
) -> list[EchoTrajectory]:
    """Build the peak index for ``grid`` and correct ``echoes`` against it."""
    return correct_keypoints(echoes, build_peak_index(grid, cfg), cfg)
