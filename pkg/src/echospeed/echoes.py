"""Moving-echo keypoints, trajectories and annotation datasets.

Dataset files follow a COCO-like keypoint layout: each annotation stores
``[x_blue, y_blue, v, x_red, y_red, v, x_green, y_green, v]`` with the
visibility flag ``v`` always 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .raster import AffineTransform, RasterError, RasterGrid

BANDS = ("blue", "red", "green")
VISIBLE = 2


class DatasetError(ValueError):
    """Schema or invariant violation in an echo dataset."""


@dataclass(frozen=True)
class Keypoint:
    col: float
    row: float
    band: str

    def __post_init__(self):
        if not (math.isfinite(self.col) and math.isfinite(self.row)):
            raise DatasetError(f"non-finite keypoint coordinate ({self.col}, {self.row})")
        if self.band not in BANDS:
            raise DatasetError(f"unknown band {self.band!r}")

    def distance(self, other: "Keypoint") -> float:
        return math.hypot(self.col - other.col, self.row - other.row)


def hull_bbox(keypoints: Iterable[Keypoint], pad: float = 1.0) -> tuple[float, float, float, float]:
    """Axis-aligned hull of the keypoints padded by ``pad`` pixels, as (x, y, w, h)."""
    kps = list(keypoints)
    x0 = min(kp.col for kp in kps) - pad
    y0 = min(kp.row for kp in kps) - pad
    x1 = max(kp.col for kp in kps) + pad
    y1 = max(kp.row for kp in kps) + pad
    return (x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class EchoTrajectory:
    """One vehicle echo: blue, red and green keypoints in capture order."""

    id: int
    keypoints: tuple[Keypoint, Keypoint, Keypoint]
    bbox: tuple[float, float, float, float] | None = None
    score: float = 1.0
    image_id: int | None = None

    def __post_init__(self):
        kps = tuple(self.keypoints)
        if len(kps) != 3:
            raise DatasetError(f"echo {self.id}: expected 3 keypoints, got {len(kps)}")
        if tuple(kp.band for kp in kps) != BANDS:
            raise DatasetError(f"echo {self.id}: keypoints must be ordered blue, red, green")
        if not 0.0 <= self.score <= 1.0:
            raise DatasetError(f"echo {self.id}: score {self.score} outside [0, 1]")
        bbox = hull_bbox(kps) if self.bbox is None else tuple(float(v) for v in self.bbox)
        if len(bbox) != 4 or bbox[2] < 0 or bbox[3] < 0:
            raise DatasetError(f"echo {self.id}: bbox must be (x, y, w, h) with w, h >= 0")
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "bbox", bbox)

    @classmethod
    def from_points(cls, id, points, score=1.0, image_id=None, bbox=None) -> "EchoTrajectory":
        """Build from three ``(col, row)`` pairs in blue, red, green order."""
        points = list(points)
        if len(points) != 3:
            raise DatasetError(f"echo {id}: expected 3 keypoints, got {len(points)}")
        kps = tuple(Keypoint(float(c), float(r), b) for (c, r), b in zip(points, BANDS))
        return cls(id, kps, bbox=bbox, score=score, image_id=image_id)

    @property
    def blue(self) -> Keypoint:
        return self.keypoints[0]

    @property
    def red(self) -> Keypoint:
        return self.keypoints[1]

    @property
    def green(self) -> Keypoint:
        return self.keypoints[2]

    def points(self) -> list[tuple[float, float]]:
        return [(kp.col, kp.row) for kp in self.keypoints]

    def with_points(self, points) -> "EchoTrajectory":
        """Copy with new keypoint positions and a recomputed bbox."""
        kps = tuple(Keypoint(float(c), float(r), b) for (c, r), b in zip(points, BANDS))
        return replace(self, keypoints=kps, bbox=hull_bbox(kps))


def trajectory_length_px(e: EchoTrajectory) -> float:
    """Blue-to-red plus red-to-green Euclidean distance, in pixels."""
    return e.blue.distance(e.red) + e.red.distance(e.green)


@dataclass(frozen=True)
class ImageEntry:
    id: int
    file: str
    width: int
    height: int
    geotransform: AffineTransform
    timestamp: str | None = None


@dataclass(frozen=True)
class EchoDataset:
    images: tuple[ImageEntry, ...] = ()
    annotations: tuple[EchoTrajectory, ...] = field(default=())

    def __post_init__(self):
        images = tuple(self.images)
        annotations = tuple(self.annotations)
        image_ids = [img.id for img in images]
        if len(set(image_ids)) != len(image_ids):
            raise DatasetError("duplicate image id")
        ann_ids = [a.id for a in annotations]
        if len(set(ann_ids)) != len(ann_ids):
            raise DatasetError("duplicate annotation id")
        known = set(image_ids)
        for ann in annotations:
            if ann.image_id not in known:
                raise DatasetError(
                    f"annotation {ann.id}: image_id {ann.image_id} does not exist"
                )
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "annotations", annotations)

    def image(self, image_id: int) -> ImageEntry:
        for img in self.images:
            if img.id == image_id:
                return img
        raise KeyError(image_id)

    def by_image(self) -> dict[int, list[EchoTrajectory]]:
        out: dict[int, list[EchoTrajectory]] = {img.id: [] for img in self.images}
        for ann in self.annotations:
            out[ann.image_id].append(ann)
        return out

    def with_annotations(self, annotations) -> "EchoDataset":
        return EchoDataset(self.images, tuple(annotations))


# ---------------------------------------------------------------------------
# JSON serialization

def _parse_image(doc: dict) -> ImageEntry:
    try:
        return ImageEntry(
            id=int(doc["id"]),
            file=str(doc.get("file", "")),
            width=int(doc["width"]),
            height=int(doc["height"]),
            geotransform=AffineTransform.from_sequence(doc["geotransform"]),
            timestamp=doc.get("timestamp"),
        )
    except (KeyError, TypeError, ValueError, RasterError) as exc:
        raise DatasetError(f"image {doc.get('id', '?')}: {exc}") from exc


def _parse_annotation(doc: dict) -> EchoTrajectory:
    ann_id = doc.get("id", "?")
    try:
        flat = [float(v) for v in doc["keypoints"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"annotation {ann_id}: bad keypoints ({exc})") from exc
    if len(flat) % 3 != 0 or len(flat) // 3 != 3:
        raise DatasetError(
            f"annotation {ann_id}: expected 3 keypoints (9 values), got {len(flat)} values"
        )
    points = [(flat[i], flat[i + 1]) for i in range(0, 9, 3)]
    try:
        return EchoTrajectory.from_points(
            int(doc["id"]),
            points,
            score=float(doc.get("score", 1.0)),
            image_id=int(doc["image_id"]),
            bbox=doc.get("bbox"),
        )
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"annotation {ann_id}: {exc!r}") from exc


def dataset_from_json(doc: dict) -> EchoDataset:
    if not isinstance(doc, dict) or "images" not in doc or "annotations" not in doc:
        raise DatasetError("dataset must be an object with 'images' and 'annotations'")
    images = [_parse_image(d) for d in doc["images"]]
    annotations = [_parse_annotation(d) for d in doc["annotations"]]
    return EchoDataset(tuple(images), tuple(annotations))


def parse_dataset(path) -> EchoDataset:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: invalid JSON ({exc})") from exc
    return dataset_from_json(doc)


def annotation_to_json(e: EchoTrajectory) -> dict:
    flat = []
    for kp in e.keypoints:
        flat.extend([kp.col, kp.row, VISIBLE])
    return {
        "id": e.id,
        "image_id": e.image_id,
        "keypoints": flat,
        "bbox": list(e.bbox),
        "score": e.score,
    }


def dataset_to_json(d: EchoDataset) -> dict:
    """Canonical JSON form: images and annotations sorted by id."""
    return {
        "images": [
            {
                "id": img.id,
                "file": img.file,
                "width": img.width,
                "height": img.height,
                "geotransform": list(img.geotransform.coefficients()),
                "timestamp": img.timestamp,
            }
            for img in sorted(d.images, key=lambda i: i.id)
        ],
        "annotations": [
            annotation_to_json(a) for a in sorted(d.annotations, key=lambda a: a.id)
        ],
    }


def dumps_dataset(d: EchoDataset) -> str:
    return json.dumps(dataset_to_json(d), indent=1)


def save_dataset(d: EchoDataset, path) -> None:
    Path(path).write_text(dumps_dataset(d), encoding="utf-8")


# ---------------------------------------------------------------------------

def validate_against_raster(d: EchoDataset, g: RasterGrid, image_id: int | None = None) -> list[str]:
    """Describe keypoints outside the grid and image/grid size mismatches.

    Only images matching ``image_id`` are checked when it is given.
    """
    violations = []
    for img in d.images:
        if image_id is not None and img.id != image_id:
            continue
        if img.width != g.width or img.height != g.height:
            violations.append(
                f"image {img.id}: dimension mismatch {img.width}x{img.height} "
                f"vs raster {g.width}x{g.height}"
            )
    for ann in d.annotations:
        if image_id is not None and ann.image_id != image_id:
            continue
        for kp in ann.keypoints:
            # pixel i covers [i - 0.5, i + 0.5)
            if not (-0.5 <= kp.col < g.width - 0.5 and -0.5 <= kp.row < g.height - 0.5):
                violations.append(
                    f"annotation {ann.id}: {kp.band} keypoint ({kp.col}, {kp.row}) out of bounds"
                )
    return violations
