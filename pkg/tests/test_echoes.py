import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echospeed.echoes import (
    DatasetError,
    EchoTrajectory,
    dataset_from_json,
    dataset_to_json,
    parse_dataset,
    trajectory_length_px,
    validate_against_raster,
)
from echospeed.raster import AffineTransform, RasterGrid

IMAGE = {"id": 1, "file": "a.json", "width": 16, "height": 16,
         "geotransform": [0, 3.7, 0, 0, 0, -3.7], "timestamp": None}


def ann(id, pts, image_id=1, **extra):
    flat = []
    for c, r in pts:
        flat += [c, r, 2]
    return {"id": id, "image_id": image_id, "keypoints": flat, **extra}


def test_parse_minimal(tmp_path):
    doc = {"images": [IMAGE], "annotations": [ann(7, [(1, 1), (2, 2), (3, 3)])]}
    (tmp_path / "d.json").write_text(json.dumps(doc))
    d = parse_dataset(tmp_path / "d.json")
    assert len(d.annotations) == 1
    e = d.annotations[0]
    assert e.score == 1.0 and e.image_id == 1
    assert [kp.band for kp in e.keypoints] == ["blue", "red", "green"]


def test_two_keypoints_names_annotation():
    doc = {"images": [IMAGE], "annotations": [{"id": 42, "image_id": 1, "keypoints": [1, 1, 2, 2, 2, 2]}]}
    with pytest.raises(DatasetError, match="42"):
        dataset_from_json(doc)


def test_dangling_image_id():
    doc = {"images": [IMAGE], "annotations": [ann(3, [(1, 1)] * 3, image_id=9)]}
    with pytest.raises(DatasetError, match="image_id 9"):
        dataset_from_json(doc)


def test_duplicate_ids():
    doc = {"images": [IMAGE], "annotations": [ann(3, [(1, 1)] * 3), ann(3, [(2, 2)] * 3)]}
    with pytest.raises(DatasetError, match="duplicate"):
        dataset_from_json(doc)


def test_score_out_of_range():
    doc = {"images": [IMAGE], "annotations": [ann(3, [(1, 1)] * 3, score=1.5)]}
    with pytest.raises(DatasetError, match="score"):
        dataset_from_json(doc)


def test_roundtrip_canonical_form():
    rng = np.random.default_rng(5)
    anns = []
    for i in range(5):
        pts = rng.uniform(0, 15, size=(3, 2)).tolist()
        extra = {"score": float(rng.uniform(0.5, 1))}
        if i % 2:
            extra["bbox"] = [0, 0, 16, 16]
        anns.append(ann(10 - i, pts, **extra))
    raw = {"images": [IMAGE], "annotations": anns}

    # hand-normalized: sorted by id, bbox filled from the padded hull
    expected = {"images": [IMAGE], "annotations": []}
    for a in sorted(anns, key=lambda a: a["id"]):
        kps = a["keypoints"]
        cols, rows = kps[0::3], kps[1::3]
        bbox = a.get("bbox") or [min(cols) - 1, min(rows) - 1,
                                 max(cols) - min(cols) + 2, max(rows) - min(rows) + 2]
        expected["annotations"].append({
            "id": a["id"], "image_id": 1, "keypoints": kps,
            "bbox": [float(v) for v in bbox], "score": a["score"],
        })
    got = dataset_to_json(dataset_from_json(raw))
    assert json.dumps(got, sort_keys=True) == json.dumps(
        json.loads(json.dumps(expected)), sort_keys=True
    ) or got == expected
    for g, e in zip(got["annotations"], expected["annotations"]):
        np.testing.assert_allclose(g["bbox"], e["bbox"], atol=1e-12)
    # parse . serialize is the identity on the canonical form
    assert dataset_to_json(dataset_from_json(got)) == got


@pytest.mark.parametrize(
    "pts, expected",
    [
        ([(0, 0), (3, 4), (6, 8)], 10.0),
        ([(2, 2), (2, 2), (2, 2)], 0.0),
        ([(0, 0), (1, 0), (1, 1)], 2.0),
    ],
)
def test_trajectory_length(pts, expected):
    assert trajectory_length_px(EchoTrajectory.from_points(0, pts)) == pytest.approx(expected, abs=1e-12)


coord = st.floats(-100, 100, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=3), coord, coord, st.floats(0, 2 * math.pi))
def test_length_rigid_invariance(pts, tx, ty, theta):
    e = EchoTrajectory.from_points(0, pts)
    c, s = math.cos(theta), math.sin(theta)
    moved = [(c * x - s * y + tx, s * x + c * y + ty) for x, y in pts]
    assert trajectory_length_px(EchoTrajectory.from_points(0, moved)) == pytest.approx(
        trajectory_length_px(e), abs=1e-9
    )


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=3))
def test_zero_length_iff_coincident(pts):
    e = EchoTrajectory.from_points(0, pts)
    coincident = pts[0] == pts[1] == pts[2]
    assert (trajectory_length_px(e) == 0) == coincident


def _grid(w, h):
    return RasterGrid(np.zeros((3, h, w)), AffineTransform(0, 1, 0, 0, 0, -1))


def test_validate_out_of_bounds():
    d = dataset_from_json({"images": [IMAGE], "annotations": [ann(1, [(-1, 3), (2, 2), (3, 3)])]})
    problems = validate_against_raster(d, _grid(16, 16))
    assert len(problems) == 1 and "out of bounds" in problems[0]


def test_validate_clean():
    d = dataset_from_json({"images": [IMAGE], "annotations": [ann(1, [(0, 0), (2, 2), (15, 15)])]})
    assert validate_against_raster(d, _grid(16, 16)) == []


def test_validate_dimension_mismatch():
    img = dict(IMAGE, width=512)
    d = dataset_from_json({"images": [img], "annotations": []})
    problems = validate_against_raster(d, _grid(256, 16))
    assert len(problems) == 1 and "dimension mismatch" in problems[0]


def test_bbox_default_is_padded_hull():
    e = EchoTrajectory.from_points(0, [(2, 3), (5, 4), (8, 9)])
    assert e.bbox == (1.0, 2.0, 8.0, 8.0)
