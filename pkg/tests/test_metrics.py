import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echospeed.echoes import EchoTrajectory
from echospeed.metrics import (
    OksConfig,
    average_precision,
    evaluate,
    match_detections,
    match_image,
    mean_average_precision,
    oks,
    trajectory_rmse,
)

import oracles

GT = EchoTrajectory.from_points(1, [(0, 0), (5, 0), (10, 0)], image_id=1)


def shifted(e, dx, dy=0.0, id=None, score=1.0):
    return EchoTrajectory.from_points(
        e.id if id is None else id, [(c + dx, r + dy) for c, r in e.points()], score=score, image_id=e.image_id
    )


def test_oks_identical():
    assert oks(GT, GT) == 1.0


def test_oks_uniform_displacement():
    assert oks(shifted(GT, 10), GT) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_oks_one_keypoint_displaced():
    pred = EchoTrajectory.from_points(2, [(0, 10), (5, 0), (10, 0)])
    assert oks(pred, GT) == pytest.approx((2 + math.exp(-0.5)) / 3, abs=1e-12)


def test_oks_stationary_gt_uses_unit_scale():
    gt = EchoTrajectory.from_points(1, [(3, 3)] * 3)
    pred = shifted(gt, 1)
    assert oks(pred, gt) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_oks_matches_closed_form():
    rng = np.random.default_rng(2)
    for _ in range(50):
        g, p = rng.uniform(0, 50, size=(2, 3, 2))
        want = oracles.oks_closed_form(p.tolist(), g.tolist())
        got = oks(EchoTrajectory.from_points(0, p.tolist()), EchoTrajectory.from_points(1, g.tolist()))
        assert got == pytest.approx(want, abs=1e-12)


coord = st.floats(-50, 50, allow_nan=False)
pts3 = st.lists(st.tuples(coord, coord), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(pts3, pts3, coord, coord, st.floats(0, 2 * math.pi))
def test_oks_rigid_invariance(p, g, tx, ty, theta):
    c, s = math.cos(theta), math.sin(theta)

    def move(pts):
        return EchoTrajectory.from_points(0, [(c * x - s * y + tx, s * x + c * y + ty) for x, y in pts])

    a = oks(EchoTrajectory.from_points(0, p), EchoTrajectory.from_points(1, g))
    assert oks(move(p), move(g)) == pytest.approx(a, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 20), st.floats(0.01, 5), st.integers(0, 2))
def test_oks_monotone_in_distance(d, extra, which):
    def at(dist):
        pts = GT.points()
        pts[which] = (pts[which][0], pts[which][1] + dist)
        return oks(EchoTrajectory.from_points(2, pts), GT)

    assert at(d + extra) < at(d)


def test_single_match():
    m = match_image([GT], [GT], 0.95)
    assert (m.tp, m.fp, m.fn) == (1, 0, 0)


def test_higher_score_claims_gt():
    hi = shifted(GT, 1, id=10, score=0.8)
    lo = shifted(GT, 0, id=11, score=0.75)
    m = match_image([lo, hi], [GT], 0.5)
    assert m.pairs[0][0].id == 10
    assert [p.id for p in m.false_positives] == [11]


def test_matching_is_per_image():
    other = shifted(GT, 0, id=5)
    other = EchoTrajectory(5, other.keypoints, image_id=2)
    res = match_detections([other], [GT], 0.5)
    assert res[1].fn == 1 and res[2].fp == 1


def random_case(rng, n, m):
    gts = [EchoTrajectory.from_points(j, rng.uniform(0, 12, size=(3, 2)).tolist(), image_id=0) for j in range(m)]
    scores = rng.choice(np.linspace(0.71, 1.0, 4), size=n)  # ties happen
    preds = [
        EchoTrajectory.from_points(100 + i, rng.uniform(0, 12, size=(3, 2)).tolist(), score=float(scores[i]), image_id=0)
        for i in range(n)
    ]
    return preds, gts


def test_greedy_matches_lexicographic_oracle():
    rng = np.random.default_rng(4)
    for _ in range(150):
        n, m = rng.integers(0, 5, size=2)
        preds, gts = random_case(rng, n, m)
        t = float(rng.choice([0.5, 0.6, 0.75]))
        order = sorted(preds, key=lambda p: (-p.score, p.id))
        sim = [[oks(p, g) for g in gts] for p in order]
        want = oracles.brute_greedy_matching(order, gts, sim, t)
        got = match_image(preds, gts, t)
        assert {order.index(p): gts.index(g) for p, g, _ in got.pairs} == want
        assert got.tp <= oracles.max_cardinality_tp(len(order), len(gts), sim, t)


def test_ap_examples():
    assert average_precision([match_image([GT], [GT], 0.5)]) == 1.0
    assert average_precision([match_image([], [GT], 0.5)]) == 0.0
    assert average_precision([match_image([], [], 0.5)]) is None
    tp = shifted(GT, 0, id=2, score=0.9)
    fp = shifted(GT, 100, id=3, score=0.8)
    assert average_precision([match_image([tp, fp], [GT], 0.5)]) == 1.0


def test_ap_matches_101_point_oracle():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n, m = rng.integers(0, 11), rng.integers(1, 6)
        preds, gts = random_case(rng, n, m)
        matching = match_image(preds, gts, 0.5)
        hits = {p.id for p, _, _ in matching.pairs}
        flags = [p.id in hits for p in sorted(preds, key=lambda p: (-p.score, p.id))]
        assert average_precision([matching]) == pytest.approx(oracles.ap_101(flags, m), abs=1e-12)


def test_map_examples():
    gts = [GT, EchoTrajectory.from_points(2, [(20, 20), (20, 25), (20, 30)], image_id=1)]
    assert mean_average_precision(gts, gts) == 1.0
    assert mean_average_precision([], gts) == 0.0
    # every keypoint moved by d with exp(-d^2 / 2k^2) = 0.72, k = 10
    d = math.sqrt(-2 * 100 * math.log(0.72))
    preds = [shifted(g, d, id=g.id + 10) for g in gts]
    assert oks(preds[0], gts[0]) == pytest.approx(0.72, abs=1e-12)
    report = evaluate(preds, gts)
    assert [report.ap_per_threshold[t] for t in report.ap_per_threshold] == [1.0] * 5 + [0.0] * 5
    assert report.map == pytest.approx(0.5, abs=1e-12)


def test_score_gate_is_strict():
    at = shifted(GT, 0, id=2, score=0.7)
    assert evaluate([at], [GT]).map == 0.0
    above = shifted(GT, 0, id=2, score=0.7000001)
    assert evaluate([above], [GT]).map == 1.0


def test_rmse_examples():
    assert trajectory_rmse([(GT, GT)]) == 0.0
    assert trajectory_rmse([]) is None
    plus3 = EchoTrajectory.from_points(2, [(0, 0), (6.5, 0), (13, 0)])
    minus4 = EchoTrajectory.from_points(3, [(0, 0), (3, 0), (6, 0)])
    assert trajectory_rmse([(plus3, GT), (minus4, GT)]) == pytest.approx(math.sqrt(12.5), abs=1e-12)
    longer = EchoTrajectory.from_points(4, [(0, 0), (5, 0), (11.9063, 0)])
    assert trajectory_rmse([(longer, GT)]) == pytest.approx(1.9063, abs=1e-12)


def test_map_bounded_by_ap50_and_score_scaling():
    rng = np.random.default_rng(13)
    for _ in range(30):
        preds, gts = random_case(rng, int(rng.integers(1, 8)), int(rng.integers(1, 5)))
        preds = [shifted(gts[i % len(gts)], rng.normal(0, 2), rng.normal(0, 2), id=p.id, score=p.score)
                 for i, p in enumerate(preds)]
        r = evaluate(preds, gts)
        assert r.map <= r.ap_per_threshold[0.5] + 1e-12
        # rescaling scores with the gate moved alongside keeps every AP
        c = 0.8
        scaled = [EchoTrajectory(p.id, p.keypoints, score=p.score * c, image_id=p.image_id) for p in preds]
        r2 = evaluate(scaled, gts, OksConfig(score_threshold=0.7 * c))
        assert r2.ap_per_threshold == r.ap_per_threshold


def test_report_json_keys():
    doc = evaluate([GT], [GT]).to_json()
    assert list(doc["ap_per_threshold"]) == ["0.50", "0.55", "0.60", "0.65", "0.70", "0.75", "0.80", "0.85", "0.90", "0.95"]
    assert doc["map"] == 1.0 and doc["tp"] == 1 and doc["score_threshold"] == 0.7
