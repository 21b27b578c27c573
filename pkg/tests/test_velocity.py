import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echospeed.echoes import EchoTrajectory
from echospeed.raster import AffineTransform
from echospeed.velocity import (
    BandTiming,
    band_interval,
    displacement_error_m,
    estimate_velocity,
    heading_deg,
    mean_displacement,
    read_velocity_csv,
    rmse_to_velocity_error,
    velocity_csv,
)

UNIT = AffineTransform(0, 1, 0, 0, 0, 1)
NORTH_UP = AffineTransform(0, 1, 0, 0, 0, -1)
GSD37 = AffineTransform(0, 3.7, 0, 0, 0, -3.7)
TIMING = BandTiming(7000.0, 3.7, 660)


def echo(pts, **kw):
    return EchoTrajectory.from_points(kw.pop("id", 1), pts, **kw)


def test_band_interval_examples():
    assert band_interval(TIMING) == pytest.approx(2442 / 7000, rel=1e-15)
    assert band_interval(BandTiming(1, 1, 1)) == 1.0
    assert band_interval(BandTiming(14000, 3.7, 660)) == pytest.approx(band_interval(TIMING) / 2, rel=1e-15)


@pytest.mark.parametrize("kwargs", [{"v_satellite": 0, "d_gsd": 1}, {"v_satellite": 1, "d_gsd": -1},
                                    {"v_satellite": 1, "d_gsd": 1, "w_bands": 0},
                                    {"v_satellite": 1, "d_gsd": 1, "band_offsets": (0, 2, 1)}])
def test_timing_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        BandTiming(**kwargs)


def test_mean_displacement_examples():
    assert mean_displacement(echo([(0, 0), (10, 0), (20, 0)]), UNIT) == 10.0
    assert mean_displacement(echo([(3, 3)] * 3), UNIT) == 0.0
    assert mean_displacement(echo([(0, 0), (2, 0), (4, 0)]), GSD37) == pytest.approx(7.4, abs=1e-12)


def test_speed_example():
    v = estimate_velocity(echo([(0, 0), (10, 0), (20, 0)]), UNIT, TIMING)
    assert v.delta_t == pytest.approx(0.348857142857, rel=1e-9)
    assert v.speed == pytest.approx(28.665, abs=5e-3)
    assert v.speed_kmh == pytest.approx(103.19, abs=5e-2)
    assert v.speed_kmh == 3.6 * v.speed


def test_stationary_speed_and_heading():
    v = estimate_velocity(echo([(5, 5)] * 3), UNIT, TIMING)
    assert v.speed == 0.0 and v.heading == 0.0


def test_heading_north():
    # blue at world (0,0), green at world (0,20) under a north-up transform
    e = echo([(-0.5, -0.5), (-0.5, -10.5), (-0.5, -20.5)])
    assert heading_deg(e, NORTH_UP) == 0.0


@pytest.mark.parametrize("dcol, drow, expected", [(1, 0, 90.0), (0, 1, 180.0), (-1, 0, 270.0), (1, -1, 45.0)])
def test_heading_compass(dcol, drow, expected):
    e = echo([(0, 0), (dcol, drow), (2 * dcol, 2 * drow)])
    assert heading_deg(e, NORTH_UP) == pytest.approx(expected, abs=1e-12)


coord = st.floats(-200, 200, allow_nan=False)
points = st.lists(st.tuples(coord, coord), min_size=3, max_size=3)


@settings(max_examples=100, deadline=None)
@given(points, st.floats(0.01, 100))
def test_scale_covariance(pts, s):
    e = echo(pts)
    a = estimate_velocity(e, GSD37, TIMING).speed
    b = estimate_velocity(e, GSD37.scaled(s), TIMING).speed
    assert b == pytest.approx(s * a, rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(points)
def test_time_covariance(pts):
    e = echo(pts)
    slow = BandTiming(3500.0, 3.7)  # twice the interval
    a = estimate_velocity(e, GSD37, TIMING)
    b = estimate_velocity(e, GSD37, slow)
    assert a.speed * a.delta_t == pytest.approx(b.speed * b.delta_t, rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(points, coord, coord, st.floats(0, 360))
def test_heading_translation_and_rotation(pts, tx, ty, theta):
    e = echo(pts)
    (bc, br), _, (gc, gr) = pts
    if math.hypot(gc - bc, gr - br) < 1e-3:
        return
    h0 = heading_deg(e, NORTH_UP)
    assert heading_deg(echo([(c + tx, r + ty) for c, r in pts]), NORTH_UP) == pytest.approx(h0, abs=1e-6)
    # rotate the world frame clockwise by theta: x' = x cos + y sin, y' = -x sin + y cos
    t = math.radians(theta)
    rotated = AffineTransform(0, math.cos(t), -math.sin(t), 0, -math.sin(t), -math.cos(t))
    diff = (heading_deg(e, rotated) - h0 - theta) % 360.0
    assert min(diff, 360.0 - diff) < 1e-6


def test_non_uniform_offsets():
    timing = BandTiming(7000.0, 3.7, band_offsets=(0, 1, 3))
    e = echo([(0, 0), (1, 0), (3, 0)])
    v = estimate_velocity(e, GSD37, timing)
    assert v.speed == pytest.approx(3.7 / band_interval(timing), rel=1e-12)


def test_rmse_conversion_examples():
    assert displacement_error_m(1.9063, 3.46) == pytest.approx(3.30, abs=0.01)
    assert rmse_to_velocity_error(0.0, 3.7, 0.3) == 0.0
    assert rmse_to_velocity_error(2.0, 1.0, 1.0) == 1.0
    with pytest.raises(ValueError):
        rmse_to_velocity_error(1.0, 0.0, 1.0)


def test_csv_roundtrip_sorted():
    estimates = [
        estimate_velocity(echo([(0, 0), (i, 0), (2 * i, 0)], id=i, image_id=img), GSD37, TIMING)
        for img, i in [(2, 1), (1, 3), (1, 2)]
    ]
    text = velocity_csv(estimates)
    lines = text.splitlines()
    assert lines[0] == "image_id,echo_id,d_mean_m,delta_t_s,speed_mps,speed_kmh,heading_deg,score"
    assert [line.split(",")[:2] for line in lines[1:]] == [["1", "2"], ["1", "3"], ["2", "1"]]
    back = read_velocity_csv(io.StringIO(text))
    for got, want in zip(back, sorted(estimates, key=lambda v: (v.image_id, v.echo_id))):
        assert got.echo_id == want.echo_id
        assert got.speed == pytest.approx(want.speed, abs=1e-6)


def test_csv_missing_columns():
    with pytest.raises(ValueError, match="missing"):
        read_velocity_csv(io.StringIO("echo_id,speed\n1,2\n"))


def test_speed_matches_numpy_arithmetic():
    rng = np.random.default_rng(0)
    for pts in rng.uniform(0, 100, size=(20, 3, 2)):
        w = (pts + 0.5) * [3.7, -3.7]
        d = (np.linalg.norm(w[1] - w[0]) + np.linalg.norm(w[2] - w[1])) / 2
        v = estimate_velocity(echo(pts.tolist()), GSD37, TIMING)
        assert v.speed == pytest.approx(d / (660 * 3.7 / 7000), rel=1e-12)
