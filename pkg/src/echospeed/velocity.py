"""Ground speed and heading from band-offset keypoints.

A push-broom sensor records blue, red and green frames one band interval
apart.  The interval follows from the satellite ground speed and the
along-track footprint of one band frame; a vehicle's speed is the mean
keypoint displacement divided by that interval.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .echoes import EchoTrajectory
from .raster import AffineTransform, pixel_center_world

CSV_HEADER = (
    "image_id",
    "echo_id",
    "d_mean_m",
    "delta_t_s",
    "speed_mps",
    "speed_kmh",
    "heading_deg",
    "score",
)


@dataclass(frozen=True)
class BandTiming:
    """Sensor timing parameters.

    ``band_offsets`` gives the capture slot of the blue, red and green frames in
    units of one band interval.  The default ``(0, 1, 2)`` spaces them evenly;
    ``(0, 1, 3)`` models a green frame recorded two slots after red.
    """

    v_satellite: float  # m/s, ground-track speed
    d_gsd: float  # m/px, averaged over the bands
    w_bands: float = 660.0  # px, along-track width of one band frame
    band_offsets: tuple[float, float, float] = (0.0, 1.0, 2.0)

    def __post_init__(self):
        for name in ("v_satellite", "d_gsd", "w_bands"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        offsets = tuple(float(o) for o in self.band_offsets)
        if len(offsets) != 3 or not offsets[0] < offsets[1] < offsets[2]:
            raise ValueError("band_offsets must be three increasing values")
        object.__setattr__(self, "band_offsets", offsets)

    @property
    def uniform(self) -> bool:
        o = self.band_offsets
        return o[1] - o[0] == 1.0 and o[2] - o[1] == 1.0


def band_interval(t: BandTiming) -> float:
    """Seconds between consecutive band captures."""
    return (t.v_satellite / (t.w_bands * t.d_gsd)) ** -1


@dataclass(frozen=True)
class VelocityEstimate:
    echo_id: int
    d_mean: float  # m
    delta_t: float  # s
    speed: float  # m/s
    speed_kmh: float
    heading: float  # degrees clockwise from north, [0, 360)
    score: float = 1.0
    image_id: int | None = None

    def csv_row(self) -> list[str]:
        return [
            "" if self.image_id is None else str(self.image_id),
            str(self.echo_id),
            f"{self.d_mean:.6f}",
            f"{self.delta_t:.6f}",
            f"{self.speed:.6f}",
            f"{self.speed_kmh:.6f}",
            f"{self.heading:.6f}",
            f"{self.score:.6f}",
        ]


def _world_points(e: EchoTrajectory, t: AffineTransform):
    return [pixel_center_world(t, kp.col, kp.row) for kp in e.keypoints]


def segment_lengths(e: EchoTrajectory, t: AffineTransform) -> tuple[float, float]:
    """World distances blue->red and red->green, in metres."""
    (xb, yb), (xr, yr), (xg, yg) = _world_points(e, t)
    return math.hypot(xr - xb, yr - yb), math.hypot(xg - xr, yg - yr)


def mean_displacement(e: EchoTrajectory, t: AffineTransform) -> float:
    d1, d2 = segment_lengths(e, t)
    return (d1 + d2) / 2


def heading_deg(e: EchoTrajectory, t: AffineTransform) -> float:
    """Bearing of the blue->green world vector, clockwise from north.

    A stationary echo gets heading 0.
    """
    (xb, yb), _, (xg, yg) = _world_points(e, t)
    dx, dy = xg - xb, yg - yb
    if dx == 0 and dy == 0:
        return 0.0
    h = math.degrees(math.atan2(dx, dy)) % 360.0
    return 0.0 if h == 360.0 else h


def estimate_velocity(e: EchoTrajectory, t: AffineTransform, timing: BandTiming) -> VelocityEstimate:
    dt = band_interval(timing)
    d1, d2 = segment_lengths(e, t)
    d_mean = (d1 + d2) / 2
    if timing.uniform:
        speed = d_mean / dt
    else:
        o = timing.band_offsets
        speed = (d1 + d2) / ((o[2] - o[0]) * dt)
    return VelocityEstimate(
        echo_id=e.id,
        d_mean=d_mean,
        delta_t=dt,
        speed=speed,
        speed_kmh=3.6 * speed,
        heading=heading_deg(e, t),
        score=e.score,
        image_id=e.image_id,
    )


def rmse_to_velocity_error(rmse_px: float, d_gsd: float, delta_t: float) -> float:
    """Speed error (m/s) implied by a trajectory-length RMSE in pixels.

    The trajectory length spans two band intervals, so half of its error is
    carried into the mean displacement.
    """
    if rmse_px < 0 or d_gsd <= 0 or delta_t <= 0:
        raise ValueError("rmse must be >= 0, gsd and delta_t positive")
    return displacement_error_m(rmse_px, d_gsd) / delta_t


def displacement_error_m(rmse_px: float, d_gsd: float) -> float:
    return rmse_px * d_gsd / 2


def write_velocity_csv(estimates, fh) -> None:
    rows = sorted(
        estimates,
        key=lambda v: (-1 if v.image_id is None else v.image_id, v.echo_id),
    )
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for est in rows:
        writer.writerow(est.csv_row())


def velocity_csv(estimates) -> str:
    buf = io.StringIO()
    write_velocity_csv(estimates, buf)
    return buf.getvalue()


def read_velocity_csv(fh) -> list[VelocityEstimate]:
    reader = csv.DictReader(fh)
    missing = set(CSV_HEADER) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"velocity CSV is missing columns: {sorted(missing)}")
    out = []
    for row in reader:
        out.append(
            VelocityEstimate(
                echo_id=int(row["echo_id"]),
                d_mean=float(row["d_mean_m"]),
                delta_t=float(row["delta_t_s"]),
                speed=float(row["speed_mps"]),
                speed_kmh=float(row["speed_kmh"]),
                heading=float(row["heading_deg"]),
                score=float(row["score"]),
                image_id=int(row["image_id"]) if row["image_id"] else None,
            )
        )
    return out
