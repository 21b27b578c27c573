"""Independent velocity references and sample comparison statistics.

* drone video tracks: centroid displacement scaled by the camera GSD
* GPS probe tracks: spatio-temporal matching against satellite estimates
* two-sample Kolmogorov-Smirnov test and descriptive moments
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, time
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class DroneCameraSpec:
    focal_length: float = 4.4  # mm
    sensor_w: float = 6.4  # mm
    sensor_h: float = 4.8  # mm
    image_w: int = 8000  # px
    image_h: int = 6000  # px
    fps: float = 30.0

    def __post_init__(self):
        for name in ("focal_length", "sensor_w", "sensor_h", "image_w", "image_h", "fps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


MAVIC_3T = DroneCameraSpec()


@dataclass(frozen=True)
class DroneObservation:
    frame: int
    cx: float  # px
    cy: float  # px
    altitude: float  # m


@dataclass(frozen=True)
class DroneTrack:
    track_id: str
    observations: tuple[DroneObservation, ...]

    def __post_init__(self):
        obs = tuple(self.observations)
        if len(obs) < 2:
            raise ValueError(f"track {self.track_id}: needs at least 2 observations")
        frames = [o.frame for o in obs]
        if any(a >= b for a, b in zip(frames, frames[1:])):
            raise ValueError(f"track {self.track_id}: frame indices must strictly increase")
        if any(o.altitude <= 0 for o in obs):
            raise ValueError(f"track {self.track_id}: altitude must be positive")
        object.__setattr__(self, "observations", obs)


def drone_gsd(spec: DroneCameraSpec, altitude: float) -> tuple[float, float]:
    """Ground sampling distance (m/px) along image width and height."""
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    gsd_w = altitude * spec.sensor_w / (spec.focal_length * spec.image_w)
    gsd_h = altitude * spec.sensor_h / (spec.focal_length * spec.image_h)
    return gsd_w, gsd_h


def drone_distance(track: DroneTrack, spec: DroneCameraSpec, metric: str = "as-printed") -> float:
    """Ground distance between the first and last observation, in metres.

    ``as-printed`` adds the absolute per-axis displacements, i.e. each square
    root wraps a single squared term (an L1 distance); ``euclidean`` takes the
    straight-line distance.  The GSD uses the mean of the endpoint altitudes.
    """
    first, last = track.observations[0], track.observations[-1]
    gsd_w, gsd_h = drone_gsd(spec, (first.altitude + last.altitude) / 2)
    dx = (last.cx - first.cx) * gsd_w
    dy = (last.cy - first.cy) * gsd_h
    if metric == "as-printed":
        return math.sqrt(dx**2) + math.sqrt(dy**2)
    if metric == "euclidean":
        return math.sqrt(dx**2 + dy**2)
    raise ValueError(f"unknown distance metric {metric!r}")


def drone_velocity(track: DroneTrack, spec: DroneCameraSpec, metric: str = "as-printed") -> float:
    """Speed in m/s over the track's endpoint frames."""
    n_frames = track.observations[-1].frame - track.observations[0].frame
    if n_frames <= 0:
        raise ValueError("zero frame gap")
    return drone_distance(track, spec, metric) / n_frames * spec.fps


def read_drone_tracks(fh) -> list[DroneTrack]:
    """Parse ``track_id,frame,cx_px,cy_px,altitude_m`` rows into tracks."""
    reader = csv.DictReader(fh)
    needed = {"track_id", "frame", "cx_px", "cy_px", "altitude_m"}
    missing = needed - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"drone track CSV is missing columns: {sorted(missing)}")
    grouped: dict[str, list[DroneObservation]] = {}
    for row in reader:
        grouped.setdefault(row["track_id"], []).append(
            DroneObservation(
                int(row["frame"]),
                float(row["cx_px"]),
                float(row["cy_px"]),
                float(row["altitude_m"]),
            )
        )
    return [
        DroneTrack(tid, tuple(sorted(obs, key=lambda o: o.frame)))
        for tid, obs in sorted(grouped.items())
    ]


# ---------------------------------------------------------------------------
# distribution comparison

def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Largest gap between the two right-continuous empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS test needs two non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def kolmogorov_survival(lam: float, tol: float = 1e-12) -> float:
    """``Q(lam) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``, clamped to [0, 1]."""
    if lam < 0.2:
        # the series sums to 1 within 1e-20 here but converges slowly
        return 1.0
    total = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        total += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value."""
    d = ks_statistic(a, b)
    n_e = len(a) * len(b) / (len(a) + len(b))
    sq = math.sqrt(n_e)
    lam = (sq + 0.12 + 0.11 / sq) * d
    return d, kolmogorov_survival(lam)


@dataclass(frozen=True)
class SampleStats:
    n: int
    mean: float
    std: float | None
    min: float
    max: float
    skewness: float | None
    kurtosis: float | None  # excess

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "skewness": self.skewness,
            "kurtosis": self.kurtosis,
        }


def describe(sample: Sequence[float]) -> SampleStats:
    x = np.asarray(sample, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("cannot describe an empty sample")
    # a constant sample must give exactly zero spread despite mean rounding
    mean = float(x[0]) if x.min() == x.max() else float(x.mean())
    dev = x - mean
    sq = dev * dev
    m2 = math.fsum(sq) / n
    std = math.sqrt(math.fsum(sq) / (n - 1)) if n >= 2 else None
    skew = kurt = None
    if m2 > 0:
        # standardize first so tiny spreads do not underflow; products rather
        # than ** keep the odd moment exactly sign-symmetric
        z = dev / math.sqrt(m2)
        z2 = z * z
        if n >= 3:
            skew = math.fsum(z2 * z) / n
        if n >= 4:
            kurt = math.fsum(z2 * z2) / n - 3.0
    return SampleStats(n, mean, std, float(x.min()), float(x.max()), skew, kurt)


@dataclass(frozen=True)
class ComparisonReport:
    a: SampleStats
    b: SampleStats
    ks_statistic: float
    ks_p_value: float
    labels: tuple[str, str] = ("a", "b")

    def to_json(self) -> dict:
        return {
            "samples": {self.labels[0]: self.a.to_json(), self.labels[1]: self.b.to_json()},
            "ks_statistic": self.ks_statistic,
            "ks_p_value": self.ks_p_value,
        }


def compare_samples(a, b, labels=("a", "b")) -> ComparisonReport:
    d, p = ks_two_sample(a, b)
    return ComparisonReport(describe(a), describe(b), d, p, tuple(labels))


# ---------------------------------------------------------------------------
# GPS validation

@dataclass(frozen=True)
class GpsPoint:
    x: float  # projected metres, same CRS as the imagery
    y: float
    timestamp: datetime
    speed_kmh: float


@dataclass(frozen=True)
class GpsTrack:
    track_id: str
    points: tuple[GpsPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        if any(a.timestamp > b.timestamp for a, b in zip(pts, pts[1:])):
            raise ValueError(f"GPS track {self.track_id}: timestamps must not decrease")
        if any(p.speed_kmh < 0 for p in pts):
            raise ValueError(f"GPS track {self.track_id}: negative speed")
        object.__setattr__(self, "points", pts)


def parse_timestamp(value: str) -> datetime:
    return datetime.fromisoformat(value.replace("Z", "+00:00"))


def read_gps_geojson(path) -> list[GpsTrack]:
    """Point features with ``track_id``, ``timestamp`` and ``speed_kmh`` properties."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    grouped: dict[str, list[GpsPoint]] = {}
    for feature in doc.get("features", []):
        props = feature.get("properties") or {}
        geom = feature.get("geometry") or {}
        if geom.get("type") != "Point":
            continue
        x, y = geom["coordinates"][:2]
        grouped.setdefault(str(props["track_id"]), []).append(
            GpsPoint(float(x), float(y), parse_timestamp(props["timestamp"]), float(props["speed_kmh"]))
        )
    return [
        GpsTrack(tid, tuple(sorted(pts, key=lambda p: p.timestamp)))
        for tid, pts in sorted(grouped.items())
    ]


@dataclass(frozen=True)
class LocatedEstimate:
    """Satellite speed estimate with its capture time and red-band world position."""

    image_id: int | None
    echo_id: int
    speed_kmh: float
    x: float
    y: float
    timestamp: datetime


@dataclass(frozen=True)
class GpsMatch:
    estimate: LocatedEstimate
    track_id: str
    point: GpsPoint
    distance_m: float
    dt_s: float

    @property
    def residual_kmh(self) -> float:
        return self.estimate.speed_kmh - self.point.speed_kmh


def in_time_window(ts: datetime, window: tuple[time, time]) -> bool:
    """Local time of day (as recorded) within the inclusive window."""
    t = ts.time().replace(tzinfo=None)
    return window[0] <= t <= window[1]


def match_gps_to_estimates(
    tracks: Iterable[GpsTrack],
    estimates: Iterable[LocatedEstimate],
    time_window: tuple[time, time] = (time(9, 0), time(11, 0)),
    buffer: float = 10.0,
    time_tolerance: float = 60.0,
) -> list[GpsMatch]:
    """Pair each estimate with the GPS point closest in time inside both gates.

    Ties on time go to the spatially closer point, then to the smaller track
    id.  Results are sorted by ``(image_id, echo_id)``.
    """
    candidates = [
        (track.track_id, p)
        for track in tracks
        for p in track.points
        if in_time_window(p.timestamp, time_window)
    ]
    matches = []
    for est in estimates:
        best = None
        for track_id, p in candidates:
            dist = math.hypot(p.x - est.x, p.y - est.y)
            if dist > buffer:
                continue
            dt = abs((p.timestamp - est.timestamp).total_seconds())
            if dt > time_tolerance:
                continue
            key = (dt, dist, track_id, p.timestamp)
            if best is None or key < best[0]:
                best = (key, GpsMatch(est, track_id, p, dist, dt))
        if best is not None:
            matches.append(best[1])
    matches.sort(key=lambda m: (m.estimate.image_id is None, m.estimate.image_id or 0, m.estimate.echo_id))
    return matches


def _bucket_stats(values: list[float]) -> dict:
    if not values:
        return {"n": 0, "mean": None, "std": None, "min": None, "max": None}
    s = describe(values)
    return {"n": s.n, "mean": s.mean, "std": s.std, "min": s.min, "max": s.max}


def gps_residuals(pairs: Sequence[GpsMatch], split_kmh: float = 100.0) -> dict:
    """Residual table (predicted minus GPS speed) and per-bucket summaries.

    The high bucket holds predictions at or above ``split_kmh``.
    """
    rows = [
        {
            "image_id": m.estimate.image_id,
            "echo_id": m.estimate.echo_id,
            "track_id": m.track_id,
            "predicted_kmh": m.estimate.speed_kmh,
            "gps_kmh": m.point.speed_kmh,
            "residual_kmh": m.residual_kmh,
            "distance_m": m.distance_m,
            "dt_s": m.dt_s,
            "bucket": "high" if m.estimate.speed_kmh >= split_kmh else "low",
        }
        for m in pairs
    ]
    low = [r["residual_kmh"] for r in rows if r["bucket"] == "low"]
    high = [r["residual_kmh"] for r in rows if r["bucket"] == "high"]
    return {
        "split_kmh": split_kmh,
        "residuals": rows,
        "buckets": {"low": _bucket_stats(low), "high": _bucket_stats(high)},
        "all": _bucket_stats(low + high),
    }
