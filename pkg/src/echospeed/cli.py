"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand computes all of its outputs in memory first and only then
writes them (each through a temporary file and a rename), so a failing run
leaves nothing behind.  Exit codes: 0 success, 1 invalid input, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from datetime import time
from pathlib import Path

from . import __version__
from .correction import CorrectionConfig, correct_echoes
from .echoes import DatasetError, EchoDataset, dumps_dataset, parse_dataset, validate_against_raster
from .metrics import OksConfig, evaluate
from .raster import (
    RasterError,
    load_centerlines,
    load_raster,
    pixel_center_world,
    raster_to_json,
    rasterize_road_mask,
)
from .synth import load_scene_spec, render_scene, truth_csv
from .validation import (
    DroneCameraSpec,
    LocatedEstimate,
    compare_samples,
    drone_distance,
    drone_velocity,
    gps_residuals,
    match_gps_to_estimates,
    parse_timestamp,
    read_drone_tracks,
    read_gps_geojson,
)
from .velocity import BandTiming, estimate_velocity, read_velocity_csv, velocity_csv

log = logging.getLogger("echospeed")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive(name):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: not a number: {text!r}")
        if not value > 0:
            raise argparse.ArgumentTypeError(f"{name}: must be positive, got {text}")
        return value

    return parse


def _non_negative(name):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name}: not a number: {text!r}")
        if value < 0:
            raise argparse.ArgumentTypeError(f"{name}: must be >= 0, got {text}")
        return value

    return parse


def _offsets(text):
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--band-offsets: expected three numbers, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError("--band-offsets: expected three comma-separated numbers")
    return values


def _window(text):
    try:
        start, end = text.split("-")
        return time.fromisoformat(start), time.fromisoformat(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--window: expected HH:MM-HH:MM, got {text!r}")


# ---------------------------------------------------------------------------
# output handling

def _commit(outputs: dict) -> None:
    """Stage every output as a temp file beside its target, then rename them all."""
    staged = []
    try:
        for path, data in outputs.items():
            path = Path(path)
            if path.is_dir():
                raise IsADirectoryError(f"output path is a directory: {path}")
            if isinstance(data, str):
                data = data.encode("utf-8")
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            staged.append((tmp, path))
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
        for tmp, path in staged:
            os.replace(tmp, path)
            log.info("wrote %s", path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _emit(outputs: dict, out, text: str) -> None:
    if out:
        outputs[out] = text
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# shared helpers

def _select_image(dataset: EchoDataset, image_id):
    if image_id is not None:
        try:
            return dataset.image(image_id)
        except KeyError:
            raise ValueError(f"--image-id: no image with id {image_id}")
    if len(dataset.images) != 1:
        raise ValueError("dataset holds several images; choose one with --image-id")
    return dataset.images[0]


def _correction_config(args) -> CorrectionConfig:
    return CorrectionConfig(
        h=args.h,
        neighborhood=args.neighborhood,
        max_shift_distance=args.max_shift,
        connectivity=args.connectivity,
        peaks=args.peaks,
    )


def _checked_raster(args, dataset, image):
    grid = load_raster(args.raster)
    problems = validate_against_raster(dataset, grid, image.id)
    if problems:
        raise ValueError("detections do not fit the raster: " + "; ".join(problems))
    return grid


def _correct_image(dataset: EchoDataset, image, grid, cfg) -> EchoDataset:
    mine = [a for a in dataset.annotations if a.image_id == image.id]
    others = [a for a in dataset.annotations if a.image_id != image.id]
    fixed = correct_echoes(grid, mine, cfg)
    return dataset.with_annotations(sorted(others + fixed, key=lambda a: a.id))


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, outputs):
    spec = load_scene_spec(args.spec)
    ext = ".tif" if args.raster_format == "geotiff" else ".json"
    raster_name = f"raster{ext}"
    scene = render_scene(spec, raster_file=raster_name)
    out_dir = Path(args.out_dir)
    if args.raster_format == "geotiff":
        from .raster import save_raster

        # tifffile writes to a path; render into a temp dir and read back the bytes
        with tempfile.TemporaryDirectory() as tmp:
            tmp_path = Path(tmp) / raster_name
            save_raster(scene.grid, tmp_path, "geotiff")
            outputs[out_dir / raster_name] = tmp_path.read_bytes()
    else:
        outputs[out_dir / raster_name] = json.dumps(raster_to_json(scene.grid))
    outputs[out_dir / "ground_truth.json"] = dumps_dataset(scene.dataset)
    outputs[out_dir / "truth.csv"] = truth_csv(scene.truth)


def cmd_correct(args, outputs):
    dataset = parse_dataset(args.detections)
    image = _select_image(dataset, args.image_id)
    grid = _checked_raster(args, dataset, image)
    corrected = _correct_image(dataset, image, grid, _correction_config(args))
    outputs[args.out] = dumps_dataset(corrected)


def cmd_speed(args, outputs):
    dataset = parse_dataset(args.detections)
    transforms = {img.id: img.geotransform for img in dataset.images}
    if args.raster:
        image = _select_image(dataset, args.image_id)
        grid = _checked_raster(args, dataset, image)
        if args.correct:
            dataset = _correct_image(dataset, image, grid, _correction_config(args))
        transforms = {image.id: grid.geotransform}
    elif args.correct:
        raise ValueError("--correct needs --raster")
    estimates = []
    for ann in dataset.annotations:
        if ann.image_id not in transforms:
            continue
        t = transforms[ann.image_id]
        timing = BandTiming(
            v_satellite=args.satellite_velocity,
            d_gsd=args.gsd if args.gsd is not None else t.mean_gsd,
            w_bands=args.band_width,
            band_offsets=args.band_offsets,
        )
        estimates.append(estimate_velocity(ann, t, timing))
    outputs[args.out] = velocity_csv(estimates)


def cmd_eval(args, outputs):
    gt = parse_dataset(args.gt)
    pred = parse_dataset(args.pred)
    cfg = OksConfig(score_threshold=args.score_threshold, rmse_threshold=args.rmse_threshold)
    report = evaluate(pred.annotations, gt.annotations, cfg)
    _emit(outputs, args.out, _json(report.to_json()))


def cmd_drone_speed(args, outputs):
    spec = DroneCameraSpec(
        focal_length=args.focal_length,
        sensor_w=args.sensor_width,
        sensor_h=args.sensor_height,
        image_w=int(args.image_width),
        image_h=int(args.image_height),
        fps=args.fps,
    )
    with open(args.tracks, newline="", encoding="utf-8") as fh:
        tracks = read_drone_tracks(fh)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["track_id", "n_frames", "distance_m", "speed_mps", "speed_kmh"])
    for track in tracks:
        n = track.observations[-1].frame - track.observations[0].frame
        dist = drone_distance(track, spec, args.metric)
        v = drone_velocity(track, spec, args.metric)
        writer.writerow([track.track_id, n, f"{dist:.6f}", f"{v:.6f}", f"{3.6 * v:.6f}"])
    outputs[args.out] = buf.getvalue()


def _located_estimates(speeds, dataset: EchoDataset):
    anns = {(a.image_id, a.id): a for a in dataset.annotations}
    located = []
    for est in speeds:
        ann = anns.get((est.image_id, est.echo_id))
        if ann is None:
            raise ValueError(f"speed row image {est.image_id} echo {est.echo_id} not in dataset")
        image = dataset.image(ann.image_id)
        if not image.timestamp:
            raise ValueError(f"image {image.id} has no capture timestamp")
        x, y = pixel_center_world(image.geotransform, ann.red.col, ann.red.row)
        located.append(
            LocatedEstimate(est.image_id, est.echo_id, est.speed_kmh, x, y, parse_timestamp(image.timestamp))
        )
    return located


def cmd_gps_residuals(args, outputs):
    tracks = read_gps_geojson(args.gps)
    with open(args.speeds, newline="", encoding="utf-8") as fh:
        speeds = read_velocity_csv(fh)
    dataset = parse_dataset(args.detections)
    located = _located_estimates(speeds, dataset)
    pairs = match_gps_to_estimates(
        tracks, located, args.window, buffer=args.buffer, time_tolerance=args.time_tolerance
    )
    report = gps_residuals(pairs, split_kmh=args.split_kmh)
    _emit(outputs, args.out, _json(report))
    if args.plot and report["residuals"]:
        from .plotting import residual_scatter_svg

        rows = report["residuals"]
        outputs[args.plot] = residual_scatter_svg(
            [r["predicted_kmh"] for r in rows], [r["residual_kmh"] for r in rows], args.split_kmh
        )


def _read_column(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or ()):
            raise ValueError(f"{path}: no column {column!r}")
        values = [float(row[column]) for row in reader if row[column] != ""]
    if not values:
        raise ValueError(f"{path}: column {column!r} is empty")
    return values


def cmd_compare(args, outputs):
    a = _read_column(args.a, args.column_a)
    b = _read_column(args.b, args.column_b)
    labels = tuple(args.labels.split(","))
    if len(labels) != 2:
        raise ValueError("--labels: expected two comma-separated names")
    report = compare_samples(a, b, labels)
    _emit(outputs, args.out, _json(report.to_json()))
    if args.plot:
        from .plotting import speed_distribution_svg

        outputs[args.plot] = speed_distribution_svg(a, b, labels)


def cmd_mask(args, outputs):
    grid = load_raster(args.raster)
    lines = load_centerlines(args.roads)
    mask = rasterize_road_mask(lines, args.buffer, grid)
    outputs[args.out] = json.dumps(mask.to_json()) + "\n"
    if args.plot:
        from .plotting import mask_preview_svg

        outputs[args.plot] = mask_preview_svg(mask.mask, grid.bands[0])


# ---------------------------------------------------------------------------

def _add_correction_flags(p):
    p.add_argument("--h", type=float, default=0.02, help="relative peak height (default 0.02)")
    p.add_argument("--neighborhood", type=int, default=3, help="odd window size (default 3)")
    p.add_argument(
        "--max-shift", type=_non_negative("--max-shift"), default=2.0,
        help="largest keypoint move in pixels, exclusive (default 2.0)",
    )
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    p.add_argument("--peaks", choices=("tops", "plateaus"), default="tops",
                   help="peak pixels: maxima tops (default) or reconstruction plateaus")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="echospeed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log written files")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="render a synthetic scene with ground truth")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--raster-format", choices=("json-grid", "geotiff"), default="json-grid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correct", help="snap keypoints onto band intensity peaks")
    p.add_argument("--raster", required=True)
    p.add_argument("--detections", required=True, help="echo dataset JSON")
    p.add_argument("--image-id", type=int)
    p.add_argument("--out", required=True)
    _add_correction_flags(p)
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("speed", help="estimate echo speeds from band offsets")
    p.add_argument("--detections", required=True, help="echo dataset JSON")
    p.add_argument("--raster", help="raster supplying the geotransform (validated against detections)")
    p.add_argument("--image-id", type=int)
    p.add_argument("--satellite-velocity", required=True, type=_positive("--satellite-velocity"),
                   help="satellite ground-track speed in m/s (required)")
    p.add_argument("--band-width", type=_positive("--band-width"), default=660.0,
                   help="band frame width in pixels (default 660)")
    p.add_argument("--gsd", type=_positive("--gsd"),
                   help="ground sampling distance in m/px (default: from the geotransform)")
    p.add_argument("--band-offsets", type=_offsets, default=(0.0, 1.0, 2.0),
                   help="capture slots of blue,red,green (default 0,1,2)")
    p.add_argument("--correct", action="store_true", help="correct keypoints before estimating")
    p.add_argument("--out", required=True, help="velocity CSV")
    _add_correction_flags(p)
    p.set_defaults(func=cmd_speed)

    p = sub.add_parser("eval", help="OKS-based AP/mAP and trajectory RMSE")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--score-threshold", type=float, default=0.7)
    p.add_argument("--rmse-threshold", type=float, default=0.5,
                   help="OKS level for pairs entering the RMSE (default 0.5)")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("drone-speed", help="vehicle speeds from drone track centroids")
    p.add_argument("--tracks", required=True, help="CSV track_id,frame,cx_px,cy_px,altitude_m")
    p.add_argument("--metric", choices=("as-printed", "euclidean"), default="as-printed")
    p.add_argument("--focal-length", type=_positive("--focal-length"), default=4.4, help="mm")
    p.add_argument("--sensor-width", type=_positive("--sensor-width"), default=6.4, help="mm")
    p.add_argument("--sensor-height", type=_positive("--sensor-height"), default=4.8, help="mm")
    p.add_argument("--image-width", type=_positive("--image-width"), default=8000, help="px")
    p.add_argument("--image-height", type=_positive("--image-height"), default=6000, help="px")
    p.add_argument("--fps", type=_positive("--fps"), default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_drone_speed)

    p = sub.add_parser("gps-residuals", help="match GPS probes to estimates and report residuals")
    p.add_argument("--gps", required=True, help="GeoJSON points (projected metres)")
    p.add_argument("--speeds", required=True, help="velocity CSV from 'speed'")
    p.add_argument("--detections", required=True, help="dataset the speeds were computed from")
    p.add_argument("--buffer", type=_non_negative("--buffer"), default=10.0, help="metres")
    p.add_argument("--time-tolerance", type=_non_negative("--time-tolerance"), default=60.0,
                   help="seconds")
    p.add_argument("--window", type=_window, default=(time(9), time(11)),
                   help="local time window HH:MM-HH:MM (default 09:00-11:00)")
    p.add_argument("--split-kmh", type=float, default=100.0)
    p.add_argument("--out", help="residual JSON (default: stdout)")
    p.add_argument("--plot", help="residual scatter SVG")
    p.set_defaults(func=cmd_gps_residuals)

    p = sub.add_parser("compare", help="descriptive statistics and KS test for two speed samples")
    p.add_argument("--a", required=True, help="CSV with the first sample")
    p.add_argument("--b", required=True, help="CSV with the second sample")
    p.add_argument("--column-a", default="speed_kmh")
    p.add_argument("--column-b", default="speed_kmh")
    p.add_argument("--labels", default="a,b")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--plot", help="distribution figure SVG")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mask", help="rasterize a road buffer mask")
    p.add_argument("--raster", required=True)
    p.add_argument("--roads", required=True, help="GeoJSON centerlines (projected metres)")
    p.add_argument("--buffer", type=_non_negative("--buffer"), default=30.0, help="metres")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="mask preview SVG")
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"echospeed: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    outputs: dict = {}
    try:
        args.func(args, outputs)
        _commit(outputs)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"echospeed: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, DatasetError, RasterError, json.JSONDecodeError) as exc:
        print(f"echospeed: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"echospeed: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
