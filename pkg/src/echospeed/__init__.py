"""Vehicle ground speeds from band-offset echoes in push-broom satellite imagery."""

__version__ = "0.1.0"

from .correction import (
    CorrectionConfig,
    PeakIndex,
    build_peak_index,
    correct_echoes,
    correct_keypoints,
    detect_h_maxima,
)
from .echoes import (
    EchoDataset,
    EchoTrajectory,
    ImageEntry,
    Keypoint,
    parse_dataset,
    trajectory_length_px,
    validate_against_raster,
)
from .metrics import EvalReport, OksConfig, evaluate, mean_average_precision, oks
from .raster import (
    AffineTransform,
    RasterGrid,
    RoadMask,
    load_raster,
    normalize_band,
    pixel_to_world,
    rasterize_road_mask,
    save_raster,
    world_to_pixel,
)
from .synth import SceneSpec, SyntheticVehicle, end_to_end_recover, render_scene
from .validation import (
    ComparisonReport,
    DroneCameraSpec,
    compare_samples,
    describe,
    drone_gsd,
    drone_velocity,
    ks_two_sample,
)
from .velocity import (
    BandTiming,
    VelocityEstimate,
    band_interval,
    estimate_velocity,
    mean_displacement,
    rmse_to_velocity_error,
)
