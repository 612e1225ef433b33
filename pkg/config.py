"""
Configuration settings and constants for the perceptual super-resolution scheduler
"""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


@dataclass
class AppConfig:
    # Data paths
    DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
    SCHEMA_DIR = "schemas"
    DEFAULT_VIEWING_FILE = "viewing_u2723qe.json"
    DEFAULT_PROFILES_FILE = "profiles_ladder_x4.json"
    EXAMPLE_CSF_TABLE_FILE = "csf_table_example.csv"

    # Accepted raster formats (8-bit only)
    IMAGE_EXTENSIONS = (".png", ".pgm")

    # Parallelism: 0 = one worker per CPU
    THREADS = int(os.getenv("HVPF_THREADS", "0") or 0)

    # Exit codes
    EXIT_OK = 0
    EXIT_INTERNAL = 1
    EXIT_INPUT = 2


@dataclass
class ViewingDefaults:
    """Display and observer defaults (27-inch 4K desktop setup)"""

    DIAGONAL_IN = 27.0
    RES_W = 3840
    RES_H = 2160
    PEAK_NITS = 400.0
    # The source setup states only the peak; gamma and black level are assumptions
    BLACK_NITS = 0.4
    GAMMA = 2.2
    DISTANCE_CM = 60.0
    FPS = 0.0

    # Frame rate assumed for clips whose config leaves fps at 0
    VIDEO_FPS = 24.0

    INCH_TO_M = 0.0254

    # Rec.709 luma weights
    REC709_WEIGHTS = (0.2126, 0.7152, 0.0722)


@dataclass
class SpectralConfig:
    """Attenuation profiling settings"""

    MIN_IMAGE_SIDE = 8
    RATIO_CLAMP = 1.5
    # Invalid-bin floor, relative to the reference image RMS
    BIN_FLOOR_REL = 1e-8
    VALID_SCALES = (2, 4, 8)
    BICUBIC_A = -0.5

    # Gaussian falloff fit
    MIN_FIT_BINS = 8
    GRID_A = (-2.5, 2.0, 46)  # log10 range and count
    GRID_B = (0.0, 0.5, 26)
    FIT_MAX_ITER = 200
    FIT_REL_TOL = 1e-10
    FIT_STEP_TOL = 1e-10
    FIT_GTOL = 1e-10
    # Residual RMS below which a fit counts as exact
    FIT_RMS_TOL = 1e-7
    FIT_LAMBDA0 = 1e-3
    FIT_LAMBDA_MAX = 1e12
    MIN_A = 1e-6


@dataclass
class CsfConfig:
    """Default analytic contrast sensitivity model constants"""

    S_MAX = 200.0
    F_PEAK = 3.0  # cpd
    S_ZERO = 0.2
    E2 = 2.3  # degrees
    OMEGA_0 = 5.0  # Hz
    OMEGA_C = 8.0  # Hz
    L_HALF = 50.0  # cd/m^2
    P = 0.5
    # Lower bound keeping the analytic model strictly positive far past the peak
    S_FLOOR = 1e-9

    TABLE_COLUMNS = [
        'f_spatial_cpd',
        'f_temporal_hz',
        'luminance_nits',
        'eccentricity_deg',
        'sensitivity',
    ]


@dataclass
class ContrastConfig:
    """Contrast pyramid and masking settings"""

    DEFAULT_LEVELS = 3
    # Number of bands feeding the tolerable attenuation vector
    T_BANDS = 3
    ALPHA = 0.7
    BETA = 0.2
    # Contrast denominator floor above the display black level
    L_FLOOR_OFFSET = 0.01
    BINOMIAL_KERNEL = (1.0, 4.0, 6.0, 4.0, 1.0)


@dataclass
class SchedulerConfig:
    """Variant selection and cost accounting settings"""

    EPS_C = 1e-4
    TIE_EPS = 1e-9
    T_HAT_CLAMP = 1.5

    # Scheduler overhead anchors: (patch side px, FLOPs)
    OVERHEAD_ANCHORS = ((10, 39_000.0), (35, 477_000.0))


@dataclass
class MotionConfig:
    """Block matching and flow file settings"""

    DEFAULT_BLOCK = 8
    DEFAULT_SEARCH_RADIUS = 8
    MIN_BLOCK = 4
    FLO_MAGIC = 202021.25


# Helper functions
def get_data_path(filename: str) -> str:
    """Get full path for a bundled data file"""
    return os.path.join(AppConfig.DATA_DIR, filename)


def get_schema_path(name: str) -> str:
    """Get path for a shipped JSON schema, e.g. 'report' -> data/schemas/report.schema.json"""
    return os.path.join(AppConfig.DATA_DIR, AppConfig.SCHEMA_DIR, f"{name}.schema.json")


def get_thread_count(override: int = None) -> int:
    """Resolve the worker count: explicit override, then HVPF_THREADS, then CPU count"""
    threads = override if override is not None else AppConfig.THREADS
    if threads <= 0:
        threads = os.cpu_count() or 1
    return threads
