"""
Display and observer model
Pixel-to-luminance decoding, angular geometry, eccentricity and retinal velocity
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from config import ViewingDefaults
from modules.errors import ConfigurationError, InputError


@dataclass(frozen=True)
class ViewingConditions:
    """
    Display geometry, luminance model, viewing distance and frame rate.

    Validated on construction; all lengths in meters, luminance in cd/m^2.
    """

    diagonal_m: float = ViewingDefaults.DIAGONAL_IN * ViewingDefaults.INCH_TO_M
    resolution: Tuple[int, int] = (ViewingDefaults.RES_W, ViewingDefaults.RES_H)
    peak_luminance: float = ViewingDefaults.PEAK_NITS
    black_level: float = ViewingDefaults.BLACK_NITS
    gamma: float = ViewingDefaults.GAMMA
    distance_m: float = ViewingDefaults.DISTANCE_CM / 100.0
    fps: float = ViewingDefaults.FPS

    def __post_init__(self):
        width, height = self.resolution
        if width <= 0 or height <= 0:
            raise ConfigurationError(f"Resolution must be positive, got {self.resolution}")
        if not self.diagonal_m > 0:
            raise ConfigurationError(f"Display diagonal must be positive, got {self.diagonal_m}")
        if not self.distance_m > 0:
            raise ConfigurationError(f"Viewing distance must be positive, got {self.distance_m}")
        if not self.black_level >= 0:
            raise ConfigurationError(f"Black level must be >= 0, got {self.black_level}")
        if not self.peak_luminance > self.black_level:
            raise ConfigurationError(
                f"Peak luminance ({self.peak_luminance}) must exceed black level ({self.black_level})"
            )
        if not self.gamma > 0:
            raise ConfigurationError(f"Gamma must be positive, got {self.gamma}")
        if self.fps < 0:
            raise ConfigurationError(f"Frame rate must be >= 0, got {self.fps}")

    @property
    def pixels_per_degree(self) -> float:
        return pixels_per_degree(self)

    @property
    def nyquist_cpd(self) -> float:
        return self.pixels_per_degree / 2.0

    @classmethod
    def from_dict(cls, cfg: dict) -> "ViewingConditions":
        """
        Build from the JSON configuration object.

        Keys: diagonal_in OR diagonal_m, res_w, res_h, peak_nits, black_nits,
        gamma, distance_cm, fps. Missing keys fall back to ViewingDefaults.
        """
        if 'diagonal_m' in cfg and 'diagonal_in' in cfg:
            raise ConfigurationError("Specify either diagonal_in or diagonal_m, not both")
        if 'diagonal_m' in cfg:
            diagonal_m = float(cfg['diagonal_m'])
        else:
            diagonal_m = float(cfg.get('diagonal_in', ViewingDefaults.DIAGONAL_IN)) * ViewingDefaults.INCH_TO_M

        try:
            return cls(
                diagonal_m=diagonal_m,
                resolution=(int(cfg.get('res_w', ViewingDefaults.RES_W)),
                            int(cfg.get('res_h', ViewingDefaults.RES_H))),
                peak_luminance=float(cfg.get('peak_nits', ViewingDefaults.PEAK_NITS)),
                black_level=float(cfg.get('black_nits', ViewingDefaults.BLACK_NITS)),
                gamma=float(cfg.get('gamma', ViewingDefaults.GAMMA)),
                distance_m=float(cfg.get('distance_cm', ViewingDefaults.DISTANCE_CM)) / 100.0,
                fps=float(cfg.get('fps', ViewingDefaults.FPS)),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigurationError):
                raise
            raise ConfigurationError(f"Invalid viewing configuration: {e}") from e

    def to_dict(self) -> dict:
        return {
            'diagonal_m': self.diagonal_m,
            'res_w': self.resolution[0],
            'res_h': self.resolution[1],
            'peak_nits': self.peak_luminance,
            'black_nits': self.black_level,
            'gamma': self.gamma,
            'distance_cm': self.distance_m * 100.0,
            'fps': self.fps,
        }


@dataclass(frozen=True)
class LuminanceImage:
    """Per-pixel luminance in cd/m^2, shape (height, width)"""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InputError(f"Luminance image must be 2-D, got shape {values.shape}")
        object.__setattr__(self, 'values', values)

    @property
    def width_px(self) -> int:
        return self.values.shape[1]

    @property
    def height_px(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def pixels_per_degree(vc: ViewingConditions) -> float:
    """
    Pixels subtended by one visual degree at the display center.

    Horizontal pixel density times the length subtended by 1 degree
    at the viewing distance (2 * d * tan(0.5 deg)).
    """
    width_px, height_px = vc.resolution
    diagonal_px = math.hypot(width_px, height_px)
    width_m = vc.diagonal_m * width_px / diagonal_px
    px_per_m = width_px / width_m
    ppd = px_per_m * 2.0 * vc.distance_m * math.tan(math.radians(0.5))

    if not math.isfinite(ppd) or ppd <= 0:
        raise ConfigurationError(f"Pixels per degree is not finite and positive: {ppd}")
    return ppd


def luma_from_rgb(raster: np.ndarray) -> np.ndarray:
    """Reduce an (H, W, 3|4) code raster to Rec.709 luma codes; alpha is ignored"""
    weights = np.asarray(ViewingDefaults.REC709_WEIGHTS)
    return raster[..., :3].astype(np.float64) @ weights


def decode_luminance(raster: np.ndarray, vc: ViewingConditions) -> LuminanceImage:
    """
    Decode 8-bit pixel codes to display luminance.

    L = black + (peak - black) * (code / 255) ** gamma

    Args:
        raster: (H, W) grayscale or (H, W, 3|4) color codes in [0, 255]
        vc: Viewing conditions supplying the display transfer function

    Returns:
        LuminanceImage
    """
    raster = np.asarray(raster)
    if raster.size == 0 or raster.ndim < 2 or raster.shape[0] == 0 or raster.shape[1] == 0:
        raise InputError(f"Cannot decode an empty image (shape {raster.shape})")

    if raster.ndim == 3:
        if raster.shape[2] == 1:
            codes = raster[..., 0].astype(np.float64)
        elif raster.shape[2] in (3, 4):
            codes = luma_from_rgb(raster)
        else:
            raise InputError(f"Unsupported channel count: {raster.shape[2]}")
    elif raster.ndim == 2:
        codes = raster.astype(np.float64)
    else:
        raise InputError(f"Unsupported raster shape {raster.shape}")

    if codes.min() < 0 or codes.max() > 255:
        raise InputError(f"Pixel codes must lie in [0, 255], got [{codes.min()}, {codes.max()}]")

    normalized = np.power(codes / 255.0, vc.gamma)
    values = vc.black_level + (vc.peak_luminance - vc.black_level) * normalized
    return LuminanceImage(values)


def eccentricity_field(
    gaze_px: Tuple[float, float],
    resolution: Tuple[int, int],
    ppd: float
) -> np.ndarray:
    """
    Per-pixel eccentricity in degrees relative to the gaze position.

    Uses the flat-screen small-angle approximation distance / ppd
    (under 5% error inside 30 degrees).

    Args:
        gaze_px: (x, y) gaze position in pixels
        resolution: (width, height) of the raster
        ppd: Pixels per degree

    Returns:
        (height, width) array of degrees
    """
    width, height = resolution
    gx, gy = gaze_px
    if not (0 <= gx < width and 0 <= gy < height):
        raise InputError(f"Gaze {gaze_px} lies outside the {width}x{height} raster")

    ys, xs = np.mgrid[0:height, 0:width]
    return np.hypot(xs - gx, ys - gy) / ppd


def retinal_velocity(
    v_px_per_frame: Union[float, np.ndarray],
    vc: ViewingConditions,
    ppd: Optional[float] = None,
    vectors: bool = False
) -> Union[float, np.ndarray]:
    """
    Convert on-screen velocity (pixels/frame) to retinal velocity (degrees/second).

    Args:
        v_px_per_frame: Speed (scalar or array), or (u, v) displacements when vectors=True
        vc: Viewing conditions supplying fps (and ppd unless overridden)
        ppd: Optional pixels-per-degree override
        vectors: Treat the trailing axis (length 2) as (u, v) components

    Returns:
        |v| * fps / ppd, same leading shape as the input
    """
    v = np.asarray(v_px_per_frame, dtype=np.float64)
    if vectors:
        if v.ndim == 0 or v.shape[-1] != 2:
            raise InputError(f"Expected a trailing (u, v) axis, got shape {v.shape}")
        speed = np.hypot(v[..., 0], v[..., 1])
    else:
        speed = np.abs(v)

    if ppd is None:
        ppd = vc.pixels_per_degree

    if vc.fps <= 0:
        if np.any(speed > 0):
            raise ConfigurationError("Frame rate is 0 but a nonzero velocity was supplied")
        result = np.zeros_like(speed)
    else:
        result = speed * vc.fps / ppd

    return float(result) if result.ndim == 0 else result
