"""
Perceived contrast modeling
Laplacian-Gaussian band contrast, CSF normalization and neighborhood masking
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from config import ContrastConfig
from modules.errors import InputError
from modules.viewing import LuminanceImage, ViewingConditions

KERNEL = np.asarray(ContrastConfig.BINOMIAL_KERNEL) / np.sum(ContrastConfig.BINOMIAL_KERNEL)

FieldLike = Union[float, np.ndarray]


@dataclass
class ContrastBand:
    """One pyramid level; arrays share the level's (h, w) shape"""

    level: int
    center_freq: float  # cpd
    physical: np.ndarray = field(repr=False)
    local_mean: np.ndarray = field(repr=False)
    normalized: Optional[np.ndarray] = field(default=None, repr=False)
    masked: Optional[np.ndarray] = field(default=None, repr=False)
    mask_term: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass
class ContrastPyramid:
    bands: List[ContrastBand]
    gaussian: List[np.ndarray] = field(repr=False)
    l_floor: float
    ppd: float

    @property
    def n_levels(self) -> int:
        return len(self.bands)

    @property
    def center_freqs(self) -> List[float]:
        return [band.center_freq for band in self.bands]


def reduce(values: np.ndarray) -> np.ndarray:
    """Binomial blur with edge replication, then 2x decimation"""
    blurred = ndimage.convolve1d(values, KERNEL, axis=0, mode='nearest')
    blurred = ndimage.convolve1d(blurred, KERNEL, axis=1, mode='nearest')
    return blurred[::2, ::2]


def expand(values: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """
    Upsample a reduced level back to `shape`.

    Zero insertion followed by the doubled binomial kernel; mirror boundaries
    keep the even/odd tap pattern, so constants are reproduced exactly.
    """
    upsampled = np.zeros(shape)
    upsampled[::2, ::2] = values
    kernel = 2.0 * KERNEL
    upsampled = ndimage.convolve1d(upsampled, kernel, axis=0, mode='mirror')
    return ndimage.convolve1d(upsampled, kernel, axis=1, mode='mirror')


def band_center_frequency(ppd: float, level: int) -> float:
    """Octave rule: Nyquist / 2^(level+1), in cpd"""
    return (ppd / 2.0) / 2.0 ** (level + 1)


def build_pyramid(
    patch: Union[LuminanceImage, np.ndarray],
    vc: ViewingConditions,
    n_levels: int = ContrastConfig.DEFAULT_LEVELS,
    ppd: Optional[float] = None
) -> ContrastPyramid:
    """
    Band-limited (Peli) contrast of a luminance patch.

    C_i = (G_i - expand(G_{i+1})) / (expand(G_{i+1}) + L_floor), L_floor = black + 0.01

    Args:
        patch: Luminance in cd/m^2
        vc: Viewing conditions (black level, ppd)
        n_levels: Number of band-pass levels
        ppd: Optional pixels-per-degree override

    Returns:
        ContrastPyramid with physical contrast filled in
    """
    values = patch.values if isinstance(patch, LuminanceImage) else np.asarray(patch, dtype=np.float64)
    if values.ndim != 2:
        raise InputError(f"Patch must be 2-D, got shape {values.shape}")
    if n_levels < 1:
        raise InputError(f"Pyramid needs at least one level, got {n_levels}")
    if min(values.shape) < 2 ** n_levels:
        raise InputError(f"Patch {values.shape} too small for {n_levels} levels (side >= {2 ** n_levels})")

    ppd = vc.pixels_per_degree if ppd is None else ppd
    l_floor = vc.black_level + ContrastConfig.L_FLOOR_OFFSET

    gaussian = [values]
    for _ in range(n_levels):
        gaussian.append(reduce(gaussian[-1]))

    bands = []
    for i in range(n_levels):
        local_mean = expand(gaussian[i + 1], gaussian[i].shape)
        physical = (gaussian[i] - local_mean) / (local_mean + l_floor)
        bands.append(ContrastBand(
            level=i,
            center_freq=band_center_frequency(ppd, i),
            physical=physical,
            local_mean=local_mean,
        ))

    return ContrastPyramid(bands=bands, gaussian=gaussian, l_floor=l_floor, ppd=ppd)


def normalize_band(
    contrast: np.ndarray,
    f_spatial: float,
    adapt_luminance: np.ndarray,
    csf,
    f_temporal: FieldLike = 0.0,
    eccentricity: FieldLike = 0.0
) -> np.ndarray:
    """C_n = C * S(f, f_t, L_adapt, e), all fields broadcast against C"""
    return contrast * csf.evaluate(f_spatial, f_temporal, adapt_luminance, eccentricity)


def _band_field(values: FieldLike, level: int) -> FieldLike:
    if np.ndim(values) == 0:
        return values
    step = 2 ** level
    return np.asarray(values)[::step, ::step]


def normalize(
    pyramid: ContrastPyramid,
    vc: ViewingConditions,
    csf,
    velocity: FieldLike = 0.0,
    eccentricity: FieldLike = 0.0
) -> ContrastPyramid:
    """
    CSF-normalize every band in place.

    Adapting luminance is the expanded next-coarser level (floored at L_floor);
    temporal frequency follows the drifting-grating relation f_t = v * f_i.

    Args:
        pyramid: Output of build_pyramid
        vc: Viewing conditions
        csf: Any model exposing evaluate(f, f_t, L, e)
        velocity: Retinal speed in deg/s, scalar or full-resolution field
        eccentricity: Degrees, scalar or full-resolution field

    Returns:
        The same pyramid with `normalized` set on each band
    """
    for band in pyramid.bands:
        adapt = np.maximum(band.local_mean, pyramid.l_floor)
        f_temporal = np.multiply(_band_field(velocity, band.level), band.center_freq)
        band.normalized = normalize_band(
            band.physical,
            band.center_freq,
            adapt,
            csf,
            f_temporal=f_temporal,
            eccentricity=_band_field(eccentricity, band.level),
        )
    return pyramid


def mask(
    normalized: np.ndarray,
    alpha: float = ContrastConfig.ALPHA,
    beta: float = ContrastConfig.BETA
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Neighborhood masking within one band.

    M(p) = mean over q != p of |C_n(q)|^beta (0 for a single position)
    C_t  = sign(C_n) * |C_n|^alpha / (1 + M)

    Returns:
        (C_t, M)
    """
    c_n = np.asarray(normalized, dtype=np.float64)
    magnitude = np.abs(c_n)
    powered = np.power(magnitude, beta)

    n = c_n.size
    if n <= 1:
        mask_term = np.zeros_like(c_n)
    else:
        mask_term = (powered.sum() - powered) / (n - 1)

    masked = np.sign(c_n) * np.power(magnitude, alpha) / (1.0 + mask_term)
    return masked, mask_term


def mask_pyramid(
    pyramid: ContrastPyramid,
    alpha: float = ContrastConfig.ALPHA,
    beta: float = ContrastConfig.BETA
) -> ContrastPyramid:
    for band in pyramid.bands:
        if band.normalized is None:
            raise InputError("Pyramid must be normalized before masking")
        band.masked, band.mask_term = mask(band.normalized, alpha, beta)
    return pyramid
