"""
Perceptual variant scheduling
Tolerable attenuation per patch, cosine-similarity variant selection and cost accounting
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import ContrastConfig, SchedulerConfig, SpectralConfig, get_thread_count
from modules.contrast import ContrastPyramid, build_pyramid, mask_pyramid, normalize
from modules.errors import ConfigurationError, HvpfWarning, InputError
from modules.motion import FlowField, block_match, patch_velocity
from modules.spectral import FalloffFit, eval_falloff
from modules.viewing import LuminanceImage, ViewingConditions, eccentricity_field, retinal_velocity


# ---------------------------------------------------------------------------
# Variant profiles
# ---------------------------------------------------------------------------

def band_frequencies(levels: int = ContrastConfig.T_BANDS, k: int = 1) -> List[float]:
    """
    Ascending analysis band centers in cycles/pixel of the high-resolution raster.

    Pyramid level i of the low-resolution input of a xk upsampler sits at
    0.25 / 2^i cycles per low-res pixel, i.e. 0.25 / (k * 2^i) on the output raster.
    """
    if levels < 1 or k < 1:
        raise ConfigurationError(f"levels and k must be >= 1, got {levels}, {k}")
    return [0.25 / (k * 2 ** i) for i in reversed(range(levels))]


@dataclass
class VariantProfile:
    """One upsampler variant: cost per patch and attenuation at the analysis bands"""

    id: int
    name: str
    cost_flops: float
    t_hat: np.ndarray
    atten: Optional[FalloffFit] = None
    samples: Optional[Tuple[List[float], List[float]]] = None
    baseline_full: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.cost_flops) and self.cost_flops > 0):
            raise ConfigurationError(f"Variant {self.id}: cost_flops must be positive, got {self.cost_flops}")
        t_hat = np.asarray(self.t_hat, dtype=np.float64)
        if t_hat.shape != (ContrastConfig.T_BANDS,) or not np.all(np.isfinite(t_hat)):
            raise ConfigurationError(f"Variant {self.id}: t_hat must hold {ContrastConfig.T_BANDS} finite values")
        self.t_hat = np.clip(t_hat, 0.0, SchedulerConfig.T_HAT_CLAMP)

    @classmethod
    def from_dict(cls, d: dict, bands: Sequence[float]) -> "VariantProfile":
        """
        Build from a profile document entry.

        Accepts atten: {a, b, c}, samples: {freqs, values} or an explicit t_hat;
        t_hat is evaluated at `bands` when not given.
        """
        atten = FalloffFit.from_dict(d['atten']) if d.get('atten') else None
        samples = None
        if d.get('samples'):
            samples = (list(d['samples']['freqs']), list(d['samples']['values']))

        if d.get('t_hat') is not None:
            t_hat = np.asarray(d['t_hat'], dtype=np.float64)
        elif atten is not None:
            t_hat = eval_falloff(atten, np.asarray(bands, dtype=np.float64))
        elif samples is not None:
            freqs, values = (np.asarray(s, dtype=np.float64) for s in samples)
            if freqs.size < 2 or freqs.shape != values.shape or np.any(np.diff(freqs) <= 0):
                raise ConfigurationError(f"Variant {d.get('id')}: samples need >= 2 increasing frequencies")
            t_hat = np.interp(bands, freqs, values)
        else:
            raise ConfigurationError(f"Variant {d.get('id')}: needs atten, samples or t_hat")

        return cls(
            id=int(d['id']),
            name=str(d.get('name', f"variant_{d['id']}")),
            cost_flops=float(d['cost_flops']),
            t_hat=t_hat,
            atten=atten,
            samples=samples,
            baseline_full=bool(d.get('baseline_full', False)),
        )

    def to_dict(self) -> dict:
        d = {
            'id': self.id,
            'name': self.name,
            'cost_flops': self.cost_flops,
            't_hat': [float(v) for v in self.t_hat],
        }
        if self.atten is not None:
            d['atten'] = {'a': self.atten.a, 'b': self.atten.b, 'c': self.atten.c}
        if self.samples is not None:
            d['samples'] = {'freqs': list(self.samples[0]), 'values': list(self.samples[1])}
        if self.baseline_full:
            d['baseline_full'] = True
        return d


class ProfileSet:
    """
    Validated collection of variants.

    At least two variants with distinct ids and costs. The baseline is the variant
    flagged baseline_full (or the most expensive one when none is flagged) and must
    be the most expensive.
    """

    def __init__(self, variants: Sequence[VariantProfile]):
        variants = list(variants)
        if not variants:
            raise ConfigurationError("Profile set is empty")
        if len(variants) < 2:
            raise ConfigurationError("Profile set needs at least two variants")

        ids = [v.id for v in variants]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"Duplicate variant ids: {ids}")
        costs = [v.cost_flops for v in variants]
        if len(set(costs)) != len(costs):
            raise ConfigurationError(f"Variant costs must be distinct: {costs}")

        # Ascending cost order drives tie-breaking and heatmap shades
        self.variants = sorted(variants, key=lambda v: v.cost_flops)

        flagged = [v for v in variants if v.baseline_full]
        if len(flagged) > 1:
            raise ConfigurationError(f"More than one baseline_full variant: {[v.id for v in flagged]}")
        most_expensive = self.variants[-1]
        if flagged and flagged[0] is not most_expensive:
            raise ConfigurationError(f"Baseline variant {flagged[0].id} is not the most expensive")
        self.baseline = most_expensive

    @classmethod
    def from_list(cls, entries: Sequence[dict], bands: Sequence[float]) -> "ProfileSet":
        return cls([VariantProfile.from_dict(e, bands) for e in entries])

    def __len__(self) -> int:
        return len(self.variants)

    def __iter__(self):
        return iter(self.variants)

    @property
    def cheapest(self) -> VariantProfile:
        return self.variants[0]

    def by_id(self, variant_id: int) -> VariantProfile:
        for v in self.variants:
            if v.id == variant_id:
                return v
        raise KeyError(variant_id)

    def rank(self, variant_id: int) -> int:
        """Position in ascending cost order"""
        return [v.id for v in self.variants].index(variant_id)

    def to_list(self) -> List[dict]:
        return [v.to_dict() for v in self.variants]


# ---------------------------------------------------------------------------
# Tolerable attenuation and selection
# ---------------------------------------------------------------------------

def tolerable_contrast(
    c_n: Union[float, np.ndarray],
    mask_term: Union[float, np.ndarray],
    alpha: float = ContrastConfig.ALPHA
) -> Union[float, np.ndarray]:
    """
    Lowest output contrast still within one JND of the input.

    C'_n = max(0, C_n^alpha - (1 + M))^(1/alpha); C_n is taken as a magnitude.
    """
    c = np.abs(np.asarray(c_n, dtype=np.float64))
    m = np.asarray(mask_term, dtype=np.float64)
    result = np.power(np.maximum(0.0, np.power(c, alpha) - (1.0 + m)), 1.0 / alpha)
    return float(result) if result.ndim == 0 else result


def band_tolerance(
    c_n: np.ndarray,
    mask_term: np.ndarray,
    alpha: float = ContrastConfig.ALPHA,
    eps_c: float = SchedulerConfig.EPS_C
) -> float:
    """Patch-level tolerable attenuation of one band: max over positions of C'_n / C_n"""
    c = np.abs(np.asarray(c_n, dtype=np.float64))
    significant = c >= eps_c
    if not np.any(significant):
        return 0.0
    ratio = tolerable_contrast(c[significant], np.asarray(mask_term)[significant], alpha) / c[significant]
    return float(np.clip(np.max(ratio), 0.0, 1.0))


def tolerable_attenuation(
    pyramid: ContrastPyramid,
    alpha: float = ContrastConfig.ALPHA,
    eps_c: float = SchedulerConfig.EPS_C
) -> np.ndarray:
    """
    Tolerable attenuation vector of a masked pyramid.

    Uses the three finest levels, ordered by ascending frequency
    (coarsest band first), to line up with profile t_hat vectors.

    Args:
        pyramid: Normalized and masked pyramid with >= 3 levels
        alpha: Masking exponent
        eps_c: Contrast floor below which a position tolerates any attenuation

    Returns:
        Array (t_1, t_2, t_3), each in [0, 1]
    """
    n_bands = ContrastConfig.T_BANDS
    if pyramid.n_levels < n_bands:
        raise InputError(f"Pyramid needs at least {n_bands} levels, got {pyramid.n_levels}")

    t = []
    for band in reversed(pyramid.bands[:n_bands]):
        if band.normalized is None or band.mask_term is None:
            raise InputError("Pyramid must be normalized and masked first")
        t.append(band_tolerance(band.normalized, band.mask_term, alpha, eps_c))
    return np.asarray(t)


def select_variant(t: Sequence[float], profiles: Union[ProfileSet, Sequence[VariantProfile]]) -> int:
    """
    Variant whose attenuation vector is most similar (cosine) to t.

    Zero t selects the cheapest variant; similarity ties within 1e-9 go to the cheaper one.
    """
    variants = sorted(profiles, key=lambda v: v.cost_flops)
    if not variants:
        raise ConfigurationError("Profile set is empty")

    t = np.asarray(t, dtype=np.float64)
    t_norm = np.linalg.norm(t)
    if t_norm == 0:
        return variants[0].id

    unit = t / t_norm
    best_id, best_sim = None, -np.inf
    for variant in variants:
        hat_norm = np.linalg.norm(variant.t_hat)
        similarity = float(unit @ variant.t_hat / hat_norm) if hat_norm > 0 else 0.0
        if best_id is None or similarity > best_sim + SchedulerConfig.TIE_EPS:
            best_id, best_sim = variant.id, similarity
    return best_id


# ---------------------------------------------------------------------------
# Patch sizing and overhead
# ---------------------------------------------------------------------------

def default_patch_size(
    k: int,
    receptive_field: Optional[int] = None,
    lowres_patch: Optional[int] = None
) -> int:
    """
    Scheduler patch side on the low-resolution raster.

    Pre-upsampled networks (receptive field R on the output) use R / k, rounded up
    with a warning when not divisible; low-res input networks use their patch P.
    """
    if k not in SpectralConfig.VALID_SCALES:
        raise ConfigurationError(f"Scale factor must be one of {SpectralConfig.VALID_SCALES}, got {k}")
    if (receptive_field is None) == (lowres_patch is None):
        raise ConfigurationError("Give exactly one of receptive_field or lowres_patch")

    if lowres_patch is not None:
        if lowres_patch <= 0:
            raise ConfigurationError(f"lowres_patch must be positive, got {lowres_patch}")
        return int(lowres_patch)

    if receptive_field <= 0:
        raise ConfigurationError(f"receptive_field must be positive, got {receptive_field}")
    size = math.ceil(receptive_field / k)
    if receptive_field % k:
        warnings.warn(f"Receptive field {receptive_field} not divisible by {k}; patch rounded up to {size}",
                      HvpfWarning)
    return size


def overhead_flops(patch_size: int) -> float:
    """Scheduler FLOPs per patch, linear in patch area through the two measured anchors"""
    (s0, f0), (s1, f1) = SchedulerConfig.OVERHEAD_ANCHORS
    slope = (f1 - f0) / (s1 * s1 - s0 * s0)
    return f0 + (patch_size * patch_size - s0 * s0) * slope


# ---------------------------------------------------------------------------
# Image scheduling
# ---------------------------------------------------------------------------

@dataclass
class QualityMap:
    """Per-patch variant decisions over one image"""

    grid: np.ndarray  # (rows, cols) variant ids
    patch_size_px: int
    image_shape: Tuple[int, int]  # (height, width)
    t_vectors: np.ndarray = field(repr=False)  # (rows, cols, 3)
    cost_total: float = 0.0
    cost_baseline: float = 0.0
    eccentricity: Optional[np.ndarray] = field(default=None, repr=False)
    velocity: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_patches(self) -> int:
        return int(self.grid.size)

    @property
    def ratio(self) -> float:
        return self.cost_total / self.cost_baseline

    def patch_costs(self, profiles: ProfileSet) -> np.ndarray:
        lookup = {v.id: v.cost_flops for v in profiles}
        return np.vectorize(lookup.__getitem__, otypes=[np.float64])(self.grid)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.grid)


def _patch_bounds(shape: Tuple[int, int], patch_size: int) -> List[Tuple[int, int, int, int]]:
    height, width = shape
    bounds = []
    for y0 in range(0, height, patch_size):
        for x0 in range(0, width, patch_size):
            bounds.append((y0, min(y0 + patch_size, height), x0, min(x0 + patch_size, width)))
    return bounds


def analyze_patch(
    patch: np.ndarray,
    vc: ViewingConditions,
    csf,
    levels: int = ContrastConfig.DEFAULT_LEVELS,
    velocity: float = 0.0,
    eccentricity: float = 0.0,
    ppd: Optional[float] = None,
    alpha: float = ContrastConfig.ALPHA,
    beta: float = ContrastConfig.BETA
) -> np.ndarray:
    """Pyramid, normalization, masking and tolerable attenuation for one patch"""
    pyramid = build_pyramid(patch, vc, levels, ppd=ppd)
    normalize(pyramid, vc, csf, velocity=velocity, eccentricity=eccentricity)
    mask_pyramid(pyramid, alpha, beta)
    return tolerable_attenuation(pyramid, alpha)


def schedule_image(
    image: Union[LuminanceImage, np.ndarray],
    vc: ViewingConditions,
    csf,
    profiles: ProfileSet,
    patch_size: int,
    gaze: Optional[Tuple[float, float]] = None,
    flow: Optional[FlowField] = None,
    levels: int = ContrastConfig.DEFAULT_LEVELS,
    scale: int = 1,
    alpha: float = ContrastConfig.ALPHA,
    beta: float = ContrastConfig.BETA,
    threads: Optional[int] = None,
    progress: bool = False
) -> QualityMap:
    """
    Select a variant for every patch of an image.

    Border patches are padded by edge replication for analysis only.
    Eccentricity is taken at each patch center, speed is the patch mean flow magnitude.

    Args:
        image: Luminance image (cd/m^2)
        vc: Viewing conditions
        csf: CSF model
        profiles: Candidate variants
        patch_size: Patch side in pixels (>= 2^levels)
        gaze: Optional (x, y) gaze position in pixels
        flow: Optional flow field (pixels/frame) for the image
        levels: Pyramid depth (>= 3)
        scale: Upsampling factor; the image is analyzed at ppd / scale
        alpha, beta: Masking exponents
        threads: Worker count override
        progress: Show a tqdm bar over patches

    Returns:
        QualityMap
    """
    values = image.values if isinstance(image, LuminanceImage) else np.asarray(image, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise InputError(f"Image must be a nonempty 2-D array, got shape {values.shape}")
    if levels < ContrastConfig.T_BANDS:
        raise ConfigurationError(f"levels must be >= {ContrastConfig.T_BANDS}, got {levels}")
    if patch_size < 2 ** levels:
        raise InputError(f"Patch size {patch_size} too small for {levels} levels (>= {2 ** levels})")

    height, width = values.shape
    if patch_size > height or patch_size > width:
        warnings.warn(f"Patch size {patch_size} exceeds the {width}x{height} image; using a single patch",
                      HvpfWarning)
        if min(height, width) < 2 ** levels:
            raise InputError(f"Image {width}x{height} too small for {levels} levels")
        bounds = [(0, height, 0, width)]
        rows, cols = 1, 1
        padded = values
        tile_h, tile_w = height, width
    else:
        rows, cols = math.ceil(height / patch_size), math.ceil(width / patch_size)
        bounds = _patch_bounds(values.shape, patch_size)
        padded = np.pad(values, ((0, rows * patch_size - height), (0, cols * patch_size - width)), mode='edge')
        tile_h = tile_w = patch_size

    ppd = vc.pixels_per_degree / scale

    if gaze is not None:
        ecc_field = eccentricity_field(gaze, (width, height), ppd)
        ecc = np.array([ecc_field[(y0 + y1 - 1) // 2, (x0 + x1 - 1) // 2] for y0, y1, x0, x1 in bounds])
    else:
        ecc = np.zeros(len(bounds))

    if flow is not None:
        flow_patch = patch_size if len(bounds) > 1 else max(height, width)
        speeds = patch_velocity(flow, flow_patch, (height, width)).ravel()
        velocity = np.asarray(retinal_velocity(speeds, vc, ppd=ppd), dtype=np.float64).reshape(-1)
    else:
        velocity = np.zeros(len(bounds))

    def run(index: int) -> np.ndarray:
        y0, _, x0, _ = bounds[index]
        patch = padded[y0:y0 + tile_h, x0:x0 + tile_w]
        return analyze_patch(patch, vc, csf, levels, float(velocity[index]), float(ecc[index]), ppd, alpha, beta)

    with ThreadPoolExecutor(max_workers=get_thread_count(threads)) as pool:
        t_list = list(tqdm(pool.map(run, range(len(bounds))), total=len(bounds),
                           desc="Scheduling patches", disable=not progress))

    t_vectors = np.asarray(t_list).reshape(rows, cols, ContrastConfig.T_BANDS)
    grid = np.array([select_variant(t, profiles) for t in t_list], dtype=np.int64).reshape(rows, cols)

    qmap = QualityMap(
        grid=grid,
        patch_size_px=patch_size,
        image_shape=(height, width),
        t_vectors=t_vectors,
        eccentricity=ecc.reshape(rows, cols),
        velocity=velocity.reshape(rows, cols),
    )
    qmap.cost_total = float(qmap.patch_costs(profiles).sum())
    qmap.cost_baseline = float(qmap.n_patches * profiles.baseline.cost_flops)
    return qmap


def schedule_sequence(
    frames: Sequence[Union[LuminanceImage, np.ndarray]],
    vc: ViewingConditions,
    csf,
    profiles: ProfileSet,
    patch_size: int,
    flows: Optional[Sequence[FlowField]] = None,
    block: Optional[int] = None,
    search_radius: Optional[int] = None,
    progress: bool = False,
    **kwargs
) -> List[QualityMap]:
    """
    Schedule every frame of a clip.

    Frame n uses the motion between frames n-1 and n; frame 0 reuses frame 1's field.
    Without external flows, block matching supplies the motion.

    Args:
        frames: At least two equally sized luminance frames
        flows: Optional per-frame flow fields (len(frames) or len(frames) - 1 pairs)
        block, search_radius: Block matching settings
        kwargs: Passed through to schedule_image

    Returns:
        One QualityMap per frame
    """
    frames = [f.values if isinstance(f, LuminanceImage) else np.asarray(f, dtype=np.float64) for f in frames]
    if len(frames) < 2:
        raise InputError(f"A clip needs at least 2 frames, got {len(frames)}")
    shape = frames[0].shape
    for i, frame in enumerate(frames):
        if frame.shape != shape:
            raise InputError(f"Frame {i} has shape {frame.shape}, expected {shape}")

    if flows is None:
        match_kwargs = {}
        if block is not None:
            match_kwargs['block'] = block
        if search_radius is not None:
            match_kwargs['search_radius'] = search_radius
        pair_flows = [block_match(frames[i - 1], frames[i], **match_kwargs)
                      for i in tqdm(range(1, len(frames)), desc="Estimating motion", disable=not progress)]
        flows = [pair_flows[0]] + pair_flows
    else:
        flows = list(flows)
        if len(flows) == len(frames) - 1:
            flows = [flows[0]] + flows
        if len(flows) != len(frames):
            raise InputError(f"Got {len(flows)} flow fields for {len(frames)} frames")

    return [
        schedule_image(frame, vc, csf, profiles, patch_size, flow=flow, **kwargs)
        for frame, flow in tqdm(list(zip(frames, flows)), desc="Scheduling frames", disable=not progress)
    ]


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def cost_report(qmap: QualityMap, profiles: ProfileSet) -> Dict:
    """
    Cost accounting for a quality map.

    Returns:
        Dict with totals, ratio, per-variant histogram and scheduler overhead
    """
    counts = {int(k): int(v) for k, v in zip(*np.unique(qmap.grid, return_counts=True))}
    histogram = [
        {
            'id': v.id,
            'name': v.name,
            'cost_flops': v.cost_flops,
            'count': counts.get(v.id, 0),
            'fraction': counts.get(v.id, 0) / qmap.n_patches,
        }
        for v in profiles
    ]
    per_patch_overhead = overhead_flops(qmap.patch_size_px)
    overhead_total = qmap.n_patches * per_patch_overhead

    return {
        'image_width': int(qmap.image_shape[1]),
        'image_height': int(qmap.image_shape[0]),
        'patch_size': int(qmap.patch_size_px),
        'grid_rows': int(qmap.grid.shape[0]),
        'grid_cols': int(qmap.grid.shape[1]),
        'n_patches': qmap.n_patches,
        'cost_total': qmap.cost_total,
        'cost_baseline': qmap.cost_baseline,
        'ratio': qmap.ratio,
        'baseline_id': profiles.baseline.id,
        'histogram': histogram,
        'overhead_flops_per_patch': per_patch_overhead,
        'overhead_flops': overhead_total,
        'ratio_with_overhead': (qmap.cost_total + overhead_total) / qmap.cost_baseline,
    }


def heatmap_levels(qmap: QualityMap, profiles: ProfileSet) -> np.ndarray:
    """8-bit gray per pixel: cheapest variant 0, most expensive 255, linear in cost rank"""
    n = len(profiles)
    shades = {v.id: int(round(255 * profiles.rank(v.id) / (n - 1))) for v in profiles}
    gray = np.vectorize(shades.__getitem__, otypes=[np.uint8])(qmap.grid)

    height, width = qmap.image_shape
    if qmap.grid.size == 1:
        return np.full((height, width), gray[0, 0], dtype=np.uint8)
    size = qmap.patch_size_px
    return np.kron(gray, np.ones((size, size), dtype=np.uint8))[:height, :width]
