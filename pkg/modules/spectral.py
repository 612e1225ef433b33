"""
Frequency attenuation profiling
Radially averaged spectra, per-operator attenuation curves, Gaussian falloff fitting
and analytic surrogate upsamplers
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft, ndimage
from scipy.signal import windows
from tqdm import tqdm

from config import SpectralConfig, get_thread_count
from modules.errors import HvpfWarning, InputError
from modules.viewing import LuminanceImage

ImageLike = Union[LuminanceImage, np.ndarray]

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _as_array(image: ImageLike) -> np.ndarray:
    if isinstance(image, LuminanceImage):
        return image.values
    values = np.asarray(image, dtype=np.float64)
    if values.ndim != 2:
        raise InputError(f"Expected a 2-D image, got shape {values.shape}")
    return values


@dataclass(frozen=True)
class RadialSpectrum:
    """Radially averaged Fourier magnitude; frequencies in cycles/pixel on [0, 0.5]"""

    bin_freqs: np.ndarray
    magnitudes: np.ndarray


def radial_average(image: ImageLike) -> RadialSpectrum:
    """
    Radially averaged 2D Fourier magnitude of an image.

    The image is mean-subtracted and Hann-windowed before the transform.
    Magnitudes are averaged over floor(min(w, h) / 2) annuli of equal width
    in normalized frequency.

    Args:
        image: LuminanceImage or 2-D array, at least 8x8

    Returns:
        RadialSpectrum with bin centers and mean magnitudes
    """
    values = _as_array(image)
    height, width = values.shape
    if min(height, width) < SpectralConfig.MIN_IMAGE_SIDE:
        raise InputError(
            f"Image must be at least {SpectralConfig.MIN_IMAGE_SIDE}x{SpectralConfig.MIN_IMAGE_SIDE}, "
            f"got {width}x{height}"
        )

    centered = values - values.mean()
    window = np.outer(windows.hann(height, sym=False), windows.hann(width, sym=False))
    magnitude = np.abs(fft.fft2(centered * window))

    fy = fft.fftfreq(height)
    fx = fft.fftfreq(width)
    radius = np.hypot(fy[:, None], fx[None, :])

    n_bins = min(height, width) // 2
    bin_index = np.floor(radius * (2 * n_bins)).astype(np.int64)
    inside = bin_index < n_bins

    counts = np.bincount(bin_index[inside], minlength=n_bins)
    sums = np.bincount(bin_index[inside], weights=magnitude[inside], minlength=n_bins)
    magnitudes = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)

    bin_freqs = (np.arange(n_bins) + 0.5) / (2 * n_bins)
    return RadialSpectrum(bin_freqs=bin_freqs, magnitudes=magnitudes)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def cubic_kernel(x: np.ndarray, a: float = SpectralConfig.BICUBIC_A) -> np.ndarray:
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom"""
    x = np.abs(x)
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def box_kernel(x: np.ndarray) -> np.ndarray:
    return ((x >= -0.5) & (x < 0.5)).astype(np.float64)


KERNELS = {
    'bicubic': (cubic_kernel, 4.0),
    'box': (box_kernel, 1.0),
}


def _resize_matrix(in_len: int, out_len: int, kernel: Callable, support: float) -> np.ndarray:
    """(out_len, in_len) resampling matrix; kernel stretched when downscaling, edges replicated"""
    scale = out_len / in_len
    kernel_scale = min(scale, 1.0)
    width = support / kernel_scale

    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    taps = int(math.ceil(width)) + 2
    left = np.floor(centers - width / 2.0).astype(np.int64)
    indices = left[:, None] + np.arange(taps)[None, :]

    weights = kernel_scale * kernel(kernel_scale * (centers[:, None] - indices))
    weights /= weights.sum(axis=1, keepdims=True)
    indices = np.clip(indices, 0, in_len - 1)

    matrix = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(matrix, (rows, indices.ravel()), weights.ravel())
    return matrix


def resize(values: np.ndarray, shape: Tuple[int, int], kernel: str = 'bicubic') -> np.ndarray:
    """Separable resize to (height, width) with an antialiased bicubic or box kernel"""
    kernel_fn, support = KERNELS[kernel]
    rows = _resize_matrix(values.shape[0], shape[0], kernel_fn, support)
    cols = _resize_matrix(values.shape[1], shape[1], kernel_fn, support)
    return rows @ values @ cols.T


def resample(values: np.ndarray, k: int, kernel: str = 'bicubic') -> np.ndarray:
    """Downscale by k then upscale back to the original size with the same kernel"""
    height, width = values.shape
    low = (max(1, int(round(height / k))), max(1, int(round(width / k))))
    return resize(resize(values, low, kernel), (height, width), kernel)


@dataclass(frozen=True)
class SurrogateOperator:
    """
    Analytic stand-in for an upsampler, with a known frequency response.

    kind: identity | gaussian_blur (sigma px) | bicubic_down_up (k) | box_down_up (k)
    """

    kind: str
    sigma: Optional[float] = None
    k: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ('identity', 'gaussian_blur', 'bicubic_down_up', 'box_down_up'):
            raise InputError(f"Unknown operator kind '{self.kind}'")
        if self.kind == 'gaussian_blur' and not (self.sigma is not None and self.sigma > 0):
            raise InputError(f"Gaussian blur needs sigma > 0, got {self.sigma}")
        if self.kind in ('bicubic_down_up', 'box_down_up') and self.k not in SpectralConfig.VALID_SCALES:
            raise InputError(f"Resampling factor must be one of {SpectralConfig.VALID_SCALES}, got {self.k}")

    @classmethod
    def parse(cls, text: str) -> "SurrogateOperator":
        """Parse 'identity', 'blur:SIGMA', 'bicubic:K' or 'box:K'"""
        name, _, arg = text.strip().partition(':')
        try:
            if name == 'identity' and not arg:
                return cls('identity')
            if name == 'blur':
                return cls('gaussian_blur', sigma=float(arg))
            if name == 'bicubic':
                return cls('bicubic_down_up', k=int(arg))
            if name == 'box':
                return cls('box_down_up', k=int(arg))
        except ValueError as e:
            if isinstance(e, InputError):
                raise
            raise InputError(f"Bad operator argument in '{text}'") from e
        raise InputError(f"Unknown operator '{text}' (expected identity|blur:s|bicubic:k|box:k)")

    @property
    def scale_factor(self) -> int:
        return self.k if self.k is not None else 1

    def apply(self, image: ImageLike) -> np.ndarray:
        values = _as_array(image)
        if self.kind == 'identity':
            return values.copy()
        if self.kind == 'gaussian_blur':
            return ndimage.gaussian_filter(values, self.sigma, mode='reflect')
        if self.kind == 'bicubic_down_up':
            return resample(values, self.k, 'bicubic')
        return resample(values, self.k, 'box')


# ---------------------------------------------------------------------------
# Gaussian falloff model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FalloffFit:
    """Parameters of a'(f) = exp(-(f - b)^2 / (2 a^2)) / (a sqrt(2 pi)) + c"""

    a: float
    b: float
    c: float
    rms: float = 0.0
    coarse: bool = False

    @property
    def params(self) -> Tuple[float, float, float]:
        return (self.a, self.b, self.c)

    def evaluate(self, f):
        return eval_falloff(self.params, f)

    def to_dict(self) -> dict:
        return {'a': self.a, 'b': self.b, 'c': self.c, 'rms': self.rms, 'coarse': self.coarse}

    @classmethod
    def from_dict(cls, d: dict) -> "FalloffFit":
        return cls(float(d['a']), float(d['b']), float(d['c']),
                   float(d.get('rms', 0.0)), bool(d.get('coarse', False)))


def eval_falloff(params, f):
    """
    Evaluate the Gaussian falloff at frequency f.

    Args:
        params: (a, b, c) tuple or FalloffFit; a > 0
        f: Scalar or array of frequencies (same unit the curve was fitted in)

    Returns:
        Attenuation value(s); tends to c as f -> infinity
    """
    if isinstance(params, FalloffFit):
        params = params.params
    a, b, c = (float(p) for p in params)
    if not a > 0:
        raise InputError(f"Falloff width a must be positive, got {a}")

    f_arr = np.asarray(f, dtype=np.float64)
    with np.errstate(over='ignore', invalid='ignore'):
        gauss = np.exp(-np.square(f_arr - b) / (2.0 * a * a)) / (a * SQRT_2PI)
    gauss = np.where(np.isinf(f_arr), 0.0, gauss)
    value = gauss + c
    return float(value) if value.ndim == 0 else value


def _falloff_jacobian(theta: np.ndarray, f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b, c = theta
    gauss = np.exp(-np.square(f - b) / (2.0 * a * a)) / (a * SQRT_2PI)
    jac = np.empty((f.size, 3))
    jac[:, 0] = gauss * (np.square(f - b) / a ** 3 - 1.0 / a)
    jac[:, 1] = gauss * (f - b) / (a * a)
    jac[:, 2] = 1.0
    return gauss + c, jac


def _project(theta: np.ndarray) -> np.ndarray:
    return np.array([
        max(theta[0], SpectralConfig.MIN_A),
        max(theta[1], 0.0),
        min(max(theta[2], 0.0), 1.0),
    ])


def _free_parameters(theta: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Parameters not held at a bound by a descent direction pointing outside it"""
    at_lower = np.array([theta[0] <= SpectralConfig.MIN_A, theta[1] <= 0.0, theta[2] <= 0.0])
    at_upper = np.array([False, False, theta[2] >= 1.0])
    return ~((at_lower & (gradient <= 0.0)) | (at_upper & (gradient >= 0.0)))


def _gradient_cosine(jac: np.ndarray, residual: np.ndarray) -> float:
    """Largest |cos| between a Jacobian column and the residual"""
    col_norms = np.linalg.norm(jac, axis=0)
    res_norm = float(np.linalg.norm(residual))
    if res_norm == 0.0:
        return 0.0
    usable = col_norms > 0.0
    if not usable.any():
        return 0.0
    return float(np.max(np.abs(jac[:, usable].T @ residual) / (col_norms[usable] * res_norm)))


def _grid_search(f: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, float]:
    """Coarse (a, b) grid with the closed-form clipped least-squares c"""
    a_vals = np.logspace(*SpectralConfig.GRID_A)
    b_vals = np.linspace(*SpectralConfig.GRID_B)
    a_grid, b_grid = np.meshgrid(a_vals, b_vals, indexing='ij')

    gauss = np.exp(-np.square(f[None, None, :] - b_grid[..., None]) / (2.0 * np.square(a_grid[..., None])))
    gauss /= (a_grid[..., None] * SQRT_2PI)
    c_grid = np.clip(np.mean(y - gauss, axis=-1), 0.0, 1.0)
    cost = np.sum(np.square(y - gauss - c_grid[..., None]), axis=-1)

    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    return np.array([a_grid[i, j], b_grid[i, j], c_grid[i, j]]), float(cost[i, j])


def fit_gaussian_falloff(
    freqs: Sequence[float],
    samples: Sequence[float],
    valid: Optional[Sequence[bool]] = None
) -> FalloffFit:
    """
    Least-squares fit of the Gaussian falloff to attenuation samples.

    Coarse grid over (a, b, c) followed by damped Gauss-Newton refinement
    (Marquardt scaling) with a > 0, b >= 0, c in [0, 1]. Parameters pinned at a
    bound are frozen for the step. Refinement stops on an exact fit, a tiny
    gradient, step or relative cost drop, or when no damped step descends. When refinement
    hits the iteration cap the best grid candidate is returned flagged coarse.

    Args:
        freqs: Sample frequencies
        samples: Attenuation samples
        valid: Optional mask of usable bins

    Returns:
        FalloffFit with RMS residual
    """
    f = np.asarray(freqs, dtype=np.float64)
    y = np.asarray(samples, dtype=np.float64)
    if valid is not None:
        mask = np.asarray(valid, dtype=bool)
        f, y = f[mask], y[mask]
    if f.size < SpectralConfig.MIN_FIT_BINS:
        raise InputError(f"Need at least {SpectralConfig.MIN_FIT_BINS} valid bins to fit, got {f.size}")
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
        raise InputError("Fit inputs must be finite")

    grid_theta, grid_cost = _grid_search(f, y)
    n = f.size

    theta, cost = grid_theta, grid_cost
    lam = SpectralConfig.FIT_LAMBDA0
    converged = False

    for _ in range(SpectralConfig.FIT_MAX_ITER):
        if cost / n <= SpectralConfig.FIT_RMS_TOL ** 2:
            converged = True
            break

        model, jac = _falloff_jacobian(theta, f)
        residual = y - model
        gradient = jac.T @ residual
        free = _free_parameters(theta, gradient)
        if not free.any() or _gradient_cosine(jac[:, free], residual) <= SpectralConfig.FIT_GTOL:
            converged = True
            break

        jac_free = jac[:, free]
        jtj = jac_free.T @ jac_free
        damping = np.diag(np.maximum(np.diag(jtj), 1e-12))

        improved = False
        while lam <= SpectralConfig.FIT_LAMBDA_MAX:
            delta = np.zeros(3)
            try:
                delta[free] = np.linalg.solve(jtj + lam * damping, gradient[free])
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = _project(theta + delta)
            candidate_cost = float(np.sum(np.square(y - eval_falloff(candidate, f))))
            if candidate_cost < cost:
                improved = True
                break
            lam *= 10.0

        if not improved:
            # No descent direction left: stationary point
            converged = True
            break

        relative_drop = (cost - candidate_cost) / max(cost, 1e-300)
        step = float(np.linalg.norm(candidate - theta))
        theta, cost = candidate, candidate_cost
        lam = max(lam / 10.0, 1e-15)
        if (relative_drop < SpectralConfig.FIT_REL_TOL
                or step <= SpectralConfig.FIT_STEP_TOL * (np.linalg.norm(theta) + SpectralConfig.FIT_STEP_TOL)):
            converged = True
            break

    if not converged:
        warnings.warn("Falloff refinement did not converge; returning coarse grid fit", HvpfWarning)
        a, b, c = grid_theta
        return FalloffFit(float(a), float(b), float(c), math.sqrt(grid_cost / n), coarse=True)

    a, b, c = theta
    return FalloffFit(float(a), float(b), float(c), math.sqrt(cost / n), coarse=False)


# ---------------------------------------------------------------------------
# Attenuation curves
# ---------------------------------------------------------------------------

@dataclass
class AttenuationCurve:
    """Aggregated attenuation samples of one upsampler at one scale factor"""

    bin_freqs: np.ndarray
    samples: np.ndarray
    valid: np.ndarray
    fit: Optional[FalloffFit] = None
    scale_factor_k: int = 1
    aggregate: str = 'mean'
    n_images: int = 0

    def to_dict(self) -> dict:
        return {
            'k': int(self.scale_factor_k),
            'bin_freqs': [float(v) for v in self.bin_freqs],
            'samples': [float(v) for v in self.samples],
            'valid': [bool(v) for v in self.valid],
            'aggregate': self.aggregate,
            'n_images': int(self.n_images),
            'fit': self.fit.to_dict() if self.fit is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttenuationCurve":
        freqs = np.asarray(d['bin_freqs'], dtype=np.float64)
        samples = np.asarray(d['samples'], dtype=np.float64)
        if freqs.shape != samples.shape or freqs.size == 0:
            raise InputError("Curve bin_freqs and samples must be nonempty and of equal length")
        valid = np.asarray(d.get('valid', [True] * freqs.size), dtype=bool)
        fit = FalloffFit.from_dict(d['fit']) if d.get('fit') else None
        return cls(
            bin_freqs=freqs,
            samples=samples,
            valid=valid,
            fit=fit,
            scale_factor_k=int(d.get('k', 1)),
            aggregate=d.get('aggregate', 'mean'),
            n_images=int(d.get('n_images', 0)),
        )


def _image_ratio(pair: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-bin clamped ratio of reconstructed to reference magnitude; NaN where invalid"""
    reference, reconstruction = pair
    ref = radial_average(reference)
    rec = radial_average(reconstruction)

    height, width = reference.shape
    window_energy = math.sqrt(
        np.sum(np.square(windows.hann(height, sym=False))) * np.sum(np.square(windows.hann(width, sym=False)))
    )
    rms = float(np.std(reference))
    if rms <= np.finfo(np.float64).eps * max(1.0, float(np.abs(reference).max())):
        return ref.bin_freqs, np.full(ref.bin_freqs.shape, np.nan)

    floor = SpectralConfig.BIN_FLOOR_REL * rms * window_energy
    valid = ref.magnitudes > floor
    ratio = np.full(ref.bin_freqs.shape, np.nan)
    ratio[valid] = np.clip(rec.magnitudes[valid] / ref.magnitudes[valid], 0.0, SpectralConfig.RATIO_CLAMP)
    return ref.bin_freqs, ratio


def _on_grid(freqs: np.ndarray, ratio: np.ndarray, grid: np.ndarray) -> np.ndarray:
    if freqs.shape == grid.shape and np.allclose(freqs, grid):
        return ratio
    usable = np.isfinite(ratio)
    out = np.full(grid.shape, np.nan)
    if usable.sum() < 2:
        return out
    inside = (grid >= freqs[usable].min()) & (grid <= freqs[usable].max())
    out[inside] = np.interp(grid[inside], freqs[usable], ratio[usable])
    return out


def attenuation_curve(
    source: Union[SurrogateOperator, Iterable[Tuple[ImageLike, ImageLike]]],
    corpus: Optional[List[ImageLike]] = None,
    k: Optional[int] = None,
    percentile: Optional[float] = None,
    fit: bool = True,
    threads: Optional[int] = None,
    progress: bool = False
) -> AttenuationCurve:
    """
    Aggregate attenuation curve of an upsampler over a corpus.

    Args:
        source: SurrogateOperator applied to every corpus image, or an iterable
            of (reference, reconstruction) pairs produced elsewhere
        corpus: Reference images for the operator path
        k: Scale factor recorded with the curve (must agree with a resampling operator)
        percentile: Aggregate with this per-bin percentile instead of the mean
        fit: Fit the Gaussian falloff to the valid bins
        threads: Worker count override
        progress: Show a tqdm bar

    Returns:
        AttenuationCurve
    """
    if isinstance(source, SurrogateOperator):
        if not corpus:
            raise InputError("Corpus must contain at least one image")
        if k is None:
            k = source.scale_factor
        elif source.k is not None and k != source.k:
            raise InputError(f"Scale factor {k} disagrees with operator factor {source.k}")
        references = [_as_array(img) for img in corpus]
        pairs = [(ref, None) for ref in references]
        operator = source
    else:
        pairs = [(_as_array(ref), _as_array(rec)) for ref, rec in source]
        if not pairs:
            raise InputError("At least one (reference, reconstruction) pair is required")
        for ref, rec in pairs:
            if ref.shape != rec.shape:
                raise InputError(f"Pair size mismatch: {ref.shape} vs {rec.shape}")
        operator = None
        k = 1 if k is None else k

    if percentile is not None and not 0 <= percentile <= 100:
        raise InputError(f"Percentile must lie in [0, 100], got {percentile}")

    def measure(pair):
        reference, reconstruction = pair
        if operator is not None:
            reconstruction = operator.apply(reference)
        return _image_ratio((reference, reconstruction))

    with ThreadPoolExecutor(max_workers=get_thread_count(threads)) as pool:
        results = list(tqdm(pool.map(measure, pairs), total=len(pairs),
                            desc="Measuring attenuation", disable=not progress))

    grid = min((freqs for freqs, _ in results), key=len)
    stacked = np.vstack([_on_grid(freqs, ratio, grid) for freqs, ratio in results])

    valid = np.any(np.isfinite(stacked), axis=0)
    samples = np.zeros(grid.shape)
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', RuntimeWarning)
        if percentile is None:
            samples[valid] = np.nanmean(stacked[:, valid], axis=0)
            aggregate = 'mean'
        else:
            samples[valid] = np.nanpercentile(stacked[:, valid], percentile, axis=0)
            aggregate = f"p{percentile:g}"

    curve = AttenuationCurve(
        bin_freqs=grid,
        samples=samples,
        valid=valid,
        scale_factor_k=int(k),
        aggregate=aggregate,
        n_images=len(pairs),
    )
    if fit:
        curve.fit = fit_gaussian_falloff(grid, samples, valid)
    return curve
