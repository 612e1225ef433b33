"""
Motion estimation for the temporal extension
Block-matching flow, per-patch speeds and flow file I/O (.flo binary, CSV fallback)
"""

import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from config import MotionConfig
from modules.errors import FormatError, InputError
from modules.viewing import LuminanceImage
from utils.image_io import atomic_write


@dataclass(frozen=True)
class FlowField:
    """
    Displacement field in pixels/frame.

    block = 1 for per-pixel fields; otherwise one vector per block x block tile
    (u > 0 means content moves right, v > 0 means down).
    """

    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    block: int = 1

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise InputError(f"Flow components must be 2-D and equal in shape, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InputError("Flow components must be finite")
        if self.block < 1:
            raise InputError(f"Flow block size must be >= 1, got {self.block}")
        object.__setattr__(self, 'u', u)
        object.__setattr__(self, 'v', v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def per_pixel(self) -> bool:
        return self.block == 1

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def to_pixels(self, shape: Tuple[int, int]) -> "FlowField":
        """Per-pixel field covering `shape` (blocks repeated, edges replicated)"""
        height, width = shape
        u, v = self.u, self.v
        if self.block > 1:
            u = np.repeat(np.repeat(u, self.block, axis=0), self.block, axis=1)
            v = np.repeat(np.repeat(v, self.block, axis=0), self.block, axis=1)
        if u.shape[0] < height or u.shape[1] < width:
            pad = ((0, max(0, height - u.shape[0])), (0, max(0, width - u.shape[1])))
            u, v = np.pad(u, pad, mode='edge'), np.pad(v, pad, mode='edge')
        return FlowField(u[:height, :width], v[:height, :width], block=1)


def _as_array(image: Union[LuminanceImage, np.ndarray]) -> np.ndarray:
    return image.values if isinstance(image, LuminanceImage) else np.asarray(image, dtype=np.float64)


def _candidates(radius: int):
    """Search offsets ordered by magnitude, then dy, then dx"""
    offsets = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(offsets, key=lambda o: (o[0] ** 2 + o[1] ** 2, o[1], o[0]))


def block_match(
    prev: Union[LuminanceImage, np.ndarray],
    next: Union[LuminanceImage, np.ndarray],
    block: int = MotionConfig.DEFAULT_BLOCK,
    search_radius: int = MotionConfig.DEFAULT_SEARCH_RADIUS
) -> FlowField:
    """
    Integer block motion by exhaustive sum-of-absolute-differences search.

    Candidates reaching outside the frame are skipped. Equal SAD keeps the
    smaller displacement, so textureless blocks get zero motion.

    Args:
        prev: Earlier frame
        next: Later frame, same size
        block: Block side (>= 4)
        search_radius: Maximum displacement per axis (>= 1)

    Returns:
        Block-resolution FlowField
    """
    a = _as_array(prev)
    b = _as_array(next)
    if a.shape != b.shape:
        raise InputError(f"Frame size mismatch: {a.shape} vs {b.shape}")
    if block < MotionConfig.MIN_BLOCK:
        raise InputError(f"Block size must be >= {MotionConfig.MIN_BLOCK}, got {block}")
    if search_radius < 1:
        raise InputError(f"Search radius must be >= 1, got {search_radius}")

    height, width = a.shape
    rows, cols = math.ceil(height / block), math.ceil(width / block)
    pad_h, pad_w = rows * block - height, cols * block - width
    r = search_radius
    b_padded = np.pad(b, r, mode='constant', constant_values=np.nan)

    best_sad = np.full((rows, cols), np.inf)
    best_u = np.zeros((rows, cols))
    best_v = np.zeros((rows, cols))

    for dx, dy in _candidates(r):
        shifted = b_padded[r + dy:r + dy + height, r + dx:r + dx + width]
        diff = np.abs(a - shifted)
        diff[np.isnan(diff)] = np.inf
        diff = np.pad(diff, ((0, pad_h), (0, pad_w)), mode='constant')
        sad = diff.reshape(rows, block, cols, block).sum(axis=(1, 3))

        better = sad < best_sad
        best_sad[better] = sad[better]
        best_u[better] = dx
        best_v[better] = dy

    return FlowField(best_u, best_v, block=block)


def patch_velocity(flow: FlowField, patch_size: int, image_shape: Tuple[int, int]) -> np.ndarray:
    """
    Mean displacement magnitude per patch.

    Args:
        flow: Per-pixel or block flow
        patch_size: Patch side in pixels
        image_shape: (height, width) the flow covers

    Returns:
        (rows, cols) speeds in pixels/frame, border patches averaged over covered pixels
    """
    height, width = image_shape
    magnitude = flow.to_pixels(image_shape).magnitude()

    rows, cols = math.ceil(height / patch_size), math.ceil(width / patch_size)
    padded = np.pad(magnitude, ((0, rows * patch_size - height), (0, cols * patch_size - width)),
                    mode='constant', constant_values=np.nan)
    tiles = padded.reshape(rows, patch_size, cols, patch_size)
    return np.nanmean(tiles, axis=(1, 3))


# ---------------------------------------------------------------------------
# Flow files
# ---------------------------------------------------------------------------

def _read_flo(path: str) -> FlowField:
    with open(path, 'rb') as fh:
        magic = np.fromfile(fh, dtype='<f4', count=1)
        if magic.size != 1 or magic[0] != np.float32(MotionConfig.FLO_MAGIC):
            raise FormatError(f"{path}: bad .flo magic")
        dims = np.fromfile(fh, dtype='<i4', count=2)
        if dims.size != 2:
            raise FormatError(f"{path}: truncated .flo header")
        width, height = int(dims[0]), int(dims[1])
        if width <= 0 or height <= 0:
            raise FormatError(f"{path}: invalid .flo dimensions {width}x{height}")
        data = np.fromfile(fh, dtype='<f4', count=2 * width * height)
        if data.size != 2 * width * height:
            raise FormatError(f"{path}: truncated .flo payload ({data.size} of {2 * width * height} values)")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after .flo payload")

    data = data.reshape(height, width, 2)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite flow values")
    return FlowField(data[..., 0], data[..., 1])


def _read_flow_csv(path: str) -> FlowField:
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise FormatError(f"{path}: empty flow CSV", line=1) from e
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise FormatError(f"{path}: malformed flow CSV", line=int(match.group(1)) if match else None) from e

    df.columns = [str(c).strip() for c in df.columns]
    if not {'x', 'y', 'u', 'v'} <= set(df.columns):
        raise FormatError(f"{path}: flow CSV needs columns x, y, u, v", line=1)
    if df.empty:
        raise FormatError(f"{path}: flow CSV has no rows", line=2)

    df = df[['x', 'y', 'u', 'v']].apply(pd.to_numeric, errors='coerce')
    bad = df.index[~np.isfinite(df.to_numpy()).all(axis=1)]
    if len(bad):
        raise FormatError(f"{path}: non-numeric flow entry", line=int(bad[0]) + 2)
    coords = df[['x', 'y']].to_numpy()
    if np.any(coords < 0) or np.any(coords != np.round(coords)):
        raise FormatError(f"{path}: x and y must be non-negative integers")
    duplicated = df.index[df.duplicated(subset=['x', 'y'])]
    if len(duplicated):
        raise FormatError(f"{path}: duplicate position", line=int(duplicated[0]) + 2)

    xs, ys = df['x'].astype(int).to_numpy(), df['y'].astype(int).to_numpy()
    width, height = xs.max() + 1, ys.max() + 1
    if len(df) != width * height:
        raise FormatError(f"{path}: flow CSV does not cover a full {width}x{height} grid")

    u = np.empty((height, width))
    v = np.empty((height, width))
    u[ys, xs] = df['u'].to_numpy()
    v[ys, xs] = df['v'].to_numpy()
    return FlowField(u, v)


def load_flow(path: str, expected_shape: Optional[Tuple[int, int]] = None) -> FlowField:
    """
    Read a per-pixel flow field.

    Args:
        path: .flo binary (magic 202021.25, int32 width/height, interleaved float32 u, v)
            or CSV with columns x, y, u, v
        expected_shape: Optional (height, width) of the target frame

    Returns:
        FlowField
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Flow file not found: {path}")

    if path.lower().endswith('.csv'):
        flow = _read_flow_csv(path)
    else:
        flow = _read_flo(path)

    if expected_shape is not None and (flow.height, flow.width) != tuple(expected_shape):
        raise InputError(f"Flow {flow.width}x{flow.height} does not match frame "
                         f"{expected_shape[1]}x{expected_shape[0]}")
    return flow


def write_flow(flow: FlowField, path: str):
    """Write a flow field as .flo (or CSV when the path ends in .csv); block fields are expanded first"""
    if not flow.per_pixel:
        flow = flow.to_pixels((flow.height * flow.block, flow.width * flow.block))

    if path.lower().endswith('.csv'):
        ys, xs = np.mgrid[0:flow.height, 0:flow.width]
        df = pd.DataFrame({'x': xs.ravel(), 'y': ys.ravel(), 'u': flow.u.ravel(), 'v': flow.v.ravel()})
        with atomic_write(path, 'w') as fh:
            df.to_csv(fh, index=False)
        return

    with atomic_write(path, 'wb') as fh:
        np.array([MotionConfig.FLO_MAGIC], dtype='<f4').tofile(fh)
        np.array([flow.width, flow.height], dtype='<i4').tofile(fh)
        np.stack([flow.u, flow.v], axis=-1).astype('<f4').tofile(fh)
