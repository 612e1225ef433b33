"""
Raster I/O utilities
8-bit PNG/PGM reading and writing with Pillow, corpus listing and atomic file writes
"""

import glob
import os
import tempfile
from contextlib import contextmanager
from typing import List

import numpy as np
from PIL import Image, UnidentifiedImageError

from config import AppConfig
from modules.errors import InputError


def _current_umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


@contextmanager
def atomic_write(path: str, mode: str = 'wb'):
    """
    Write to a temp file in the target directory, then rename over `path`.

    Readers never observe a partially written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.splitext(path)[1])
    try:
        kwargs = {'newline': ''} if 'b' not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        # mkstemp creates 0600; give the output the mode a plain open() would
        os.chmod(tmp_path, 0o666 & ~_current_umask())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def read_raster(path: str) -> np.ndarray:
    """
    Read an 8-bit PNG or PGM into a code array.

    Args:
        path: Image file

    Returns:
        (H, W) or (H, W, 3|4) uint8 array
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Image not found: {path}")
    if not path.lower().endswith(AppConfig.IMAGE_EXTENSIONS):
        raise InputError(f"Unsupported image format (PNG/PGM only): {path}")

    try:
        with Image.open(path) as img:
            if img.mode in ('L', 'RGB', 'RGBA'):
                data = np.asarray(img)
            elif img.mode == 'P':
                data = np.asarray(img.convert('RGBA' if 'transparency' in img.info else 'RGB'))
            elif img.mode == 'LA':
                data = np.asarray(img.getchannel('L'))
            else:
                raise InputError(f"{path}: only 8-bit images are supported (mode {img.mode})")
    except UnidentifiedImageError as e:
        raise InputError(f"Cannot decode image {path}") from e

    if data.size == 0:
        raise InputError(f"Empty image: {path}")
    return data.astype(np.uint8, copy=False)


def write_gray(path: str, values: np.ndarray):
    """Write an 8-bit grayscale PNG/PGM atomically"""
    data = np.asarray(values)
    if data.ndim != 2:
        raise InputError(f"Grayscale output must be 2-D, got shape {data.shape}")
    image = Image.fromarray(np.clip(np.rint(data), 0, 255).astype(np.uint8))
    fmt = 'PPM' if path.lower().endswith('.pgm') else 'PNG'
    with atomic_write(path, 'wb') as fh:
        image.save(fh, format=fmt)


def list_images(directory: str) -> List[str]:
    """Sorted PNG/PGM files directly inside a directory"""
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Corpus directory not found: {directory}")
    files = [
        os.path.join(directory, name)
        for name in sorted(os.listdir(directory))
        if name.lower().endswith(AppConfig.IMAGE_EXTENSIONS)
    ]
    if not files:
        raise InputError(f"No PNG/PGM images in {directory}")
    return files


def expand_glob(pattern: str) -> List[str]:
    """Sorted matches of a glob pattern"""
    return sorted(glob.glob(pattern))
