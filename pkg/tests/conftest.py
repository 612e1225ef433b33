"""
Shared fixtures: viewing setups, 1/f natural-like images and the bundled profile ladder
"""

import numpy as np
import pytest

from modules.csf import AnalyticCsf
from modules.scheduler import ProfileSet, VariantProfile
from modules.viewing import ViewingConditions
from utils.data_loader import load_default_profiles


def make_natural(seed: int, shape=(256, 256), slope: float = 1.0) -> np.ndarray:
    """Periodic 1/f^slope amplitude-spectrum noise scaled to 8-bit codes [16, 239]"""
    rng = np.random.default_rng(seed)
    height, width = shape
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.hypot(fy, fx)
    radius[0, 0] = 1.0
    spectrum = np.fft.fft2(rng.standard_normal(shape)) / radius ** slope
    spectrum[0, 0] = 0.0
    field = np.real(np.fft.ifft2(spectrum))
    field = (field - field.min()) / (field.max() - field.min())
    return 16.0 + 223.0 * field


def decode(codes: np.ndarray, vc: ViewingConditions) -> np.ndarray:
    return vc.black_level + (vc.peak_luminance - vc.black_level) * (codes / 255.0) ** vc.gamma


@pytest.fixture
def viewing():
    """27-inch 3840x2160 at 60 cm, 400 / 0.4 cd/m^2"""
    return ViewingConditions()


@pytest.fixture
def small_display():
    """27-inch panel driven at 640x360, 60 cm: ppd ~ 11.2"""
    return ViewingConditions(resolution=(640, 360))


@pytest.fixture
def csf():
    return AnalyticCsf()


@pytest.fixture
def ladder():
    """Five-variant ladder; t_hat at the x4 bands (ascending frequency)"""
    return load_default_profiles(k=4)


@pytest.fixture
def two_variants():
    return ProfileSet([
        VariantProfile(id=0, name="bicubic", cost_flops=1.0, t_hat=[0.95, 0.45, 0.10]),
        VariantProfile(id=1, name="full", cost_flops=4.0, t_hat=[0.99, 0.93, 0.80], baseline_full=True),
    ])


@pytest.fixture
def natural_corpus():
    return [make_natural(seed) for seed in range(19)]
