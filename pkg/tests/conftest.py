from pathlib import Path

import numpy as np
import pytest

from descan import Image

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture
def assets_dir() -> Path:
    return ASSETS


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def smooth_image(shape, seed=0, lo=0.1, hi=0.9, scale=8.0, channels=1) -> Image:
    """Band-limited random test image: smoothed noise stretched to [lo, hi]."""
    from scipy.ndimage import gaussian_filter

    gen = np.random.default_rng(seed)
    planes = []
    for _ in range(channels):
        field = gaussian_filter(gen.standard_normal(shape), scale)
        field = (field - field.min()) / (field.max() - field.min())
        planes.append(lo + (hi - lo) * field)
    return Image(np.stack(planes, axis=-1))
