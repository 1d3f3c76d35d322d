import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_two_tone(h, w, left=(0.9, 0.2, 0.1), right=(0.1, 0.3, 0.8)):
    img = np.zeros((h, w, 3))
    img[:, : w // 2] = left
    img[:, w // 2:] = right
    return img


def make_smooth_photo(h, w, seed=0):
    """A deterministic smooth multi-frequency color image."""
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w),
                         indexing="ij")
    img = np.zeros((h, w, 3))
    for c in range(3):
        acc = np.zeros((h, w))
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 4.0, 2)
            py, px = rng.uniform(0, 2 * np.pi, 2)
            acc += rng.uniform(0.2, 1.0) * np.sin(
                2 * np.pi * (fy * ys + py)) * np.cos(2 * np.pi * (fx * xs + px))
        acc += rng.uniform(0.5, 2.0) * ys + rng.uniform(0.5, 2.0) * xs
        img[:, :, c] = acc
    img -= img.min()
    img /= img.max()
    return img
