import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import gradchecks  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smooth_image(rng):
    return gradchecks.smooth_image(rng, 32)


def make_template(size=48, margin=10):
    """Dark border with an off-center bright structure and no rotational symmetry."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size))
    blobs = [(0.40, 0.35, 3.0, 0.8), (0.62, 0.58, 4.0, 0.6), (0.35, 0.65, 2.5, 0.5)]
    for cy, cx, width, height in blobs:
        img += height * np.exp(-((ys - cy * size) ** 2 + (xs - cx * size) ** 2) / (2 * width ** 2))
    ring = np.zeros_like(img)
    ring[margin:-margin, margin:-margin] = 1.0
    return torch.from_numpy(np.clip(img * ring, 0.0, 1.0))


@pytest.fixture
def template():
    return make_template()
