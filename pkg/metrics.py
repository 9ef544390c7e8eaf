import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

import hog
from image_io import Image
from utils import ConfigError, cov

MI_BINS = 32
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
DYNAMIC_RANGE = 1.0
FLAT_STD = 1e-12


class GaussianSmoothing(nn.Module):
    """
    Apply gaussian smoothing on a 2d single-channel tensor with no padding,
    so the output shrinks by kernel_size - 1 in each dimension.
    Arguments:
        kernel_size (int): Size of the gaussian kernel.
        sigma (float): Standard deviation of the gaussian kernel.
    """
    def __init__(self, kernel_size, sigma):
        super(GaussianSmoothing, self).__init__()
        self.kernel_size = kernel_size
        # The gaussian kernel is the product of the
        # gaussian function of each dimension.
        kernel = 1
        meshgrids = torch.meshgrid(
            [torch.arange(kernel_size, dtype=torch.float64) for _ in range(2)],
            indexing='ij')
        for mgrid in meshgrids:
            mean = (kernel_size - 1) / 2
            kernel = kernel * torch.exp(-0.5 * ((mgrid - mean) / sigma) ** 2)

        # Make sure sum of values in gaussian kernel equals 1.
        kernel = kernel / torch.sum(kernel)
        self.register_buffer('weight', kernel.view(1, 1, kernel_size, kernel_size))

    def forward(self, input):
        return F.conv2d(input[None, None], self.weight)[0, 0]


_window = GaussianSmoothing(SSIM_WINDOW, SSIM_SIGMA)


def _as_gray(x):
    if isinstance(x, Image):
        x = x.data
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = hog.to_gray(x).numpy()
    return x


def _pair(a, b):
    a, b = _as_gray(a), _as_gray(b)
    if a.shape != b.shape:
        raise ConfigError('Cannot compare images of shape {} and {}'.format(a.shape, b.shape))
    return a, b


def cross_correlation(a, b):
    """Pearson correlation of pixel intensities."""
    a, b = _pair(a, b)
    c = cov(np.stack([a.ravel(), b.ravel()], axis=1)).numpy()
    std_a, std_b = math.sqrt(max(c[0, 0], 0.0)), math.sqrt(max(c[1, 1], 0.0))
    if std_a < FLAT_STD or std_b < FLAT_STD:
        both_flat = std_a < FLAT_STD and std_b < FLAT_STD
        return 1.0 if both_flat and np.array_equal(a, b) else 0.0
    return float(np.clip(c[0, 1] / (std_a * std_b), -1.0, 1.0))


def raw_cross_correlation(a, b):
    # Not mean-subtracted
    a, b = _pair(a, b)
    denominator = math.sqrt(float(np.sum(a * a)) * float(np.sum(b * b)))
    if denominator == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(np.sum(a * b) / denominator)


def entropy(a, bins=MI_BINS):
    a = _as_gray(a)
    counts, _ = np.histogram(a.ravel(), bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / a.size
    return float(-np.sum(p * np.log2(p)))


def mutual_information(a, b, bins=MI_BINS):
    a, b = _pair(a, b)
    joint, _, _ = np.histogram2d(a.ravel(), b.ravel(), bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    p = joint / a.size
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nonzero = p > 0
    outer = (px * py)[nonzero]
    return max(0.0, float(np.sum(p[nonzero] * np.log2(p[nonzero] / outer))))


def ssim(a, b):
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ConfigError('SSIM needs images of at least {0}x{0}, got {1}'.format(SSIM_WINDOW, a.shape))
    x, y = torch.from_numpy(a), torch.from_numpy(b)
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_x, mu_y = _window(x), _window(y)
    var_x = _window(x * x) - mu_x ** 2
    var_y = _window(y * y) - mu_y ** 2
    covariance = _window(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * covariance + c2)) / \
               ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(ssim_map.mean())


@dataclass
class MetricReport:
    cross_correlation: float
    raw_correlation: float
    mutual_information: float
    ssim: float

    def as_dict(self):
        return asdict(self)


def compare(a, b, bins=MI_BINS):
    return MetricReport(
        cross_correlation=cross_correlation(a, b),
        raw_correlation=raw_cross_correlation(a, b),
        mutual_information=mutual_information(a, b, bins),
        ssim=ssim(a, b),
    )


def mean_report(reports):
    columns = MetricReport.__dataclass_fields__.keys()
    return MetricReport(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in columns})
