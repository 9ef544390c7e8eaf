"""Differentiable HOG built from autodiff primitives, plus a per-pixel oracle.

The descriptor pipeline is gray conversion, [-1,0,1] derivatives, soft
orientation voting expressed as clip-based filters, tent-kernel spatial
binning sampled at cell centers, and one global contrast normalization.
"""
import math
from dataclasses import dataclass, replace

import numpy as np
import torch

import autodiff as ad
from utils import ConfigError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
ORIENTATION_RANGE = {'unsigned': 180.0, 'signed': 360.0}
DEFAULT_BINS = {'unsigned': 9, 'signed': 18}
NORM_STYLES = ('norm', 'squared')

# Guards the magnitude's sqrt adjoint; subtracting DELTA keeps flat regions at exactly 0
DELTA_SQ = 1e-24
DELTA = math.sqrt(DELTA_SQ)

DX = ad.Kernel(np.array([[-1.0, 0.0, 1.0]]))
DY = ad.Kernel(np.array([[-1.0], [0.0], [1.0]]))


@dataclass(frozen=True)
class HogConfig:
    cell_size: int = 8
    bins: int = 9
    signed: bool = False
    eps: float = 1e-4
    normalize: bool = True
    norm_style: str = 'norm'

    @classmethod
    def for_mode(cls, mode='unsigned', bins=None, **kwargs):
        if mode not in ORIENTATION_RANGE:
            raise ConfigError('Unknown orientation mode {}'.format(mode))
        if bins is None:
            bins = DEFAULT_BINS[mode]
        return cls(bins=bins, signed=(mode == 'signed'), **kwargs)

    @property
    def mode(self):
        return 'signed' if self.signed else 'unsigned'

    @property
    def orientation_range(self):
        return ORIENTATION_RANGE[self.mode]

    def with_cell(self, cell_size):
        return replace(self, cell_size=cell_size)

    def validate(self):
        if self.cell_size < 2 or self.cell_size % 2:
            raise ConfigError('Cell size must be even and >= 2, got {}'.format(self.cell_size))
        if self.bins < 2:
            raise ConfigError('Need at least 2 orientation bins, got {}'.format(self.bins))
        if not self.eps > 0:
            raise ConfigError('Normalization epsilon must be positive, got {}'.format(self.eps))
        if self.norm_style not in NORM_STYLES:
            raise ConfigError('Unknown norm style {}'.format(self.norm_style))
        return self

    def grid_shape(self, height, width):
        self.check_extents(height, width)
        return height // self.cell_size, width // self.cell_size, self.bins

    def check_extents(self, height, width):
        c = self.cell_size
        if height % c or width % c:
            raise ConfigError('Image {}x{} is not divisible by cell size {}'.format(
                width, height, c))


@dataclass
class HogDescriptor:
    grid: torch.Tensor
    config: HogConfig

    def __post_init__(self):
        self.grid = ad.as_tensor(self.grid)
        if self.grid.dim() != 3 or self.grid.shape[2] != self.config.bins:
            raise ValueError('Descriptor grid must be (rows, cols, {}), got {}'.format(
                self.config.bins, tuple(self.grid.shape)))

    @property
    def shape(self):
        return tuple(self.grid.shape)

    def numpy(self):
        return self.grid.detach().cpu().numpy()

    def norm(self):
        return float(torch.linalg.norm(self.grid.detach()))


def to_gray(img):
    img = ad.as_tensor(img)
    if img.dim() != 3 or img.shape[2] != 3:
        raise ValueError('to_gray expects an (H, W, 3) image, got {}'.format(tuple(img.shape)))
    r, g, b = (img[..., k] for k in range(3))
    wr, wg, wb = GRAY_WEIGHTS
    return ad.add(ad.add(ad.mul(r, wr), ad.mul(g, wg)), ad.mul(b, wb))


def border_mask(height, width):
    mask = torch.zeros(height, width, dtype=ad.DTYPE)
    mask[1:-1, 1:-1] = 1.0
    return mask


def fold_orientation(theta, orientation_range):
    # Constant offset: the fold itself carries no gradient
    offset = orientation_range * (theta.detach() < 0).to(ad.DTYPE)
    offset = offset - orientation_range * (theta.detach() >= orientation_range).to(ad.DTYPE)
    return ad.add(theta, offset)


def gradients(gray, cfg):
    """Returns (magnitude, orientation in degrees within [0, R)).

    The derivative masks see zero padding; the outermost pixel ring, where
    that padding would invent an edge, has both derivatives set to 0.
    """
    gray = ad.as_tensor(gray)
    if gray.dim() != 2 or min(gray.shape) < 3:
        raise ConfigError('gradients needs a 2D image of at least 3x3, got {}'.format(
            tuple(gray.shape)))
    mask = border_mask(*gray.shape)
    gx = ad.mul(ad.conv2d_same(gray, DX), mask)
    gy = ad.mul(ad.conv2d_same(gray, DY), mask)
    squared = ad.add(ad.add(ad.pow2(gx), ad.pow2(gy)), DELTA_SQ)
    mag = ad.sub(ad.sqrt(squared), DELTA)
    theta = fold_orientation(ad.atan2(gy, gx), cfg.orientation_range)
    return mag, theta


def orientation_hat(u):
    # 1 - |u| on [-1, 1], 0 elsewhere, as two clips
    rising = ad.clip(ad.add(u, 1.0), 0.0, 1.0)
    falling = ad.clip(ad.add(ad.mul(u, -1.0), 1.0), 0.0, 1.0)
    return ad.sub(ad.add(rising, falling), 1.0)


def orientation_weights(theta, cfg, b):
    bins, period = cfg.bins, cfg.orientation_range
    center = b * period / bins
    u = ad.mul(ad.sub(theta, center), bins / period)
    weight = None
    for shift in (-bins, 0, bins):
        hat = orientation_hat(ad.add(u, float(shift)))
        weight = hat if weight is None else ad.add(weight, hat)
    return weight


def orientation_filters(mag, theta, cfg):
    mag, theta = ad.as_tensor(mag), ad.as_tensor(theta)
    if mag.shape != theta.shape:
        raise ValueError('Magnitude and orientation shapes differ')
    channels = [ad.mul(mag, orientation_weights(theta, cfg, b)) for b in range(cfg.bins)]
    return torch.stack(channels)


def tent_weights(c):
    k = np.arange(2 * c, dtype=np.float64)
    return 1.0 - np.abs(k + 0.5 - c) / c


def make_spatial_kernel(c):
    if c < 2 or c % 2:
        raise ConfigError('Spatial kernel needs an even cell size >= 2, got {}'.format(c))
    t = tent_weights(c)
    return ad.Kernel(np.outer(t, t))


def cell_centers(n_cells, c):
    return [i * c + c // 2 - 1 for i in range(n_cells)]


def spatial_binning(channels, cfg):
    channels = ad.as_tensor(channels)
    c = cfg.cell_size
    height, width = channels.shape[-2:]
    cfg.check_extents(height, width)
    smoothed = ad.conv2d_same(channels, make_spatial_kernel(c))
    rows = cell_centers(height // c, c)
    cols = cell_centers(width // c, c)
    sampled = ad.subsample(smoothed, rows, cols)
    return HogDescriptor(sampled.permute(1, 2, 0), cfg)


def normalize(desc, cfg):
    norm = ad.l2norm(desc.grid)
    if cfg.norm_style == 'squared':
        norm = ad.pow2(norm)
    scale = ad.sqrt(ad.add(norm, cfg.eps))
    return HogDescriptor(ad.div(desc.grid, scale), cfg)


def hog_forward(img, cfg):
    cfg.validate()
    img = ad.as_tensor(img)
    if img.dim() == 3:
        img = to_gray(img)
    cfg.check_extents(*img.shape)
    mag, theta = gradients(img, cfg)
    desc = spatial_binning(orientation_filters(mag, theta, cfg), cfg)
    if cfg.normalize:
        desc = normalize(desc, cfg)
    return desc


def _cell_weights(p, c, n_cells):
    first = int(math.floor((p + 0.5) / c - 0.5))
    for i in (first, first + 1):
        if 0 <= i < n_cells:
            w = 1.0 - abs(p + 0.5 - (i + 0.5) * c) / c
            if w > 0:
                yield i, w


def hog_reference(pixels, cfg):
    """Per-pixel voting loop over numpy arrays; never differentiated."""
    cfg.validate()
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        pixels = pixels @ np.array(GRAY_WEIGHTS)
    height, width = pixels.shape
    nh, nw, bins = cfg.grid_shape(height, width)
    c, period = cfg.cell_size, cfg.orientation_range

    padded = np.pad(pixels, 1)
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    interior = border_mask(height, width).numpy()
    gx, gy = gx * interior, gy * interior
    mag = np.sqrt(gx * gx + gy * gy + DELTA_SQ) - DELTA
    theta = np.arctan2(gy, gx) * ad.DEGREES_PER_RADIAN
    theta[theta <= -180.0] = 180.0
    theta[(gx == 0) & (gy == 0)] = 0.0
    theta[theta < 0] += period
    theta[theta >= period] -= period

    grid = np.zeros((nh, nw, bins))
    for y in range(height):
        for x in range(width):
            m = mag[y, x]
            if m == 0:
                continue
            pos = theta[y, x] * bins / period
            lower = int(math.floor(pos))
            frac = pos - lower
            votes = ((lower % bins, 1.0 - frac), ((lower + 1) % bins, frac))
            for i, wy in _cell_weights(y, c, nh):
                for j, wx in _cell_weights(x, c, nw):
                    for b, wb in votes:
                        grid[i, j, b] += m * wy * wx * wb

    if cfg.normalize:
        norm = np.sqrt(np.sum(grid * grid))
        if cfg.norm_style == 'squared':
            norm = norm * norm
        grid = grid / np.sqrt(norm + cfg.eps)
    return HogDescriptor(torch.from_numpy(grid), cfg)
