"""Image and descriptor files shared by every command.

Images are float64 arrays in [0, 1], shaped (H, W) or (H, W, 3). PNG goes
through pypng so bit depth and interlacing can be inspected before decoding;
binary PGM/PPM goes through Pillow.
"""
import os
import struct
from dataclasses import dataclass

import numpy as np
import png
from PIL import Image as PILImage, UnidentifiedImageError

import hog
from utils import ImageIOError, atomic_write

PNG_SIGNATURE = b'\x89PNG\r\n\x1a\n'
NETPBM_MAGICS = (b'P5', b'P6')

GHOG_MAGIC = b'GHOG'
GHOG_VERSION = 1
GHOG_HEADER = struct.Struct('<4sIIIIII')
GHOG_DTYPE = np.dtype('<f4')


@dataclass
class Image:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise ValueError('Image must be (H, W) or (H, W, 3), got {}'.format(data.shape))
        if min(data.shape[:2]) < 1:
            raise ValueError('Image extents must be >= 1')
        if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
            raise ValueError('Image values must lie in [0, 1]')
        self.data = data

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else 3

    def gray(self):
        if self.channels == 1:
            return self.data
        return hog.to_gray(self.data).numpy()


def as_image(x):
    if isinstance(x, Image):
        return x
    if hasattr(x, 'detach'):
        x = x.detach().cpu().numpy()
    return Image(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0))


def _read_png(path):
    try:
        reader = png.Reader(filename=path)
        width, height, rows, info = reader.read()
        if info.get('bitdepth') != 8:
            raise ImageIOError('{}: only 8-bit PNG is supported, got bit depth {}'.format(
                path, info.get('bitdepth')))
        if info.get('interlace'):
            raise ImageIOError('{}: interlaced PNG is not supported'.format(path))
        if info.get('palette'):
            raise ImageIOError('{}: palette PNG is not supported'.format(path))
        planes = info['planes']
        pixels = np.vstack([np.asarray(row, dtype=np.uint8) for row in rows])
    except png.Error as e:
        raise ImageIOError('{}: corrupt PNG ({})'.format(path, e))
    pixels = pixels.reshape(height, width, planes)
    if info.get('alpha'):
        pixels = pixels[:, :, :-1]
    return pixels


def _read_netpbm(path):
    try:
        with PILImage.open(path) as pil:
            if pil.mode not in ('L', 'RGB'):
                raise ImageIOError('{}: only 8-bit PGM/PPM is supported, got mode {}'.format(
                    path, pil.mode))
            return np.array(pil, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        raise ImageIOError('{}: corrupt header ({})'.format(path, e))


def load_image(path):
    if not os.path.isfile(path):
        raise ImageIOError('No such image: {}'.format(path))
    with open(path, 'rb') as fp:
        magic = fp.read(len(PNG_SIGNATURE))
    if magic == PNG_SIGNATURE:
        pixels = _read_png(path)
    elif magic[:2] in NETPBM_MAGICS:
        pixels = _read_netpbm(path)
    else:
        raise ImageIOError('{}: unsupported image format'.format(path))
    return Image(pixels.astype(np.float64) / 255.0)


def quantize(data):
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img, path, grayscale=False):
    img = as_image(img)
    data = img.gray() if grayscale else img.data
    planes = 1 if data.ndim == 2 else 3
    height, width = data.shape[:2]
    rows = quantize(data).reshape(height, width * planes)
    writer = png.Writer(width, height, greyscale=(planes == 1), bitdepth=8)
    try:
        with atomic_write(path) as fp:
            writer.write(fp, rows)
    except OSError as e:
        raise ImageIOError('Cannot write {}: {}'.format(path, e))


def write_descriptor(desc, path):
    grid = desc.numpy()
    nh, nw, bins = grid.shape
    cfg = desc.config
    header = GHOG_HEADER.pack(GHOG_MAGIC, GHOG_VERSION, int(cfg.signed), cfg.cell_size,
                              nh, nw, bins)
    try:
        with atomic_write(path) as fp:
            fp.write(header)
            fp.write(grid.astype(GHOG_DTYPE).tobytes(order='C'))
    except OSError as e:
        raise ImageIOError('Cannot write {}: {}'.format(path, e))


def read_descriptor(path, **config):
    """Reads a GHOG file; extra keyword args go into the HogConfig."""
    try:
        with open(path, 'rb') as fp:
            raw = fp.read()
    except OSError as e:
        raise ImageIOError('Cannot read {}: {}'.format(path, e))
    if len(raw) < GHOG_HEADER.size:
        raise ImageIOError('{}: truncated header'.format(path))
    magic, version, mode, cell, nh, nw, bins = GHOG_HEADER.unpack_from(raw)
    if magic != GHOG_MAGIC:
        raise ImageIOError('{}: bad magic {!r}'.format(path, magic))
    if version != GHOG_VERSION:
        raise ImageIOError('{}: unsupported version {}'.format(path, version))
    if mode not in (0, 1):
        raise ImageIOError('{}: unknown orientation mode {}'.format(path, mode))
    payload = raw[GHOG_HEADER.size:]
    expected = nh * nw * bins * GHOG_DTYPE.itemsize
    if len(payload) < expected:
        raise ImageIOError('{}: truncated payload, {} of {} bytes'.format(
            path, len(payload), expected))
    if len(payload) > expected:
        raise ImageIOError('{}: {} bytes of trailing data'.format(path, len(payload) - expected))
    grid = np.frombuffer(payload, dtype=GHOG_DTYPE).astype(np.float64).reshape(nh, nw, bins)
    cfg = hog.HogConfig(cell_size=cell, bins=bins, signed=bool(mode), **config)
    return hog.HogDescriptor(grid, cfg)
