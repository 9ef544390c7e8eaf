import struct

import numpy as np
import png
import pytest
import torch

import hog
import image_io
from utils import ImageIOError


def write_png(path, rows, **kwargs):
    with open(path, 'wb') as fp:
        png.Writer(**kwargs).write(fp, rows)


def read_png_bytes(path):
    width, height, rows, info = png.Reader(filename=str(path)).read()
    return np.vstack([np.asarray(row, dtype=np.uint8) for row in rows])


def test_load_pgm(tmp_path):
    path = tmp_path / 'tiny.pgm'
    path.write_bytes(b'P5\n2 2\n255\n' + bytes([0, 255, 0, 255]))
    img = image_io.load_image(str(path))
    assert img.channels == 1
    assert img.data.ravel().tolist() == [0.0, 1.0, 0.0, 1.0]


def test_load_ppm(tmp_path):
    path = tmp_path / 'tiny.ppm'
    path.write_bytes(b'P6\n1 1\n255\n' + bytes([255, 0, 51]))
    img = image_io.load_image(str(path))
    assert img.channels == 3
    assert img.data[0, 0].tolist() == pytest.approx([1.0, 0.0, 0.2])


def test_load_red_png(tmp_path):
    path = tmp_path / 'red.png'
    write_png(path, [[255, 0, 0] * 3] * 2, width=3, height=2, greyscale=False, bitdepth=8)
    img = image_io.load_image(str(path))
    assert (img.height, img.width, img.channels) == (2, 3, 3)
    assert img.data.reshape(-1, 3).tolist() == [[1.0, 0.0, 0.0]] * 6


def test_load_drops_alpha(tmp_path):
    path = tmp_path / 'alpha.png'
    write_png(path, [[10, 20]], width=1, height=1, greyscale=True, alpha=True, bitdepth=8)
    img = image_io.load_image(str(path))
    assert img.channels == 1
    assert img.data[0, 0] == pytest.approx(10 / 255.0)


def test_rejects_16_bit_png(tmp_path):
    path = tmp_path / 'deep.png'
    write_png(path, [[0, 65535]], width=2, height=1, greyscale=True, bitdepth=16)
    with pytest.raises(ImageIOError, match='bit depth'):
        image_io.load_image(str(path))


def test_rejects_interlaced_png(tmp_path):
    path = tmp_path / 'interlaced.png'
    write_png(path, [[0, 128, 255]] * 3, width=3, height=3, greyscale=True, bitdepth=8, interlace=True)
    with pytest.raises(ImageIOError, match='interlaced'):
        image_io.load_image(str(path))


def test_rejects_corrupt_files(tmp_path):
    broken = tmp_path / 'broken.png'
    broken.write_bytes(image_io.PNG_SIGNATURE + b'\x00\x00\x00\x0dIHDRgarbage')
    with pytest.raises(ImageIOError):
        image_io.load_image(str(broken))
    unknown = tmp_path / 'picture.jpg'
    unknown.write_bytes(b'\xff\xd8\xff\xe0')
    with pytest.raises(ImageIOError):
        image_io.load_image(str(unknown))
    with pytest.raises(ImageIOError):
        image_io.load_image(str(tmp_path / 'missing.png'))


@pytest.mark.parametrize('value, byte', [(0.5, 128), (0.0, 0), (1.0, 255), (1.7, 255), (-0.2, 0)])
def test_save_quantization(tmp_path, value, byte):
    path = tmp_path / 'flat.png'
    image_io.save_image(np.full((3, 4), value), str(path))
    assert read_png_bytes(path).ravel().tolist() == [byte] * 12


def test_save_load_round_trip(tmp_path, rng):
    path = tmp_path / 'noise.png'
    original = rng.uniform(size=(7, 5, 3))
    image_io.save_image(image_io.Image(original), str(path))
    loaded = image_io.load_image(str(path))
    assert loaded.data.shape == original.shape
    assert np.abs(loaded.data - original).max() <= 1 / 510.0 + 1e-12


def test_grayscale_save_uses_gray_weights(tmp_path):
    path = tmp_path / 'gray.png'
    rgb = np.zeros((2, 2, 3))
    rgb[..., 0] = 1.0
    image_io.save_image(rgb, str(path), grayscale=True)
    assert read_png_bytes(path).ravel().tolist() == [76] * 4


def test_save_to_missing_directory(tmp_path):
    with pytest.raises(ImageIOError):
        image_io.save_image(np.zeros((2, 2)), str(tmp_path / 'nope' / 'out.png'))


def test_image_validation():
    with pytest.raises(ValueError):
        image_io.Image(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        image_io.Image(np.zeros((2, 2, 4)))


def random_descriptor(rng, signed=False):
    cfg = hog.HogConfig.for_mode('signed' if signed else 'unsigned', cell_size=4)
    return hog.HogDescriptor(torch.from_numpy(rng.uniform(size=(3, 5, cfg.bins))), cfg)


@pytest.mark.parametrize('signed', [False, True])
def test_descriptor_round_trip(tmp_path, rng, signed):
    desc = random_descriptor(rng, signed)
    first, second = tmp_path / 'a.ghog', tmp_path / 'b.ghog'
    image_io.write_descriptor(desc, str(first))
    loaded = image_io.read_descriptor(str(first))
    assert loaded.shape == desc.shape
    assert (loaded.config.cell_size, loaded.config.bins, loaded.config.signed) == (4, desc.config.bins, signed)
    assert np.array_equal(loaded.numpy(), desc.numpy().astype(np.float32).astype(np.float64))
    image_io.write_descriptor(loaded, str(second))
    assert first.read_bytes() == second.read_bytes()


def test_descriptor_header_layout(tmp_path, rng):
    path = tmp_path / 'd.ghog'
    image_io.write_descriptor(random_descriptor(rng), str(path))
    raw = path.read_bytes()
    assert struct.unpack('<4sIIIIII', raw[:28]) == (b'GHOG', 1, 0, 4, 3, 5, 9)
    assert len(raw) == 28 + 3 * 5 * 9 * 4


def corrupt(tmp_path, rng, edit):
    path = tmp_path / 'bad.ghog'
    image_io.write_descriptor(random_descriptor(rng), str(path))
    path.write_bytes(edit(path.read_bytes()))
    return str(path)


def test_descriptor_bad_magic(tmp_path, rng):
    path = corrupt(tmp_path, rng, lambda raw: b'XXXX' + raw[4:])
    with pytest.raises(ImageIOError, match='magic'):
        image_io.read_descriptor(path)


def test_descriptor_truncated(tmp_path, rng):
    path = corrupt(tmp_path, rng, lambda raw: raw[:-4])
    with pytest.raises(ImageIOError, match='truncated'):
        image_io.read_descriptor(path)
    path = corrupt(tmp_path, rng, lambda raw: raw[:10])
    with pytest.raises(ImageIOError, match='truncated'):
        image_io.read_descriptor(path)


def test_descriptor_version_and_trailing_data(tmp_path, rng):
    path = corrupt(tmp_path, rng, lambda raw: raw[:4] + struct.pack('<I', 2) + raw[8:])
    with pytest.raises(ImageIOError, match='version'):
        image_io.read_descriptor(path)
    path = corrupt(tmp_path, rng, lambda raw: raw + b'\x00')
    with pytest.raises(ImageIOError, match='trailing'):
        image_io.read_descriptor(path)
