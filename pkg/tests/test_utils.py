import os
import time

import numpy as np
import pytest

import utils
from utils import ConfigError, ImageIOError
from workers import map_fn


def test_cov_matches_population_covariance(rng):
    x = rng.normal(size=(50, 3))
    assert np.allclose(utils.cov(x).numpy(), np.cov(x, rowvar=False, bias=True))


def test_center_crop():
    pixels = np.arange(130 * 131).reshape(130, 131)
    cropped = utils.center_crop(pixels, 8)
    assert cropped.shape == (128, 128)
    assert cropped[0, 0] == pixels[1, 1]
    with pytest.raises(ConfigError):
        utils.center_crop(np.zeros((5, 20)), 8)


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    path = str(tmp_path / 'out.txt')
    with pytest.raises(RuntimeError):
        with utils.atomic_write(path, 'w') as fp:
            fp.write('partial')
            raise RuntimeError('boom')
    assert os.listdir(str(tmp_path)) == []
    with pytest.raises(ImageIOError):
        with utils.atomic_write(str(tmp_path / 'missing' / 'out.txt')):
            pass


def test_write_csv(tmp_path, capsys):
    rows = [{'a': 1, 'b': 0.5}, {'a': 2, 'b': 0.25}]
    utils.write_csv(rows, None)
    assert capsys.readouterr().out == 'a,b\n1,0.5\n2,0.25\n'
    path = str(tmp_path / 'rows.csv')
    utils.write_csv(rows, path, columns=['b', 'a'])
    assert open(path).read() == 'b,a\n0.5,1\n0.25,2\n'


def test_write_json(tmp_path):
    path = str(tmp_path / 'v.json')
    utils.write_json({'S': 1.5}, path)
    assert open(path).read() == '{\n  "S": 1.5\n}\n'


def test_error_exit_codes():
    assert [e.exit_code for e in (ImageIOError, ConfigError, utils.DivergenceError, utils.GradcheckFailure)] == \
        [2, 3, 4, 5]
    assert issubclass(ConfigError, ValueError)


def test_map_fn_keeps_input_order():
    def slow_square(k):
        time.sleep(0.01 * (5 - k))
        return k * k
    assert map_fn(slow_square, range(5), threads=1) == [0, 1, 4, 9, 16]
    assert map_fn(slow_square, range(5), threads=4) == [0, 1, 4, 9, 16]
    assert map_fn(lambda a, b: a + b, [1, 2], [10, 20], threads=2) == [11, 22]
