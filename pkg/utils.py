import os
import json
import tempfile
from contextlib import contextmanager

import numpy as np
import pandas as pd
import torch


class HogError(Exception):
    exit_code = 1


# Unreadable, unwritable or malformed image / descriptor files
class ImageIOError(HogError):
    exit_code = 2


class ConfigError(HogError, ValueError):
    exit_code = 3


class DivergenceError(HogError):
    exit_code = 4


class GradcheckFailure(HogError):
    exit_code = 5


def cov(m, rowvar=False):
    '''Estimate a covariance matrix given data.

    Covariance indicates the level to which two variables vary together.
    If we examine N-dimensional samples, `X = [x_1, x_2, ... x_N]^T`,
    then the covariance matrix element `C_{ij}` is the covariance of
    `x_i` and `x_j`. The element `C_{ii}` is the variance of `x_i`.

    Args:
        m: A 1-D or 2-D array containing multiple variables and observations.
            Each row of `m` represents a variable, and each column a single
            observation of all those variables.
        rowvar: If `rowvar` is True, then each row represents a
            variable, with observations in the columns. Otherwise, the
            relationship is transposed: each column represents a variable,
            while the rows contain observations.

    Returns:
        The covariance matrix of the variables, in float64.
    '''
    m = torch.as_tensor(m, dtype=torch.float64)
    if m.dim() > 2:
        raise ValueError('m has more than 2 dimensions')
    if m.dim() < 2:
        m = m.view(1, -1)
    if not rowvar and m.size(0) != 1:
        m = m.t()
    # Population covariance: the metrics compare whole images, not samples
    fact = 1.0 / m.size(1)
    m = m - torch.mean(m, dim=1, keepdim=True)
    mt = m.t()
    return fact * m.matmul(mt).squeeze()


def center_crop(pixels, multiple):
    # Crops height and width down to the nearest multiple, keeping the center
    height, width = pixels.shape[:2]
    new_height = (height // multiple) * multiple
    new_width = (width // multiple) * multiple
    if new_height == 0 or new_width == 0:
        raise ConfigError('Image {}x{} is smaller than one {}px cell'.format(
            width, height, multiple))
    top = (height - new_height) // 2
    left = (width - new_width) // 2
    return pixels[top:top + new_height, left:left + new_width]


@contextmanager
def atomic_write(path, mode='wb'):
    # Write to a sibling temp file, rename into place only on success
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ImageIOError('Output directory does not exist: {}'.format(directory))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fp:
            yield fp
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_csv(rows, path, columns=None):
    frame = pd.DataFrame(rows, columns=columns)
    text = frame.to_csv(index=False, lineterminator='\n')
    if path is None or path == '-':
        print(text, end='')
        return
    with atomic_write(path, 'w') as fp:
        fp.write(text)


def write_json(value, path):
    text = json.dumps(value, indent=2) + '\n'
    if path is None or path == '-':
        print(text, end='')
        return
    with atomic_write(path, 'w') as fp:
        fp.write(text)


def to_numpy(x):
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)
