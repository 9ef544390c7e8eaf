import math

import matplotlib
matplotlib.use('Agg')
import numpy as np
import pandas as pd
import imutil
from skimage.draw import line_aa

from utils import to_numpy


def render_glyphs(desc, cell_px=None):
    """Draws each cell's histogram as lines along the edge direction of each bin.

    Brightness is proportional to the bin value relative to the largest bin
    in the descriptor.
    """
    grid = to_numpy(desc.grid)
    nh, nw, bins = grid.shape
    cfg = desc.config
    c = cell_px or max(cfg.cell_size, 8)
    canvas = np.zeros((nh * c, nw * c))
    peak = grid.max()
    if peak <= 0:
        return canvas
    radius = c / 2.0 - 1
    for b in range(bins):
        # Edges run perpendicular to the gradient direction
        angle = math.radians(b * cfg.orientation_range / bins + 90.0)
        dx, dy = radius * math.cos(angle), radius * math.sin(angle)
        for i in range(nh):
            for j in range(nw):
                weight = grid[i, j, b] / peak
                if weight <= 0:
                    continue
                cy, cx = i * c + c / 2.0, j * c + c / 2.0
                rr, cc, val = line_aa(int(round(cy - dy)), int(round(cx - dx)),
                                      int(round(cy + dy)), int(round(cx + dx)))
                keep = (rr >= 0) & (rr < canvas.shape[0]) & (cc >= 0) & (cc < canvas.shape[1])
                rr, cc, val = rr[keep], cc[keep], val[keep]
                canvas[rr, cc] = np.maximum(canvas[rr, cc], val * weight)
    return canvas


def plot_trace(rows, filename, title='Reconstruction objective'):
    frame = pd.DataFrame(rows)
    frame['step'] = np.arange(len(frame))
    plot_params = {
        'title': title,
        'grid': True,
        'logy': bool((frame['E'] > 0).all()),
    }
    plt = None
    for stage, group in frame.groupby('stage', sort=False):
        plt = group.plot(x='step', y='E', label='1/{}'.format(stage), ax=plt, **plot_params)
    plt.set_ylabel('E')
    plt.set_xlabel('Iteration (all stages)')
    imutil.show(plt, filename=filename, display=False)
    from matplotlib import pyplot
    pyplot.close()


def plot_sweep(rows, param, filename):
    frame = pd.DataFrame([{'value': r.value, 'S': r.S, 'dS': r.dS} for r in rows])
    plot_params = {
        'title': 'Similarity along {}'.format(param),
        'grid': True,
    }
    plt = frame.plot(x='value', y='S', **plot_params)
    frame.plot(x='value', y='dS', secondary_y=True, ax=plt, style='--')
    plt.set_xlabel(param)
    plt.set_ylabel('S')
    imutil.show(plt, filename=filename, display=False)
    from matplotlib import pyplot
    pyplot.close()


def plot_restarts(rows, filename):
    frame = pd.DataFrame(rows)
    plt = None
    for restart, group in frame.groupby('restart'):
        plt = group.plot(x='iteration', y='S', label='restart {}'.format(restart), ax=plt,
                         title='Similarity per restart', grid=True)
    imutil.show(plt, filename=filename, display=False)
    from matplotlib import pyplot
    pyplot.close()
