# Overlays E traces from several invert --trace CSVs, one line per file
import argparse
import os

import matplotlib
matplotlib.use('Agg')
import pandas as pd
import imutil
from matplotlib import pyplot

parser = argparse.ArgumentParser()
parser.add_argument('traces', nargs='+', help='CSV files written by main.py invert --trace')
parser.add_argument('--title', default='Reconstruction objective')
parser.add_argument('--output', default='traces.png')
parser.add_argument('--normalize', action='store_true', help='Divide each trace by its first E')
args = parser.parse_args()

colors = ['#FF2222', '#22AA22', '#2222FF', '#AA5522', '#22AAAA', '#AA22AA']

plt = None
for i, filename in enumerate(args.traces):
    frame = pd.read_csv(filename)
    energy = frame['E'] / frame['E'].iloc[0] if args.normalize else frame['E']
    plot_params = {
        'title': args.title,
        'grid': True,
        'logy': True,
        'label': os.path.splitext(os.path.basename(filename))[0],
        'color': colors[i % len(colors)],
    }
    plt = pd.Series(energy.values).plot(ax=plt, **plot_params)
plt.set_xlabel('Iteration (all stages)')
plt.set_ylabel('E / E0' if args.normalize else 'E')
plt.legend()
imutil.show(plt, filename=args.output, display=False)
pyplot.close()
