# Fails when the suite results in an acceptance directory miss their bounds
import argparse
import glob
import os
import sys

import pandas as pd

parser = argparse.ArgumentParser()
parser.add_argument('--dir', default='acceptance', help='Output directory of run_acceptance.sh')
parser.add_argument('--descent', type=float, default=0.25, help='Max final/initial E for single-scale runs')
parser.add_argument('--min-cc', type=float, default=0.10, help='Min mean cross-correlation, single scale')
args = parser.parse_args()


def mean_row(schedule):
    frame = pd.read_csv(os.path.join(args.dir, 'metrics_{}.csv'.format(schedule)))
    return frame[frame['name'] == 'mean'].iloc[0]


def descent_ratios(schedule):
    ratios = {}
    for path in sorted(glob.glob(os.path.join(args.dir, 'traces', '*_{}.csv'.format(schedule)))):
        energies = pd.read_csv(path)['E']
        ratios[os.path.basename(path)] = energies.min() / energies.iloc[0]
    return pd.Series(ratios)


checks = []
ratios = descent_ratios('single')
checks.append(('single-scale E falls below {:.0%} of its start on every image (worst {:.3f})'.format(
    args.descent, ratios.max()), len(ratios) > 0 and ratios.max() < args.descent))

single, multi, more, signed = (mean_row(s) for s in ('single', 'multi', 'multi-more', 'signed'))
checks.append(('single-scale mean cross-correlation {:.3f} > {}'.format(
    single['cross_correlation'], args.min_cc), single['cross_correlation'] > args.min_cc))
checks.append(('multi-more mean cross-correlation {:.3f} > multi {:.3f}'.format(
    more['cross_correlation'], multi['cross_correlation']),
    more['cross_correlation'] > multi['cross_correlation']))
checks.append(('signed mean SSIM {:.3f} >= unsigned {:.3f}'.format(signed['ssim'], single['ssim']),
               signed['ssim'] >= single['ssim']))

for message, ok in checks:
    print('{} {}'.format('pass' if ok else 'FAIL', message))
sys.exit(0 if all(ok for _, ok in checks) else 1)
