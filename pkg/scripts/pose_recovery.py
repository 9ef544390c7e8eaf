# Fraction of random synthetic poses that estimate_pose recovers
import argparse
import os
import sys

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import align
import hog
import image_io
from utils import center_crop, write_csv

parser = argparse.ArgumentParser()
parser.add_argument('--template', required=True)
parser.add_argument('--trials', type=int, default=25)
parser.add_argument('--restarts', type=int, default=8)
parser.add_argument('--cell', type=int, default=8)
parser.add_argument('--seed', type=int, default=0)
parser.add_argument('--threads', type=int, default=1)
parser.add_argument('--output', default='pose_recovery.csv')
args = parser.parse_args()

cfg = hog.HogConfig(cell_size=args.cell, norm_style='squared')
template = center_crop(image_io.load_image(args.template).gray(), args.cell)
patch_shape = template.shape
rng = np.random.default_rng(args.seed)

rows = []
for trial in range(args.trials):
    tx, ty = rng.uniform(-6, 6, size=2)
    truth = align.Pose2D(tx, ty, rng.uniform(-180, 180), rng.uniform(-0.2, 0.2))
    _, target = align.synthesize_target(template, truth, patch_shape, cfg)
    problem = align.AlignmentProblem(template, target, cfg, patch_shape, restarts=args.restarts)
    estimate = align.estimate_pose(problem, align.default_align_config(), threads=args.threads)
    error = align.pose_error(estimate.pose, truth)
    recovered = error['tx'] <= 2 and error['ty'] <= 2 and error['r'] <= 5 and error['sigma'] <= 0.05
    rows.append(dict(trial=trial, recovered=recovered, S=estimate.similarity,
                     **{'true_' + k: v for k, v in truth.as_dict().items()},
                     **{'error_' + k: v for k, v in error.items()}))
    print('Trial {}: truth {} error {} {}'.format(trial, truth, error, 'ok' if recovered else 'MISSED'))

write_csv(rows, args.output)
rate = pd.DataFrame(rows)['recovered'].mean()
print('Recovered {:.0%} of {} poses ({})'.format(rate, args.trials, 'pass' if rate >= 0.8 else 'FAIL'))
sys.exit(0 if rate >= 0.8 else 1)
