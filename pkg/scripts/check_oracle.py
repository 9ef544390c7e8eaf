# Compares hog_forward against the per-pixel hog_reference on random images
import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import hog

parser = argparse.ArgumentParser()
parser.add_argument('--images', type=int, default=50)
parser.add_argument('--size', type=int, default=64)
parser.add_argument('--seed', type=int, default=0)
parser.add_argument('--tol', type=float, default=1e-10)
args = parser.parse_args()

CONFIGS = [hog.HogConfig.for_mode(mode, cell_size=cell)
           for mode in ('unsigned', 'signed') for cell in (4, 8)]

rng = np.random.default_rng(args.seed)
images = [rng.uniform(size=(args.size, args.size)) for _ in range(args.images)]

start_time = time.time()
failed = 0
for cfg in CONFIGS:
    worst = 0.0
    for img in images:
        fast = hog.hog_forward(img, cfg).numpy()
        slow = hog.hog_reference(img, cfg).numpy()
        worst = max(worst, float(np.abs(fast - slow).max()))
    ok = worst <= args.tol
    failed += not ok
    print('{} cell {}: max difference {:.3g} over {} images ({})'.format(
        cfg.mode, cfg.cell_size, worst, len(images), 'pass' if ok else 'FAIL'))
print('Compared {} configs in {:.02f}s'.format(len(CONFIGS), time.time() - start_time))
sys.exit(1 if failed else 0)
