"""Finite-difference checks of every primitive, the HOG map, the
reconstruction objective and the pose similarity."""
import numpy as np
import torch

import autodiff as ad
import hog
from align import AlignmentProblem, similarity
from preimage import objective
from utils import GradcheckFailure

TARGETS = ('primitives', 'hog', 'objective', 'pose')


def _random(rng, shape, lo=0.0, hi=1.0):
    return torch.from_numpy(rng.uniform(lo, hi, size=shape))


def smooth_image(rng, size):
    # Random blobs: smooth enough that most pixels have a clear gradient direction
    ys, xs = np.mgrid[0:size, 0:size] / float(size)
    img = np.full((size, size), 0.5)
    for _ in range(6):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        width = rng.uniform(0.08, 0.25)
        img += rng.uniform(-0.3, 0.3) * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * width ** 2))
    return torch.from_numpy(np.clip(img + rng.uniform(-0.02, 0.02, size=img.shape), 0.0, 1.0))


def primitive_checks(rng):
    """(name, f, x) triples; each f maps x to a scalar through one primitive."""
    shape = (6, 7)
    w = _random(rng, shape, -1.0, 1.0)
    c = _random(rng, shape, 0.5, 1.5)
    x = _random(rng, shape, 0.1, 1.0)
    kernel = ad.Kernel(rng.uniform(-1.0, 1.0, size=(3, 4)))
    image = smooth_image(rng, 16)
    pose = torch.tensor([0.37, -0.61, 13.3, 0.07], dtype=ad.DTYPE)
    rows, cols = [0, 2, 3, 5], [1, 1, 4, 6]
    small = (4, 4)
    w_resized = _random(rng, (9, 5), -1.0, 1.0)
    checks = [
        ('add', lambda v: ad.dot(ad.add(v, c), w), x),
        ('sub', lambda v: ad.dot(ad.sub(v, c), w), x),
        ('mul', lambda v: ad.dot(ad.mul(v, c), w), x),
        ('div', lambda v: ad.dot(ad.div(c, ad.add(v, 0.5)), w), x),
        ('pow2', lambda v: ad.dot(ad.pow2(v), w), x),
        ('sqrt', lambda v: ad.dot(ad.sqrt(v), w), x),
        ('clip', lambda v: ad.dot(ad.clip(v, 0.3, 0.7), w), x),
        ('atan2', lambda v: ad.dot(ad.atan2(ad.sub(v, 0.5), c), w), x),
        ('conv2d_same', lambda v: ad.dot(ad.conv2d_same(v, kernel), w), x),
        ('subsample', lambda v: ad.dot(ad.subsample(v, rows, cols), w[:4, :4]), x),
        ('resize_bilinear', lambda v: ad.dot(ad.resize_bilinear(v, (9, 5)), w_resized), x),
        ('warp_image', lambda v: ad.total(ad.warp_bilinear(v, pose, shape)), x),
        ('warp_pose', lambda p: ad.dot(ad.warp_bilinear(image, p, small), w[:4, :4]), pose),
        ('l2norm', lambda v: ad.l2norm(ad.sub(v, 0.5)), x),
        ('dot', lambda v: ad.dot(ad.pow2(v), c), x),
    ]
    return checks


def hog_checks(rng, size, cfg):
    source, target = smooth_image(rng, size), smooth_image(rng, size)
    phi = hog.hog_forward(target, cfg).grid

    def distance(v):
        return ad.l2norm(ad.sub(hog.hog_forward(v, cfg).grid, phi))
    return [('hog', distance, source)]


def objective_checks(rng, size, cfg, xi=1.0):
    source, target = smooth_image(rng, size), smooth_image(rng, size)
    desc = hog.hog_forward(target, cfg)
    return [('objective', lambda v: objective(v, desc, cfg, xi), source)]


def pose_checks(rng, size, cfg):
    template = smooth_image(rng, size + 2 * cfg.cell_size)
    patch_shape = (size, size)
    truth = torch.tensor([1.5, -0.5, 10.0, 0.05], dtype=ad.DTYPE)
    patch = ad.warp_bilinear(template, truth, patch_shape)
    problem = AlignmentProblem.from_images(template, patch, cfg)
    start = torch.from_numpy(rng.uniform([-2, -2, -20, -0.1], [2, 2, 20, 0.1]))
    return [('pose', lambda p: similarity(p, problem), start)]


def run_checks(what='all', trials=1, step=1e-5, tol=1e-4, size=64, seed=0,
               coords=64, adjoint_hook=None, cfg=None):
    """Runs the requested checks and returns their reports; raises on any failure."""
    cfg = cfg or hog.HogConfig()
    targets = TARGETS if what == 'all' else (what,)
    reports = []
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        checks = []
        if 'primitives' in targets:
            checks += primitive_checks(rng)
        if 'hog' in targets:
            checks += hog_checks(rng, size, cfg)
        if 'objective' in targets:
            checks += objective_checks(rng, size, cfg)
        if 'pose' in targets:
            checks += pose_checks(rng, size, cfg)
        for name, f, x in checks:
            report = ad.gradcheck(f, x, h=step, tol=tol, coords=coords, seed=seed + trial,
                                  name=name, adjoint_hook=adjoint_hook)
            print(report)
            reports.append(report)
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise GradcheckFailure('Gradient check failed for {}'.format(', '.join(sorted(set(failed)))))
    return reports
