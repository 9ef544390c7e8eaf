"""Pose estimation by maximizing HOG similarity of a warped template.

The pose is a 2D similarity transform (tx, ty in pixels, r in degrees,
sigma = log scale). S(pose) = phi(warp(template, pose)) . phi(patch), and
ascent follows the backward-pass gradient of S with momentum, restarting
from rotations spread evenly over the circle.
"""
import math
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Tuple

import torch
from logutil import TimeSeries

import autodiff as ad
import hog
from optimizers import OptimizerConfig, momentum_update
from utils import ConfigError, DivergenceError
from workers import map_fn

PARAMS = ('tx', 'ty', 'r', 'sigma')
# One ascent unit per parameter: a pixel, a pixel, a degree, 1% scale
UNITS = torch.tensor([1.0, 1.0, 1.0, 0.01], dtype=ad.DTYPE)
POSITION_MASK = torch.tensor([1.0, 1.0, 1.0, 0.0], dtype=ad.DTYPE)
SCALE_MASK = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=ad.DTYPE)
SIGMA_LIMIT = 3.0


def default_align_config():
    return OptimizerConfig(step_size=0.1, momentum=0.9, max_iters=150, decay=0.98)


@dataclass
class Pose2D:
    tx: float = 0.0
    ty: float = 0.0
    r: float = 0.0
    sigma: float = 0.0

    @classmethod
    def from_tensor(cls, t):
        return cls(*(float(v) for v in t))

    @classmethod
    def parse(cls, text):
        try:
            values = [float(v) for v in text.split(',')]
        except ValueError:
            raise ConfigError('Pose must be four numbers tx,ty,r,sigma, got {!r}'.format(text))
        if len(values) != 4 or not all(math.isfinite(v) for v in values):
            raise ConfigError('Pose must be four finite numbers tx,ty,r,sigma, got {!r}'.format(text))
        return cls(*values)

    def as_tensor(self):
        return torch.tensor([self.tx, self.ty, self.r, self.sigma], dtype=ad.DTYPE)

    def normalized(self):
        return Pose2D(self.tx, self.ty, self.r % 360.0, self.sigma)

    def as_dict(self):
        return asdict(self)


@dataclass
class AlignmentProblem:
    template: torch.Tensor
    target: hog.HogDescriptor
    cfg: hog.HogConfig
    patch_shape: Tuple[int, int]
    restarts: int = 8
    init: Pose2D = field(default_factory=Pose2D)

    def __post_init__(self):
        template = ad.constant(self.template)
        self.template = hog.to_gray(template) if template.dim() == 3 else template
        self.patch_shape = tuple(int(n) for n in self.patch_shape)

    @classmethod
    def from_images(cls, template, patch, cfg, **kwargs):
        patch = ad.constant(patch)
        target = hog.hog_forward(patch, cfg)
        return cls(template, target, cfg, tuple(patch.shape[:2]), **kwargs)

    def validate(self):
        self.cfg.validate()
        self.cfg.check_extents(*self.patch_shape)
        if self.restarts < 1:
            raise ConfigError('Need at least one restart, got {}'.format(self.restarts))
        expected = self.cfg.grid_shape(*self.patch_shape)
        if self.target.shape != expected:
            raise ConfigError('Target descriptor {} does not fit a {}x{} patch'.format(
                self.target.shape, self.patch_shape[1], self.patch_shape[0]))
        return self


def similarity(pose, problem):
    params = pose.as_tensor() if isinstance(pose, Pose2D) else pose
    warped = ad.warp_bilinear(problem.template, params, problem.patch_shape)
    phi = hog.hog_forward(warped, problem.cfg).grid
    return ad.dot(phi, problem.target.grid)


def similarity_and_gradient(params, problem):
    params = ad.constant(params).requires_grad_(True)
    value = similarity(params, problem)
    return float(value), ad.gradient(value, params).detach()


@dataclass
class SweepRow:
    value: float
    S: float
    dS: float


def sweep(problem, param, grid, base=None):
    """S and dS/d(param) along one parameter, the others held at base."""
    if param not in PARAMS:
        raise ConfigError('Unknown pose parameter {}, expected one of {}'.format(param, PARAMS))
    grid = list(grid)
    if not grid:
        raise ConfigError('Sweep grid is empty')
    index = PARAMS.index(param)
    base = (base or Pose2D()).as_tensor()
    rows = []
    for value in grid:
        params = base.clone()
        params[index] = value
        s, grad = similarity_and_gradient(params, problem)
        rows.append(SweepRow(float(value), s, float(grad[index])))
    return rows


def sweep_grid(param, step=None):
    if param == 'r':
        step = step or 1.0
        return [-180.0 + k * step for k in range(int(round(360.0 / step)) + 1)]
    if param == 'sigma':
        step = step or 0.01
        return [-0.5 + k * step for k in range(int(round(1.0 / step)) + 1)]
    step = step or 0.25
    return [-8.0 + k * step for k in range(int(round(16.0 / step)) + 1)]


@dataclass
class RestartResult:
    restart: int
    pose: Pose2D
    similarity: float
    trace: List[dict]
    diverged: bool = False


@dataclass
class PoseEstimate:
    pose: Pose2D
    similarity: float
    restart: int
    restarts: List[RestartResult]

    def as_dict(self):
        result = self.pose.normalized().as_dict()
        result['S'] = self.similarity
        result['restart'] = self.restart
        return result

    def trace_rows(self):
        return [row for result in self.restarts for row in result.trace]


def block_mask(iteration, interleave):
    position_iters, scale_iters = interleave
    return POSITION_MASK if iteration % (position_iters + scale_iters) < position_iters else SCALE_MASK


def ascend(problem, start, opt, restart=0):
    step = opt.step_size or default_align_config().step_size
    params = start.as_tensor()
    velocity = torch.zeros(4, dtype=ad.DTYPE)
    best_params, best_s = params.clone(), -math.inf
    trace = []
    ts = TimeSeries('Restart {} from r={:.1f}'.format(restart, start.r), max(opt.max_iters, 1))
    for k in range(opt.max_iters + 1):
        try:
            s, grad = similarity_and_gradient(params, problem)
        except FloatingPointError:
            s, grad = math.nan, None
        if not math.isfinite(s) or abs(float(params[3])) > SIGMA_LIMIT:
            print('Warning: restart {} diverged at iteration {}'.format(restart, k))
            return RestartResult(restart, Pose2D.from_tensor(best_params), best_s, trace, diverged=True)
        row = {'restart': restart, 'iteration': k, 'S': s}
        row.update(zip(PARAMS, (float(v) for v in params)))
        trace.append(row)
        if s > best_s:
            best_params, best_s = params.clone(), s
        ts.collect('S', s)
        ts.print_every(opt.log_every)
        if k == opt.max_iters:
            break
        mask = block_mask(k, opt.interleave)
        direction = mask * grad * UNITS
        norm = float(torch.linalg.norm(direction))
        if norm > 0:
            direction = direction / norm
        # Parameters outside the active block keep their velocity for their next block
        updated = momentum_update(velocity, direction, step * opt.decay ** k, opt.momentum)
        velocity = torch.where(mask > 0, updated, velocity)
        params = params + UNITS * mask * velocity
    return RestartResult(restart, Pose2D.from_tensor(best_params), best_s, trace)


def restart_poses(init, restarts):
    return [Pose2D(init.tx, init.ty, init.r + k * 360.0 / restarts, init.sigma)
            for k in range(restarts)]


def estimate_pose(problem, opt=None, threads=1):
    opt = (opt or default_align_config()).validate()
    problem.validate()
    starts = restart_poses(problem.init, problem.restarts)
    results = map_fn(lambda k, start: ascend(problem, start, opt, k),
                     range(len(starts)), starts, threads=threads)
    finished = [result for result in results if not result.diverged]
    if not finished:
        raise DivergenceError('All {} restarts diverged'.format(len(results)))
    best = finished[0]
    for result in finished[1:]:
        if result.similarity > best.similarity:
            best = result
    for result in results:
        print('Restart {}: S={:.6g} pose {}{}'.format(
            result.restart, result.similarity, result.pose.normalized(),
            ' (diverged)' if result.diverged else ''))
    return PoseEstimate(best.pose, best.similarity, best.restart, results)


def synthesize_target(template, pose, patch_shape, cfg):
    """Warps the template by a known pose; returns (patch, descriptor)."""
    template = ad.constant(template)
    if template.dim() == 3:
        template = hog.to_gray(template)
    patch = ad.warp_bilinear(template, pose.as_tensor(), patch_shape).clamp(0.0, 1.0)
    return patch, hog.hog_forward(patch, cfg)


def rotation_difference(a, b):
    d = (a - b) % 360.0
    return d - 360.0 if d > 180.0 else d


def pose_error(estimate, truth):
    return {
        'tx': abs(estimate.tx - truth.tx),
        'ty': abs(estimate.ty - truth.ty),
        'r': abs(rotation_difference(estimate.r, truth.r)),
        'sigma': abs(estimate.sigma - truth.sigma),
    }
